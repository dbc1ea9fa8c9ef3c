"""Parameter sweeps across the detection threshold and their CSV output.

A sweep config is plain text, one ``key = value`` per line, ``#`` starts a
comment. Recognised keys:

``n``            comma list of graph sizes
``a``, ``b``     comma lists; every (a, b) combination is a cell
``pairs``        explicit cells, e.g. ``8:2, 7:3``
``a_plus_b``     with ``a_minus_b`` (comma list) or ``ratio`` (comma list of
                 target values of (a-b)^2 phi2 / (2(a+b)))
``weights``      weight law, e.g. ``0.5:0.5,1.5:0.5`` (default ``1:1``)
``balance``      ``exact`` or ``iid``
``seeds``        runs per cell
``master_seed``  base of the per-run seed derivation
``metrics``      comma list from ``spectrum, overlap, tangle`` (default all)
``timing``       ``on`` fills the wall_ms column; ``off`` leaves it blank
"""

from __future__ import annotations

import concurrent.futures as cf
import hashlib
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .detection import assign, overlap, vertex_scores
from .diagnostics import tangle_scan
from .generator import sample_graph
from .model import Balance, ModelParams, WeightLaw, moments, parse_weight_law
from .nb_operator import build
from .spectral import practical_ell, top_two_iterative

CSV_HEADER = (
    "n,a,b,phi2,rho,mu2,threshold_ratio,seed,lambda1,lambda2_mod,"
    "bulk_radius,overlap,tangle_free,ell,wall_ms"
)
METRICS = ("spectrum", "overlap", "tangle")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    cells: tuple[tuple[float, float], ...]
    n_list: tuple[int, ...]
    law: WeightLaw = field(default_factory=WeightLaw.unit)
    balance: Balance = Balance.EXACT_HALVES
    seeds: int = 1
    master_seed: int = 0
    metrics: tuple[str, ...] = METRICS
    timing: bool = False

    def __post_init__(self):
        if not self.cells or not self.n_list:
            raise ConfigError("sweep needs at least one (a, b) cell and one n")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        for m in self.metrics:
            if m not in METRICS:
                raise ConfigError(f"unknown metric {m!r}; choose from {', '.join(METRICS)}")
        for n in self.n_list:
            for a, b in self.cells:
                try:
                    ModelParams(n, a, b, self.law, self.balance, 0)
                except ValueError as exc:
                    raise ConfigError(f"cell n={n}, a={a}, b={b}: {exc}") from None

    def runs(self):
        """(n, a, b, replicate) in deterministic sweep order."""
        for n in self.n_list:
            for a, b in self.cells:
                for rep in range(self.seeds):
                    yield n, a, b, rep

    def echo(self) -> dict:
        return {
            "cells": [list(c) for c in self.cells],
            "n": list(self.n_list),
            "weights": self.law.to_text(),
            "balance": self.balance.value,
            "seeds": self.seeds,
            "master_seed": self.master_seed,
            "metrics": list(self.metrics),
            "timing": self.timing,
        }


def _floats(text: str, key: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected a comma list of numbers, got {text!r}") from None


def parse_config(text: str) -> SweepSpec:
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in kv:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        kv[key] = value
    known = {"n", "a", "b", "pairs", "a_plus_b", "a_minus_b", "ratio", "weights",
             "balance", "seeds", "master_seed", "metrics", "timing"}
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    law = parse_weight_law(kv.get("weights", "1:1"))
    phi2 = moments(law, 2)

    cells: list[tuple[float, float]] = []
    modes = [k for k in ("pairs", "a", "a_plus_b") if k in kv]
    if len(modes) != 1:
        raise ConfigError("give exactly one of: pairs, a and b, a_plus_b")
    if "pairs" in kv:
        for chunk in kv["pairs"].split(","):
            if not chunk.strip():
                continue
            try:
                a, b = (float(x) for x in chunk.split(":"))
            except ValueError:
                raise ConfigError(f"pairs: bad entry {chunk.strip()!r}, expected a:b") from None
            cells.append((a, b))
    elif "a" in kv:
        if "b" not in kv:
            raise ConfigError("'a' needs a matching 'b' list")
        cells = [(a, b) for a in _floats(kv["a"], "a") for b in _floats(kv["b"], "b")]
    else:
        sums = _floats(kv["a_plus_b"], "a_plus_b")
        if len(sums) != 1:
            raise ConfigError("a_plus_b takes a single value")
        s = sums[0]
        if ("a_minus_b" in kv) == ("ratio" in kv):
            raise ConfigError("a_plus_b needs exactly one of a_minus_b or ratio")
        if "a_minus_b" in kv:
            diffs = _floats(kv["a_minus_b"], "a_minus_b")
        else:
            diffs = [math.sqrt(2 * s * r / phi2) for r in _floats(kv["ratio"], "ratio")]
        cells = [((s + d) / 2, (s - d) / 2) for d in diffs]
    try:
        n_list = tuple(int(x) for x in kv.get("n", "").split(",") if x.strip())
        seeds = int(kv.get("seeds", "1"))
        master = int(kv.get("master_seed", "0"))
    except ValueError as exc:
        raise ConfigError(f"bad integer value: {exc}") from None
    metrics = tuple(m.strip() for m in kv.get("metrics", ",".join(METRICS)).split(",") if m.strip())
    timing = kv.get("timing", "off").lower()
    if timing not in ("on", "off"):
        raise ConfigError(f"timing must be 'on' or 'off', got {timing!r}")
    try:
        balance = Balance(kv.get("balance", "exact"))
    except ValueError:
        raise ConfigError(f"balance must be 'exact' or 'iid', got {kv['balance']!r}") from None
    return SweepSpec(tuple(cells), n_list, law, balance, seeds, master, metrics, timing == "on")


def run_seed(master: int, n: int, a: float, b: float, law: WeightLaw, rep: int) -> int:
    """Per-run seed: blake2b of the run identity, truncated to 63 bits.

    Depends only on the run's own coordinates, so adding or removing cells
    leaves every other run's randomness unchanged.
    """
    key = f"{master}:{n}:{a!r}:{b!r}:{law.to_text()}:{rep}".encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") & (2**63 - 1)


@dataclass(frozen=True)
class RunRecord:
    n: int
    a: float
    b: float
    phi2: float
    rho: float
    mu2: float
    threshold_ratio: float
    seed: int
    lambda1: Optional[float] = None
    lambda2_mod: Optional[float] = None
    bulk_radius: Optional[float] = None
    overlap: Optional[float] = None
    tangle_free: Optional[bool] = None
    ell: Optional[int] = None
    wall_ms: Optional[float] = None
    error: Optional[str] = None
    converged: Optional[bool] = None

    @property
    def flagged(self) -> bool:
        return self.error is not None or self.converged is False

    def csv_row(self) -> str:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, bool):
                return "1" if x else "0"
            if isinstance(x, float):
                return repr(x)
            return str(x)

        vals = [self.n, self.a, self.b, self.phi2, self.rho, self.mu2, self.threshold_ratio,
                self.seed, self.lambda1, self.lambda2_mod, self.bulk_radius, self.overlap,
                self.tangle_free, self.ell, self.wall_ms]
        return ",".join(fmt(v) for v in vals)


def run_one(n: int, a: float, b: float, law: WeightLaw, balance: Balance, seed: int,
            metrics: Sequence[str] = METRICS, timing: bool = False) -> RunRecord:
    params = ModelParams(n, a, b, law, balance, seed)
    phi2 = moments(law, 2)
    base = dict(n=n, a=a, b=b, phi2=phi2, rho=params.rho, mu2=params.mu2,
                threshold_ratio=(a - b) ** 2 * phi2 / (2 * (a + b)), seed=seed)
    start = time.perf_counter()
    try:
        g, _ = sample_graph(params)
        op = build(g)
        out: dict = {}
        if "spectrum" in metrics or "overlap" in metrics:
            rep = top_two_iterative(op, seed=seed)
            out["converged"] = rep.converged
            if "spectrum" in metrics:
                out.update(lambda1=float(rep.lambda1), lambda2_mod=float(rep.lambda2_mod),
                           bulk_radius=float(rep.bulk_radius))
            if "overlap" in metrics:
                labels = assign(vertex_scores(op, rep.xi2), 0.0, g.n).labels
                out["overlap"] = overlap(labels, g.spins).value
        if "tangle" in metrics:
            ell = practical_ell(g).ell
            out["ell"] = ell
            out["tangle_free"] = tangle_scan(g, ell, op).is_tangle_free
    except Exception as exc:  # a failed run becomes a flagged row
        return RunRecord(**base, error=f"{type(exc).__name__}: {exc}")
    wall = round((time.perf_counter() - start) * 1000, 3) if timing else None
    return RunRecord(**base, **out, wall_ms=wall)


def _run_task(task):
    return run_one(*task)


def _pool_size() -> int:
    env = os.environ.get("NBSPEC_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ConfigError(f"NBSPEC_THREADS must be a positive integer, got {env!r}") from None
        if k < 1:
            raise ConfigError(f"NBSPEC_THREADS must be a positive integer, got {env!r}")
        return k
    return os.cpu_count() or 1


def run_sweep(spec: SweepSpec, out: Optional[Path] = None, workers: Optional[int] = None) -> list[RunRecord]:
    """Run every (cell, seed) and optionally write the CSV plus a JSON sidecar.

    Rows follow sweep order regardless of completion order. The sidecar
    (``out`` with suffix ``.json``) carries the config echo, the master
    seed and the failed or non-converged runs.
    """
    if out is not None:
        out = Path(out)
        if not out.parent.exists():
            raise OSError(f"output directory does not exist: {out.parent}")
    tasks = [(n, a, b, spec.law, spec.balance, run_seed(spec.master_seed, n, a, b, spec.law, rep),
              spec.metrics, spec.timing) for n, a, b, rep in spec.runs()]
    workers = _pool_size() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        records = [_run_task(t) for t in tasks]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks))
    if out is not None:
        out.write_text(sweep_csv(records), encoding="ascii", newline="\n")
        out.with_suffix(".json").write_text(sweep_sidecar(spec, records), encoding="ascii", newline="\n")
    return records


def sweep_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in records:
        buf.write(r.csv_row() + "\n")
    return buf.getvalue()


def sweep_sidecar(spec: SweepSpec, records: Sequence[RunRecord]) -> str:
    flagged = [
        {"row": i, "seed": r.seed, "error": r.error, "converged": r.converged}
        for i, r in enumerate(records) if r.flagged
    ]
    doc = {"config": spec.echo(), "runs": len(records), "flagged": flagged}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cell_means(records: Sequence[RunRecord], key: str = "overlap") -> dict[tuple, float]:
    """Mean of a metric per (n, a, b) over runs that recorded it."""
    acc: dict[tuple, list[float]] = {}
    for r in records:
        v = getattr(r, key)
        if v is not None:
            acc.setdefault((r.n, r.a, r.b), []).append(float(v))
    return {k: sum(v) / len(v) for k, v in acc.items()}


def record_dict(r: RunRecord) -> dict:
    return asdict(r)
