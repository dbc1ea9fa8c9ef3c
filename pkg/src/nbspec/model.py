"""Weight laws, model parameters and the scalar theory derived from them."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

PROB_SUM_TOL = 1e-12


class Balance(str, enum.Enum):
    """How spins are assigned to vertices."""

    EXACT_HALVES = "exact"
    IID_UNIFORM = "iid"


@dataclass(frozen=True)
class WeightLaw:
    """Finite-atom law for vertex weights.

    ``values`` must be strictly increasing and positive; ``probs`` must sum
    to one. Use :meth:`from_atoms` to canonicalize unsorted input.
    """

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if not values or len(values) != len(probs):
            raise ValueError("weight law needs matching non-empty values and probs")
        for v in values:
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"weight values must be positive and finite, got {v}")
        for p in probs:
            if not (0 < p <= 1):
                raise ValueError(f"atom probabilities must lie in (0, 1], got {p}")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("weight values must be strictly increasing")
        total = math.fsum(probs)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"atom probabilities sum to {total!r}, expected 1")

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "WeightLaw":
        merged: dict[float, float] = {}
        for value, prob in atoms:
            merged[float(value)] = merged.get(float(value), 0.0) + float(prob)
        values = sorted(merged)
        return cls(tuple(values), tuple(merged[v] for v in values))

    @classmethod
    def unit(cls) -> "WeightLaw":
        return cls((1.0,), (1.0,))

    @property
    def phi_min(self) -> float:
        return self.values[0]

    @property
    def phi_max(self) -> float:
        return self.values[-1]

    @property
    def is_degenerate(self) -> bool:
        return len(self.values) == 1

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.values), np.asarray(self.probs)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        values, probs = self.as_arrays()
        if len(values) == 1:
            return np.full(size, values[0])
        return values[rng.choice(len(values), size=size, p=probs)]

    def to_text(self) -> str:
        return ",".join(f"{v!r}:{p!r}" for v, p in zip(self.values, self.probs))

    def __str__(self) -> str:
        return self.to_text()


def parse_weight_law(text: str) -> WeightLaw:
    """Parse ``value:prob`` pairs separated by commas, e.g. ``0.5:0.5,1.5:0.5``.

    Probabilities may be written as decimals or fractions (``1/3``). Input
    whose probabilities do not sum to one is rejected and the message
    reports the sum.
    """
    atoms = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 2:
            raise ValueError(f"bad weight atom {chunk!r}: expected value:prob")
        try:
            value = Fraction(parts[0].strip())
            prob = Fraction(parts[1].strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"bad weight atom {chunk!r}: {exc}") from None
        atoms.append((value, prob))
    if not atoms:
        raise ValueError("empty weight law")
    total = sum(p for _, p in atoms)
    if abs(float(total) - 1.0) > PROB_SUM_TOL:
        raise ValueError(
            f"weight law probabilities sum to {float(total)!r} (not 1): {text!r}"
        )
    return WeightLaw.from_atoms((float(v), float(p)) for v, p in atoms)


def moments(law: WeightLaw, k: int) -> float:
    """k-th moment of the law, summed exactly over the atoms."""
    if k < 1:
        raise ValueError(f"moment order must be >= 1, got {k}")
    return math.fsum(p * v**k for v, p in zip(law.values, law.probs))


def size_biased(law: WeightLaw) -> WeightLaw:
    """Reweight each atom proportionally to its value."""
    phi1 = moments(law, 1)
    probs = [v * p / phi1 for v, p in zip(law.values, law.probs)]
    total = math.fsum(probs)
    # renormalise away the last-ulp drift of the division
    probs = [p / total for p in probs]
    return WeightLaw(law.values, tuple(probs))


@dataclass(frozen=True)
class ModelParams:
    n: int
    a: float
    b: float
    law: WeightLaw = field(default_factory=WeightLaw.unit)
    balance: Balance = Balance.EXACT_HALVES
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"a and b must be positive, got a={self.a}, b={self.b}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "balance", Balance(self.balance))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def rho(self) -> float:
        return (self.a + self.b) / 2 * moments(self.law, 2)

    @property
    def mu2(self) -> float:
        return (self.a - self.b) / 2 * moments(self.law, 2)

    def with_seed(self, seed: int) -> "ModelParams":
        return ModelParams(self.n, self.a, self.b, self.law, self.balance, seed)


@dataclass(frozen=True)
class TheoryScalars:
    phi1: float
    phi2: float
    phi3: float
    rho: float
    mu2: float
    detectable: bool
    threshold_ratio: float
    qhat_limit: Optional[float] = None

    @property
    def mu(self) -> tuple[float, float]:
        return (self.rho, self.mu2)


def theory(params: ModelParams) -> TheoryScalars:
    """Derived scalars of the model.

    ``threshold_ratio`` is ``(a-b)^2 phi2 / (2(a+b))`` which equals
    ``mu2^2 / rho``; detection is feasible exactly when it exceeds one.
    ``qhat_limit`` is the limiting mean factor ``phi3/phi2 * rho/(mu2^2-rho)``
    and is only defined above the threshold.
    """
    phi1, phi2, phi3 = (moments(params.law, k) for k in (1, 2, 3))
    a, b = params.a, params.b
    rho = (a + b) / 2 * phi2
    mu2 = (a - b) / 2 * phi2
    ratio = (a - b) ** 2 * phi2 / (2 * (a + b))
    detectable = (a - b) ** 2 * phi2 > 2 * (a + b)
    qhat = phi3 / phi2 * rho / (mu2**2 - rho) if detectable else None
    return TheoryScalars(phi1, phi2, phi3, rho, mu2, detectable, ratio, qhat)


def eigvec_g(k: int) -> np.ndarray:
    """Orthonormal left eigenvectors of the mean progeny matrix, indexed (+, -)."""
    if k == 1:
        return np.array([1.0, 1.0]) / math.sqrt(2)
    if k == 2:
        return np.array([1.0, -1.0]) / math.sqrt(2)
    raise ValueError(f"k must be 1 or 2, got {k}")


def g_of_spin(k: int, spins: Sequence[int] | np.ndarray) -> np.ndarray:
    """Evaluate g_k on an array of +/-1 spins."""
    spins = np.asarray(spins, dtype=float)
    if k == 1:
        return np.full(spins.shape, 1 / math.sqrt(2))
    if k == 2:
        return spins / math.sqrt(2)
    raise ValueError(f"k must be 1 or 2, got {k}")
