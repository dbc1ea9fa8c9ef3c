"""Poisson-mixture two-type branching process and its limit functionals.

A particle of spin s and weight w has Poi(a/2 * phi1 * w) children of spin s
and Poi(b/2 * phi1 * w) children of spin -s; every non-root particle draws
its weight i.i.d. from the size-biased law.

Trees are simulated in batches (a forest of independent replicates) with
numpy. Generations up to ``explicit_depth`` are materialized particle by
particle. Deeper generations are tracked only through per-generation
aggregates (counts and weight sums by spin) of the subtree below each
particle at ``explicit_depth``. Given a generation's weight sums
``Psi(+), Psi(-)``, the next generation has ``Poi(phi1/2 (a Psi(s) + b Psi(-s)))``
particles of spin s, so that aggregate chain has exactly the law of the tree.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import WeightLaw, moments, size_biased

DEFAULT_BUDGET = 1_000_000
# raw (unnormalized) g_1, g_2 on spins (+, -); the 1/sqrt(2) is applied last
_G_RAW = np.array([[1.0, 1.0], [1.0, -1.0]])
_INV_SQRT2 = 1 / math.sqrt(2)


class RootWeight(str, enum.Enum):
    FIXED = "fixed"
    FROM_NU = "nu"
    FROM_NU_STAR = "nu_star"


@dataclass(frozen=True)
class BpParams:
    """Branching-process parameters.

    ``root_spin`` of ``None`` draws the root spin uniformly per replicate.
    ``root_weight_value`` is only read when ``root_weight`` is FIXED.
    """

    a: float
    b: float
    law: WeightLaw = field(default_factory=WeightLaw.unit)
    root_spin: Optional[int] = 1
    root_weight: RootWeight = RootWeight.FROM_NU
    root_weight_value: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"a and b must be positive, got a={self.a}, b={self.b}")
        if self.root_spin not in (None, 1, -1):
            raise ValueError("root_spin must be +1, -1 or None")
        object.__setattr__(self, "root_weight", RootWeight(self.root_weight))
        if self.root_weight is RootWeight.FIXED:
            w = self.root_weight_value
            if not (self.law.phi_min <= w <= self.law.phi_max):
                raise ValueError(
                    f"fixed root weight {w} outside [{self.law.phi_min}, {self.law.phi_max}]"
                )

    @classmethod
    def fixed_root(cls, a, b, law=None, spin=1, weight=1.0) -> "BpParams":
        return cls(a, b, law or WeightLaw.unit(), spin, RootWeight.FIXED, weight)

    @property
    def phi1(self) -> float:
        return moments(self.law, 1)

    @property
    def rho(self) -> float:
        return (self.a + self.b) / 2 * moments(self.law, 2)

    @property
    def mu2(self) -> float:
        return (self.a - self.b) / 2 * moments(self.law, 2)

    def mu(self, k: int) -> float:
        return self.rho if k == 1 else self.mu2

    def mean_matrix(self) -> np.ndarray:
        """M, mapping generation counts (+, -) to expected next counts, t >= 1."""
        phi2 = moments(self.law, 2)
        return phi2 / 2 * np.array([[self.a, self.b], [self.b, self.a]])

    def root_matrix(self, psi: float) -> np.ndarray:
        """M_psi = phi1 psi / phi2 * M, the root-to-generation-1 transition."""
        return self.phi1 * psi / moments(self.law, 2) * self.mean_matrix()


@dataclass(eq=False)
class BpForest:
    """A batch of independent trees.

    Explicit particles (depth <= ``explicit_depth``) are stored generation by
    generation; ``gen_ptr[d]:gen_ptr[d+1]`` slices depth d. ``tail`` has
    shape (n_frontier, depth - explicit_depth, 4) holding, for each particle
    at ``explicit_depth``, the (Z+, Z-, Psi+, Psi-) of its descendants at
    relative generations 1, 2, ...
    """

    params: BpParams
    depth: int
    explicit_depth: int
    replicates: int
    tree: np.ndarray
    parent: np.ndarray
    spin: np.ndarray
    weight: np.ndarray
    gen_ptr: np.ndarray
    tail: np.ndarray
    Z: np.ndarray
    Psi: np.ndarray
    truncated: np.ndarray

    @property
    def n_particles(self) -> int:
        return len(self.tree)

    def depth_slice(self, d: int) -> slice:
        return slice(int(self.gen_ptr[d]), int(self.gen_ptr[d + 1]))

    @property
    def particle_depth(self) -> np.ndarray:
        return np.repeat(np.arange(self.explicit_depth + 1), np.diff(self.gen_ptr))

    @property
    def root_spin(self) -> np.ndarray:
        return self.spin[: self.replicates]

    @property
    def root_weight(self) -> np.ndarray:
        return self.weight[: self.replicates]

    @property
    def S(self) -> np.ndarray:
        return self.Z.sum(axis=2)


def _root(params: BpParams, R: int, rng: np.random.Generator):
    if params.root_spin is None:
        spin = np.where(rng.random(R) < 0.5, 1, -1).astype(np.int8)
    else:
        spin = np.full(R, params.root_spin, dtype=np.int8)
    if params.root_weight is RootWeight.FIXED:
        weight = np.full(R, float(params.root_weight_value))
    elif params.root_weight is RootWeight.FROM_NU:
        weight = params.law.sample(rng, R).astype(float)
    else:
        weight = size_biased(params.law).sample(rng, R).astype(float)
    return spin, weight


def _sample_weight_sums(counts: np.ndarray, star: WeightLaw, rng) -> np.ndarray:
    values, probs = star.as_arrays()
    if len(values) == 1:
        return counts * values[0]
    flat = counts.ravel()
    split = rng.multinomial(flat, probs)
    return (split @ values).reshape(counts.shape)


def simulate_forest(params: BpParams, depth: int, replicates: int, rng: np.random.Generator,
                    explicit_depth: Optional[int] = None, budget: int = DEFAULT_BUDGET) -> BpForest:
    """Simulate ``replicates`` independent trees down to generation ``depth``.

    A tree whose materialized population (generations up to
    ``explicit_depth``) exceeds ``budget`` stops growing and is flagged in
    ``truncated``; its later generations are empty. Aggregate generations
    cost O(1) per frontier particle and do not count against the budget.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    E = depth if explicit_depth is None else min(explicit_depth, depth)
    R = replicates
    star = size_biased(params.law)
    c_same = params.a / 2 * params.phi1
    c_opp = params.b / 2 * params.phi1

    spin, weight = _root(params, R, rng)
    trees = [np.arange(R)]
    parents = [np.full(R, -1, dtype=np.int64)]
    spins = [spin]
    weights = [weight]
    Z = np.zeros((R, depth + 1, 2))
    Psi = np.zeros((R, depth + 1, 2))
    plus = spin > 0
    Z[:, 0, 0], Z[:, 0, 1] = plus, ~plus
    Psi[:, 0, 0], Psi[:, 0, 1] = weight * plus, weight * ~plus
    population = np.ones(R)
    truncated = np.zeros(R, dtype=bool)
    offset = 0

    cur_tree, cur_spin, cur_w = trees[0], spin, weight
    for d in range(1, E + 1):
        alive = ~truncated[cur_tree]
        n_same = rng.poisson(c_same * cur_w) * alive
        n_opp = rng.poisson(c_opp * cur_w) * alive
        n_kids = n_same + n_opp
        idx = np.repeat(np.arange(len(cur_tree)), n_kids)
        first = np.repeat(np.cumsum(n_kids) - n_kids, n_kids)
        rank = np.arange(len(idx)) - first
        same = rank < n_same[idx]
        kid_spin = np.where(same, cur_spin[idx], -cur_spin[idx]).astype(np.int8)
        kid_w = star.sample(rng, len(idx)).astype(float)
        kid_tree = cur_tree[idx]
        parents.append(idx + offset)
        offset += len(cur_tree)
        trees.append(kid_tree)
        spins.append(kid_spin)
        weights.append(kid_w)
        pk = kid_spin > 0
        Z[:, d, 0] = np.bincount(kid_tree, weights=pk, minlength=R)
        Z[:, d, 1] = np.bincount(kid_tree, weights=~pk, minlength=R)
        Psi[:, d, 0] = np.bincount(kid_tree, weights=kid_w * pk, minlength=R)
        Psi[:, d, 1] = np.bincount(kid_tree, weights=kid_w * ~pk, minlength=R)
        population += Z[:, d].sum(axis=1)
        truncated |= population > budget
        cur_tree, cur_spin, cur_w = kid_tree, kid_spin, kid_w

    # aggregate chains below the explicit frontier
    extra = depth - E
    tail = np.zeros((len(cur_tree), extra, 4))
    if extra:
        pk = cur_spin > 0
        state_psi = np.column_stack([cur_w * pk, cur_w * ~pk])
        for j in range(extra):
            alive = ~truncated[cur_tree]
            lam_plus = c_same * state_psi[:, 0] + c_opp * state_psi[:, 1]
            lam_minus = c_opp * state_psi[:, 0] + c_same * state_psi[:, 1]
            counts = rng.poisson(np.column_stack([lam_plus, lam_minus])) * alive[:, None]
            psi_new = _sample_weight_sums(counts, star, rng)
            tail[:, j, :2] = counts
            tail[:, j, 2:] = psi_new
            state_psi = psi_new
            d = E + j + 1
            for s in range(2):
                Z[:, d, s] = np.bincount(cur_tree, weights=counts[:, s], minlength=R)
                Psi[:, d, s] = np.bincount(cur_tree, weights=psi_new[:, s], minlength=R)

    sizes = [len(t) for t in trees]
    gen_ptr = np.zeros(E + 2, dtype=np.int64)
    np.cumsum(sizes, out=gen_ptr[1:])
    return BpForest(
        params, depth, E, R,
        np.concatenate(trees), np.concatenate(parents), np.concatenate(spins),
        np.concatenate(weights), gen_ptr, tail, Z, Psi, truncated,
    )


def simulate(params: BpParams, depth: int, rng: np.random.Generator,
             explicit_depth: Optional[int] = None, budget: int = DEFAULT_BUDGET) -> BpForest:
    """A single tree, returned as a one-replicate forest."""
    return simulate_forest(params, depth, 1, rng, explicit_depth, budget)


def replicate_stream(seed: int, chunk_index: int) -> np.random.Generator:
    """RNG for one chunk of replicates, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk_index,)))


def simulate_chunks(params: BpParams, depth: int, replicates: int, seed: int,
                    chunk: int = 2000, **kwargs):
    """Yield forests of at most ``chunk`` trees, each from its own stream."""
    done = 0
    i = 0
    while done < replicates:
        r = min(chunk, replicates - done)
        yield simulate_forest(params, depth, r, replicate_stream(seed, i), **kwargs)
        done += r
        i += 1


# ----------------------------------------------------------------- martingales


@dataclass(frozen=True, eq=False)
class MartingaleSeries:
    """``values[:, t-1]`` holds X_k(t) for t = 1..T, one row per replicate."""

    k: int
    values: np.ndarray
    weighted: bool = False


def martingale_series(forest: BpForest, k: int, weighted: bool = False) -> MartingaleSeries:
    """X_k(t) = <g_k, Z_t> / mu_k^(t-1) - <g_k, Z_1>, or the same with Psi."""
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    mu = forest.params.mu(k)
    if mu == 0:
        raise ValueError(f"mu_{k} = 0: the normalized series is undefined")
    if forest.truncated.any():
        raise ValueError("martingale series needs untruncated trees")
    if forest.depth < 1:
        raise ValueError("martingale series needs depth >= 1")
    counts = forest.Psi if weighted else forest.Z
    proj = counts @ _G_RAW[k - 1] * _INV_SQRT2
    t = np.arange(1, forest.depth + 1)
    vals = proj[:, 1:] / mu ** (t - 1) - proj[:, [1]]
    return MartingaleSeries(k, vals, weighted)


# ----------------------------------------------------------------- growth tail


@dataclass(frozen=True)
class GrowthTail:
    s_grid: tuple[float, ...]
    tail: tuple[float, ...]
    se: tuple[float, ...]
    slope: float
    replicates: int


def growth_tail(params: BpParams, T: int, s_grid: Sequence[float], replicates: int,
                seed: int = 0) -> GrowthTail:
    """Empirical P[exists k <= T: S_k > s rho^k] on a grid of s.

    ``slope`` is the least-squares slope of log(tail) against s over grid
    points with a non-zero tail (nan if fewer than two).
    """
    if replicates < 1000:
        raise ValueError("growth_tail needs at least 1000 replicates")
    rho = params.rho
    s_grid = tuple(float(s) for s in s_grid)
    hits = np.zeros(len(s_grid))
    scale = rho ** np.arange(1, T + 1)
    for forest in simulate_chunks(params, T, replicates, seed, explicit_depth=0):
        S = forest.S[:, 1:]
        for i, s in enumerate(s_grid):
            hits[i] += np.count_nonzero((S > s * scale).any(axis=1))
    tail = hits / replicates
    se = np.sqrt(tail * (1 - tail) / replicates)
    ok = tail > 0
    slope = math.nan
    if ok.sum() >= 2:
        slope = float(np.polyfit(np.asarray(s_grid)[ok], np.log(tail[ok]), 1)[0])
    return GrowthTail(s_grid, tuple(tail), tuple(se), slope, replicates)


# ----------------------------------------------------------------- Q functional


def _profiles(forest: BpForest, D: int, upto: int) -> list[np.ndarray]:
    """(Z+, Z-, Psi+, Psi-) of each explicit particle's descendants at depth D.

    Returns one (generation size, 4) array per depth 0..``upto``; rows are
    zero when D lies beyond the simulated depth.
    """
    E = forest.explicit_depth
    sizes = np.diff(forest.gen_ptr)
    out = [np.zeros((int(sizes[d]), 4)) for d in range(E + 1)]
    if D > forest.depth:
        return out[: upto + 1]
    if D <= E:
        sl = forest.depth_slice(D)
        pk = forest.spin[sl] > 0
        w = forest.weight[sl]
        out[D] = np.column_stack([pk, ~pk, w * pk, w * ~pk]).astype(float)
        start = D
    else:
        out[E] = forest.tail[:, D - E - 1, :].copy()
        start = E
    for d in range(start, 0, -1):
        par = forest.parent[forest.depth_slice(d)] - forest.gen_ptr[d - 1]
        n_up = int(sizes[d - 1])
        out[d - 1] = np.column_stack(
            [np.bincount(par, weights=out[d][:, c], minlength=n_up) for c in range(4)]
        )
    return out[: upto + 1]


def _q_accumulate(forest: BpForest, ell: int) -> np.ndarray:
    """Raw (unscaled by 1/sqrt2) L^u sums per particle u at depth < ell."""
    s_prof = _profiles(forest, ell, ell)
    acc = np.zeros((int(forest.gen_ptr[ell]), 2))
    for t in range(ell):
        kids = forest.depth_slice(t + 1)
        psi = _profiles(forest, 2 * t + 1, t + 1)[t + 1][:, 2:]
        A = psi @ _G_RAW.T  # raw <g_k, Psi^v_t> for k = 1, 2
        C = s_prof[t + 1][:, 0] + s_prof[t + 1][:, 1]
        par = forest.parent[kids] - forest.gen_ptr[t]
        lo, hi = int(forest.gen_ptr[t]), int(forest.gen_ptr[t + 1])
        sumC = np.bincount(par, weights=C, minlength=hi - lo)
        for k in range(2):
            sumA = np.bincount(par, weights=A[:, k], minlength=hi - lo)
            sumCA = np.bincount(par, weights=C * A[:, k], minlength=hi - lo)
            acc[lo:hi, k] = sumC * sumA - sumCA
    return acc


def q_functional(forest: BpForest, ell: int) -> np.ndarray:
    """Q_{k,ell} for k = 1, 2 and every tree; returns shape (replicates, 2).

    Uses the subtree rearrangement: a sum over particles u at depth t < ell of
    sum_{w != v children of u} S^w_{ell-t-1} <g_k, Psi^v_t>.
    """
    if ell < 0:
        raise ValueError("ell must be >= 0")
    R = forest.replicates
    out = np.zeros((R, 2))
    if ell == 0:
        return out
    if forest.explicit_depth < ell or forest.depth < 2 * ell - 1:
        raise ValueError(
            f"Q_(k,{ell}) needs explicit depth >= {ell} and depth >= {2 * ell - 1}; "
            f"tree has {forest.explicit_depth} and {forest.depth}"
        )
    acc = _q_accumulate(forest, ell)
    owner = forest.tree[: len(acc)]
    for k in range(2):
        out[:, k] = np.bincount(owner, weights=acc[:, k], minlength=R)
    return out * _INV_SQRT2


def q_bruteforce(forest: BpForest, ell: int, tree_index: int = 0) -> tuple[float, float]:
    """Q_{k,ell} by enumerating the once-backtracking paths (oracle, small trees)."""
    if forest.explicit_depth != forest.depth:
        raise ValueError("path enumeration needs a fully explicit tree")
    mine = np.flatnonzero(forest.tree == tree_index)
    root = int(mine[0])
    nbrs: dict[int, list[int]] = {int(v): [] for v in mine}
    for v in mine[1:]:
        p = int(forest.parent[v])
        nbrs[p].append(int(v))
        nbrs[int(v)].append(p)
    raw = np.zeros(2)
    if ell == 0:
        return 0.0, 0.0

    def walks(prev, cur, steps):
        if steps == 0:
            yield cur
            return
        for nxt in nbrs[cur]:
            if nxt != prev:
                yield from walks(cur, nxt, steps - 1)

    def down(path):
        if len(path) == ell + 1:
            yield path
            return
        prev = path[-2] if len(path) > 1 else -1
        for nxt in nbrs[path[-1]]:
            if nxt != prev:
                yield from down(path + [nxt])

    for path in down([root]):
        u_ell, u_back = path[-1], path[-2]
        for end in walks(u_ell, u_back, ell):
            s = 1.0 if forest.spin[end] > 0 else -1.0
            raw += np.array([1.0, s]) * forest.weight[end]
    return float(raw[0] * _INV_SQRT2), float(raw[1] * _INV_SQRT2)


def q_finite_mean(params: BpParams, k: int, ell: int, spin: int, psi: float) -> float:
    """Exact E[Q_{k,ell}] / mu_k^(2 ell) for a root of fixed spin and weight.

    Summing the Poisson second factorial moments over the rearranged form
    gives ``g_k(x) mu_k [phi1 psi^2/phi2 r^ell + phi1 phi3 psi/phi2^2 sum_{j=1}^{ell-1} r^j]``
    with ``r = rho / mu_k^2``; the bracket tends to the limit constant as
    ell grows when r < 1.
    """
    if ell == 0:
        return 0.0
    phi1, phi2, phi3 = (moments(params.law, j) for j in (1, 2, 3))
    mu = params.mu(k)
    r = params.rho / mu**2
    g = _INV_SQRT2 * (1.0 if k == 1 else float(spin))
    geo = sum(r**j for j in range(1, ell))
    return g * mu * (phi1 * psi**2 / phi2 * r**ell + phi1 * phi3 * psi / phi2**2 * geo)


def q_limit_target(params: BpParams, k: int, spin: int, psi: float) -> float:
    """phi3/phi2 * rho/(mu_k^2 - rho) * mu_{k,psi} * g_k(spin)."""
    phi1, phi2, phi3 = (moments(params.law, j) for j in (1, 2, 3))
    mu = params.mu(k)
    if mu**2 <= params.rho:
        raise ValueError(
            f"mu_{k}^2 = {mu**2:g} <= rho = {params.rho:g}: the limit has a pole "
            "and is undefined at or below the threshold"
        )
    mu_psi = phi1 * psi / phi2 * mu
    g = _INV_SQRT2 * (1.0 if k == 1 else float(spin))
    return phi3 / phi2 * params.rho / (mu**2 - params.rho) * mu_psi * g


@dataclass(frozen=True)
class QLimitResult:
    """Monte-Carlo estimate of E[Q_{k,ell}] / mu_k^(2 ell).

    ``target`` is the large-ell limit and ``finite_mean`` the exact mean at
    this ell. Since the gap between them is exactly geometric in
    ``r = rho / mu_k^2``, ``extrapolated`` combines Q at ell and ell - 1 on
    the same trees into an unbiased estimate of the limit itself (nan when
    ell < 2).
    """

    k: int
    ell: int
    replicates: int
    mean: float
    se: float
    target: float
    finite_mean: float
    extrapolated: float = math.nan
    extrapolated_se: float = math.nan

    @property
    def z_target(self) -> float:
        return (self.mean - self.target) / self.se if self.se > 0 else math.inf

    @property
    def z_finite(self) -> float:
        return (self.mean - self.finite_mean) / self.se if self.se > 0 else math.inf

    @property
    def z_extrapolated(self) -> float:
        return (self.extrapolated - self.target) / self.extrapolated_se


def q_samples(params: BpParams, ell: int, replicates: int, seed: int = 0,
              chunk: int = 2000, ells: Optional[Sequence[int]] = None) -> np.ndarray:
    """Q_{k,ell} for fresh trees, shape (replicates, 2).

    With ``ells`` (each <= ell) the result has shape (len(ells), replicates, 2),
    every row computed on the same trees.
    """
    depth = max(ell, 2 * ell - 1)
    wanted = [ell] if ells is None else list(ells)
    if any(e > ell or e < 0 for e in wanted):
        raise ValueError("every entry of ells must lie in [0, ell]")
    parts = []
    for f in simulate_chunks(params, depth, replicates, seed, chunk=chunk, explicit_depth=ell):
        parts.append(np.stack([q_functional(f, e) for e in wanted]))
    out = np.concatenate(parts, axis=1) if parts else np.zeros((len(wanted), 0, 2))
    return out[0] if ells is None else out


def q_limit_check(params: BpParams, k: int, ell: int, replicates: int, seed: int = 0,
                  chunk: int = 2000) -> QLimitResult:
    """Monte-Carlo mean of Q_{k,ell} / mu_k^(2 ell) against its large-ell limit."""
    if params.root_weight is not RootWeight.FIXED or params.root_spin is None:
        raise ValueError("q_limit_check needs a fixed root spin and weight")
    psi, x = params.root_weight_value, params.root_spin
    target = q_limit_target(params, k, x, psi)
    mu = params.mu(k)
    both = q_samples(params, ell, replicates, seed, chunk, ells=[ell, max(ell - 1, 0)])
    q = both[0, :, k - 1] / mu ** (2 * ell)
    se = float(q.std(ddof=1) / math.sqrt(len(q)))
    ext = ext_se = math.nan
    if ell >= 2:
        r = params.rho / mu**2
        prev = both[1, :, k - 1] / mu ** (2 * ell - 2)
        comb = (q - r * prev) / (1 - r)
        ext, ext_se = float(comb.mean()), float(comb.std(ddof=1) / math.sqrt(len(comb)))
    return QLimitResult(k, ell, replicates, float(q.mean()), se, target,
                        q_finite_mean(params, k, ell, x, psi), ext, ext_se)


@dataclass(frozen=True)
class Decorrelation:
    ell: int
    replicates: int
    mean: float
    se: float

    @property
    def within_3se(self) -> bool:
        return abs(self.mean) <= 3 * self.se


def decorrelation_check(params: BpParams, ell: int, replicates: int, seed: int = 0,
                        chunk: int = 2000) -> Decorrelation:
    """Sample mean of Q_1 Q_2 when the root spin is uniform."""
    if params.root_spin is not None:
        raise ValueError(
            "decorrelation needs a uniformly drawn root spin (root_spin=None); "
            "with a fixed root spin the hypothesis does not hold"
        )
    q = q_samples(params, ell, replicates, seed, chunk)
    prod = q[:, 0] * q[:, 1]
    return Decorrelation(ell, replicates, float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(len(prod))))


def generation_rows(forest: BpForest, first_replicate: int = 0):
    """Rows ``(replicate, t, Zp, Zm, PsiP, PsiM)`` for CSV output."""
    for r in range(forest.replicates):
        for t in range(forest.depth + 1):
            z = forest.Z[r, t]
            p = forest.Psi[r, t]
            yield (first_replicate + r, t, int(z[0]), int(z[1]), float(p[0]), float(p[1]))
