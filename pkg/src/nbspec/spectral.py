"""Leading eigenpairs of the non-backtracking operator and related checks.

Two solvers are provided. :func:`dense_spectrum` diagonalizes the full
matrix and is the oracle for small graphs. :func:`top_two_iterative` is
matrix-free: power iteration for the Perron pair, then block power
iteration with oblique deflation for the second pair.

B is not normal, but ``B^T = P B P`` with P the edge reversal, so the left
eigenvector belonging to a right eigenvector ``x`` is ``P x``. Deflation
uses that pair: ``z -> z - x (Px . z) / (Px . x)`` removes the component
along ``x`` while commuting with B.
"""

from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .generator import ColoredGraph
from .model import g_of_spin
from .nb_operator import DENSE_LIMIT, NbOperator, dense_matrix, matvec, matvec_adjoint, swap


class SpectralError(RuntimeError):
    def __init__(self, msg: str, best_residual: float = math.nan):
        super().__init__(msg)
        self.best_residual = best_residual


class DegenerateInputError(ValueError):
    pass


class Method(str, enum.Enum):
    DENSE = "dense"
    ITERATIVE = "iterative"


class Verdict(str, enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    lambda1: float
    lambda2: complex
    bulk_radius: float
    xi1: np.ndarray
    xi2: np.ndarray
    method: Method
    residuals: tuple[float, float]
    converged: bool = True
    complex_pair: bool = False
    iterations: tuple[int, int] = (0, 0)
    eigenvalues: Optional[np.ndarray] = None

    @property
    def lambda2_mod(self) -> float:
        return abs(self.lambda2)

    def summary(self) -> dict:
        return {
            "lambda1": float(self.lambda1),
            "lambda2_mod": float(self.lambda2_mod),
            "bulk_radius": float(self.bulk_radius),
            "method": self.method.value,
            "residual1": float(self.residuals[0]),
            "residual2": float(self.residuals[1]),
        }


def _sort_by_modulus(vals: np.ndarray) -> np.ndarray:
    # modulus descending; ties broken by real part then imaginary part, descending
    r = np.round(np.abs(vals), 10)
    return np.lexsort((-vals.imag, -np.round(vals.real, 10), -r))


def _unit(x: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(x)
    return x / nrm if nrm > 0 else x


def _residual(op: NbOperator, lam: complex, x: np.ndarray) -> float:
    if op.dim == 0:
        return 0.0
    return float(np.linalg.norm(matvec(op, x) - lam * x) / max(np.linalg.norm(x), 1e-300))


def _empty_report(method: Method) -> SpectrumReport:
    z = np.zeros(0)
    return SpectrumReport(0.0, 0j, 0.0, z, z, method, (0.0, 0.0), eigenvalues=z.astype(complex))


def dense_spectrum(op: NbOperator, vectors: bool = True, limit: int = DENSE_LIMIT) -> SpectrumReport:
    """All eigenvalues of B, sorted by modulus, from a dense Hessenberg-QR solve."""
    if op.dim == 0:
        return _empty_report(Method.DENSE)
    M = dense_matrix(op, limit)
    try:
        if vectors:
            vals, vecs = np.linalg.eig(M)
        else:
            vals, vecs = np.linalg.eigvals(M), None
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"dense QR iteration did not converge: {exc}") from exc
    vals = vals.astype(complex)
    order = _sort_by_modulus(vals)
    vals = vals[order]
    lam1 = float(vals[0].real)
    lam2 = complex(vals[1]) if len(vals) > 1 else 0j
    bulk = float(abs(vals[2])) if len(vals) > 2 else 0.0
    if vecs is None:
        return SpectrumReport(lam1, lam2, bulk, np.zeros(0), np.zeros(0), Method.DENSE,
                              (math.nan, math.nan), eigenvalues=vals)
    vecs = vecs[:, order]
    xi1 = vecs[:, 0].real if abs(vals[0].imag) == 0 else vecs[:, 0]
    xi1 = _unit(xi1 * (1 if np.sum(xi1.real) >= 0 else -1))
    if len(vals) > 1:
        xi2 = vecs[:, 1].real if vals[1].imag == 0 else vecs[:, 1]
        xi2 = _unit(xi2)
    else:
        xi2 = np.zeros(op.dim)
    res = (_residual(op, vals[0], xi1), _residual(op, lam2, xi2) if len(vals) > 1 else 0.0)
    return SpectrumReport(lam1, lam2, bulk, xi1, xi2, Method.DENSE, res,
                          complex_pair=bool(lam2.imag != 0), eigenvalues=vals)


def _has_cycle(op: NbOperator) -> bool:
    # m - n + c > 0 on the vertices touched by edges
    m = op.dim // 2
    if m == 0:
        return False
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components

    u, v = op.tail[0::2], op.head[0::2]
    A = sp.coo_matrix((np.ones(m), (u, v)), shape=(op.n_vertices, op.n_vertices))
    ncomp, _ = connected_components(A, directed=False)
    isolated = op.n_vertices - len(np.unique(op.tail))
    return m - (op.n_vertices - isolated) + (ncomp - isolated) > 0


class _Deflator:
    """Oblique projection removing a set of right eigenvectors of B."""

    def __init__(self, op: NbOperator, vecs: Sequence[np.ndarray]):
        self.right = []
        self.left = []
        for x in vecs:
            y = swap(op, x)
            denom = y @ x
            if abs(denom) < 1e-14 * np.linalg.norm(x) ** 2:
                continue
            self.right.append(x)
            self.left.append(y / denom)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        out = z.astype(np.result_type(z, *self.right)) if self.right else z
        for x, y in zip(self.right, self.left):
            out = out - np.multiply.outer(x, y @ out) if out.ndim == 2 else out - x * (y @ out)
        if np.iscomplexobj(out) and not np.iscomplexobj(z):
            out = out.real
        return out


def _perron(op: NbOperator, max_iters: int, tol: float):
    x = np.full(op.dim, 1 / math.sqrt(op.dim))
    lam, res = 0.0, math.inf
    for it in range(1, max_iters + 1):
        bx = matvec(op, x)
        px = swap(op, x)
        denom = px @ x
        lam = float(px @ bx / denom) if denom > 0 else float(x @ bx)
        res = float(np.linalg.norm(bx - lam * x))
        if res <= tol * max(1.0, lam):
            return lam, x, res, it, True
        # unit shift keeps periodic (e.g. bipartite) cores from oscillating
        y = bx + x
        nrm = np.linalg.norm(y)
        if nrm == 0:
            break
        x = y / nrm
    return lam, x, res, max_iters, False


def _second_pair(op: NbOperator, deflate: _Deflator, lam1: float, max_iters: int, tol: float,
                 rng: np.random.Generator, block: int):
    p = min(block, op.dim - 1)
    if p <= 0:
        return 0j, np.zeros(op.dim), 0.0, 0, True
    Q0 = deflate(rng.standard_normal((op.dim, p)))
    Q0, _ = np.linalg.qr(Q0)
    out = _block_ritz(op, deflate, Q0, 0.0, lam1, max_iters, tol)
    if out[4]:
        return out
    # equal-modulus spectra (e.g. disjoint cycles) stall plain subspace
    # iteration; a unit shift separates the positive real eigenvalue
    shifted = _block_ritz(op, deflate, Q0, 1.0, lam1, max_iters, tol)
    if shifted[4] or shifted[2] < out[2]:
        return shifted[:3] + (out[3] + shifted[3], shifted[4])
    return out


def _block_ritz(op, deflate, Q, shift, lam1, max_iters, tol, patience=200):
    # stops early when the residual has not halved over ``patience`` steps,
    # which is the norm when lambda_2 sits inside the bulk
    best = (0j, Q[:, 0], math.inf)
    mark = math.inf
    for it in range(1, max_iters + 1):
        W = deflate(matvec(op, Q))
        H = Q.T @ W
        vals, svecs = np.linalg.eig(H)
        k = int(np.argmax(np.abs(vals + shift) + 1e-12 * vals.real))
        theta = complex(vals[k])
        if abs(theta.imag) <= 1e-12 * max(1.0, abs(theta)):
            theta = complex(theta.real, 0.0)
            u = Q @ svecs[:, k].real
        else:
            u = Q @ svecs[:, k]
        u = _unit(u)
        res = _residual(op, theta, u)
        if res < best[2]:
            best = (theta, u, res)
        if res <= tol * max(1.0, lam1):
            return theta, u, res, it, True
        if it % patience == 0:
            if best[2] > 0.5 * mark:
                return best + (it, False)
            mark = best[2]
        W, _ = np.linalg.qr(W + shift * Q)
        if not np.all(np.isfinite(W)):
            break
        Q = W
    return best + (it, False)


def _growth_rate(op: NbOperator, deflate: _Deflator, z: np.ndarray, steps: int) -> float:
    log_norm = 0.0
    z = _unit(deflate(z))
    for _ in range(steps):
        z = deflate(matvec(op, z))
        nrm = np.linalg.norm(z)
        if nrm == 0:
            return 0.0
        log_norm += math.log(nrm)
        z = z / nrm
    return math.exp(log_norm / steps)


def top_two_iterative(op: NbOperator, max_iters: int = 5000, tol: float = 1e-10,
                      seed: int = 0, block: int = 4, bulk_starts: int = 8) -> SpectrumReport:
    """Matrix-free estimates of the two leading eigenpairs and the bulk radius.

    The bulk radius is the median over ``bulk_starts`` random unit vectors of
    ``||B^L z||^(1/L)`` with both leading pairs deflated at every step and
    ``L = 2 ceil(log2(2m))``. Non-convergence is reported via
    ``converged=False`` instead of raising.
    """
    if op.dim == 0:
        return _empty_report(Method.ITERATIVE)
    rng = np.random.default_rng(seed)
    if not _has_cycle(op):
        # forests: B is nilpotent
        z = np.zeros(op.dim)
        return SpectrumReport(0.0, 0j, 0.0, _unit(np.ones(op.dim)), z, Method.ITERATIVE,
                              (0.0, 0.0), True, False, (0, 0))
    lam1, xi1, res1, it1, ok1 = _perron(op, max_iters, tol)
    defl1 = _Deflator(op, [xi1])
    lam2, xi2, res2, it2, ok2 = _second_pair(op, defl1, lam1, max_iters, tol, rng, block)
    is_complex = lam2.imag != 0
    pairs = [xi1, xi2] + ([np.conj(xi2)] if is_complex else [])
    defl2 = _Deflator(op, pairs)
    steps = 2 * math.ceil(math.log2(op.dim))
    rates = [_growth_rate(op, defl2, rng.standard_normal(op.dim), steps) for _ in range(bulk_starts)]
    bulk = float(np.median(rates)) if rates else 0.0
    return SpectrumReport(lam1, lam2, bulk, xi1, xi2, Method.ITERATIVE, (res1, res2),
                          ok1 and ok2, bool(is_complex), (it1, it2))


def riemann_check(report: SpectrumReport, margin: float = 0.0, tol: float = 1e-9):
    """Test ``|lambda_i| <= sqrt(lambda_1) + margin`` for all i >= 2.

    Returns ``(verdict, offenders)``. A dense report yields satisfied or
    violated. An iterative report only sees lambda_2, so it can show a
    violation but never certify the whole spectrum.
    """
    bound = math.sqrt(max(report.lambda1, 0.0)) + margin
    slack = tol * max(1.0, bound)
    if report.method is Method.DENSE and report.eigenvalues is not None:
        rest = report.eigenvalues[1:]
        offenders = [complex(v) for v in rest if abs(v) > bound + slack]
        return (Verdict.VIOLATED if offenders else Verdict.SATISFIED), offenders
    if report.converged and report.lambda2_mod > bound + slack and report.lambda2_mod > report.bulk_radius + slack:
        return Verdict.VIOLATED, [complex(report.lambda2)]
    return Verdict.INCONCLUSIVE, []


def alignment(u, v) -> float:
    u = np.asarray(u)
    v = np.asarray(v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("alignment of a zero vector is undefined")
    return float(min(1.0, abs(np.vdot(u, v)) / (nu * nv)))


@dataclass(frozen=True, eq=False)
class CandidateVectors:
    zeta1: np.ndarray
    zeta2: np.ndarray
    ell: int
    chi1: np.ndarray
    chi2: np.ndarray
    log_scale: tuple[float, float] = (0.0, 0.0)


def edge_chi(g: ColoredGraph, op: NbOperator, k: int) -> np.ndarray:
    """chi_k(e) = g_k(spin of head(e)) * weight of head(e)."""
    h = op.head
    return g_of_spin(k, g.spins[h]) * g.weights[h]


def power_pipeline(op: NbOperator, x: np.ndarray, ell: int) -> tuple[np.ndarray, float]:
    """Unit vector along ``B^ell B*^ell x`` and the log of its norm."""
    nrm = np.linalg.norm(x)
    if nrm == 0:
        raise DegenerateInputError("zero start vector")
    log_scale = math.log(nrm)
    x = x / nrm
    for step in range(2 * ell):
        x = matvec_adjoint(op, x) if step < ell else matvec(op, x)
        nrm = np.linalg.norm(x)
        if nrm == 0:
            raise DegenerateInputError(f"B^l B*^l chi vanished after {step + 1} products")
        log_scale += math.log(nrm)
        x = x / nrm
    return x, log_scale


def candidate_vectors(g: ColoredGraph, op: NbOperator, ell: int) -> CandidateVectors:
    """Ground-truth candidate eigenvectors ``B^l B*^l swap(chi_k)``, normalized."""
    if ell < 0:
        raise ValueError("ell must be >= 0")
    if op.dim == 0:
        raise DegenerateInputError("graph has no edges")
    chi = [edge_chi(g, op, k) for k in (1, 2)]
    out = [power_pipeline(op, swap(op, c), ell) for c in chi]
    return CandidateVectors(out[0][0], out[1][0], ell, chi[0], chi[1], (out[0][1], out[1][1]))


@dataclass(frozen=True)
class EllChoice:
    ell: int
    rho_hat: float
    subcritical: bool


def forward_branching(g: ColoredGraph) -> float:
    """Plug-in estimate sum d(d-1) / sum d of the mean forward branching."""
    d = g.degrees().astype(float)
    total = d.sum()
    if total == 0:
        raise DegenerateInputError("graph has no edges")
    return float((d * (d - 1)).sum() / total)


def ell_from(n: float, rho_hat: float, c: float = 0.4) -> EllChoice:
    if rho_hat <= 1:
        return EllChoice(1, rho_hat, True)
    return EllChoice(max(1, math.ceil(c * math.log(n) / math.log(rho_hat))), rho_hat, False)


def practical_ell(g: ColoredGraph, c: float = 0.4) -> EllChoice:
    return ell_from(g.n, forward_branching(g), c)


def spectrum_csv(report: SpectrumReport) -> str:
    if report.eigenvalues is None:
        raise ValueError("spectrum dump needs a dense report")
    buf = io.StringIO()
    buf.write("index,re,im,modulus\n")
    for i, v in enumerate(report.eigenvalues):
        buf.write(f"{i},{v.real!r},{v.imag!r},{abs(v)!r}\n")
    return buf.getvalue()


def summary_json(report: SpectrumReport) -> str:
    return json.dumps(report.summary(), sort_keys=True)
