"""Frequency localization: dual polynomial peaks, refitting, and classical
estimators (matrix pencil, Vandermonde decomposition of PSD Toeplitz matrices).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ComplexSignal,
    HermitianToeplitz,
    IndexSet,
    SampleSet,
    SpectralModel,
    min_separation,
    wrap_distance,
)

__all__ = [
    "DualPolynomial",
    "LocalizationOptions",
    "NonIsolatedMaximaError",
    "IllPosedFitError",
    "ModelOrderError",
    "NonUniqueDecompositionError",
    "CoefficientFit",
    "eval_dual_grid",
    "localize_frequencies",
    "fit_coefficients",
    "refine_model",
    "matrix_pencil",
    "vandermonde_decompose",
    "match_frequencies",
]


class NonIsolatedMaximaError(RuntimeError):
    """The dual polynomial modulus is (numerically) one everywhere."""


class IllPosedFitError(ValueError):
    """Atom system too ill-conditioned for a coefficient fit."""


class ModelOrderError(ValueError):
    """Requested model order exceeds the numerical rank of the data."""


class NonUniqueDecompositionError(ValueError):
    """Full-rank PSD Toeplitz input: the atomic decomposition is not unique."""


@dataclass(frozen=True, eq=False)
class DualPolynomial:
    """Trigonometric polynomial ``Q(f) = sum_j q_j exp(-i 2 pi j f)``."""

    index_set: IndexSet
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=complex)
        if q.ndim != 1 or q.size != self.index_set.size:
            raise ValueError("coefficient length must match the index set")
        object.__setattr__(self, "q", q)

    def __call__(self, f, order: int = 0) -> np.ndarray:
        """Evaluate the polynomial (or its ``order``-th derivative) directly."""
        f = np.atleast_1d(np.asarray(f, dtype=float))
        j = self.index_set.indices
        w = self.q * (-2j * np.pi * j) ** order if order else self.q
        out = np.exp(-2j * np.pi * np.outer(f, j)) @ w
        return out


@dataclass(frozen=True)
class LocalizationOptions:
    """Peak detection controls for reading frequencies off ``|Q|``."""

    grid_size: int = 1 << 14
    modulus_threshold: float = 1.0 - 1e-4
    refine_newton_steps: int = 20
    cluster_radius: float | None = None  # defaults to 2/grid_size

    def __post_init__(self):
        if self.grid_size < 4 or self.grid_size & (self.grid_size - 1):
            raise ValueError("grid_size must be a power of two >= 4")
        if not (0.0 < self.modulus_threshold < 1.0):
            raise ValueError("modulus_threshold must lie in (0, 1)")

    @property
    def effective_cluster_radius(self) -> float:
        if self.cluster_radius is not None:
            return self.cluster_radius
        return 2.0 / self.grid_size


def _scatter_coefficients(Q: DualPolynomial, grid_size: int, order: int = 0) -> np.ndarray:
    """Place (derivative-weighted) coefficients at ``j mod grid_size``."""
    j = Q.index_set.indices
    w = Q.q * (-2j * np.pi * j) ** order if order else Q.q.astype(complex)
    buf = np.zeros(grid_size, dtype=complex)
    np.add.at(buf, j % grid_size, w)
    return buf


def eval_dual_grid(Q: DualPolynomial, grid_size: int) -> np.ndarray:
    """``|Q(k/grid_size)|`` for k = 0..grid_size-1, via a single FFT.

    Since all indices satisfy ``|j| < grid_size``, the FFT of the
    coefficients scattered at ``j mod grid_size`` reproduces the direct
    summation exactly.
    """
    if grid_size < Q.index_set.size:
        raise ValueError(
            f"grid_size {grid_size} is smaller than the coefficient count "
            f"{Q.index_set.size}"
        )
    return np.abs(np.fft.fft(_scatter_coefficients(Q, grid_size)))


def _eval_grid_complex(Q: DualPolynomial, grid_size: int, order: int = 0) -> np.ndarray:
    return np.fft.fft(_scatter_coefficients(Q, grid_size, order))


def _refine_peak(Q: DualPolynomial, f0: float, half_width: float, steps: int) -> float:
    """Polish one local maximum of ``|Q|^2`` by safeguarded Newton."""

    def d1(f):
        v = Q(f)[0]
        dv = Q(f, 1)[0]
        return 2.0 * (dv * np.conj(v)).real

    def d2(f):
        v = Q(f)[0]
        dv = Q(f, 1)[0]
        d2v = Q(f, 2)[0]
        return 2.0 * (d2v * np.conj(v)).real + 2.0 * abs(dv) ** 2

    lo, hi = f0 - half_width, f0 + half_width
    f = f0
    for _ in range(max(steps, 0)):
        g = d1(f)
        h = d2(f)
        if h < 0 and np.isfinite(g):
            step = -g / h
            cand = f + step
            if lo <= cand <= hi:
                if abs(step) < 1e-16:
                    f = cand
                    break
                f = cand
                continue
        # bisection fallback on the derivative sign change
        glo, ghi = d1(lo), d1(hi)
        if glo <= 0 <= ghi or ghi <= 0 <= glo:
            a, b, ga = lo, hi, glo
            for _ in range(60):
                mid = 0.5 * (a + b)
                gm = d1(mid)
                if (gm <= 0) == (ga <= 0):
                    a, ga = mid, gm
                else:
                    b = mid
            f = 0.5 * (a + b)
        break
    return f % 1.0


def localize_frequencies(Q: DualPolynomial, opts: LocalizationOptions | None = None):
    """Frequencies at which ``|Q|`` attains (numerically) its unit maximum.

    Grid points above ``modulus_threshold`` (relative to the grid maximum)
    are clustered; each cluster's best point is refined by Newton iterations
    on the derivative of ``|Q|^2``.  Returns a sorted array, possibly empty.

    Raises
    ------
    NonIsolatedMaximaError
        if the threshold is exceeded everywhere, as happens for duals with
        constant modulus (such polynomials carry no frequency information).
    """
    opts = opts or LocalizationOptions()
    if opts.grid_size < 4 * Q.index_set.size:
        raise ValueError("grid_size must be at least 4x the coefficient count")
    if not np.any(Q.q):
        raise ValueError("dual polynomial is identically zero")
    grid = eval_dual_grid(Q, opts.grid_size)
    gmax = grid.max()
    if gmax == 0.0:
        return np.empty(0)
    level = opts.modulus_threshold * gmax
    hits = np.flatnonzero(grid >= level)
    if hits.size == 0:
        return np.empty(0)
    if hits.size == opts.grid_size:
        raise NonIsolatedMaximaError(
            "non-isolated maxima: |Q| exceeds the threshold at every grid point"
        )
    G = opts.grid_size
    # cluster circularly: break where the gap between consecutive hits is large
    gap_cells = max(1, int(round(opts.effective_cluster_radius * G)))
    breaks = np.flatnonzero(np.diff(hits) > gap_cells)
    groups = np.split(hits, breaks + 1)
    if len(groups) > 1 and (hits[0] + G - hits[-1]) <= gap_cells:
        groups[0] = np.concatenate([groups.pop(), groups[0]])
    freqs = []
    half = (gap_cells + 1) / G
    for g in groups:
        k = g[np.argmax(grid[g])]
        freqs.append(_refine_peak(Q, k / G, half, opts.refine_newton_steps))
    freqs = np.sort(np.unique(np.array(freqs) % 1.0))
    # enforce pairwise separation beyond the cluster radius
    if freqs.size >= 2:
        keep = [0]
        for i in range(1, freqs.size):
            if wrap_distance(freqs[i], freqs[keep[-1]]) > opts.effective_cluster_radius:
                keep.append(i)
        if len(keep) >= 2 and wrap_distance(freqs[keep[-1]], freqs[keep[0]]) <= opts.effective_cluster_radius:
            keep.pop()
        freqs = freqs[keep]
    return freqs


def _atom_matrix(freqs, indices) -> np.ndarray:
    return np.exp(2j * np.pi * np.outer(indices, np.asarray(freqs, dtype=float)))


@dataclass(frozen=True, eq=False)
class CoefficientFit:
    coefficients: np.ndarray
    residual: float
    condition: float


def fit_coefficients(freqs, obs: SampleSet, cond_limit: float = 1e12) -> CoefficientFit:
    """Least-squares coefficients for atoms at ``freqs`` against observations.

    Raises :class:`IllPosedFitError` when the atom system restricted to the
    mask is numerically rank deficient (condition estimate above
    ``cond_limit``).
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float)) % 1.0
    s = freqs.size
    if s == 0:
        return CoefficientFit(np.empty(0, dtype=complex), float(np.linalg.norm(obs.values)), 1.0)
    if obs.m < s:
        raise IllPosedFitError(f"need at least {s} observations, got {obs.m}")
    A = _atom_matrix(freqs, obs.mask)
    sv = np.linalg.svd(A, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if cond > cond_limit:
        raise IllPosedFitError(f"atom system condition {cond:.3e} exceeds {cond_limit:.1e}")
    c, *_ = np.linalg.lstsq(A, obs.values, rcond=None)
    r = float(np.linalg.norm(A @ c - obs.values))
    return CoefficientFit(c, r, cond)


def refine_model(freqs, obs: SampleSet, newton_steps: int = 20,
                 cond_limit: float = 1e12) -> tuple[SpectralModel, float]:
    """Jointly refine (frequencies, coefficients) against the observations.

    Damped Gauss-Newton on the least-squares residual, starting from the
    given frequencies; a step is kept only when it reduces the residual.
    Returns the refined model and its residual norm.
    """
    f = np.atleast_1d(np.asarray(freqs, dtype=float)) % 1.0
    fit = fit_coefficients(f, obs, cond_limit)
    c, best = fit.coefficients, fit.residual
    if f.size == 0:
        return SpectralModel.empty(), best
    y = obs.values
    idx = obs.mask
    for _ in range(max(newton_steps, 0)):
        A = _atom_matrix(f, idx)
        r = y - A @ c
        if best <= 1e-15 * max(1.0, float(np.linalg.norm(y))):
            break
        dA = (2j * np.pi * idx)[:, None] * A
        # real-parameter Jacobian for (f_k, Re c_k, Im c_k)
        Jf = dA * c[None, :]
        J = np.concatenate([Jf, A, 1j * A], axis=1)
        Jr = np.concatenate([J.real, J.imag], axis=0)
        rr = np.concatenate([r.real, r.imag])
        step, *_ = np.linalg.lstsq(Jr, rr, rcond=None)
        s = f.size
        df, dre, dim = step[:s], step[s : 2 * s], step[2 * s :]
        improved = False
        damp = 1.0
        for _ in range(12):
            f_try = (f + damp * df) % 1.0
            c_try = c + damp * (dre + 1j * dim)
            r_try = float(np.linalg.norm(y - _atom_matrix(f_try, idx) @ c_try))
            if r_try < best:
                f, c, best = f_try, c_try, r_try
                improved = True
                break
            damp *= 0.5
        if not improved:
            break
    keep = np.abs(c) > 0
    model = SpectralModel(f[keep], c[keep]) if keep.any() else SpectralModel.empty()
    return model, best


def matrix_pencil(x: ComplexSignal, s: int, sv_tol: float = 1e-8) -> np.ndarray:
    """Estimate ``s`` frequencies from fully observed samples.

    Builds the shifted Hankel pencil with pencil parameter ``L = |J|//2``
    and reads the frequencies off the angles of its generalized eigenvalues.
    Exact (to rounding) on noiseless data.
    """
    data = np.asarray(x.samples if isinstance(x, ComplexSignal) else x, dtype=complex)
    N = data.size
    if s < 1:
        raise ValueError("model order must be >= 1")
    if N < 2 * s:
        raise ValueError(f"need at least 2s = {2*s} samples, got {N}")
    L = max(s, min(N // 2, N - s))
    rows = N - L
    Y0 = np.lib.stride_tricks.sliding_window_view(data[:-1], L)[:rows]
    Y1 = np.lib.stride_tricks.sliding_window_view(data[1:], L)[:rows]
    U, sv, Vh = np.linalg.svd(Y0, full_matrices=False)
    if sv[0] == 0 or sv[min(s, sv.size) - 1] <= sv_tol * sv[0]:
        raise ModelOrderError(
            f"fewer than {s} significant singular values (tol {sv_tol:g})"
        )
    Us, svs, Vs = U[:, :s], sv[:s], Vh[:s].conj().T
    pencil = (Us.conj().T @ Y1 @ Vs) / svs[None, :]
    lam = np.linalg.eigvals(pencil)
    return np.sort(np.angle(lam) / (2.0 * np.pi) % 1.0)


def vandermonde_decompose(P: HermitianToeplitz, tol: float = 1e-8):
    """Decompose a PSD Toeplitz matrix as ``V diag(d) V^*`` with atom columns.

    The generator sequence extended by conjugate symmetry is itself a
    mixture of ``r`` exponentials with positive weights, so the frequencies
    come from the pencil estimator on that sequence and the weights from a
    least-squares fit.  Requires numerical rank ``r < size``.
    """
    u = P.first_column
    n = u.size
    T = P.matrix()
    w = np.linalg.eigvalsh(T)
    lam_max = float(w[-1]) if w.size else 0.0
    if lam_max <= 0.0:
        if w.size and w[0] < -tol:
            raise ValueError("matrix is not positive semidefinite")
        return np.empty(0), np.empty(0)
    if w[0] < -tol * lam_max:
        raise ValueError("matrix is not positive semidefinite within tolerance")
    r = int(np.count_nonzero(w > tol * lam_max))
    if r >= n:
        raise NonUniqueDecompositionError(
            "full numerical rank: atomic decomposition is not unique"
        )
    if r == 0:
        return np.empty(0), np.empty(0)
    ext = np.concatenate([np.conj(u[1:][::-1]), u])  # indices -(n-1)..n-1
    freqs = matrix_pencil(ComplexSignal(IndexSet.first_n(ext.size), ext), r,
                          sv_tol=min(tol, 1e-8))
    j = np.arange(-(n - 1), n)
    E = np.exp(2j * np.pi * np.outer(j, freqs))
    d, *_ = np.linalg.lstsq(E, ext, rcond=None)
    d = d.real
    keep = d > 0
    return freqs[keep], d[keep]


def match_frequencies(estimated, truth) -> np.ndarray:
    """Per-truth wrap-around errors under optimal assignment.

    Greedy on the sorted circular arrangement is not reliable, so use the
    rectangular assignment on the wrap-distance cost matrix.
    """
    est = np.atleast_1d(np.asarray(estimated, dtype=float))
    tru = np.atleast_1d(np.asarray(truth, dtype=float))
    if tru.size == 0:
        return np.empty(0)
    if est.size == 0:
        return np.full(tru.size, 0.5)
    d = np.abs(est[None, :] - tru[:, None]) % 1.0
    cost = np.minimum(d, 1.0 - d)
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(cost)
    out = np.full(tru.size, 0.5)
    out[rows] = cost[rows, cols]
    return out
