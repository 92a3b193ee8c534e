"""Index sets, atoms, signal synthesis and frequency geometry.

The signal model is a mixture of complex sinusoids observed on a set of
regularly spaced integer indices.  Two index conventions are supported:
``{0, ..., n-1}`` and the symmetric window ``{-2M, ..., 2M}``.  All
frequencies live on the circle [0, 1) with 0 and 1 identified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "IndexSet",
    "SpectralModel",
    "SampleSet",
    "ComplexSignal",
    "HermitianToeplitz",
    "SymmetricReduction",
    "atom",
    "synthesize",
    "wrap_distance",
    "min_separation",
    "shift_to_symmetric",
    "shift_model_to_symmetric",
    "shift_sampleset_to_symmetric",
    "toeplitz_matrix",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class IndexSet:
    """Set of integer sample indices, either ``{0..n-1}`` or ``{-2M..2M}``.

    Construct via :meth:`first_n` or :meth:`symmetric`.
    """

    kind: str  # "first_n" | "symmetric"
    param: int  # n for first_n, M for symmetric

    def __post_init__(self):
        if self.kind == "first_n":
            if self.param < 2:
                raise ValueError(f"first_n index set needs n >= 2, got {self.param}")
        elif self.kind == "symmetric":
            if self.param < 1:
                raise ValueError(f"symmetric index set needs M >= 1, got {self.param}")
        else:
            raise ValueError(f"unknown index set kind {self.kind!r}")

    @staticmethod
    def first_n(n: int) -> "IndexSet":
        return IndexSet("first_n", int(n))

    @staticmethod
    def symmetric(M: int) -> "IndexSet":
        return IndexSet("symmetric", int(M))

    @property
    def size(self) -> int:
        return self.param if self.kind == "first_n" else 4 * self.param + 1

    @property
    def indices(self) -> np.ndarray:
        """Strictly increasing integer indices."""
        if self.kind == "first_n":
            return np.arange(self.param)
        m = self.param
        return np.arange(-2 * m, 2 * m + 1)

    def __len__(self) -> int:
        return self.size

    def contains(self, j: int) -> bool:
        if self.kind == "first_n":
            return 0 <= j < self.param
        return -2 * self.param <= j <= 2 * self.param


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Ground truth mixture: frequencies in [0, 1) with complex coefficients.

    Frequencies are reduced mod 1 on entry and must be pairwise distinct
    under the wrap-around distance; coefficients must be nonzero.
    """

    frequencies: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.frequencies, dtype=float)) % 1.0
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=complex))
        if f.shape != c.shape or f.ndim != 1:
            raise ValueError("frequencies and coefficients must be 1-d and equal length")
        if f.size and np.any(c == 0):
            raise ValueError("coefficients must be nonzero")
        if f.size >= 2 and min_separation(f) == 0.0:
            raise ValueError("duplicate frequencies are not allowed")
        object.__setattr__(self, "frequencies", _readonly(f))
        object.__setattr__(self, "coefficients", _readonly(c))

    @staticmethod
    def empty() -> "SpectralModel":
        return SpectralModel(np.empty(0), np.empty(0, dtype=complex))

    @property
    def s(self) -> int:
        return self.frequencies.size

    @property
    def min_separation(self) -> float:
        return min_separation(self.frequencies)

    def sorted(self) -> "SpectralModel":
        order = np.argsort(self.frequencies)
        return SpectralModel(self.frequencies[order], self.coefficients[order])


@dataclass(frozen=True, eq=False)
class ComplexSignal:
    """Complex samples attached to every index of an :class:`IndexSet`."""

    index_set: IndexSet
    samples: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=complex)
        if x.ndim != 1 or x.size != self.index_set.size:
            raise ValueError(
                f"expected {self.index_set.size} samples, got shape {x.shape}"
            )
        object.__setattr__(self, "samples", _readonly(x))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.samples))

    def value_at(self, j: int) -> complex:
        if self.index_set.kind == "first_n":
            return complex(self.samples[j])
        return complex(self.samples[j + 2 * self.index_set.param])


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Observed entries of a signal: a sorted mask T and one value per index."""

    index_set: IndexSet
    mask: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.mask, dtype=int)
        v = np.asarray(self.values, dtype=complex)
        if t.ndim != 1 or v.shape != t.shape:
            raise ValueError("mask and values must be 1-d and equal length")
        if t.size != np.unique(t).size:
            raise ValueError("mask contains duplicate indices")
        order = np.argsort(t)
        t, v = t[order], v[order]
        lo, hi = self.index_set.indices[0], self.index_set.indices[-1]
        if t.size and (t[0] < lo or t[-1] > hi):
            raise ValueError("mask is not a subset of the index set")
        object.__setattr__(self, "mask", _readonly(t))
        object.__setattr__(self, "values", _readonly(v))

    @property
    def m(self) -> int:
        return self.mask.size

    @property
    def positions(self) -> np.ndarray:
        """Mask as 0-based positions into the index set ordering."""
        return self.mask - self.index_set.indices[0]

    @staticmethod
    def from_signal(signal: ComplexSignal, mask) -> "SampleSet":
        mask = np.asarray(mask, dtype=int)
        pos = mask - signal.index_set.indices[0]
        return SampleSet(signal.index_set, mask, signal.samples[pos])

    def full(self) -> bool:
        return self.m == self.index_set.size


@dataclass(frozen=True, eq=False)
class HermitianToeplitz:
    """Hermitian Toeplitz matrix represented by its first column."""

    first_column: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.first_column, dtype=complex)
        if u.ndim != 1 or u.size == 0:
            raise ValueError("first column must be a nonempty vector")
        if abs(u[0].imag) > 1e-12 * max(1.0, abs(u[0])):
            raise ValueError("leading entry must be real for a Hermitian Toeplitz matrix")
        u = u.copy()
        u[0] = u[0].real
        object.__setattr__(self, "first_column", _readonly(u))

    @property
    def size(self) -> int:
        return self.first_column.size

    def matrix(self) -> np.ndarray:
        return toeplitz_matrix(self.first_column)


def atom(f: float, phi: float, index_set: IndexSet) -> ComplexSignal:
    """Unit-modulus exponential ``exp(i(2*pi*f*j + phi))`` over the index set.

    Parameters
    ----------
    f : frequency in [0, 1)
    phi : phase in [0, 2*pi)
    """
    if not (0.0 <= f < 1.0):
        raise ValueError(f"frequency must lie in [0, 1), got {f}")
    if not (0.0 <= phi < 2.0 * math.pi):
        raise ValueError(f"phase must lie in [0, 2*pi), got {phi}")
    j = index_set.indices
    return ComplexSignal(index_set, np.exp(1j * (2.0 * np.pi * f * j + phi)))


def synthesize(model: SpectralModel, index_set: IndexSet) -> ComplexSignal:
    """Evaluate ``x_j = sum_k c_k exp(i 2 pi f_k j)`` on the index set."""
    j = index_set.indices
    if model.s == 0:
        return ComplexSignal(index_set, np.zeros(index_set.size, dtype=complex))
    phases = np.exp(2j * np.pi * np.outer(j, model.frequencies))
    return ComplexSignal(index_set, phases @ model.coefficients)


def wrap_distance(f1: float, f2: float) -> float:
    """Wrap-around distance on the unit circle, in [0, 0.5]."""
    d = abs(f1 - f2) % 1.0
    return min(d, 1.0 - d)


def min_separation(freqs) -> float:
    """Minimum pairwise wrap-around distance; +inf for fewer than 2 points."""
    f = np.sort(np.asarray(freqs, dtype=float) % 1.0)
    if f.size < 2:
        return math.inf
    gaps = np.diff(f)
    wrap_gap = 1.0 - (f[-1] - f[0])
    return float(min(gaps.min(), wrap_gap))


@dataclass(frozen=True, eq=False)
class SymmetricReduction:
    """Result of re-centering a first-n signal onto a symmetric window.

    ``signal.samples[j + 2M]`` equals the original sample at index
    ``j + 2M``; the trailing original indices ``{4M+1, ..., n-1}`` fall
    outside the window and are reported in ``dropped_indices``.
    """

    signal: ComplexSignal
    M: int
    n0: int
    dropped_indices: np.ndarray
    dropped_samples: np.ndarray


def shift_to_symmetric(x: ComplexSignal) -> SymmetricReduction:
    """Re-center a signal on ``{0..n-1}`` to the window ``{-2M..2M}``.

    Uses ``M = floor((n-1)/4)`` and ``n0 = n - 4M``, so the symmetric window
    covers original indices ``0..4M`` and the remaining ``n0 - 1`` trailing
    samples are dropped (and returned for bookkeeping).
    """
    if x.index_set.kind != "first_n":
        raise ValueError("input must live on a first_n index set")
    n = x.index_set.param
    if n < 5:
        raise ValueError(f"need n >= 5 to form a symmetric window, got n={n}")
    M = (n - 1) // 4
    n0 = n - 4 * M
    kept = x.samples[: 4 * M + 1]
    dropped_idx = np.arange(4 * M + 1, n)
    return SymmetricReduction(
        signal=ComplexSignal(IndexSet.symmetric(M), kept),
        M=M,
        n0=n0,
        dropped_indices=_readonly(dropped_idx),
        dropped_samples=_readonly(x.samples[4 * M + 1 :].copy()),
    )


def shift_model_to_symmetric(model: SpectralModel, M: int) -> SpectralModel:
    """Model for the re-centered signal: coefficients pick up ``e^{i 4 pi f M}``."""
    mod = np.exp(2j * np.pi * model.frequencies * (2 * M))
    return SpectralModel(model.frequencies, model.coefficients * mod)


def shift_sampleset_to_symmetric(obs: SampleSet) -> tuple[SampleSet, int, int, np.ndarray]:
    """Apply the same re-centering to an observation set.

    Returns the shifted observations, M, n0, and the observed original
    indices that fell outside the symmetric window.
    """
    if obs.index_set.kind != "first_n":
        raise ValueError("input must live on a first_n index set")
    n = obs.index_set.param
    if n < 5:
        raise ValueError(f"need n >= 5 to form a symmetric window, got n={n}")
    M = (n - 1) // 4
    n0 = n - 4 * M
    keep = obs.mask <= 4 * M
    shifted = SampleSet(
        IndexSet.symmetric(M), obs.mask[keep] - 2 * M, obs.values[keep]
    )
    return shifted, M, n0, obs.mask[~keep].copy()


def toeplitz_matrix(u) -> np.ndarray:
    """Dense Hermitian Toeplitz matrix with first column ``u``.

    Entry ``(j, k)`` is ``u[j-k]`` for ``j >= k`` and ``conj(u[k-j])``
    otherwise.
    """
    u = np.asarray(u, dtype=complex)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("u must be a nonempty vector")
    n = u.size
    ext = np.concatenate([np.conj(u[1:][::-1]), u])  # index by n-1 + (j-k)
    j, k = np.indices((n, n))
    t = ext[n - 1 + j - k]
    # force an exactly real diagonal
    np.fill_diagonal(t, u[0].real)
    return t
