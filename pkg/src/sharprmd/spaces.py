"""Signal spaces, l_p / Schatten-p norms and spectral primitives.

Three spaces are supported: vectors in R^n, symmetric matrices S^n and
rectangular matrices R^{n x N} (stored with n <= N). Matrix norms are the
Schatten norms, i.e. l_p norms of the singular values. Symmetric matrices
go through an eigendecomposition so that eigenvalue signs stay available.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

#: relative cutoff below which singular / eigen values count as zero
SPECTRAL_TOL = 1e-12


class Kind(str, enum.Enum):
    VECTOR = "vector"
    SYMMETRIC = "symmetric"
    RECTANGULAR = "rectangular"


@dataclass(frozen=True, eq=False)
class Signal:
    """An element of one of the three signal spaces.

    Symmetric data is symmetrized on construction. Rectangular data with
    more rows than columns is transposed and ``flipped`` is set.
    """

    kind: Kind
    data: np.ndarray
    flipped: bool = False

    def __post_init__(self):
        kind = Kind(self.kind)
        data = np.array(self.data, dtype=float)
        flipped = self.flipped
        if kind is Kind.VECTOR:
            if data.ndim != 1:
                raise ValueError(f"vector signal needs a 1-d array, got shape {data.shape}")
        elif kind is Kind.SYMMETRIC:
            if data.ndim != 2 or data.shape[0] != data.shape[1]:
                raise ValueError(f"symmetric signal needs a square array, got shape {data.shape}")
            data = 0.5 * (data + data.T)
        else:
            if data.ndim != 2:
                raise ValueError(f"rectangular signal needs a 2-d array, got shape {data.shape}")
            if data.shape[0] > data.shape[1]:
                data = np.ascontiguousarray(data.T)
                flipped = not flipped
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "flipped", flipped)

    @classmethod
    def _wrap(cls, kind: Kind, data: np.ndarray, flipped: bool = False) -> "Signal":
        # trusted constructor: caller guarantees shape and symmetry
        obj = object.__new__(cls)
        object.__setattr__(obj, "kind", kind)
        object.__setattr__(obj, "data", data)
        object.__setattr__(obj, "flipped", flipped)
        return obj

    @classmethod
    def vector(cls, data) -> "Signal":
        return cls(Kind.VECTOR, data)

    @classmethod
    def symmetric(cls, data) -> "Signal":
        return cls(Kind.SYMMETRIC, data)

    @classmethod
    def rectangular(cls, data) -> "Signal":
        return cls(Kind.RECTANGULAR, data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dim(self) -> int:
        """Number of entries (vectors) or singular values (matrices)."""
        return min(self.data.shape)

    def like(self, data: np.ndarray) -> "Signal":
        """Wrap ``data`` as a signal of the same kind, resymmetrizing if needed."""
        if self.kind is Kind.SYMMETRIC:
            data = 0.5 * (data + data.T)
        return Signal._wrap(self.kind, data, self.flipped)

    def zeros_like(self) -> "Signal":
        return Signal._wrap(self.kind, np.zeros_like(self.data), self.flipped)

    def copy(self) -> "Signal":
        return Signal._wrap(self.kind, self.data.copy(), self.flipped)

    def _check(self, other: "Signal"):
        if other.kind is not self.kind or other.data.shape != self.data.shape:
            raise ValueError(
                f"signal mismatch: {self.kind.value}{self.data.shape} vs "
                f"{other.kind.value}{other.data.shape}"
            )

    def __add__(self, other: "Signal") -> "Signal":
        self._check(other)
        return Signal._wrap(self.kind, self.data + other.data, self.flipped)

    def __sub__(self, other: "Signal") -> "Signal":
        self._check(other)
        return Signal._wrap(self.kind, self.data - other.data, self.flipped)

    def __neg__(self) -> "Signal":
        return Signal._wrap(self.kind, -self.data, self.flipped)

    def __mul__(self, scalar: float) -> "Signal":
        return Signal._wrap(self.kind, float(scalar) * self.data, self.flipped)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Signal({self.kind.value}, shape={self.data.shape})"


@dataclass(frozen=True)
class Geometry:
    """Exponent of the l_p / Schatten-p geometry used by mirror descent."""

    p: float
    q: float = field(init=False)

    def __post_init__(self):
        if not (1.0 < self.p <= 2.0):
            raise ValueError(f"geometry exponent must lie in (1, 2], got {self.p}")
        object.__setattr__(self, "q", self.p / (self.p - 1.0))

    @classmethod
    def for_dimension(cls, dim: int) -> "Geometry":
        """The choice p = 1 + 1/ln(dim), capped at 2 for tiny dimensions."""
        if dim <= 2:
            return cls(2.0)
        return cls(min(2.0, 1.0 + 1.0 / math.log(dim)))


@dataclass(frozen=True)
class SpectralDecomposition:
    """``x = left @ diag(values) @ right.T``.

    Singular values are nonnegative; eigenvalues of symmetric input keep
    their sign (``right is left``). Both are sorted by decreasing magnitude.
    """

    left: np.ndarray
    values: np.ndarray
    right: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.values) @ self.right.T


def decompose(x: Signal) -> SpectralDecomposition:
    if x.kind is Kind.VECTOR:
        raise ValueError("spectral decomposition is only defined for matrix signals")
    if x.kind is Kind.SYMMETRIC:
        lam, U = np.linalg.eigh(x.data)
        order = np.argsort(-np.abs(lam), kind="stable")
        U = U[:, order]
        return SpectralDecomposition(U, lam[order], U)
    U, s, Vt = np.linalg.svd(x.data, full_matrices=False)
    return SpectralDecomposition(U, s, Vt.T)


def spectrum(x: Signal) -> np.ndarray:
    """Entrywise magnitudes (vectors) or singular values (matrices)."""
    if x.kind is Kind.VECTOR:
        return np.abs(x.data)
    if x.kind is Kind.SYMMETRIC:
        return np.abs(np.linalg.eigvalsh(x.data))
    return np.linalg.svd(x.data, compute_uv=False)


def lp_norm(v: np.ndarray, p: float) -> float:
    """l_p norm of a real array, rescaled so large p neither under- nor overflows."""
    a = np.abs(np.ravel(v))
    if a.size == 0:
        return 0.0
    if p == 1:
        return float(a.sum())
    if p == 2:
        return float(np.sqrt(np.dot(a, a)))
    big = a.max()
    if math.isinf(p) or big == 0.0:
        return float(big)
    return float(big * np.sum((a / big) ** p) ** (1.0 / p))


def norm_p(x: Signal, p: float) -> float:
    """l_p norm of a vector, Schatten-p norm of a matrix."""
    if p < 1:
        raise ValueError(f"norm exponent must be >= 1, got {p}")
    if x.kind is Kind.VECTOR:
        return lp_norm(x.data, p)
    if p == 2:
        return float(np.linalg.norm(x.data))
    return lp_norm(spectrum(x), p)


def dual_pair(g: Signal, x: Signal) -> float:
    """Dot product for vectors, trace inner product for matrices."""
    g._check(x)
    return float(np.vdot(g.data, x.data))


def _clip_small(mags: np.ndarray) -> np.ndarray:
    if mags.size == 0:
        return mags
    top = mags.max()
    return np.where(mags > SPECTRAL_TOL * top, mags, 0.0)


def spectral_function(x: Signal, phi: Callable[[np.ndarray], np.ndarray]) -> Signal:
    """Apply ``phi`` to magnitudes and keep signs (odd extension).

    ``phi`` receives nonnegative magnitudes: entries of a vector, singular
    values of a rectangular matrix, |eigenvalues| of a symmetric one. Values
    under the spectral tolerance are treated as exact zeros and map to zero.
    """
    if x.kind is Kind.VECTOR:
        mags = _clip_small(np.abs(x.data))
        out = np.zeros_like(mags)
        nz = mags > 0
        out[nz] = np.sign(x.data[nz]) * phi(mags[nz])
        return Signal._wrap(x.kind, out, x.flipped)
    dec = decompose(x)
    mags = _clip_small(np.abs(dec.values))
    vals = np.zeros_like(mags)
    nz = mags > 0
    vals[nz] = np.sign(dec.values[nz]) * phi(mags[nz])
    return x.like((dec.left * vals) @ dec.right.T)


def _power_map(mags: np.ndarray, s: float) -> np.ndarray:
    # |v|^{s-1} * ||v||_s^{2-s}; 1-homogeneous, evaluated on v / max|v|
    top = mags.max()
    u = mags / top
    return top * u ** (s - 1.0) * np.sum(u**s) ** ((2.0 - s) / s)


def grad_half_sq_norm(x: Signal, s: float) -> Signal:
    """Gradient of 1/2 ||x||_s^2 for s in (1, inf).

    With s = p this is the forward mirror map of 1/2 ||x - anchor||_p^2
    (shifted by the anchor); with s = q it is the inverse map.
    """
    if x.kind is Kind.VECTOR:
        a = np.abs(x.data)
        top = a.max() if a.size else 0.0
        if top == 0.0:
            return x.zeros_like()
        if s == 2.0:
            return x.copy()
        a /= top
        w = a ** (s - 1.0)
        total = float(np.dot(a, w))  # sum of a^s
        w *= top * total ** ((2.0 - s) / s)
        return Signal._wrap(x.kind, np.copysign(w, x.data), x.flipped)
    if not np.any(x.data):
        return x.zeros_like()
    if s == 2.0:
        return x.copy()
    return spectral_function(x, lambda m: _power_map(m, s))
