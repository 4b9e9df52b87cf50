"""Gaussian measurement models, their adjoints and sampled RIP bounds."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .spaces import Kind, Signal


class Model(str, enum.Enum):
    SPARSE_VECTOR = "sparse_vector"
    MATRIX_DENSE = "matrix_dense"
    MATRIX_BILINEAR = "matrix_bilinear"
    COVARIANCE_RANK_ONE = "covariance_rank_one"
    COVARIANCE_DIFFERENCE = "covariance_difference"


class Scaling(str, enum.Enum):
    """Variance convention, and the norm put on the measurement space."""

    ELL_TWO = "ell_two"
    ELL_ONE = "ell_one"


_MODEL_KIND = {
    Model.SPARSE_VECTOR: Kind.VECTOR,
    Model.MATRIX_DENSE: Kind.RECTANGULAR,
    Model.MATRIX_BILINEAR: Kind.RECTANGULAR,
    Model.COVARIANCE_RANK_ONE: Kind.SYMMETRIC,
    Model.COVARIANCE_DIFFERENCE: Kind.SYMMETRIC,
}

_MODEL_TAG = {model: i for i, model in enumerate(Model)}
_SCALING_TAG = {Scaling.ELL_TWO: 0, Scaling.ELL_ONE: 1}

_HEADER = struct.Struct("<4sHBBQQQQ")
_MAGIC = b"SRMD"
_VERSION = 1


def default_scaling(model: Model) -> Scaling:
    """l2 on the measurement space where allowed, l1 for the quadratic models."""
    if model in (Model.SPARSE_VECTOR, Model.MATRIX_DENSE):
        return Scaling.ELL_TWO
    return Scaling.ELL_ONE


def w_norm(v: np.ndarray, scaling: Scaling) -> float:
    if scaling is Scaling.ELL_ONE:
        return float(np.abs(v).sum())
    return float(np.sqrt(np.dot(v, v)))


@dataclass(frozen=True, eq=False)
class SensingOperator:
    """Linear map from a signal space to R^m, with explicitly stored atoms.

    ``atoms`` layout per model:

    * sparse_vector: ``(A,)`` with ``A`` of shape (m, n)
    * matrix_dense: ``(A,)`` with ``A`` of shape (m, n, N)
    * matrix_bilinear: ``(a, b)`` of shapes (m, n) and (m, N)
    * covariance_rank_one: ``(a,)`` of shape (m, n)
    * covariance_difference: ``(a, b)`` both of shape (m, n)
    """

    model: Model
    n: int
    N: int
    m: int
    scaling: Scaling
    seed: int | None
    atoms: tuple
    _At: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.model is Model.SPARSE_VECTOR:
            # contiguous transpose: A.T @ w on a C-ordered A is much slower than A @ x
            At = np.ascontiguousarray(self.atoms[0].T)
            At.setflags(write=False)
            object.__setattr__(self, "_At", At)

    @property
    def kind(self) -> Kind:
        return _MODEL_KIND[self.model]

    @property
    def signal_shape(self) -> tuple[int, ...]:
        if self.kind is Kind.VECTOR:
            return (self.n,)
        return (self.n, self.N)

    def zero_signal(self) -> Signal:
        return Signal._wrap(self.kind, np.zeros(self.signal_shape))

    def _check_signal(self, x: Signal):
        if x.kind is not self.kind or x.data.shape != self.signal_shape:
            raise ValueError(
                f"{self.model.value} expects a {self.kind.value} signal of shape "
                f"{self.signal_shape}, got {x.kind.value}{x.data.shape}"
            )

    def apply(self, x: Signal) -> np.ndarray:
        self._check_signal(x)
        X = x.data
        model = self.model
        if model is Model.SPARSE_VECTOR:
            return self.atoms[0] @ X
        if model is Model.MATRIX_DENSE:
            A = self.atoms[0]
            return A.reshape(self.m, -1) @ X.ravel()
        if model is Model.MATRIX_BILINEAR:
            a, b = self.atoms
            return np.einsum("ij,ij->i", a @ X, b)
        if model is Model.COVARIANCE_RANK_ONE:
            a = self.atoms[0]
            return np.einsum("ij,ij->i", a @ X, a)
        a, b = self.atoms
        return np.einsum("ij,ij->i", a @ X, a) - np.einsum("ij,ij->i", b @ X, b)

    def adjoint(self, w: np.ndarray) -> Signal:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.m,):
            raise ValueError(f"adjoint expects a vector of length {self.m}, got shape {w.shape}")
        model = self.model
        if model is Model.SPARSE_VECTOR:
            return Signal._wrap(Kind.VECTOR, self._At @ w)
        if model is Model.MATRIX_DENSE:
            A = self.atoms[0]
            return Signal._wrap(Kind.RECTANGULAR, (w @ A.reshape(self.m, -1)).reshape(self.n, self.N))
        if model is Model.MATRIX_BILINEAR:
            a, b = self.atoms
            return Signal._wrap(Kind.RECTANGULAR, a.T @ (w[:, None] * b))
        if model is Model.COVARIANCE_RANK_ONE:
            a = self.atoms[0]
            out = a.T @ (w[:, None] * a)
        else:
            a, b = self.atoms
            out = a.T @ (w[:, None] * a) - b.T @ (w[:, None] * b)
        return Signal._wrap(Kind.SYMMETRIC, 0.5 * (out + out.T))

    def measurement_norm(self, v: np.ndarray) -> float:
        return w_norm(v, self.scaling)

    def operator_norm_bound(self, norm: Scaling | None = None, iters: int = 50) -> float:
        """Largest ||A(x)||_W over unit l1 / nuclear-norm x.

        The supremum sits at an extreme point of the unit ball (a signed
        coordinate vector or a rank-one matrix). It is computed exactly for
        the vector model and the rank-one covariance model under l1, bounded
        above for the covariance difference model under l1, and estimated by
        alternating ascent over rank-one directions otherwise.
        """
        norm = self.scaling if norm is None else Scaling(norm)
        model = self.model
        if model is Model.SPARSE_VECTOR:
            A = self.atoms[0]
            if norm is Scaling.ELL_ONE:
                return float(np.abs(A).sum(axis=0).max())
            return float(np.sqrt((A * A).sum(axis=0)).max())
        if model is Model.COVARIANCE_RANK_ONE and norm is Scaling.ELL_ONE:
            a = self.atoms[0]
            return float(np.linalg.eigvalsh(a.T @ a)[-1])
        if model is Model.COVARIANCE_DIFFERENCE and norm is Scaling.ELL_ONE:
            a, b = self.atoms
            # |a'xx'a - b'xx'b| <= (a'x)^2 + (b'x)^2
            return float(np.linalg.eigvalsh(a.T @ a + b.T @ b)[-1])
        return _rank_one_ascent(self, norm, iters)

    # -- serialization ---------------------------------------------------

    def to_bytes(self) -> bytes:
        """Header-only container; atoms are regenerated from the seed on load."""
        if self.seed is None:
            raise ValueError("operators built from explicit atoms have no seed; use save_dense")
        return _HEADER.pack(
            _MAGIC, _VERSION, _MODEL_TAG[self.model], _SCALING_TAG[self.scaling],
            self.n, self.N, self.m, self.seed,
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SensingOperator":
        magic, version, mtag, stag, n, N, m, seed = _HEADER.unpack(blob[: _HEADER.size])
        if magic != _MAGIC or version != _VERSION:
            raise ValueError("not a sensing-operator container")
        model = list(Model)[mtag]
        scaling = Scaling.ELL_ONE if stag == 1 else Scaling.ELL_TWO
        return build_sensing(model, n, N, m, scaling=scaling, seed=seed)

    def save_dense(self, path) -> None:
        """Explicit dump of every atom (``.npz``) for cross-implementation checks."""
        np.savez(
            path,
            model=np.array(self.model.value),
            scaling=np.array(self.scaling.value),
            dims=np.array([self.n, self.N, self.m], dtype=np.int64),
            seed=np.array(-1 if self.seed is None else self.seed, dtype=np.int64),
            **{f"atom{i}": arr for i, arr in enumerate(self.atoms)},
        )

    @classmethod
    def load_dense(cls, path) -> "SensingOperator":
        with np.load(path) as data:
            model = Model(str(data["model"]))
            n, N, m = (int(v) for v in data["dims"])
            seed = int(data["seed"])
            count = sum(1 for key in data.files if key.startswith("atom"))
            atoms = tuple(np.array(data[f"atom{i}"]) for i in range(count))
            scaling = Scaling(str(data["scaling"]))
        op = from_atoms(model, atoms, scaling=scaling)
        object.__setattr__(op, "seed", None if seed < 0 else seed)
        return op


def _freeze(*arrays: np.ndarray) -> tuple:
    for arr in arrays:
        arr.setflags(write=False)
    return arrays


def _rank_one_ascent(op: SensingOperator, norm: Scaling, iters: int) -> float:
    # alternating maximization of ||A(u v')||_W over unit u, v
    best = 0.0
    gen = rng.stream(0, rng.TAG_RIP, 99)
    sym = op.kind is Kind.SYMMETRIC
    n, N = op.n, op.N
    for _ in range(3):
        u = gen.standard_normal(n)
        u /= np.linalg.norm(u)
        v = u.copy() if sym else gen.standard_normal(N)
        v /= np.linalg.norm(v)
        for _ in range(iters):
            X = np.outer(u, v)
            res = op.apply(Signal._wrap(op.kind, X))
            dual = np.sign(res) if norm is Scaling.ELL_ONE else res / max(np.linalg.norm(res), 1e-300)
            G = op.adjoint(dual).data
            if sym:
                lam, U = np.linalg.eigh(G)
                j = int(np.argmax(np.abs(lam)))
                u = v = U[:, j]
            else:
                U, _, Vt = np.linalg.svd(G)
                u, v = U[:, 0], Vt[0]
        X = np.outer(u, v)
        val = w_norm(op.apply(Signal._wrap(op.kind, X)), norm)
        best = max(best, val)
    return best


def _check_dims(model: Model, n: int, N: int | None) -> tuple[int, int]:
    if n < 1 or (N is not None and N < 1):
        raise ValueError(f"dimensions must be positive, got n={n}, N={N}")
    if model is Model.SPARSE_VECTOR:
        return n, 1
    if model in (Model.COVARIANCE_RANK_ONE, Model.COVARIANCE_DIFFERENCE):
        if N is not None and N != n:
            raise ValueError(f"{model.value} acts on symmetric n x n matrices; got N={N} != n={n}")
        return n, n
    N = n if N is None else N
    if n > N:  # stored as the transposed problem
        n, N = N, n
    return n, N


def build_sensing(
    model: Model | str,
    n: int,
    N: int | None = None,
    m: int = 1,
    scaling: Scaling | str | None = None,
    seed: int = 0,
) -> SensingOperator:
    """Draw a Gaussian sensing operator.

    Atom ``i`` is drawn from its own Philox stream keyed by ``(seed, i)``.
    Per-coordinate variances: 1/m (ell_two) or 1/m^2 (ell_one) for the
    sparse and dense-matrix models; 1/m for bilinear and rank-one
    covariance; 1/(2m) for the covariance difference model.
    """
    model = Model(model)
    scaling = default_scaling(model) if scaling is None else Scaling(scaling)
    n, N = _check_dims(model, n, N)
    if m < 1:
        raise ValueError(f"need at least one measurement, got m={m}")
    if model in (Model.SPARSE_VECTOR, Model.MATRIX_DENSE):
        std = 1.0 / math.sqrt(m) if scaling is Scaling.ELL_TWO else 1.0 / m
    elif model is Model.COVARIANCE_DIFFERENCE:
        std = 1.0 / math.sqrt(2 * m)
    else:
        std = 1.0 / math.sqrt(m)
    per_atom = {
        Model.SPARSE_VECTOR: n,
        Model.MATRIX_DENSE: n * N,
        Model.MATRIX_BILINEAR: n + N,
        Model.COVARIANCE_RANK_ONE: n,
        Model.COVARIANCE_DIFFERENCE: 2 * n,
    }[model]
    raw = np.empty((m, per_atom))
    for i in range(m):
        raw[i] = rng.atom_normals(seed, i, per_atom)
    raw *= std
    if model is Model.MATRIX_DENSE:
        atoms = (raw.reshape(m, n, N),)
    elif model is Model.MATRIX_BILINEAR:
        atoms = (np.ascontiguousarray(raw[:, :n]), np.ascontiguousarray(raw[:, n:]))
    elif model is Model.COVARIANCE_DIFFERENCE:
        atoms = (np.ascontiguousarray(raw[:, :n]), np.ascontiguousarray(raw[:, n:]))
    else:
        atoms = (raw,)
    return SensingOperator(model, n, N, m, scaling, int(seed), _freeze(*atoms))


def from_atoms(model: Model | str, atoms, scaling: Scaling | str | None = None) -> SensingOperator:
    """Wrap explicitly given atoms (e.g. an identity design) as an operator."""
    model = Model(model)
    scaling = default_scaling(model) if scaling is None else Scaling(scaling)
    atoms = tuple(np.array(a, dtype=float) for a in atoms)
    first = atoms[0]
    m = first.shape[0]
    if model is Model.SPARSE_VECTOR:
        n, N = first.shape[1], 1
    elif model is Model.MATRIX_DENSE:
        n, N = first.shape[1], first.shape[2]
    elif model is Model.MATRIX_BILINEAR:
        n, N = first.shape[1], atoms[1].shape[1]
    else:
        n = N = first.shape[1]
    expected = 2 if model in (Model.MATRIX_BILINEAR, Model.COVARIANCE_DIFFERENCE) else 1
    if len(atoms) != expected:
        raise ValueError(f"{model.value} needs {expected} atom arrays, got {len(atoms)}")
    if model in (Model.MATRIX_DENSE, Model.MATRIX_BILINEAR) and n > N:
        raise ValueError("explicit matrix atoms must satisfy n <= N")
    return SensingOperator(model, n, N, m, scaling, None, _freeze(*atoms))


# -- restricted isometry --------------------------------------------------


@dataclass(frozen=True)
class RipEstimate:
    """Sampled min / max of ||A x||_W / ||x||_2 over sparse or low-rank x.

    Sampling only ever sees a subset of directions, so ``lower`` can only
    overestimate the true infimum and ``upper`` underestimate the supremum.
    """

    k_prime: int
    lower: float
    upper: float
    trials: int

    @property
    def ratio(self) -> float:
        return self.upper / self.lower if self.lower > 0 else math.inf


def random_structured(kind: Kind, shape, k: int, gen: np.random.Generator) -> np.ndarray:
    """Unit-Frobenius element with support size (vectors) or rank (matrices) <= k."""
    if kind is Kind.VECTOR:
        n = shape[0]
        out = np.zeros(n)
        idx = gen.choice(n, size=min(k, n), replace=False)
        out[idx] = gen.standard_normal(idx.size)
    elif kind is Kind.SYMMETRIC:
        U = gen.standard_normal((shape[0], k))
        out = (U * gen.standard_normal(k)) @ U.T
        out = 0.5 * (out + out.T)
    else:
        out = gen.standard_normal((shape[0], k)) @ gen.standard_normal((k, shape[1]))
    nrm = np.linalg.norm(out)
    return out / nrm if nrm > 0 else out


def estimate_rip(op: SensingOperator, k_prime: int, trials: int = 200, seed: int = 0) -> RipEstimate:
    """Sample ``trials`` unit directions of support / rank ``k_prime``."""
    limit = op.n if op.kind is Kind.VECTOR else min(op.n, op.N)
    if not (1 <= k_prime <= limit):
        raise ValueError(f"k_prime must lie in [1, {limit}], got {k_prime}")
    if trials < 1:
        raise ValueError("need at least one trial")
    gen = rng.stream(seed, rng.TAG_RIP)
    ratios = np.empty(trials)
    for t in range(trials):
        d = random_structured(op.kind, op.signal_shape, k_prime, gen)
        ratios[t] = op.measurement_norm(op.apply(Signal._wrap(op.kind, d)))
    return RipEstimate(k_prime, float(ratios.min()), float(ratios.max()), trials)
