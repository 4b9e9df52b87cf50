"""Exact-penalty objectives, subgradient oracles and conditioning estimates.

The penalty objective is

    F(x) = f(x) + r * ||A(x) - b||_W + ell * dist(x, PSD)

with f one of the l1 norm, the nuclear norm or the trace. All distances are
measured in the l1 / Schatten-1 norm.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .sensing import Model, Scaling, SensingOperator, w_norm
from .spaces import SPECTRAL_TOL, Kind, Signal, grad_half_sq_norm, norm_p


class Base(str, enum.Enum):
    L1_NORM = "l1_norm"
    NUCLEAR_NORM = "nuclear_norm"
    TRACE = "trace"


class Cone(str, enum.Enum):
    NONE = "none"
    PSD = "psd"


class Task(str, enum.Enum):
    SPARSE_RECOVERY = "sparse"
    MATRIX_SENSING = "matrix"
    PHASE_RETRIEVAL = "phase_retrieval"
    COVARIANCE_I = "covariance_i"
    COVARIANCE_II = "covariance_ii"


def dist_psd(X: Signal) -> float:
    """Schatten-1 distance to the PSD cone: total mass of negative eigenvalues."""
    if X.kind is not Kind.SYMMETRIC:
        raise ValueError("distance to the PSD cone needs a symmetric signal")
    lam = np.linalg.eigvalsh(X.data)
    return float(-lam[lam < 0].sum())


def _sign_subgrad(x: Signal) -> Signal:
    # subgradient of the l1 / nuclear norm; sign(0) = 0 and the
    # complement block of the SVD is set to zero
    if x.kind is Kind.VECTOR:
        return Signal._wrap(Kind.VECTOR, np.sign(x.data))
    if x.kind is Kind.SYMMETRIC:
        lam, U = np.linalg.eigh(x.data)
        cut = SPECTRAL_TOL * (np.abs(lam).max() if lam.size else 0.0)
        s = np.where(np.abs(lam) > cut, np.sign(lam), 0.0)
        G = (U * s) @ U.T
        return Signal._wrap(Kind.SYMMETRIC, 0.5 * (G + G.T), x.flipped)
    U, sv, Vt = np.linalg.svd(x.data, full_matrices=False)
    keep = sv > SPECTRAL_TOL * (sv[0] if sv.size else 0.0)
    return Signal._wrap(x.kind, U[:, keep] @ Vt[keep], x.flipped)


def _nuclear(x: Signal) -> float:
    return norm_p(x, 1)


@dataclass(frozen=True, eq=False)
class PenaltyObjective:
    base: Base
    op: SensingOperator
    b: np.ndarray
    r: float
    ell: float = 0.0
    cone: Cone = Cone.NONE
    w_norm: Scaling = Scaling.ELL_TWO

    def __post_init__(self):
        object.__setattr__(self, "base", Base(self.base))
        object.__setattr__(self, "cone", Cone(self.cone))
        object.__setattr__(self, "w_norm", Scaling(self.w_norm))
        b = np.array(self.b, dtype=float)
        if b.shape != (self.op.m,):
            raise ValueError(f"observation vector must have length {self.op.m}, got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        if self.r < 0 or self.ell < 0:
            raise ValueError("penalty weights must be nonnegative")
        kind = self.op.kind
        if self.cone is Cone.PSD and kind is not Kind.SYMMETRIC:
            raise ValueError("the PSD cone needs symmetric signals")
        if self.base is Base.TRACE and self.cone is not Cone.PSD:
            raise ValueError("the trace objective is only used with the PSD cone")
        if self.base is Base.L1_NORM and kind is not Kind.VECTOR:
            raise ValueError("the l1 base needs vector signals; use the nuclear norm for matrices")
        if self.base is Base.NUCLEAR_NORM and kind is Kind.VECTOR:
            raise ValueError("the nuclear-norm base needs matrix signals")

    @property
    def kind(self) -> Kind:
        return self.op.kind

    def base_value(self, x: Signal) -> float:
        if self.base is Base.L1_NORM:
            return float(np.abs(x.data).sum())
        if self.base is Base.TRACE:
            return float(np.trace(x.data))
        return _nuclear(x)

    def residual(self, x: Signal) -> np.ndarray:
        return self.op.apply(x) - self.b

    def value(self, x: Signal) -> float:
        out = self.base_value(x) + self.r * w_norm(self.residual(x), self.w_norm)
        if self.cone is Cone.PSD and self.ell:
            out += self.ell * dist_psd(x)
        return out

    def subgrad(self, x: Signal) -> Signal:
        return self.value_and_subgrad(x)[1]

    def value_and_subgrad(self, x: Signal) -> tuple[float, Signal]:
        res = self.residual(x)
        if self.w_norm is Scaling.ELL_ONE:
            res_norm = float(np.abs(res).sum())
            dual = np.sign(res)
        else:
            res_norm = float(np.sqrt(np.dot(res, res)))
            dual = res * (1.0 / res_norm) if res_norm > 0 else np.zeros_like(res)
        if self.r != 1.0:
            dual *= self.r
        g = self.op.adjoint(dual).data

        if self.cone is Cone.PSD:
            lam, U = np.linalg.eigh(x.data)
            val = self.r * res_norm
            if self.base is Base.TRACE:
                val += float(lam.sum())
                g = g + np.eye(lam.size)
            else:
                val += float(np.abs(lam).sum())
                g = g + _sign_subgrad(x).data
            if self.ell:
                val += self.ell * float(-lam[lam < 0].sum())
                cut = SPECTRAL_TOL * (np.abs(lam).max() if lam.size else 0.0)
                neg = lam < -cut
                if np.any(neg):
                    Un = U[:, neg]
                    g = g - self.ell * (Un @ Un.T)
            return val, x.like(g)

        if x.kind is Kind.VECTOR:
            g += np.sign(x.data)
            return float(np.abs(x.data).sum()) + self.r * res_norm, Signal._wrap(x.kind, g)
        val = self.base_value(x) + self.r * res_norm
        g = g + _sign_subgrad(x).data
        return val, Signal._wrap(x.kind, g, x.flipped)

    def lipschitz_bound(self) -> float:
        """Lipschitz constant w.r.t. the l1 / nuclear norm: 1 + r ||A|| + ell.

        ||A|| is the operator norm from l1 / Schatten-1 into W. It is exact
        for the sparse-vector and rank-one covariance models (so the bound is
        a true upper bound there) and an ascent estimate for dense and
        bilinear matrix designs.
        """
        ell = self.ell if self.cone is Cone.PSD else 0.0
        return 1.0 + self.r * self.op.operator_norm_bound(self.w_norm) + ell


@dataclass(frozen=True, eq=False)
class ThresholdedObjective:
    """``max(F(x), level)`` with ``level = f_star + 3 r ||delta||``.

    Below the level the oracle reports the zero subgradient.
    """

    inner: PenaltyObjective
    f_star: float
    noise_norm: float
    level: float = field(init=False)

    def __post_init__(self):
        if self.noise_norm < 0:
            raise ValueError("noise norm must be nonnegative")
        object.__setattr__(self, "level", self.f_star + 3.0 * self.inner.r * self.noise_norm)

    @property
    def kind(self) -> Kind:
        return self.inner.kind

    def value(self, x: Signal) -> float:
        return max(self.inner.value(x), self.level)

    def subgrad(self, x: Signal) -> Signal:
        return self.value_and_subgrad(x)[1]

    def value_and_subgrad(self, x: Signal) -> tuple[float, Signal]:
        val, g = self.inner.value_and_subgrad(x)
        if val > self.level:
            return val, g
        return self.level, x.zeros_like()

    def lipschitz_bound(self) -> float:
        return self.inner.lipschitz_bound()


def thresholded(obj: PenaltyObjective, f_star: float, noise_norm: float) -> ThresholdedObjective:
    return ThresholdedObjective(obj, f_star, noise_norm)


@dataclass(frozen=True, eq=False)
class DistanceObjective:
    """Synthetic sharp function ``f(x) = scale * ||x - center||_p``.

    With ``p = 1`` it is ``scale``-sharp and ``scale``-Lipschitz w.r.t. the
    l1 / nuclear norm, with unique minimizer ``center`` and minimum 0.
    """

    center: Signal
    p: float = 1.0
    scale: float = 1.0

    @property
    def kind(self) -> Kind:
        return self.center.kind

    def value(self, x: Signal) -> float:
        return self.scale * norm_p(x - self.center, self.p)

    def subgrad(self, x: Signal) -> Signal:
        return self.value_and_subgrad(x)[1]

    def value_and_subgrad(self, x: Signal) -> tuple[float, Signal]:
        d = x - self.center
        val = norm_p(d, self.p)
        if self.p == 1:
            g = _sign_subgrad(d)
        elif val == 0:
            g = d.zeros_like()
        else:
            # grad ||d||_p = grad(1/2 ||d||_p^2) / ||d||_p
            g = grad_half_sq_norm(d, self.p) * (1.0 / val)
        return self.scale * val, g * self.scale

    def lipschitz_bound(self) -> float:
        # ||d||_p <= ||d||_1 for p >= 1
        return self.scale


def default_penalty(task: Task, k: int, c1: float = 9.0) -> tuple[float, float]:
    """Residual and cone weights ``(r, ell)`` used by :func:`build_default`."""
    task = Task(task)
    if task in (Task.SPARSE_RECOVERY, Task.MATRIX_SENSING):
        return 3.0 * math.sqrt(k), 0.0
    if task is Task.PHASE_RETRIEVAL:
        return 3.0, 2.0
    return math.sqrt(c1 * k), 2.0


_TASK_MODELS = {
    Task.SPARSE_RECOVERY: (Model.SPARSE_VECTOR,),
    Task.MATRIX_SENSING: (Model.MATRIX_DENSE, Model.MATRIX_BILINEAR),
    Task.PHASE_RETRIEVAL: (Model.COVARIANCE_RANK_ONE,),
    Task.COVARIANCE_I: (Model.COVARIANCE_RANK_ONE,),
    Task.COVARIANCE_II: (Model.COVARIANCE_DIFFERENCE,),
}


def build_default(task: Task | str, op: SensingOperator, b, k: int = 1, c1: float = 9.0) -> PenaltyObjective:
    """Penalty objective with the standard weights for ``task``.

    Sparse recovery and matrix sensing use r = 3 sqrt(k) and the l2 residual
    (l1 for bilinear designs); phase retrieval uses trace + 3 ||.||_1 +
    2 dist; covariance estimation uses r = sqrt(c1 k) with ell = 2.
    """
    task = Task(task)
    if op.model not in _TASK_MODELS[task]:
        raise ValueError(f"task {task.value} cannot use a {op.model.value} operator")
    r, ell = default_penalty(task, k, c1)
    if task is Task.SPARSE_RECOVERY:
        return PenaltyObjective(Base.L1_NORM, op, b, r, 0.0, Cone.NONE, op.scaling)
    if task is Task.MATRIX_SENSING:
        wn = Scaling.ELL_ONE if op.model is Model.MATRIX_BILINEAR else op.scaling
        return PenaltyObjective(Base.NUCLEAR_NORM, op, b, r, 0.0, Cone.NONE, wn)
    return PenaltyObjective(Base.TRACE, op, b, r, ell, Cone.PSD, Scaling.ELL_ONE)


# -- empirical conditioning ---------------------------------------------------


@dataclass(frozen=True)
class ConditioningEstimate:
    mu_hat: float
    L_hat: float
    r: float
    ell: float

    @property
    def kappa_hat(self) -> float:
        return self.L_hat / self.mu_hat if self.mu_hat > 0 else math.inf


def _rank_or_support(x: Signal) -> tuple[int, np.ndarray, np.ndarray | None]:
    # (k, left basis / support, right basis)
    if x.kind is Kind.VECTOR:
        a = np.abs(x.data)
        supp = np.flatnonzero(a > SPECTRAL_TOL * (a.max() if a.size else 0.0))
        return supp.size, supp, None
    if x.kind is Kind.SYMMETRIC:
        lam, U = np.linalg.eigh(x.data)
        order = np.argsort(-np.abs(lam))
        lam, U = lam[order], U[:, order]
        k = int(np.sum(np.abs(lam) > SPECTRAL_TOL * (np.abs(lam).max() if lam.size else 0.0)))
        return k, U, U
    U, s, Vt = np.linalg.svd(x.data, full_matrices=True)
    k = int(np.sum(s > SPECTRAL_TOL * (s[0] if s.size else 0.0)))
    return k, U, Vt.T


def _l1(x: Signal) -> float:
    return norm_p(x, 1)


def _sharpness_direction(x: Signal, j: int, basis, gen: np.random.Generator) -> np.ndarray:
    # trial j: j % 5 in {0, 1} dense, {2, 3} structured, 4 coordinate / eigen
    k, left, right = basis
    k = max(k, 1)
    shape = x.data.shape
    slot = j % 5
    if slot < 2:
        d = gen.standard_normal(shape)
        if x.kind is Kind.SYMMETRIC:
            d = 0.5 * (d + d.T)
        return d
    if slot < 4:
        # support / rank 2k, containing the planted support / row-column space
        if x.kind is Kind.VECTOR:
            n = shape[0]
            others = np.setdiff1d(np.arange(n), left)
            extra = gen.choice(others, size=min(k, others.size), replace=False) if others.size else others
            idx = np.concatenate([left, extra]).astype(int)
            d = np.zeros(n)
            d[idx] = gen.standard_normal(idx.size)
            return d
        if x.kind is Kind.SYMMETRIC:
            n = shape[0]
            B = np.hstack([left[:, :k], gen.standard_normal((n, k))])
            S = gen.standard_normal((B.shape[1], B.shape[1]))
            return B @ (S + S.T) @ B.T
        n, N = shape
        Bl = np.hstack([left[:, :k], gen.standard_normal((n, k))])
        Br = np.hstack([right[:, :k], gen.standard_normal((N, k))])
        return Bl @ gen.standard_normal((2 * k, 2 * k)) @ Br.T
    # signed coordinate directions, alternating planted-support and anywhere
    sign = 1.0 if (j // 5) % 2 == 0 else -1.0
    on_support = (j // 10) % 2 == 0
    if x.kind is Kind.VECTOR:
        n = shape[0]
        pool = left if on_support and left.size else np.arange(n)
        d = np.zeros(n)
        d[gen.choice(pool)] = sign
        return d
    if x.kind is Kind.SYMMETRIC:
        n = shape[0]
        a, c = gen.integers(0, n, size=2)
        if on_support:
            a = gen.integers(0, k)
        return 0.5 * (np.outer(left[:, a], left[:, c]) + np.outer(left[:, c], left[:, a])) * sign
    a = gen.integers(0, left.shape[1])
    c = gen.integers(0, right.shape[1])
    if on_support:
        a = c = gen.integers(0, k)
    return sign * np.outer(left[:, a], right[:, c])


def estimate_sharpness(obj, x_sharp: Signal, trials: int = 200, radii=None, seed: int = 0) -> float:
    """Sampled sharpness ``min (F(x + t d) - F(x)) / ||t d||_1`` around ``x_sharp``.

    Directions cycle through dense Gaussian (40%), structured with support
    or rank 2k around the planted structure (40%) and signed coordinate or
    eigen directions (20%). A minimum over finitely many directions can only
    overestimate the true sharpness constant. The realized displacement
    ``(x + t d) - x`` is used in the denominator. Raises ``ValueError`` when
    some sample beats ``x_sharp``, i.e. it is not the minimizer.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    scale = _l1(x_sharp) or 1.0
    radii = np.logspace(-4, 0, 5) * scale if radii is None else np.asarray(radii, dtype=float)
    basis = _rank_or_support(x_sharp)
    f0 = obj.value(x_sharp)
    slack = 1e-12 * max(1.0, abs(f0))
    best = math.inf
    for j in range(trials):
        # one substream per trial, so a larger ``trials`` samples a superset
        d = _sharpness_direction(x_sharp, j, basis, rng.stream(seed, rng.TAG_SHARPNESS, j))
        d = d / (np.abs(d).sum() if x_sharp.kind is Kind.VECTOR else _l1(x_sharp.like(d)))
        for t in radii:
            y = x_sharp.like(x_sharp.data + t * d)
            step = _l1(y - x_sharp)
            if step == 0:
                continue
            gain = obj.value(y) - f0
            if gain < -slack:
                raise ValueError(
                    f"objective decreases away from the supplied minimizer (by {-gain:.3e}); "
                    "x_sharp is not a minimizer"
                )
            best = min(best, gain / step)
    return float(best)


def estimate_lipschitz(obj, center: Signal, trials: int = 200, seed: int = 0, radius: float | None = None) -> float:
    """Largest sampled ``|F(x) - F(y)| / ||x - y||_1`` near ``center``.

    If ``obj`` exposes ``lipschitz_bound()`` the result is the max of that
    analytic value and the sampled one.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    gen = rng.stream(seed, rng.TAG_LIPSCHITZ)
    radius = (_l1(center) or 1.0) if radius is None else radius
    shape = center.data.shape
    best = 0.0
    for _ in range(trials):
        s = radius * 10.0 ** gen.uniform(-3, 0)
        d1 = gen.standard_normal(shape)
        d2 = gen.standard_normal(shape)
        x = center.like(center.data + s * d1 / np.abs(d1).sum())
        y = center.like(center.data + s * d2 / np.abs(d2).sum())
        gap = _l1(x - y)
        if gap > 0:
            best = max(best, abs(obj.value(x) - obj.value(y)) / gap)
    bound = getattr(obj, "lipschitz_bound", None)
    if bound is not None:
        best = max(best, float(bound()))
    return float(best)


def estimate_conditioning(obj: PenaltyObjective, x_sharp: Signal, trials: int = 200, seed: int = 0) -> ConditioningEstimate:
    mu = estimate_sharpness(obj, x_sharp, trials=trials, seed=seed)
    L = estimate_lipschitz(obj, x_sharp, trials=trials, seed=seed)
    return ConditioningEstimate(mu, L, obj.r, obj.ell)
