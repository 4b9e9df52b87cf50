import itertools
import math

import numpy as np
import pytest

from sharprmd.sensing import (
    Model, Scaling, SensingOperator, build_sensing, estimate_rip, from_atoms, w_norm,
)
from sharprmd.spaces import Kind, Signal, dual_pair

DIMS = {
    Model.SPARSE_VECTOR: (12, None),
    Model.MATRIX_DENSE: (4, 6),
    Model.MATRIX_BILINEAR: (5, 7),
    Model.COVARIANCE_RANK_ONE: (6, None),
    Model.COVARIANCE_DIFFERENCE: (6, None),
}


def random_input(op: SensingOperator, gen) -> Signal:
    data = gen.standard_normal(op.signal_shape)
    return Signal._wrap(op.kind, 0.5 * (data + data.T) if op.kind is Kind.SYMMETRIC else data)


@pytest.fixture(params=list(Model), ids=lambda m: m.value)
def operator(request):
    n, N = DIMS[request.param]
    return build_sensing(request.param, n, N, m=30, seed=11)


class TestConstruction:
    def test_zero_maps_to_zero(self):
        op = build_sensing(Model.SPARSE_VECTOR, 4, m=3, scaling=Scaling.ELL_TWO, seed=5)
        assert np.array_equal(op.apply(op.zero_signal()), np.zeros(3))

    def test_rank_one_covariance_on_outer_product(self):
        op = build_sensing(Model.COVARIANCE_RANK_ONE, 5, m=8, seed=2)
        x = np.arange(1.0, 6.0)
        out = op.apply(Signal.symmetric(np.outer(x, x)))
        assert np.allclose(out, (op.atoms[0] @ x) ** 2, rtol=1e-12)

    def test_difference_model_entries(self):
        op = build_sensing(Model.COVARIANCE_DIFFERENCE, 4, m=6, seed=3)
        gen = np.random.default_rng(0)
        X = random_input(op, gen)
        a, b = op.atoms
        expected = [a[i] @ X.data @ a[i] - b[i] @ X.data @ b[i] for i in range(op.m)]
        assert np.allclose(op.apply(X), expected, rtol=1e-12)

    def test_second_moment_of_atoms(self):
        # E ||a_i||^2 = n / m under the l2 convention
        n, m = 10, 10_000
        op = build_sensing(Model.SPARSE_VECTOR, n, m=m, scaling=Scaling.ELL_TWO, seed=9)
        mean = float((op.atoms[0] ** 2).sum(axis=1).mean())
        assert abs(mean - n / m) <= 0.05 * n / m

    def test_variance_conventions(self):
        m = 4000
        for model, scaling, var in [
            (Model.SPARSE_VECTOR, Scaling.ELL_ONE, 1 / m**2),
            (Model.MATRIX_BILINEAR, None, 1 / m),
            (Model.COVARIANCE_RANK_ONE, None, 1 / m),
            (Model.COVARIANCE_DIFFERENCE, None, 1 / (2 * m)),
        ]:
            op = build_sensing(model, 5, m=m, scaling=scaling, seed=1)
            emp = np.concatenate([a.ravel() for a in op.atoms]).var()
            assert abs(emp / var - 1) < 0.05, model

    def test_invalid_dims(self):
        with pytest.raises(ValueError):
            build_sensing(Model.COVARIANCE_RANK_ONE, 4, 5, m=3)
        with pytest.raises(ValueError):
            build_sensing(Model.SPARSE_VECTOR, 0, m=3)
        with pytest.raises(ValueError):
            build_sensing(Model.SPARSE_VECTOR, 3, m=0)

    def test_tall_matrix_model_is_transposed(self):
        op = build_sensing(Model.MATRIX_DENSE, 6, 3, m=4, seed=0)
        assert (op.n, op.N) == (3, 6)

    def test_deterministic_regeneration(self, operator):
        again = build_sensing(operator.model, operator.n, operator.N, operator.m, operator.scaling, operator.seed)
        for a, b in zip(operator.atoms, again.atoms):
            assert np.array_equal(a, b)

    def test_atoms_are_prefix_stable(self):
        small = build_sensing(Model.SPARSE_VECTOR, 7, m=5, scaling=Scaling.ELL_TWO, seed=4)
        large = build_sensing(Model.SPARSE_VECTOR, 7, m=9, scaling=Scaling.ELL_TWO, seed=4)
        # same atom streams, different variance scale
        assert np.allclose(small.atoms[0] * math.sqrt(5), large.atoms[0][:5] * math.sqrt(9), rtol=1e-14)

    def test_atoms_read_only(self, operator):
        with pytest.raises(ValueError):
            operator.atoms[0][0] = 1.0


class TestApplyAdjoint:
    def test_adjoint_identity(self, operator):
        gen = np.random.default_rng(12)
        for _ in range(50):
            x = random_input(operator, gen)
            w = gen.standard_normal(operator.m)
            lhs = float(operator.apply(x) @ w)
            rhs = dual_pair(operator.adjoint(w), x)
            assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x.data) * np.linalg.norm(w)

    def test_linearity(self, operator):
        gen = np.random.default_rng(13)
        x, y = random_input(operator, gen), random_input(operator, gen)
        ax, ay = operator.apply(x), operator.apply(y)
        scale = np.abs(ax).max() + np.abs(ay).max()
        assert np.allclose(operator.apply(x + y), ax + ay, atol=1e-10 * scale)
        assert np.allclose(operator.apply(x * 3.5), 3.5 * ax, atol=1e-10 * scale)

    def test_entries_are_adjoint_pairings(self, operator):
        gen = np.random.default_rng(14)
        x = random_input(operator, gen)
        out = operator.apply(x)
        for i in (0, 7, operator.m - 1):
            e = np.zeros(operator.m)
            e[i] = 1.0
            assert math.isclose(out[i], dual_pair(operator.adjoint(e), x), rel_tol=1e-10, abs_tol=1e-12)

    def test_adjoint_of_basis_vector(self):
        op = build_sensing(Model.MATRIX_BILINEAR, 3, 4, m=5, seed=1)
        e = np.zeros(5)
        e[2] = 1.0
        a, b = op.atoms
        assert np.allclose(op.adjoint(e).data, np.outer(a[2], b[2]))
        op = build_sensing(Model.COVARIANCE_DIFFERENCE, 3, m=5, seed=1)
        a, b = op.atoms
        assert np.allclose(op.adjoint(e).data, np.outer(a[2], a[2]) - np.outer(b[2], b[2]))

    def test_adjoint_of_zero(self, operator):
        assert not operator.adjoint(np.zeros(operator.m)).data.any()

    def test_kind_mismatch(self):
        op = build_sensing(Model.SPARSE_VECTOR, 4, m=3)
        with pytest.raises(ValueError):
            op.apply(Signal.vector(np.zeros(5)))
        with pytest.raises(ValueError):
            op.adjoint(np.zeros(4))

    def test_symmetric_adjoint_output(self):
        op = build_sensing(Model.COVARIANCE_RANK_ONE, 5, m=9, seed=0)
        G = op.adjoint(np.random.default_rng(0).standard_normal(9)).data
        assert np.array_equal(G, G.T)

    def test_rank_one_l1_contraction(self):
        # ||A(X)||_1 <= 1.1 ||X||_1 for PSD X once m >= 8n
        n, m = 50, 400
        op = build_sensing(Model.COVARIANCE_RANK_ONE, n, m=m, seed=21)
        gen = np.random.default_rng(21)
        failures = 0
        for _ in range(20):
            G = gen.standard_normal((n, gen.integers(1, n + 1)))
            X = Signal.symmetric(G @ G.T)
            if w_norm(op.apply(X), Scaling.ELL_ONE) > 1.1 * np.trace(X.data):
                failures += 1
        assert failures <= 2


class TestOperatorNorm:
    def test_sparse_exact(self):
        op = build_sensing(Model.SPARSE_VECTOR, 9, m=6, seed=3)
        A = op.atoms[0]
        assert math.isclose(op.operator_norm_bound(), np.linalg.norm(A, axis=0).max())
        assert math.isclose(op.operator_norm_bound(Scaling.ELL_ONE), np.abs(A).sum(axis=0).max())

    def test_rank_one_exact(self):
        op = build_sensing(Model.COVARIANCE_RANK_ONE, 6, m=40, seed=3)
        a = op.atoms[0]
        lam, U = np.linalg.eigh(a.T @ a)
        u = U[:, -1]
        attained = w_norm(op.apply(Signal.symmetric(np.outer(u, u))), Scaling.ELL_ONE)
        assert math.isclose(op.operator_norm_bound(Scaling.ELL_ONE), attained, rel_tol=1e-10)

    @pytest.mark.parametrize("model", list(Model), ids=lambda m: m.value)
    def test_dominates_sampled_ratios(self, model):
        n, N = DIMS[model]
        op = build_sensing(model, n, N, m=30, seed=6)
        bound = op.operator_norm_bound()
        gen = np.random.default_rng(6)
        for _ in range(200):
            x = random_input(op, gen)
            nuc = np.abs(x.data).sum() if op.kind is Kind.VECTOR else np.linalg.svd(x.data, compute_uv=False).sum()
            assert op.measurement_norm(op.apply(x)) <= bound * nuc * (1 + 1e-9)


class TestSerialization:
    def test_header_roundtrip(self, operator):
        blob = operator.to_bytes()
        again = SensingOperator.from_bytes(blob)
        assert (again.model, again.n, again.N, again.m, again.scaling, again.seed) == (
            operator.model, operator.n, operator.N, operator.m, operator.scaling, operator.seed)
        for a, b in zip(operator.atoms, again.atoms):
            assert np.array_equal(a, b)

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            SensingOperator.from_bytes(b"XXXX" + bytes(40))

    def test_dense_dump_roundtrip(self, operator, tmp_path):
        path = tmp_path / "op.npz"
        operator.save_dense(path)
        again = SensingOperator.load_dense(path)
        assert again.seed == operator.seed and again.model is operator.model
        for a, b in zip(operator.atoms, again.atoms):
            assert np.array_equal(a, b)

    def test_explicit_atoms_have_no_seed(self):
        op = from_atoms(Model.SPARSE_VECTOR, [np.eye(3)])
        with pytest.raises(ValueError):
            op.to_bytes()


class TestRip:
    def test_identity_design(self):
        op = from_atoms(Model.SPARSE_VECTOR, [np.eye(8)], scaling=Scaling.ELL_TWO)
        for k in (1, 3, 8):
            est = estimate_rip(op, k, trials=50, seed=k)
            assert math.isclose(est.lower, 1.0) and math.isclose(est.upper, 1.0)

    def test_bracketed_by_exhaustive_support_enumeration(self):
        n, k, m = 6, 2, 40
        op = build_sensing(Model.SPARSE_VECTOR, n, m=m, scaling=Scaling.ELL_TWO, seed=17)
        A = op.atoms[0]
        # exact extremes of ||A_S z|| / ||z|| over all supports S
        svals = [np.linalg.svd(A[:, list(S)], compute_uv=False) for S in itertools.combinations(range(n), k)]
        true_lo = min(s[-1] for s in svals)
        true_hi = max(s[0] for s in svals)
        est = estimate_rip(op, k, trials=200 * math.comb(n, k), seed=3)
        assert true_lo - 1e-12 <= est.lower <= est.upper <= true_hi + 1e-12
        # the sampled bracket gets close to the exact one at this density
        assert est.lower <= 1.1 * true_lo and est.upper >= 0.9 * true_hi

    def test_ratio_shrinks_with_samples(self):
        n, k = 200, 3
        base = k * math.log(n / k)
        medians = []
        for factor in (2, 4, 8):
            m = math.ceil(factor * base)
            ratios = [estimate_rip(build_sensing(Model.SPARSE_VECTOR, n, m=m, seed=s), k, trials=300, seed=s).ratio
                      for s in range(5)]
            medians.append(float(np.median(ratios)))
        assert medians[0] > medians[1] > medians[2]

    @pytest.mark.parametrize("model", list(Model), ids=lambda m: m.value)
    def test_invariants(self, model):
        n, N = DIMS[model]
        op = build_sensing(model, n, N, m=30, seed=8)
        est = estimate_rip(op, 2, trials=40, seed=1)
        assert 0 <= est.lower <= est.upper and est.trials == 40

    def test_bad_k(self):
        op = build_sensing(Model.SPARSE_VECTOR, 4, m=3)
        with pytest.raises(ValueError):
            estimate_rip(op, 5)
