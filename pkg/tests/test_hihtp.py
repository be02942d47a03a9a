import math

import numpy as np
import pytest

from hisparse.ensembles import EnsembleSpec, derive_seed, sample_matrix, sample_noise, sample_signal
from hisparse.errors import DomainError, NumericalError, StructuralError
from hisparse.hierarchy import HierarchySpec, flatten, validate_support
from hisparse.hihtp import (
    COMBINED_THRESHOLD,
    RIP_THRESHOLD,
    HihtpOptions,
    check_guarantee,
    recover,
    restricted_least_squares,
)
from hisparse.linop import DenseOperator, KroneckerOperator
from hisparse.projection import project


def kron_instance(seed, M=12, N=8, m=10, n=8):
    A = sample_matrix(EnsembleSpec("gaussian", M, N, derive_seed(seed, 0)))
    B = sample_matrix(EnsembleSpec("gaussian", m, n, derive_seed(seed, 1)))
    return KroneckerOperator([A, B])


class TestLeastSquares:
    def test_identity(self):
        y = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(restricted_least_squares(np.eye(3), y).coef, y)

    def test_duplicate_column_min_norm(self):
        cols = np.array([[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]])
        y = 3.0 * cols[:, 0]
        sol = restricted_least_squares(cols, y)
        assert sol.rank_deficient and sol.rank == 1
        np.testing.assert_allclose(sol.coef, [1.5, 1.5], rtol=1e-12)
        assert np.linalg.norm(cols @ sol.coef - y) < 1e-12

    def test_normal_equations_oracle(self):
        rng = np.random.default_rng(0)
        a, y = rng.standard_normal((10, 4)), rng.standard_normal(10)
        oracle = np.linalg.solve(a.T @ a, a.T @ y)
        sol = restricted_least_squares(a, y)
        assert not sol.rank_deficient
        assert np.linalg.norm(sol.coef - oracle) / np.linalg.norm(oracle) < 1e-10

    def test_errors(self):
        with pytest.raises(NumericalError):
            restricted_least_squares(np.array([[np.inf]]), np.ones(1))
        with pytest.raises(StructuralError):
            restricted_least_squares(np.ones((3, 2)), np.ones(2))


class TestRecover:
    def test_zero_measurements(self):
        spec = HierarchySpec((8, 8), (2, 2))
        res = recover(kron_instance(0), np.zeros(120), spec)
        assert res.iterations_run == 1
        assert res.status == "residual-converged"
        assert not res.estimate.any()

    def test_identity_operator(self):
        spec = HierarchySpec((4, 4), (2, 2))
        x, _ = sample_signal(spec, 3)
        res = recover(DenseOperator(np.eye(16)), x, spec)
        np.testing.assert_allclose(res.estimate, x, atol=1e-15)
        assert res.iterations_run == 1

    def test_exact_recovery_generous_dims(self):
        spec = HierarchySpec((8, 8), (1, 2))
        op = kron_instance(5, M=16, N=8, m=16, n=8)
        x, support = sample_signal(spec, 6)
        res = recover(op, op.apply(x), spec, truth=x)
        assert np.linalg.norm(res.estimate - x) < 1e-10
        assert res.final_support == support
        assert len(res.residual_trace) == res.iterations_run == len(res.error_trace)

    def test_errors(self):
        spec = HierarchySpec((8, 8), (2, 2))
        op = kron_instance(0)
        with pytest.raises(StructuralError):
            recover(op, np.zeros(5), spec)
        with pytest.raises(StructuralError):
            recover(op, np.zeros(120), HierarchySpec((4, 4), (2, 2)))
        y = np.zeros(120)
        y[0] = np.nan
        with pytest.raises(NumericalError) as info:
            recover(op, y, spec)
        assert info.value.iteration == 0
        with pytest.raises(DomainError):
            HihtpOptions(max_iterations=0)

    def test_max_iterations_status(self):
        spec = HierarchySpec((8, 8), (2, 2))
        op = kron_instance(1, M=3, m=3)
        x, _ = sample_signal(spec, 1)
        res = recover(op, op.apply(x), spec, HihtpOptions(max_iterations=1))
        assert res.iterations_run == 1
        assert res.status in ("max-iterations", "residual-converged")

    def test_history_and_sparsity(self):
        spec = HierarchySpec((8, 8), (2, 2))
        op = kron_instance(2, M=6, m=6)
        for seed in range(10):
            x, _ = sample_signal(spec, seed)
            res = recover(op, op.apply(x), spec, HihtpOptions(record_history=True))
            assert len(res.support_history) == res.iterations_run
            assert all(validate_support(s, spec) for s in res.support_history)
            assert res.support_history[-1] == res.final_support
            on = np.zeros(64, dtype=bool)
            on[list(flatten(res.final_support, spec, base=0))] = True
            assert not res.estimate[~on].any()
            if res.status == "support-stalled":
                assert res.support_history[-1] == res.support_history[-2]

    @pytest.mark.parametrize("seed", range(10))
    def test_least_squares_optimal_on_support(self, seed):
        spec = HierarchySpec((8, 8), (2, 2))
        op = kron_instance(seed, M=6, m=6)
        x, _ = sample_signal(spec, seed)
        y = op.apply(x) + sample_noise(36, 0.01, seed)
        res = recover(op, y, spec)
        pos = np.array(flatten(res.final_support, spec))
        cols = op.extract_columns(pos)
        best = np.linalg.norm(y - op.apply(res.estimate))
        rng = np.random.default_rng(seed)
        for _ in range(20):
            competitor = res.estimate[pos - 1] + rng.standard_normal(pos.size) * 0.1
            assert best <= np.linalg.norm(y - cols @ competitor) + 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_noiseless_fixed_point(self, seed):
        # one HiHTP step started from the truth returns the truth
        spec = HierarchySpec((8, 8), (2, 2))
        op = kron_instance(seed, M=8, m=8)
        x, _ = sample_signal(spec, seed)
        y = op.apply(x)
        g = x + op.adjoint_apply(y - op.apply(x))
        proj = project(g, spec)
        cols = op.extract_columns(proj.positions + 1)
        nxt = np.zeros(64)
        nxt[proj.positions] = restricted_least_squares(cols, y).coef
        np.testing.assert_allclose(nxt, x, atol=1e-12)

    def test_noise_constant_reported(self, capsys):
        spec = HierarchySpec((8, 8), (1, 2))
        op = kron_instance(7, M=16, m=16)
        ratios = []
        for seed in range(10):
            x, _ = sample_signal(spec, seed)
            e = sample_noise(op.output_dim, 1e-4, derive_seed(seed, 9))
            res = recover(op, op.apply(x) + e, spec)
            ratios.append(np.linalg.norm(res.estimate - x) / np.linalg.norm(e))
        with capsys.disabled():
            print(f"\nnoise constant (final error / ||e||), max over 10 seeds: {max(ratios):.3g}")
        assert max(ratios) < 10.0


class TestGuarantee:
    def test_zero(self):
        rep = check_guarantee(0.0, 0.0)
        assert rep.combined_delta == 0 and rep.rho == 0 and rep.condition_met

    def test_arithmetic(self):
        rep = check_guarantee(0.1, 0.2)
        assert rep.combined_delta == pytest.approx(0.32, abs=1e-15)
        assert rep.rho == pytest.approx(0.64 / (1 - 0.32**2))
        assert rep.rho_sqrt == pytest.approx(math.sqrt(2 * 0.32**2 / (1 - 0.32**2)))
        assert rep.condition_met

    def test_threshold_identity(self):
        t = math.sqrt((math.sqrt(3) + 1) / math.sqrt(3)) - 1
        assert RIP_THRESHOLD == t
        assert (1 + t) ** 2 - 1 == pytest.approx(1 / math.sqrt(3), abs=1e-15)
        # the commonly quoted 0.255928 is off in the last digit
        assert RIP_THRESHOLD == pytest.approx(0.255926, abs=1e-6)

    def test_boundary(self):
        rep = check_guarantee(0.255928, 0.255928)
        assert rep.combined_delta == pytest.approx(COMBINED_THRESHOLD, abs=1e-5)
        # the six-digit rounding sits just above the exact threshold
        assert not rep.condition_met
        below = check_guarantee(0.2559, 0.2559)
        assert below.condition_met and below.rho_sqrt < 1.0

    def test_one_factor_too_large(self):
        assert not check_guarantee(0.3, 0.0).condition_met

    @pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            check_guarantee(bad, 0.1)
        with pytest.raises(DomainError):
            check_guarantee(0.1, bad)

    def test_large_combined(self):
        rep = check_guarantee(0.9, 0.9)
        assert rep.rho == math.inf and rep.rho_sqrt == math.inf
