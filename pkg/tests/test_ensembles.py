import hashlib

import numpy as np
import pytest
from scipy import stats

from hisparse.ensembles import EnsembleSpec, derive_seed, sample_matrix, sample_noise, sample_signal
from hisparse.errors import DomainError
from hisparse.hierarchy import HierarchySpec, count_supports, enumerate_supports, flatten, validate_support


def test_matrix_determinism():
    spec = EnsembleSpec("gaussian", 7, 9, seed=42)
    a, b = sample_matrix(spec), sample_matrix(EnsembleSpec("gaussian", 7, 9, seed=42))
    assert a.tobytes() == b.tobytes()


def test_fixed_stream():
    # pins the PRNG algorithm and fill order: a change here breaks reproducibility of stored results
    first = sample_matrix(EnsembleSpec("gaussian", 2, 2, seed=0, scale=1.0))
    assert first.shape == (2, 2)
    ref = np.random.Generator(np.random.Philox(0)).standard_normal(4).reshape(2, 2)
    np.testing.assert_array_equal(first, ref)


def test_column_norm_concentration():
    a = sample_matrix(EnsembleSpec("gaussian", 1000, 1000, seed=1))
    norms = (a**2).sum(axis=0)
    assert np.mean((norms >= 0.8) & (norms <= 1.2)) >= 0.99


def test_rademacher_entries():
    spec = EnsembleSpec("rademacher", 20, 30, seed=3)
    a = sample_matrix(spec)
    scale = 1 / np.sqrt(20)
    assert set(np.unique(a)) == {-scale, scale}
    assert 0.4 < np.mean(a > 0) < 0.6


def test_custom_scale():
    a = sample_matrix(EnsembleSpec("rademacher", 3, 3, seed=0, scale=2.0))
    assert np.all(np.abs(a) == 2.0)


@pytest.mark.parametrize(
    "kwargs", [dict(kind="cauchy"), dict(rows=0), dict(seed=-1), dict(seed=2**64), dict(scale=0.0)]
)
def test_spec_validation(kwargs):
    base = dict(kind="gaussian", rows=2, cols=2, seed=0)
    base.update(kwargs)
    with pytest.raises(ValueError):
        EnsembleSpec(**base)


def test_seed_collisions():
    digests = set()
    for seed in range(10_000):
        a = sample_matrix(EnsembleSpec("gaussian", 4, 4, seed=seed))
        digests.add(hashlib.sha256(a.tobytes()).hexdigest())
    assert len(digests) == 10_000


def test_derive_seed():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(7, c, t) for c in range(50) for t in range(50)}) == 2500
    assert 0 <= derive_seed(2**70, -1) < 2**64


class TestSignal:
    @pytest.mark.parametrize("seed", range(20))
    def test_contract(self, seed):
        spec = HierarchySpec((5, 4, 3), (2, 2, 1))
        x, support = sample_signal(spec, seed)
        assert validate_support(support, spec)
        assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-12)
        assert np.count_nonzero(x) == spec.total_sparsity()
        flat = sorted(np.flatnonzero(x) + 1)
        assert tuple(flat) == flatten(support, spec)

    def test_unit_magnitude(self):
        x, _ = sample_signal(HierarchySpec((4, 4), (2, 2)), 5, magnitude="unit")
        nz = np.abs(x[x != 0])
        assert np.allclose(nz, nz[0], rtol=0, atol=1e-15)

    def test_determinism(self):
        spec = HierarchySpec((6, 6), (2, 3))
        a, sa = sample_signal(spec, 11)
        b, sb = sample_signal(spec, 11)
        assert a.tobytes() == b.tobytes() and sa == sb

    def test_bad_magnitude(self):
        with pytest.raises(DomainError):
            sample_signal(HierarchySpec((2,), (1,)), 0, magnitude="huge")

    def test_support_uniformity(self):
        spec = HierarchySpec((3, 3), (1, 2))
        index = {s: i for i, s in enumerate(enumerate_supports(spec))}
        counts = np.zeros(count_supports(spec))
        for seed in range(9000):
            counts[index[sample_signal(spec, seed)[1]]] += 1
        assert stats.chisquare(counts).pvalue > 0.001


class TestNoise:
    def test_zero(self):
        assert not sample_noise(10, 0.0, 1).any()

    def test_determinism(self):
        assert sample_noise(50, 0.3, 9).tobytes() == sample_noise(50, 0.3, 9).tobytes()

    def test_energy(self):
        sigma = 0.05
        energy = np.mean([np.sum(sample_noise(1000, sigma, s) ** 2) for s in range(100)])
        assert abs(energy - 1000 * sigma**2) <= 0.1 * 1000 * sigma**2

    def test_negative(self):
        with pytest.raises(DomainError):
            sample_noise(5, -1.0, 0)
