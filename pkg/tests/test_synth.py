import numpy as np
import pytest

from mvcca.errors import StructuralError
from mvcca.synth import (
    CLASSIFICATION_FIXTURE,
    SynthSpec,
    alignment_cosine,
    generate,
    recovery_error,
    train_test_split,
)


def test_noiseless_is_exact():
    data, truth = generate(SynthSpec(4, 3, 5, 2, 2, 2, 7, noise_scale=0.0, seed=1))
    np.testing.assert_allclose(data.X1, truth.L1 @ truth.Z @ truth.R1.T, atol=1e-14)
    np.testing.assert_allclose(data.X2, truth.L2 @ truth.Z @ truth.R2.T, atol=1e-14)


def test_figure_one_shapes():
    data, truth = generate(SynthSpec(32, 32, 32, 32, 15, 15, 1000, seed=0))
    assert data.X1.shape == data.X2.shape == (1000, 32, 32)
    assert truth.L1.shape == (32, 15) and truth.R2.shape == (32, 15)
    assert truth.Z.shape == (1000, 15, 15)
    assert np.all((truth.L1 >= 0) & (truth.L1 <= 1))


def test_deterministic_and_nested():
    a, ta = generate(SynthSpec(3, 3, 3, 3, 1, 1, 10, seed=5))
    b, tb = generate(SynthSpec(3, 3, 3, 3, 1, 1, 10, seed=5))
    c, tc = generate(SynthSpec(3, 3, 3, 3, 1, 1, 1000, seed=5))
    np.testing.assert_array_equal(a.X1, b.X1)
    np.testing.assert_array_equal(a.X1, c.X1[:10])
    np.testing.assert_array_equal(ta.Z, tc.Z[:10])


def test_noise_seed_leaves_loadings():
    _, a = generate(SynthSpec(3, 3, 3, 3, 1, 1, 10, seed=5))
    d, b = generate(SynthSpec(3, 3, 3, 3, 1, 1, 10, seed=5, noise_seed=99))
    e, _ = generate(SynthSpec(3, 3, 3, 3, 1, 1, 10, seed=5))
    np.testing.assert_array_equal(a.L1, b.L1)
    np.testing.assert_array_equal(a.Z, b.Z)
    assert not np.array_equal(d.X1, e.X1)


def test_vec_covariance_matches_model():
    spec = SynthSpec(2, 2, 2, 2, 1, 1, 20_000, noise_scale=0.3, seed=2)
    data, t = generate(spec)
    v = np.hstack([data.X1.transpose(0, 2, 1).reshape(-1, 4),
                   data.X2.transpose(0, 2, 1).reshape(-1, 4)])
    B = np.vstack([np.kron(t.R1, t.L1), np.kron(t.R2, t.L2)])
    expected = B @ B.T + 0.3**2 * np.eye(8)
    assert np.max(np.abs(np.cov(v.T, bias=True) - expected)) < 0.05


def test_classes_cycle_and_offset_latents():
    data, t = generate(SynthSpec(3, 3, 3, 3, 2, 2, 12, seed=0, class_count=4,
                                 class_separation=5.0))
    assert data.labels[:5] == ("0", "1", "2", "3", "0")
    assert t.class_offsets.shape == (4, 2, 2)


def test_classification_fixture_split():
    data, _ = generate(CLASSIFICATION_FIXTURE)
    train, test = train_test_split(data, 400)
    assert len(train) == 400 and len(test) == 200
    assert set(train.labels) == set(test.labels) and len(set(test.labels)) == 20


@pytest.mark.parametrize("bad", [
    dict(d1=5), dict(d2=4), dict(noise_scale=-1.0), dict(n_samples=0),
    dict(loading_law="normal"),
])
def test_invalid_specs(bad):
    kwargs = dict(m1=4, n1=3, m2=4, n2=3, d1=2, d2=2, n_samples=5) | bad
    with pytest.raises(StructuralError):
        SynthSpec(**kwargs)


class TestRecoveryError:
    def test_identity_sign_and_scale(self):
        z = np.random.default_rng(0).standard_normal((30, 1, 1))
        assert recovery_error(z, z) == 0.0
        assert recovery_error(-z, z) == 0.0
        assert recovery_error(3 * z, z) < 1e-12

    def test_invariant_to_sign_and_positive_scale(self):
        rng = np.random.default_rng(1)
        z, e = rng.standard_normal((2, 20, 1, 1))
        base = recovery_error(e, z)
        assert recovery_error(-2.5 * e, z) == pytest.approx(base, abs=1e-12)

    def test_requires_scalar_latents(self):
        with pytest.raises(StructuralError):
            recovery_error(np.ones((3, 2, 1)), np.ones((3, 2, 1)))


class TestAlignmentCosine:
    def test_cases(self):
        assert alignment_cosine([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)
        assert alignment_cosine([1.0, 0.0], [0.0, 3.0]) == 0.0
        assert alignment_cosine([1.0, 1.0], [1.0, 0.0]) == pytest.approx(0.70710678, abs=1e-8)

    def test_zero_vector(self):
        with pytest.raises(StructuralError):
            alignment_cosine([0.0, 0.0], [1.0, 0.0])
