import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mvcca.dataset import PairedMatrixDataset
from mvcca.errors import StructuralError
from mvcca.matvar import EXACT, MatrixNormalParams, psd_within, random_spd, to_vec_normal
from mvcca.synth import SynthSpec, alignment_cosine, generate
from mvcca.umvcca import (
    UmvccaModel,
    umvcca_fit,
    umvcca_loglik,
    umvcca_posterior_mean,
    umvcca_reconstruct,
)


def small_pairs(seed, N=60, m=4, n1=3, n2=2, d2=1, noise=0.3):
    data, _ = generate(SynthSpec(m, n1, m, n2, 0, d2, N, noise_scale=noise,
                                 seed=seed, unilateral=True))
    return data


def random_model(rng, m=3, n1=2, n2=2, d2=1):
    return UmvccaModel(rng.standard_normal((n1 + n2, d2)), random_spd(rng, n1),
                       random_spd(rng, n2), rng.standard_normal((m, n1)),
                       rng.standard_normal((m, n2)))


@pytest.fixture(scope="module")
def fig4():
    spec = SynthSpec(32, 32, 32, 32, 0, 1, 1000, noise_scale=0.1, seed=4, unilateral=True)
    data, truth = generate(spec)
    model, trace = umvcca_fit(data, 1, seed=4)
    return data, truth, model, trace


class TestFit:
    def test_recovers_true_right_maps(self, fig4):
        _, truth, model, _ = fig4
        assert alignment_cosine(model.R1, truth.R1) > 0.95
        assert alignment_cosine(model.R2, truth.R2) > 0.95

    def test_loglik_monotone(self, fig4):
        obj = np.array([r.objective for r in fig4[3]])
        assert np.all(np.diff(obj) >= -1e-8 * np.abs(obj[:-1]))

    def test_trace_objective_matches_loglik(self, fig4):
        data, _, model, trace = fig4
        assert trace[-1].objective == pytest.approx(umvcca_loglik(model, data), rel=1e-12)

    def test_deterministic(self):
        data = small_pairs(0)
        a, ta = umvcca_fit(data, 1, max_iters=30, seed=3)
        b, tb = umvcca_fit(data, 1, max_iters=30, seed=3)
        np.testing.assert_array_equal(a.R, b.R)
        np.testing.assert_array_equal(a.PsiR1, b.PsiR1)
        assert [r.objective for r in ta] == [r.objective for r in tb]

    @pytest.mark.parametrize("seed", range(4))
    def test_monotone_and_psd_small(self, seed):
        model, trace = umvcca_fit(small_pairs(seed, d2=2), 2, max_iters=200, tol=1e-12,
                                  seed=seed)
        obj = np.array([r.objective for r in trace])
        assert np.all(np.diff(obj) >= -1e-8 * np.abs(obj[:-1]))
        assert psd_within(model.PsiR1) and psd_within(model.PsiR2)
        np.testing.assert_allclose(model.PsiR1, model.PsiR1.T, atol=1e-10)

    def test_unequal_row_counts_rejected(self):
        rng = np.random.default_rng(0)
        data = PairedMatrixDataset(rng.standard_normal((5, 3, 2)), rng.standard_normal((5, 4, 2)))
        with pytest.raises(StructuralError, match="row count"):
            umvcca_fit(data, 1)

    def test_rank_out_of_range(self):
        with pytest.raises(StructuralError):
            umvcca_fit(small_pairs(0), 6)

    def test_scaled_data_scales_reconstructions(self):
        # With an equivariant start (c*R0, c^2*Psi0) every EM iterate maps
        # R -> c*R and PsiR -> c^2*PsiR, so the posterior means are unchanged
        # and reconstructions Z R^T scale by c.
        data = small_pairs(1, N=200)
        c = 3.0
        scaled = PairedMatrixDataset(c * data.X1, c * data.X2)
        R0 = np.random.default_rng(0).uniform(size=(5, 1))
        init = UmvccaModel(R0, np.eye(3), np.eye(2), data.mean1, data.mean2)
        init_c = UmvccaModel(c * R0, c**2 * np.eye(3), c**2 * np.eye(2), data.mean1, data.mean2)
        # fixed iteration count: the relative stopping rule is not shift invariant
        a, _ = umvcca_fit(data, 1, tol=0.0, max_iters=300, init=init)
        b, _ = umvcca_fit(scaled, 1, tol=0.0, max_iters=300, init=init_c)
        Za = umvcca_posterior_mean(a, data.X1, data.X2)
        Zb = umvcca_posterior_mean(b, scaled.X1, scaled.X2)
        np.testing.assert_allclose(Zb, Za, atol=1e-6)
        rec_a = umvcca_reconstruct(a, Za, 1) - a.mean1
        rec_b = umvcca_reconstruct(b, Zb, 1) - b.mean1
        np.testing.assert_allclose(rec_b, c * rec_a, atol=1e-6)

    def test_scaled_data_default_start_scales_marginal(self):
        # Loadings sit on a likelihood ridge, but the fitted covariance is identified.
        data = small_pairs(1, N=200)
        c = 3.0
        scaled = PairedMatrixDataset(c * data.X1, c * data.X2)
        a, _ = umvcca_fit(data, 1, tol=1e-12, max_iters=2000, seed=0)
        b, _ = umvcca_fit(scaled, 1, tol=1e-12, max_iters=2000, seed=0)
        cov = lambda mdl: mdl.R @ mdl.R.T + mdl.PsiR
        np.testing.assert_allclose(cov(b), c**2 * cov(a), atol=1e-4 * c**2)

    def test_left_variant_by_transposition(self):
        data = small_pairs(2, n1=4, n2=4)
        model, _ = umvcca_fit(data.transposed(), 1, max_iters=20)
        assert model.R.shape == (2 * data.shape1[0], 1)


class TestPosteriorMean:
    def test_means_give_zero(self):
        model = random_model(np.random.default_rng(0))
        Z = umvcca_posterior_mean(model, model.mean1, model.mean2)
        np.testing.assert_array_equal(Z, np.zeros((3, 1)))

    def test_zero_loadings_give_prior_mean(self):
        rng = np.random.default_rng(1)
        base = random_model(rng)
        model = UmvccaModel(np.zeros_like(base.R), base.PsiR1, base.PsiR2, base.mean1, base.mean2)
        Z = umvcca_posterior_mean(model, rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))
        np.testing.assert_array_equal(Z, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_rowwise_conditioning_oracle(self, seed):
        rng = np.random.default_rng(seed)
        model = random_model(rng, m=3, n1=2, n2=3, d2=2)
        X1, X2 = rng.standard_normal((3, 2)), rng.standard_normal((3, 3))
        Z = umvcca_posterior_mean(model, X1, X2, EXACT)
        R, Psi = model.R, model.PsiR
        for i in range(3):
            x = np.concatenate([X1[i] - model.mean1[i], X2[i] - model.mean2[i]])
            # joint of (z, x): cov(z, x) = R^T, cov(x) = R R^T + Psi
            expected = R.T @ np.linalg.solve(R @ R.T + Psi, x)
            np.testing.assert_allclose(Z[i], expected, atol=1e-8)

    def test_absent_view_is_mean_imputed(self):
        rng = np.random.default_rng(2)
        model = random_model(rng)
        X1 = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(umvcca_posterior_mean(model, X1, None),
                                      umvcca_posterior_mean(model, X1, model.mean2))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        model = random_model(rng)
        X1, X2 = rng.standard_normal((4, 3, 2)), rng.standard_normal((4, 3, 2))
        batch = umvcca_posterior_mean(model, X1, X2)
        for k in range(4):
            np.testing.assert_allclose(batch[k], umvcca_posterior_mean(model, X1[k], X2[k]),
                                       atol=1e-14)

    def test_shape_mismatch(self):
        model = random_model(np.random.default_rng(4))
        with pytest.raises(StructuralError):
            umvcca_posterior_mean(model, np.zeros((3, 5)), None)
        with pytest.raises(StructuralError):
            umvcca_posterior_mean(model)

    @pytest.mark.parametrize("seed", range(5))
    def test_row_covariance_spectrum(self, seed):
        S = random_model(np.random.default_rng(seed), d2=3, n1=3, n2=3).posterior_row_cov()
        np.testing.assert_allclose(S, S.T, atol=1e-12)
        w = np.linalg.eigvalsh(S)
        assert np.all(w > 0) and np.all(w <= 1 + 1e-10)


class TestLoglik:
    def test_zero_loadings_at_means(self):
        m, n1, n2 = 3, 2, 2
        model = UmvccaModel(np.zeros((4, 1)), np.eye(2), np.eye(2), np.zeros((m, n1)),
                            np.zeros((m, n2)))
        data = PairedMatrixDataset(np.zeros((5, m, n1)), np.zeros((5, m, n2)))
        expected = -5 * m * (n1 + n2) / 2 * math.log(2 * math.pi)
        assert umvcca_loglik(model, data, EXACT) == pytest.approx(expected, abs=1e-10)

    def test_scalar_views(self):
        r = np.array([[0.7], [-0.4]])
        model = UmvccaModel(r, np.array([[0.5]]), np.array([[0.8]]),
                            np.zeros((1, 1)), np.zeros((1, 1)))
        x = np.array([[0.3, -1.2], [1.1, 0.4]])
        data = PairedMatrixDataset(x[:, :1, None], x[:, 1:, None],
                                   mean1=np.zeros((1, 1)), mean2=np.zeros((1, 1)))
        cov = r @ r.T + np.diag([0.5, 0.8])
        expected = multivariate_normal(np.zeros(2), cov).logpdf(x).sum()
        assert umvcca_loglik(model, data, EXACT) == pytest.approx(expected, abs=1e-10)

    def test_single_scalar_view_pair_marginals(self):
        # each 1x1 view alone is N(0, r_j^2 + psi_j)
        model = UmvccaModel(np.array([[2.0], [0.0]]), np.array([[1.0]]), np.array([[1.0]]),
                            np.zeros((1, 1)), np.zeros((1, 1)))
        data = PairedMatrixDataset(np.array([[[0.5]]]), np.array([[[0.0]]]),
                                   mean1=np.zeros((1, 1)), mean2=np.zeros((1, 1)))
        expected = (-0.5 * math.log(2 * math.pi * 5) - 0.025
                    - 0.5 * math.log(2 * math.pi))
        assert umvcca_loglik(model, data, EXACT) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_vec_gaussian_oracle(self, seed):
        rng = np.random.default_rng(seed)
        model = random_model(rng, m=3, n1=2, n2=2, d2=2)
        X1, X2 = rng.standard_normal((4, 3, 2)), rng.standard_normal((4, 3, 2))
        data = PairedMatrixDataset(X1, X2, mean1=model.mean1, mean2=model.mean2)
        C = model.R @ model.R.T + model.PsiR
        params = MatrixNormalParams(np.zeros((3, 4)), np.eye(3), C)
        mu, cov = to_vec_normal(params)
        X = np.concatenate([X1 - model.mean1, X2 - model.mean2], axis=2)
        oracle = sum(multivariate_normal(mu, cov).logpdf(x.ravel(order="F")) for x in X)
        assert umvcca_loglik(model, data, EXACT) == pytest.approx(oracle, abs=1e-9)
