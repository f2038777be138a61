import numpy as np
import pytest

from conftest import inverse_kf
from invfilter.forward import FilterError
from invfilter.inverse_pf import (InverseEnsemble, ModificationPolicy,
                                  PREDICTED, RESAMPLED, WEIGHTED,
                                  expectation_under_ensemble, initial_ensemble,
                                  ipf_estimate, ipf_modification, ipf_resample,
                                  ipf_sis, ipf_step, ipf_weight_update,
                                  run_inverse_pf)
from invfilter.rng import RngStream
from invfilter.scenarios import make_linear_gaussian_model
from invfilter.ssm import GaussianDist


@pytest.fixture
def policy():
    return ModificationPolicy(gamma=0.0, max_retries=10)


def small_ensemble():
    return InverseEnsemble(
        xhat=np.array([[0.0], [1.0]]),
        fwd_cov=np.tile(np.eye(1), (2, 1, 1)),
        ybar=np.array([[0.0], [0.0]]),
        weights=np.array([0.5, 0.5]),
        phase=PREDICTED,
    )


class TestEnsembleInvariants:
    def test_resampled_requires_uniform_weights(self):
        with pytest.raises(ValueError):
            InverseEnsemble(xhat=np.zeros((2, 1)), fwd_cov=np.tile(np.eye(1), (2, 1, 1)),
                            ybar=None, weights=np.array([0.9, 0.1]), phase=RESAMPLED)

    def test_weights_must_normalize(self):
        with pytest.raises(ValueError):
            InverseEnsemble(xhat=np.zeros((2, 1)), fwd_cov=np.tile(np.eye(1), (2, 1, 1)),
                            ybar=None, weights=np.array([0.9, 0.3]), phase=WEIGHTED)

    def test_phase_gates(self, linear_model, policy, stream):
        pred = small_ensemble()
        with pytest.raises(ValueError):
            ipf_sis(linear_model, pred, np.array([0.0]), 1, stream)
        with pytest.raises(ValueError):
            ipf_estimate(pred)
        weighted = ipf_weight_update(linear_model, pred, np.array([0.0]), 1)
        with pytest.raises(ValueError):
            ipf_weight_update(linear_model, weighted, np.array([0.0]), 1)
        res = ipf_resample(weighted, stream)
        with pytest.raises(ValueError):
            ipf_resample(res, stream)


class TestSis:
    def test_draws_and_pushes_every_particle(self, linear_model, stream):
        prev = initial_ensemble(64, GaussianDist([0.0], [[1.0]]), [[1.0]],
                                stream.child("init"))
        pred = ipf_sis(linear_model, prev, np.array([2.0]), 1, stream.child("sis"))
        assert pred.phase == PREDICTED
        assert pred.xhat.shape == (64, 1)
        assert pred.ybar.shape == (64, 1)
        # observation draws center on the true state under h(x) = x
        assert pred.ybar.mean() == pytest.approx(2.0, abs=0.6)
        # covariance replica identical across particles (same prior cov)
        assert np.allclose(pred.fwd_cov, pred.fwd_cov[0])

    def test_tracker_pushforward_matches_single_ekf(self, linear_model, stream):
        # one particle: SIS must coincide with a single EKF step on its draw
        from invfilter.forward import ekf_step_batch
        prev = InverseEnsemble(xhat=np.array([[0.5]]),
                               fwd_cov=np.array([[[2.0]]]), ybar=None,
                               weights=np.array([1.0]), phase=RESAMPLED)
        pred = ipf_sis(linear_model, prev, np.array([1.0]), 3, stream.child("s"))
        m, c = ekf_step_batch(linear_model.transition, linear_model.attacker_obs,
                              prev.xhat, prev.fwd_cov, pred.ybar, 3)
        assert np.allclose(pred.xhat, m)
        assert np.allclose(pred.fwd_cov, c)


class TestModification:
    def test_zero_threshold_always_accepts(self, linear_model, policy):
        ok, beta = ipf_modification(linear_model, small_ensemble(),
                                    np.array([0.0]), 1, policy)
        assert ok and beta > 0

    def test_unreachable_threshold_rejects(self, linear_model):
        pol = ModificationPolicy(gamma=10.0, max_retries=1)
        ok, _ = ipf_modification(linear_model, small_ensemble(),
                                 np.array([0.0]), 1, pol)
        assert not ok

    def test_callable_gamma(self, linear_model):
        pol = ModificationPolicy(gamma=lambda k: 10.0 if k == 1 else 0.0,
                                 max_retries=1)
        ok1, _ = ipf_modification(linear_model, small_ensemble(), np.array([0.0]), 1, pol)
        ok2, _ = ipf_modification(linear_model, small_ensemble(), np.array([0.0]), 2, pol)
        assert not ok1 and ok2

    def test_step_raises_when_threshold_unreachable(self, linear_model, stream):
        prev = initial_ensemble(8, GaussianDist([0.0], [[1.0]]), [[1.0]],
                                stream.child("init"))
        pol = ModificationPolicy(gamma=1e6, max_retries=3)
        with pytest.raises(FilterError):
            ipf_step(linear_model, prev, np.array([0.0]), np.array([0.0]), 1,
                     pol, stream.child("step"))

    def test_retry_count_reported(self, linear_model, stream):
        prev = initial_ensemble(32, GaussianDist([0.0], [[1.0]]), [[1.0]],
                                stream.child("init"))
        _, _, _, diag = ipf_step(linear_model, prev, np.array([0.0]),
                                 np.array([0.0]), 1, ModificationPolicy(0.0, 10),
                                 stream.child("step"))
        assert diag["retries"] == 0
        assert diag["mean_action_likelihood"] > 0


class TestWeighting:
    def test_weights_match_frozen_likelihood_ratio(self, linear_model):
        # two particles at the action value and sqrt(5) away: log ratio -2.5
        pred = InverseEnsemble(
            xhat=np.array([[0.0], [np.sqrt(5.0)]]),
            fwd_cov=np.tile(np.eye(1), (2, 1, 1)),
            ybar=np.zeros((2, 1)),
            weights=np.array([0.5, 0.5]), phase=PREDICTED)
        w = ipf_weight_update(linear_model, pred, np.array([0.0]), 1).weights
        assert w[0] == pytest.approx(0.9241418199787566, abs=1e-12)
        assert w[1] == pytest.approx(0.07585818002124356, abs=1e-12)

    def test_estimate_is_weighted_mean(self, linear_model):
        pred = small_ensemble()
        weighted = ipf_weight_update(linear_model, pred, np.array([0.0]), 1)
        est, cov = ipf_estimate(weighted)
        assert est[0] == pytest.approx(float(weighted.weights @ pred.xhat[:, 0]),
                                       abs=1e-14)
        assert cov[0, 0] >= 0

    def test_resample_copies_full_particle(self, linear_model, stream):
        pred = InverseEnsemble(
            xhat=np.array([[0.0], [100.0]]),
            fwd_cov=np.stack([np.eye(1), 7.0 * np.eye(1)]),
            ybar=np.array([[1.0], [2.0]]),
            weights=np.array([0.5, 0.5]), phase=PREDICTED)
        weighted = ipf_weight_update(linear_model, pred, np.array([0.0]), 1)
        # particle 1 is 100 sigma away: all offspring must be particle 0
        res = ipf_resample(weighted, stream)
        assert np.all(res.xhat == 0.0)
        assert np.all(res.fwd_cov == 1.0)
        assert np.all(res.ybar == 1.0)
        assert np.allclose(res.weights, 0.5)


class TestExpectation:
    def test_identity_and_abs4(self):
        ens = InverseEnsemble(xhat=np.array([[1.0], [-2.0]]),
                              fwd_cov=np.tile(np.eye(1), (2, 1, 1)), ybar=None,
                              weights=np.array([0.25, 0.75]), phase=WEIGHTED)
        assert expectation_under_ensemble(ens)[0] == pytest.approx(-1.25)
        assert expectation_under_ensemble(ens, "abs4")[0] == pytest.approx(
            0.25 * 1.0 + 0.75 * 16.0)

    def test_callable_phi(self):
        ens = InverseEnsemble(xhat=np.array([[1.0], [3.0]]),
                              fwd_cov=np.tile(np.eye(1), (2, 1, 1)),
                              ybar=np.array([[2.0], [4.0]]),
                              weights=np.array([0.5, 0.5]), phase=WEIGHTED)
        got = expectation_under_ensemble(ens, lambda x, y: x[:, 0] * y[:, 0])
        assert got[0] == pytest.approx(0.5 * 2.0 + 0.5 * 12.0)

    def test_predicted_phase_rejected(self):
        with pytest.raises(ValueError):
            expectation_under_ensemble(small_ensemble())


class TestRunInversePf:
    def test_shapes_and_determinism(self, linear_model, stream):
        gen = stream.child("data").generator()
        x = np.cumsum(gen.standard_normal(11))
        a = gen.standard_normal(10)
        args = (linear_model, x, a, 40, GaussianDist([0.0], [[1.0]]), [[1.0]],
                ModificationPolicy(0.0, 10))
        m1, c1 = run_inverse_pf(*args, stream=stream.child("run"))
        m2, c2 = run_inverse_pf(*args, stream=stream.child("run"))
        assert m1.shape == (11, 1) and c1.shape == (11, 1, 1)
        assert np.array_equal(m1, m2) and np.array_equal(c1, c2)

    def test_multinomial_scheme_differs_but_tracks(self, linear_model, stream):
        gen = stream.child("data").generator()
        x = np.cumsum(gen.standard_normal(11))
        a = x[1:] + 0.1 * gen.standard_normal(10)
        common = (linear_model, x, a, 500, GaussianDist([0.0], [[1.0]]), [[1.0]],
                  ModificationPolicy(0.0, 10))
        m_sys, _ = run_inverse_pf(*common, stream=stream.child("r"),
                                  scheme="systematic")
        m_mul, _ = run_inverse_pf(*common, stream=stream.child("r"),
                                  scheme="multinomial")
        assert not np.array_equal(m_sys, m_mul)
        assert np.allclose(m_sys, m_mul, atol=1.0)

    def test_matches_exact_inverse_kalman_filter(self, linear_model):
        # large-N inverse PF against the closed-form inverse KF oracle
        root = RngStream(31337)
        gen = root.child("data").generator()
        K = 12
        a_coef, q, r, e = 0.9, 1.0, 1.0, 1.0
        x = np.zeros(K + 1)
        for k in range(1, K + 1):
            x[k] = a_coef * x[k - 1] + gen.standard_normal()
        # synthesize the attacker's exact KF estimates and the actions they drive
        from conftest import forward_kf_gains
        gains, _ = forward_kf_gains(a_coef, q, r, 1.0, K)
        xhat = np.zeros(K + 1)
        acts = np.zeros(K)
        for k in range(1, K + 1):
            y = x[k] + gen.standard_normal()
            m_pred = a_coef * xhat[k - 1]
            xhat[k] = m_pred + gains[k - 1] * (y - m_pred)
            acts[k - 1] = xhat[k] + gen.standard_normal()
        ref_m, ref_p = inverse_kf(a_coef, q, r, e, 1.0, x, acts, 0.0, 1.0)
        means, _ = run_inverse_pf(make_linear_gaussian_model(), x, acts, 20_000,
                                  GaussianDist([0.0], [[1.0]]), [[1.0]],
                                  ModificationPolicy(0.0, 10), root.child("ipf"))
        # Monte Carlo tolerance: a few posterior standard deviations / sqrt(N)
        assert np.allclose(means[1:, 0], ref_m[1:], atol=0.1)

    def test_one_dim_sequences_accepted(self, linear_model, stream):
        m1, _ = run_inverse_pf(linear_model, np.zeros(6), np.zeros(5), 30,
                               GaussianDist([0.0], [[1.0]]), [[1.0]],
                               ModificationPolicy(0.0, 10), stream.child("r"))
        m2, _ = run_inverse_pf(linear_model, np.zeros((6, 1)), np.zeros((5, 1)), 30,
                               GaussianDist([0.0], [[1.0]]), [[1.0]],
                               ModificationPolicy(0.0, 10), stream.child("r"))
        assert np.array_equal(m1, m2)
