import numpy as np
import pytest

from invfilter.rng import RngStream
from invfilter.scenarios import make_linear_gaussian_model


@pytest.fixture
def stream():
    return RngStream(123456789)


@pytest.fixture
def linear_model():
    return make_linear_gaussian_model(a=0.9, q=1.0, r=1.0, e=1.0,
                                      prior=(0.0, 1.0), forward_init=(0.0, 1.0))


def forward_kf_gains(a, q, r, p0, n_steps):
    """Exact scalar Kalman gains/covariances for the forward tracker."""
    gains, covs = [], []
    p = p0
    for _ in range(n_steps):
        p_pred = a * a * p + q
        k = p_pred / (p_pred + r)
        p = (1.0 - k) * p_pred
        gains.append(k)
        covs.append(p)
    return np.array(gains), np.array(covs)


def inverse_kf(a, q, r, e, tracker_p0, x_seq, a_seq, m0, p0):
    """Exact inverse Kalman filter for the scalar linear-Gaussian chain.

    The tracker update is x̂_k = (1-K_k) a x̂_{k-1} + K_k y_k with the exact
    Kalman gain sequence; observed through a_k = x̂_k + eps.
    """
    K = len(a_seq)
    gains, _ = forward_kf_gains(a, q, r, tracker_p0, K)
    means = np.empty(K + 1)
    covs = np.empty(K + 1)
    means[0], covs[0] = m0, p0
    m, p = m0, p0
    for k in range(1, K + 1):
        kf = gains[k - 1]
        c = (1.0 - kf) * a
        m_pred = c * m + kf * x_seq[k]
        p_pred = c * c * p + kf * kf * r
        s = p_pred + e
        gain = p_pred / s
        m = m_pred + gain * (a_seq[k - 1] - m_pred)
        p = (1.0 - gain) * p_pred
        means[k], covs[k] = m, p
    return means, covs
