"""The attacker's trackers: extended Kalman filter and bootstrap particle
filter, plus the resampling and moment utilities shared with the inverse
filters.

The EKF core is batched: a stack of B independent filters (means (B, n),
covariances (B, n, n), observations (B, m)) advances in one call.  The inverse
particle filter relies on this to carry a per-particle EKF replica cheaply.
"""

from dataclasses import dataclass

import numpy as np

from .ssm import ModelError


class FilterError(ModelError):
    """A filter update could not be completed (singular innovation, zero likelihood)."""


@dataclass
class EkfState:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class ParticleEnsemble:
    particles: np.ndarray   # (N, n)
    weights: np.ndarray     # (N,)

    def __post_init__(self):
        self.particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1 or self.weights.shape[0] != self.particles.shape[0]:
            raise ValueError("weights must be one per particle")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to 1")

    @property
    def size(self):
        return self.particles.shape[0]


def _bt(a):
    return np.swapaxes(a, -1, -2)


def symmetrize(p):
    return 0.5 * (p + _bt(p))


def ekf_step_batch(transition, obs, means, covs, ys, k):
    """Advance a stack of EKFs by one predict+update.

    ``k`` is the time index of the observation; the transition Jacobian and
    drift are evaluated at the previous time index ``k - 1``.  Covariance
    update is in Joseph form.  Returns (means', covs').
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    ys = np.asarray(ys, dtype=float)

    F = transition.jacobian(means, k - 1)
    m_pred = np.asarray(transition.drift(means, k - 1), dtype=float)
    if not np.all(np.isfinite(m_pred)):
        raise FilterError(f"EKF predicted mean is non-finite at k={k}")
    P_pred = F @ covs @ _bt(F) + transition.cov

    H = obs.jacobian(m_pred, k)
    R = obs.cov
    S = H @ P_pred @ _bt(H) + R
    PHt = P_pred @ _bt(H)
    try:
        gain = _bt(np.linalg.solve(_bt(S), _bt(PHt)))
    except np.linalg.LinAlgError as exc:
        raise FilterError("singular innovation covariance") from exc
    innov = ys - np.asarray(obs.obs_map(m_pred, k), dtype=float)
    means_new = m_pred + (gain @ innov[..., None])[..., 0]
    eye = np.eye(means.shape[-1])
    ikh = eye - gain @ H
    covs_new = symmetrize(ikh @ P_pred @ _bt(ikh) + gain @ R @ _bt(gain))
    return means_new, covs_new


def ekf_step(model, state, y, k):
    """Single EKF predict+update against the attacker's observation channel."""
    m, p = ekf_step_batch(
        model.transition, model.attacker_obs,
        state.mean[None, :], state.cov[None, :, :],
        np.atleast_1d(np.asarray(y, dtype=float))[None, :], k,
    )
    return EkfState(mean=m[0], cov=p[0])


def systematic_resample(weights, rng):
    """Low-variance resampling: one uniform offset, equally spaced positions."""
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    positions = (np.arange(n) + rng.uniform()) / n
    cumsum = np.cumsum(weights)
    cumsum[-1] = 1.0  # guard against roundoff
    return np.searchsorted(cumsum, positions, side="right")


def multinomial_resample(weights, rng):
    """N independent draws from the weight distribution."""
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    cumsum = np.cumsum(weights)
    cumsum[-1] = 1.0
    return np.searchsorted(cumsum, rng.uniform(size=n), side="right")


RESAMPLERS = {"systematic": systematic_resample, "multinomial": multinomial_resample}


def weighted_mean_cov(particles, weights):
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    weights = np.asarray(weights, dtype=float)
    mean = weights @ particles
    d = particles - mean
    cov = (d * weights[:, None]).T @ d
    return mean, symmetrize(cov)


def normalized_log_weights(logw):
    """Normalize log weights by max-subtraction; error if all are -inf."""
    logw = np.asarray(logw, dtype=float)
    top = logw.max()
    if not np.isfinite(top):
        raise FilterError("zero total likelihood: all log-weights are -inf")
    w = np.exp(logw - top)
    return w / w.sum()


def bootstrap_pf_step(model, ens, y, k, stream):
    """One bootstrap PF step: propagate, weight by attacker likelihood,
    systematic-resample to uniform weights.

    Returns (ensemble', estimate, covariance) with the point estimate taken
    before resampling.
    """
    gen = stream.generator()
    parts = model.transition.sample(ens.particles, k - 1, gen)
    logw = model.attacker_obs.logdensity(np.asarray(y, dtype=float), parts, k)
    logw = logw + np.log(ens.weights, out=np.full_like(ens.weights, -np.inf),
                         where=ens.weights > 0)
    w = normalized_log_weights(logw)
    est, cov = weighted_mean_cov(parts, w)
    idx = systematic_resample(w, gen)
    out = ParticleEnsemble(parts[idx], np.full(ens.size, 1.0 / ens.size))
    return out, est, cov


class ForwardEkf:
    """Forward-filter definition: an EKF with a fixed or data-dependent init."""

    def __init__(self, init_cov, init_mean=None, init_from_first_obs=None):
        if (init_mean is None) == (init_from_first_obs is None):
            raise ValueError("provide exactly one of init_mean / init_from_first_obs")
        self.init_cov = np.atleast_2d(np.asarray(init_cov, dtype=float))
        self.init_mean = None if init_mean is None else np.atleast_1d(
            np.asarray(init_mean, dtype=float))
        self.init_from_first_obs = init_from_first_obs

    def init(self, y1, stream):
        mean = self.init_mean
        if mean is None:
            mean = np.atleast_1d(np.asarray(self.init_from_first_obs(y1), dtype=float))
        return EkfState(mean=mean.copy(), cov=self.init_cov.copy())

    def moments(self, state):
        return state.mean, state.cov

    def step(self, model, state, y, k, stream):
        new = ekf_step(model, state, y, k)
        return new, new.mean, new.cov


class ForwardPf:
    """Forward-filter definition: a bootstrap particle filter."""

    def __init__(self, n_particles, init_cov, init_mean=None, init_from_first_obs=None):
        if (init_mean is None) == (init_from_first_obs is None):
            raise ValueError("provide exactly one of init_mean / init_from_first_obs")
        self.n_particles = int(n_particles)
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        self.init_cov = np.atleast_2d(np.asarray(init_cov, dtype=float))
        self.init_mean = None if init_mean is None else np.atleast_1d(
            np.asarray(init_mean, dtype=float))
        self.init_from_first_obs = init_from_first_obs

    def init(self, y1, stream):
        mean = self.init_mean
        if mean is None:
            mean = np.atleast_1d(np.asarray(self.init_from_first_obs(y1), dtype=float))
        from .ssm import GaussianDist
        dist = GaussianDist(mean, self.init_cov)
        parts = dist.sample(stream.generator(), size=self.n_particles)
        return ParticleEnsemble(parts, np.full(self.n_particles, 1.0 / self.n_particles))

    def moments(self, state):
        return weighted_mean_cov(state.particles, state.weights)

    def step(self, model, state, y, k, stream):
        return bootstrap_pf_step(model, state, y, k, stream)
