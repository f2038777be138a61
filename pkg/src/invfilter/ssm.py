"""Attacker-defender state-space abstraction and episode simulation.

The defender's state x evolves through a Markov transition kernel.  The
attacker observes x through its own noisy channel, runs a tracker over those
observations, and acts; the defender observes the actions through a second
noisy channel.  All concrete models here are additive-Gaussian: a deterministic
map plus Gaussian noise, with the map allowed to depend on the time index.

Model callables (drift, observation maps, Jacobians) must accept batched
inputs: arrays of shape (..., dim) with the operation broadcast over leading
axes.
"""

import abc
from dataclasses import dataclass

import numpy as np


class ModelError(RuntimeError):
    """A model produced an invalid value (non-finite output, bad covariance)."""


class SimulationError(ModelError):
    """Episode simulation failed; carries the offending time index."""

    def __init__(self, message, time_index):
        super().__init__(f"{message} (time index {time_index})")
        self.time_index = time_index


def _as_vector(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    return x


def check_psd(cov, name="covariance"):
    """Validate symmetry and eigenvalues >= -1e-10 * ||cov||."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ModelError(f"{name} must be a square matrix, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(cov).max())):
        raise ModelError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(cov)
    if eig.min() < -1e-10 * max(1.0, np.linalg.norm(cov)):
        raise ModelError(f"{name} is not positive semidefinite (min eig {eig.min():.3e})")
    return cov


def psd_cholesky(cov):
    """Lower-triangular-like factor L with L L^T = cov.

    Cholesky for positive-definite input; singular-but-PSD covariances (for
    example a scalar noise pushed through a gain vector) fall back to an
    eigenvalue factorization.  A genuinely non-PSD covariance is an error,
    never silently repaired.
    """
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    eig, vec = np.linalg.eigh(cov)
    if eig.min() < -1e-10 * max(1.0, np.linalg.norm(cov)):
        raise ModelError(f"covariance is not positive semidefinite "
                         f"(min eig {eig.min():.3e})")
    return vec @ np.diag(np.sqrt(np.clip(eig, 0.0, None)))


@dataclass(frozen=True)
class GaussianDist:
    """Gaussian with explicit mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean)
        cov = check_psd(np.atleast_2d(np.asarray(self.cov, dtype=float)))
        if cov.shape[0] != mean.shape[0]:
            raise ModelError("mean / covariance dimension mismatch")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.shape[0]

    def sample(self, rng, size=None):
        chol = psd_cholesky(self.cov)
        shape = (self.dim,) if size is None else (size, self.dim)
        z = rng.standard_normal(shape)
        return self.mean + z @ chol.T


class TransitionModel(abc.ABC):
    """Markov transition kernel for the defender's state."""

    @abc.abstractmethod
    def sample(self, x, k, rng):
        """Draw the next state given state ``x`` at time index ``k``."""


class ObservationModel(abc.ABC):
    """Conditional observation law z | cond at time index k."""

    @abc.abstractmethod
    def sample(self, cond, k, rng):
        ...

    @abc.abstractmethod
    def logdensity(self, z, cond, k):
        ...


def fd_jacobian(fn, x, step_scale=1e-6):
    """Central finite-difference Jacobian of a batched vector map at ``x``.

    ``fn`` maps (..., n) -> (..., m); returns (..., m, n).  Step per component
    is step_scale * max(1, |x_j|).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cols = []
    for j in range(n):
        h = step_scale * max(1.0, float(np.abs(x[..., j]).max()))
        xp = x.copy()
        xm = x.copy()
        xp[..., j] += h
        xm[..., j] -= h
        cols.append((fn(xp) - fn(xm)) / (2.0 * h))
    return np.stack(cols, axis=-1)


class AdditiveGaussianTransition(TransitionModel):
    """x_{k+1} = drift(x_k, k) + w,  w ~ N(0, Q)."""

    def __init__(self, drift, cov, jacobian=None):
        self.drift = drift
        self.cov = check_psd(np.atleast_2d(np.asarray(cov, dtype=float)), "Q")
        self._chol = psd_cholesky(self.cov)
        self._jacobian = jacobian

    def jacobian(self, x, k):
        if self._jacobian is not None:
            return self._jacobian(x, k)
        return fd_jacobian(lambda v: self.drift(v, k), x)

    def sample(self, x, k, rng):
        x = np.asarray(x, dtype=float)
        m = np.asarray(self.drift(x, k), dtype=float)
        if not np.all(np.isfinite(m)):
            raise ModelError(f"transition drift produced non-finite output at k={k}")
        z = rng.standard_normal(m.shape)
        return m + z @ self._chol.T


class AdditiveGaussianObservation(ObservationModel):
    """z = obs_map(cond, k) + noise,  noise ~ N(0, cov)."""

    def __init__(self, obs_map, cov, jacobian=None):
        self.obs_map = obs_map
        self.cov = check_psd(np.atleast_2d(np.asarray(cov, dtype=float)), "observation noise")
        self._chol = psd_cholesky(self.cov)
        self._jacobian = jacobian

    @property
    def dim(self):
        return self.cov.shape[0]

    def jacobian(self, cond, k):
        if self._jacobian is not None:
            return self._jacobian(cond, k)
        return fd_jacobian(lambda v: self.obs_map(v, k), cond)

    def sample(self, cond, k, rng):
        cond = np.asarray(cond, dtype=float)
        if not np.all(np.isfinite(cond)):
            raise ModelError("observation conditioning value is non-finite")
        m = np.asarray(self.obs_map(cond, k), dtype=float)
        z = rng.standard_normal(m.shape)
        return m + z @ self._chol.T

    def logdensity(self, z, cond, k):
        if not np.any(self.cov):
            raise ModelError("log-density undefined for singular observation noise")
        try:
            chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ModelError("singular observation noise covariance") from exc
        r = np.asarray(z, dtype=float) - np.asarray(self.obs_map(cond, k), dtype=float)
        # whiten residual: solve L u = r
        u = np.linalg.solve(chol, r[..., None])[..., 0]
        m = self.cov.shape[0]
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        return -0.5 * (np.sum(u * u, axis=-1) + m * np.log(2.0 * np.pi) + logdet)


@dataclass(frozen=True)
class SystemModel:
    """Full attacker-defender model: kernel, both observation channels, priors."""

    transition: TransitionModel
    attacker_obs: ObservationModel
    defender_obs: ObservationModel
    state_dim: int
    init_state: GaussianDist
    forward_init: GaussianDist

    def __post_init__(self):
        if self.init_state.dim != self.state_dim or self.forward_init.dim != self.state_dim:
            raise ModelError("initial distribution dimension inconsistent with state_dim")


@dataclass
class Trajectory:
    """One simulated episode: states 0..K, observations/estimates/actions 1..K."""

    x: np.ndarray        # (K+1, n_x)
    y: np.ndarray        # (K, n_y)
    xhat: np.ndarray     # (K+1, n_x)
    a: np.ndarray        # (K, n_a)
    xhat_cov: np.ndarray = None  # (K+1, n_x, n_x), forward filter's reported covariance

    @property
    def horizon(self):
        return self.x.shape[0] - 1


def sample_transition(model, x, k, rng):
    return model.sample(x, k, rng)


def sample_obs(model, cond, k, rng):
    return model.sample(cond, k, rng)


def obs_logdensity(model, z, cond, k):
    return model.logdensity(z, cond, k)


def simulate_episode(model, fwd, K, stream):
    """Simulate x -> y -> xhat -> a for K steps.

    ``fwd`` is a forward-filter object exposing ``init(y1, stream)`` and
    ``step(model, state, y, k, stream) -> (state, estimate, cov)``.  The filter
    is initialized after the first attacker observation so that data-dependent
    initializations are possible.
    """
    if K < 1:
        raise ValueError("horizon K must be >= 1")
    n = model.state_dim
    x = np.empty((K + 1, n))
    xhat = np.empty((K + 1, n))
    y = np.empty((K, model.attacker_obs.dim))
    a = np.empty((K, model.defender_obs.dim))
    xhat_cov = np.empty((K + 1, n, n))

    x[0] = model.init_state.sample(stream.child("x0").generator())
    fstate = None
    for k in range(1, K + 1):
        x[k] = model.transition.sample(x[k - 1], k - 1, stream.child(k, "w").generator())
        y[k - 1] = model.attacker_obs.sample(x[k], k, stream.child(k, "v").generator())
        if fstate is None:
            fstate = fwd.init(y[k - 1], stream.child("fwd_init"))
            xhat[0], xhat_cov[0] = fwd.moments(fstate)
        try:
            fstate, est, cov = fwd.step(model, fstate, y[k - 1], k, stream.child(k, "fwd"))
        except ModelError as exc:
            raise SimulationError(f"forward filter failed: {exc}", k) from exc
        if not np.all(np.isfinite(est)):
            raise SimulationError("forward filter estimate diverged", k)
        xhat[k] = est
        xhat_cov[k] = cov
        a[k - 1] = model.defender_obs.sample(xhat[k], k, stream.child(k, "eps").generator())
    return Trajectory(x=x, y=y, xhat=xhat, a=a, xhat_cov=xhat_cov)
