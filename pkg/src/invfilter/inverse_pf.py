"""Inverse particle filter.

The defender knows its own true states x_{0:k} and sees noisy action
observations a_{1:k}.  Each particle is a hypothesis about the attacker's
tracker: an estimate vector, the tracker's internal covariance replica (the
assumed tracker is always an EKF), and the last attacker-observation draw.

One recursion: draw attacker observations conditioned on the true state, push
every particle through the assumed tracker, optionally redraw until the
predicted ensemble explains the action observation well enough, weight by the
defender's observation density, estimate before resampling, then resample to
uniform weights.
"""

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .forward import (FilterError, RESAMPLERS, ekf_step_batch,
                      normalized_log_weights, weighted_mean_cov)

PREDICTED, WEIGHTED, RESAMPLED = "predicted", "weighted", "resampled"


@dataclass
class InverseEnsemble:
    """N joint particles (xhat, tracker covariance replica, last obs draw)."""

    xhat: np.ndarray        # (N, n_x)
    fwd_cov: np.ndarray     # (N, n_x, n_x)
    ybar: np.ndarray        # (N, n_y) or None before the first recursion
    weights: np.ndarray     # (N,)
    phase: str = RESAMPLED

    def __post_init__(self):
        if self.phase not in (PREDICTED, WEIGHTED, RESAMPLED):
            raise ValueError(f"unknown phase {self.phase!r}")
        self.check()

    @property
    def size(self):
        return self.xhat.shape[0]

    def check(self):
        if self.phase == RESAMPLED:
            if not np.allclose(self.weights, 1.0 / self.size, atol=1e-12):
                raise ValueError("resampled ensemble must have uniform weights")
        elif np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to 1")


@dataclass
class ModificationPolicy:
    """Threshold check on the predicted ensemble's mean action likelihood."""

    gamma: Union[float, Callable[[int], float]] = 0.0
    max_retries: int = 10

    def __post_init__(self):
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")

    def threshold(self, k):
        g = self.gamma(k) if callable(self.gamma) else self.gamma
        if g < 0:
            raise ValueError("gamma must be >= 0")
        return g


def initial_ensemble(n_particles, init_dist, tracker_cov, stream):
    """Particles from the assumed tracker-init distribution, shared covariance replica."""
    xhat = init_dist.sample(stream.generator(), size=n_particles)
    cov = np.broadcast_to(np.atleast_2d(np.asarray(tracker_cov, dtype=float)),
                          (n_particles,) + (init_dist.dim,) * 2).copy()
    return InverseEnsemble(xhat=xhat, fwd_cov=cov, ybar=None,
                           weights=np.full(n_particles, 1.0 / n_particles),
                           phase=RESAMPLED)


def ipf_sis(model, prev, x_k, k, stream):
    """Sampling step: fresh attacker-observation draws, tracker push-forward.

    Realizes the optimal importance density (tracker transition times the
    attacker observation law); output is a predicted-phase ensemble with
    uniform weights.
    """
    if prev.phase != RESAMPLED:
        raise ValueError("ipf_sis requires a resampled ensemble")
    n = prev.size
    x_k = np.atleast_1d(np.asarray(x_k, dtype=float))
    gen = stream.generator()
    ybar = model.attacker_obs.sample(np.broadcast_to(x_k, (n, x_k.shape[0])), k, gen)
    try:
        xhat, cov = ekf_step_batch(model.transition, model.attacker_obs,
                                   prev.xhat, prev.fwd_cov, ybar, k)
    except FilterError as exc:
        raise FilterError(f"tracker push-forward failed at k={k}: {exc}") from exc
    bad = ~np.all(np.isfinite(xhat), axis=-1)
    if np.any(bad):
        raise FilterError(f"tracker push-forward diverged for particle "
                          f"{int(np.argmax(bad))} at k={k}")
    return InverseEnsemble(xhat=xhat, fwd_cov=cov, ybar=ybar,
                           weights=np.full(n, 1.0 / n), phase=PREDICTED)


def _action_log_likelihood(model, ens, a_k, k):
    return model.defender_obs.logdensity(np.asarray(a_k, dtype=float), ens.xhat, k)


def ipf_modification(model, pred, a_k, k, policy):
    """Accept iff the predicted ensemble's mean action likelihood reaches gamma.

    Returns (accept, mean_likelihood).
    """
    if pred.phase != PREDICTED:
        raise ValueError("modification check requires a predicted ensemble")
    logbeta = _action_log_likelihood(model, pred, a_k, k)
    mean_beta = float(np.mean(np.exp(logbeta)))
    return mean_beta >= policy.threshold(k), mean_beta


def ipf_weight_update(model, pred, a_k, k):
    """Weight each particle by the defender's observation density (log space)."""
    if pred.phase != PREDICTED:
        raise ValueError("weight update requires a predicted ensemble")
    logbeta = _action_log_likelihood(model, pred, a_k, k)
    w = normalized_log_weights(logbeta)
    return InverseEnsemble(xhat=pred.xhat, fwd_cov=pred.fwd_cov, ybar=pred.ybar,
                           weights=w, phase=WEIGHTED)


def ipf_estimate(weighted):
    """Weighted mean and covariance of the estimate particles (pre-resampling)."""
    if weighted.phase != WEIGHTED:
        raise ValueError("estimate requires a weighted ensemble")
    return weighted_mean_cov(weighted.xhat, weighted.weights)


def ipf_resample(weighted, stream, scheme="systematic"):
    """Draw N full particles (estimate + covariance replica) to uniform weights."""
    if weighted.phase != WEIGHTED:
        raise ValueError("resampling requires a weighted ensemble")
    idx = RESAMPLERS[scheme](weighted.weights, stream.generator())
    n = weighted.size
    return InverseEnsemble(xhat=weighted.xhat[idx], fwd_cov=weighted.fwd_cov[idx],
                           ybar=weighted.ybar[idx] if weighted.ybar is not None else None,
                           weights=np.full(n, 1.0 / n), phase=RESAMPLED)


def ipf_step(model, prev, x_k, a_k, k, policy, stream, scheme="systematic"):
    """One full recursion.  Returns (estimate, covariance, resampled ensemble,
    diagnostics dict with retry count and the predicted mean action likelihood)."""
    pred = None
    mean_beta = 0.0
    for attempt in range(policy.max_retries):
        cand = ipf_sis(model, prev, x_k, k, stream.child("sis", attempt))
        accept, mean_beta = ipf_modification(model, cand, a_k, k, policy)
        if accept:
            pred = cand
            break
    if pred is None:
        raise FilterError(
            f"modification threshold unreachable after {policy.max_retries} redraws "
            f"at k={k} (mean likelihood {mean_beta:.3e}); lower gamma or raise N")
    weighted = ipf_weight_update(model, pred, a_k, k)
    est, cov = ipf_estimate(weighted)
    resampled = ipf_resample(weighted, stream.child("resample"), scheme=scheme)
    diagnostics = {"retries": attempt, "mean_action_likelihood": mean_beta}
    return est, cov, resampled, diagnostics


def expectation_under_ensemble(ens, phi="identity"):
    """Weighted expectation of phi(xhat, ybar) under the ensemble.

    ``phi`` may be "identity" (mean estimate), "abs4" (componentwise fourth
    absolute moment of the estimate), or a callable (xhat, ybar) -> (N, d).
    """
    if ens.phase not in (WEIGHTED, RESAMPLED):
        raise ValueError("expectation requires a weighted or resampled ensemble")
    if phi == "identity":
        values = ens.xhat
    elif phi == "abs4":
        values = np.abs(ens.xhat) ** 4
    else:
        values = np.asarray(phi(ens.xhat, ens.ybar), dtype=float)
        if values.ndim == 1:
            values = values[:, None]
    return ens.weights @ values


def run_inverse_pf(model, x_seq, a_seq, n_particles, init_dist, tracker_cov,
                   policy, stream, scheme="systematic", collect_diagnostics=False):
    """Run the inverse particle filter along one episode.

    ``x_seq`` holds states 0..K, ``a_seq`` action observations 1..K.  Returns
    (means (K+1, n), covs (K+1, n, n)) and, optionally, per-step diagnostics.
    """
    x_seq = np.asarray(x_seq, dtype=float)
    a_seq = np.asarray(a_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    if a_seq.ndim == 1:
        a_seq = a_seq[:, None]
    K = a_seq.shape[0]
    n = x_seq.shape[1]
    ens = initial_ensemble(n_particles, init_dist, tracker_cov, stream.child("init"))
    means = np.empty((K + 1, n))
    covs = np.empty((K + 1, n, n))
    means[0], covs[0] = weighted_mean_cov(ens.xhat, ens.weights)
    diags = []
    for k in range(1, K + 1):
        means[k], covs[k], ens, d = ipf_step(
            model, ens, x_seq[k], a_seq[k - 1], k, policy, stream.child(k), scheme)
        if collect_diagnostics:
            diags.append(d)
    if collect_diagnostics:
        return means, covs, diags
    return means, covs
