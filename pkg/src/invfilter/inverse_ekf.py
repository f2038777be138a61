"""Inverse extended Kalman filter baseline.

An EKF over the inverse dynamics: the state is the attacker's estimate, which
evolves through the attacker's (assumed EKF) tracker update driven by the
noiseless attacker observation of the known true state.  The Jacobians of the
tracker update with respect to its previous estimate and its observation are
taken by central finite differences; the attacker observation noise enters the
prediction covariance through the observation Jacobian.  The tracker's own
covariance is replicated inside the filter state and advanced alongside.
"""

from dataclasses import dataclass

import numpy as np

from .forward import FilterError, ekf_step_batch, symmetrize


@dataclass
class IekfState:
    mean: np.ndarray      # defender's estimate of the attacker's estimate
    cov: np.ndarray       # inverse filter covariance
    fwd_cov: np.ndarray   # replicated tracker covariance

    @property
    def dim(self):
        return self.mean.shape[0]


FD_STEP = 1e-6


def iekf_step_full(model, state, x_k, a_k, k):
    """One inverse-EKF step; returns (new state, A, B) where A and B are the
    tracker-update Jacobians used in the prediction covariance."""
    n = state.dim
    x_k = np.atleast_1d(np.asarray(x_k, dtype=float))
    a_k = np.atleast_1d(np.asarray(a_k, dtype=float))
    y_nom = np.atleast_1d(np.asarray(model.attacker_obs.obs_map(x_k, k), dtype=float))
    m = y_nom.shape[0]

    # One batched tracker pass: nominal row plus +-perturbations of the
    # previous estimate (2n rows) and of the observation (2m rows).
    hx = FD_STEP * np.maximum(1.0, np.abs(state.mean))
    hy = FD_STEP * np.maximum(1.0, np.abs(y_nom))
    b = 1 + 2 * n + 2 * m
    means = np.tile(state.mean, (b, 1))
    ys = np.tile(y_nom, (b, 1))
    for j in range(n):
        means[1 + 2 * j, j] += hx[j]
        means[2 + 2 * j, j] -= hx[j]
    off = 1 + 2 * n
    for j in range(m):
        ys[off + 2 * j, j] += hy[j]
        ys[off + 2 * j + 1, j] -= hy[j]
    covs = np.tile(state.fwd_cov, (b, 1, 1))
    out_means, out_covs = ekf_step_batch(model.transition, model.attacker_obs,
                                         means, covs, ys, k)
    mean_pred = out_means[0]
    fwd_cov_new = out_covs[0]
    A = np.empty((n, n))
    for j in range(n):
        A[:, j] = (out_means[1 + 2 * j] - out_means[2 + 2 * j]) / (2.0 * hx[j])
    B = np.empty((n, m))
    for j in range(m):
        B[:, j] = (out_means[off + 2 * j] - out_means[off + 2 * j + 1]) / (2.0 * hy[j])

    P_pred = symmetrize(A @ state.cov @ A.T + B @ model.attacker_obs.cov @ B.T)

    G = np.atleast_2d(np.asarray(model.defender_obs.jacobian(mean_pred, k), dtype=float))
    E = model.defender_obs.cov
    S = G @ P_pred @ G.T + E
    try:
        gain = np.linalg.solve(S.T, G @ P_pred).T
    except np.linalg.LinAlgError as exc:
        raise FilterError("singular inverse-EKF innovation covariance") from exc
    innov = a_k - np.atleast_1d(np.asarray(model.defender_obs.obs_map(mean_pred, k),
                                           dtype=float))
    mean_new = mean_pred + gain @ innov
    ikh = np.eye(n) - gain @ G
    cov_new = symmetrize(ikh @ P_pred @ ikh.T + gain @ E @ gain.T)
    new_state = IekfState(mean=mean_new, cov=cov_new, fwd_cov=fwd_cov_new)
    return new_state, A, B


def iekf_step(model, state, x_k, a_k, k):
    new_state, _, _ = iekf_step_full(model, state, x_k, a_k, k)
    return new_state


def run_inverse_ekf(model, x_seq, a_seq, init_dist, tracker_cov,
                    collect_jacobians=False):
    """Run the inverse EKF along one episode.

    Returns (means (K+1, n), covs (K+1, n, n)); with ``collect_jacobians`` the
    per-step tracker Jacobians (A, B) are appended for bound computations.
    """
    x_seq = np.asarray(x_seq, dtype=float)
    a_seq = np.asarray(a_seq, dtype=float)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    if a_seq.ndim == 1:
        a_seq = a_seq[:, None]
    K = a_seq.shape[0]
    n = x_seq.shape[1]
    state = IekfState(mean=init_dist.mean.copy(), cov=init_dist.cov.copy(),
                      fwd_cov=np.atleast_2d(np.asarray(tracker_cov, dtype=float)).copy())
    means = np.empty((K + 1, n))
    covs = np.empty((K + 1, n, n))
    means[0], covs[0] = state.mean, state.cov
    a_list, b_list = [], []
    for k in range(1, K + 1):
        state, A, B = iekf_step_full(model, state, x_seq[k], a_seq[k - 1], k)
        means[k], covs[k] = state.mean, state.cov
        if collect_jacobians:
            a_list.append(A)
            b_list.append(B)
    if collect_jacobians:
        return means, covs, np.array(a_list), np.array(b_list)
    return means, covs
