"""Estimation-quality and credibility metrics.

All reducers take a Monte Carlo aggregate: per-run, per-step error vectors and
the covariance the filter reported alongside each estimate.  Time indices run
1..K (initialization errors are excluded).
"""

import time
from dataclasses import dataclass

import numpy as np


class MetricError(RuntimeError):
    pass


@dataclass
class McAggregate:
    """Errors (M, K, n) and reported covariances (M, K, n, n) over M runs."""

    errors: np.ndarray
    covs: np.ndarray = None

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=float)
        if self.errors.ndim == 2:
            self.errors = self.errors[:, :, None]
        if self.covs is not None:
            self.covs = np.asarray(self.covs, dtype=float)
            if self.covs.ndim == 2:
                self.covs = self.covs[:, :, None, None]
            if self.covs.shape[:2] != self.errors.shape[:2]:
                raise MetricError("covariance / error run-time shape mismatch")

    @property
    def n_runs(self):
        return self.errors.shape[0]

    @property
    def horizon(self):
        return self.errors.shape[1]

    def sample_mse(self):
        """Per-step sample MSE matrices (K, n, n)."""
        e = self.errors
        return np.einsum("mki,mkj->kij", e, e) / self.n_runs


def rmse_per_step(agg):
    """RMSE_k = sqrt(mean_m ||error||^2), shape (K,)."""
    return np.sqrt(np.mean(np.sum(agg.errors**2, axis=-1), axis=0))


def time_averaged_rmse(agg):
    """Running mean over time of the per-step RMSE, shape (K,)."""
    r = rmse_per_step(agg)
    return np.cumsum(r) / np.arange(1, r.shape[0] + 1)


def rcrlb_recursion(F, H, Q, R, J0):
    """Recursive Fisher information for an additive-Gaussian system.

    F: (M, K, n, n) transition Jacobians at x_k (k = 0..K-1);
    H: (M, K, m, n) observation Jacobians at x_{k+1};
    Q: process noise covariance, either (n, n) or per-sample (M, K, n, n);
    R: observation noise covariance (m, m); J0: initial information (n, n).

    Expectations are sample averages over the M supplied trajectories.
    Returns (J (K+1, n, n), bound (K+1,)) with bound_k = tr(J_k^-1).
    """
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float)
    J0 = np.atleast_2d(np.asarray(J0, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    M, K, n, _ = F.shape
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 2:
        Qinv = np.broadcast_to(np.linalg.inv(np.atleast_2d(Q)), (M, K, n, n))
    else:
        Qinv = np.linalg.inv(Q)
    Rinv = np.linalg.inv(R)

    Ft = np.swapaxes(F, -1, -2)
    Ht = np.swapaxes(H, -1, -2)
    d11 = np.mean(Ft @ Qinv @ F, axis=0)                    # (K, n, n)
    d12 = -np.mean(Ft @ Qinv, axis=0)                       # (K, n, n)
    d22 = np.mean(Qinv, axis=0) + np.mean(Ht @ Rinv @ H, axis=0)

    J = np.empty((K + 1, n, n))
    J[0] = J0
    for k in range(K):
        try:
            inner = np.linalg.inv(J[k] + d11[k])
        except np.linalg.LinAlgError as exc:
            raise MetricError(f"singular information recursion at k={k}") from exc
        J[k + 1] = d22[k] - d12[k].T @ inner @ d12[k]
    bound = np.array([np.trace(np.linalg.inv(Jk)) for Jk in J])
    return J, bound


def nci(agg):
    """Non-credibility index per step, in dB.

    Positive means the reported covariance is too small (optimistic), negative
    too large (pessimistic).
    """
    if agg.covs is None:
        raise MetricError("NCI needs per-run reported covariances")
    if agg.n_runs < 2:
        raise MetricError("NCI needs at least two runs")
    e = agg.errors
    mse = agg.sample_mse()
    M, K, _ = e.shape
    out = np.empty(K)
    for k in range(K):
        try:
            mse_inv = np.linalg.inv(mse[k])
        except np.linalg.LinAlgError as exc:
            raise MetricError(f"singular sample MSE matrix at k={k + 1}") from exc
        q_mse = np.einsum("mi,ij,mj->m", e[:, k], mse_inv, e[:, k])
        try:
            p_inv = np.linalg.inv(agg.covs[:, k])
        except np.linalg.LinAlgError as exc:
            raise MetricError(f"singular reported covariance at k={k + 1}") from exc
        q_p = np.einsum("mi,mij,mj->m", e[:, k], p_inv, e[:, k])
        out[k] = 10.0 * np.mean(np.log10(q_p) - np.log10(q_mse))
    return out


def relative_position_error(estimates, truths):
    """Mean over runs of |p_hat - p| / |p| per step; arrays (M, K)."""
    estimates = np.asarray(estimates, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if np.any(np.abs(truths) < 1e-9):
        m, k = np.unravel_index(int(np.argmin(np.abs(truths))), truths.shape)
        raise MetricError(f"true position too close to zero at run {m}, k={k + 1}")
    return np.mean(np.abs(estimates - truths) / np.abs(truths), axis=0)


def timing_capture(closure):
    """Run the closure, returning (result, wall-clock seconds) from a
    monotonic clock."""
    t0 = time.perf_counter()
    result = closure()
    return result, time.perf_counter() - t0
