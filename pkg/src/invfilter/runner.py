"""Monte Carlo experiment runner and the empirical convergence study.

Each run simulates one episode per attacker filter (EKF and PF), then runs
both inverse filters on the episode's (true states, action observations).
Labels follow the convention <inverse filter>-<attacker filter initial>, e.g.
"I-PF-E" is the inverse particle filter estimating a forward EKF's estimate.

All randomness is drawn from addressed sub-streams of the config seed, so the
estimation outputs are bit-identical regardless of worker-thread count.
Timings are wall-clock and therefore excluded from that contract.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .forward import FilterError
from .inverse_ekf import IekfState, iekf_step_full, run_inverse_ekf
from .inverse_pf import ModificationPolicy, run_inverse_pf
from .metrics import (McAggregate, nci, rcrlb_recursion, relative_position_error,
                      rmse_per_step, time_averaged_rmse, timing_capture)
from .rng import RngStream
from .scenarios import (inverse_initialization, make_episode_model,
                        make_forward_filter)
from .ssm import ModelError, simulate_episode

FORWARD_LABELS = {"E": "EKF", "P": "PF"}
ALL_LABELS = ("EKF", "PF", "I-EKF-E", "I-EKF-P", "I-PF-E", "I-PF-P")


@dataclass
class ExperimentResult:
    scenario: str
    horizon: int
    runs: int
    seed: int
    rmse: dict = field(default_factory=dict)        # label -> (K,) per-step RMSE
    rmse_avg: dict = field(default_factory=dict)    # label -> (K,) running mean
    nci: dict = field(default_factory=dict)         # label -> (K,) dB
    rcrlb: dict = field(default_factory=dict)       # label -> (K+1,) tr(J^-1)
    rel_error: dict = field(default_factory=dict)   # label -> (K,)
    timing: dict = field(default_factory=dict)      # label -> total seconds
    failures: int = 0


def _forward_rcrlb_jacobians(model, traj):
    """Transition/observation Jacobians along the true state trajectory."""
    K = traj.horizon
    F = np.stack([model.transition.jacobian(traj.x[k:k + 1], k)[0] for k in range(K)])
    H = np.stack([model.attacker_obs.jacobian(traj.x[k + 1:k + 2], k + 1)[0]
                  for k in range(K)])
    return F, H


def _inverse_rcrlb_jacobians(model, traj, tracker_cov):
    """Tracker-update Jacobians A, B and action Jacobians G along the true
    attacker-estimate trajectory, with the tracker covariance replica advanced
    from its configured initialization."""
    K = traj.horizon
    n = model.state_dim
    state = IekfState(mean=traj.xhat[0].copy(), cov=np.eye(n),
                      fwd_cov=np.atleast_2d(np.asarray(tracker_cov, dtype=float)).copy())
    A = np.empty((K, n, n))
    B = np.empty((K, n, model.attacker_obs.dim))
    G = np.empty((K, model.defender_obs.dim, n))
    for k in range(1, K + 1):
        state = IekfState(mean=traj.xhat[k - 1].copy(), cov=state.cov,
                          fwd_cov=state.fwd_cov)
        state, A[k - 1], B[k - 1] = iekf_step_full(model, state, traj.x[k],
                                                   traj.a[k - 1], k)
        G[k - 1] = np.atleast_2d(model.defender_obs.jacobian(traj.xhat[k], k))
    return A, B, G


def _run_one(cfg, m):
    root = RngStream(cfg.seed)
    init_dist, tracker_cov = inverse_initialization(cfg)
    policy = ModificationPolicy(cfg.gamma, cfg.max_retries)
    out = {}
    extra = {}
    for attacker, kind in (("E", "ekf"), ("P", "pf")):
        ep = root.child("run", m, attacker)
        model = make_episode_model(cfg, ep.child("model"))
        fwd = make_forward_filter(cfg, kind)
        traj = simulate_episode(model, fwd, cfg.horizon, ep.child("sim"))

        # forward filter error/credibility, with timing from a deterministic replay
        _, fwd_seconds = timing_capture(
            lambda: _replay_forward(model, make_forward_filter(cfg, kind), traj,
                                    ep.child("sim")))
        out[FORWARD_LABELS[attacker]] = {
            "errors": traj.xhat[1:] - traj.x[1:],
            "covs": traj.xhat_cov[1:] + 1e-12 * np.eye(model.state_dim),
            "seconds": fwd_seconds,
            "est": traj.xhat[1:],
            "truth": traj.x[1:],
        }

        (ipf_means, ipf_covs), t_ipf = timing_capture(
            lambda: run_inverse_pf(model, traj.x, traj.a, cfg.ipf_particles,
                                   init_dist, tracker_cov, policy,
                                   ep.child("ipf"), cfg.resample_scheme))
        # rare particle-weight collapse can leave an exactly-zero reported
        # covariance; keep it invertible for the credibility metric
        ipf_covs = ipf_covs + 1e-12 * np.eye(model.state_dim)
        out[f"I-PF-{attacker}"] = {
            "errors": ipf_means[1:] - traj.xhat[1:],
            "covs": ipf_covs[1:],
            "seconds": t_ipf,
            "est": ipf_means[1:],
            "truth": traj.xhat[1:],
        }

        (iekf_means, iekf_covs), t_iekf = timing_capture(
            lambda: run_inverse_ekf(model, traj.x, traj.a, init_dist, tracker_cov))
        out[f"I-EKF-{attacker}"] = {
            "errors": iekf_means[1:] - traj.xhat[1:],
            "covs": iekf_covs[1:],
            "seconds": t_iekf,
            "est": iekf_means[1:],
            "truth": traj.xhat[1:],
        }

        if cfg.name == "ungm":
            if attacker == "E":
                extra["fwd_FH"] = _forward_rcrlb_jacobians(model, traj)
            extra[f"inv_ABG_{attacker}"] = _inverse_rcrlb_jacobians(
                model, traj, tracker_cov)
    return out, extra


def _replay_forward(model, fwd, traj, sim_stream):
    """Re-run the forward filter on the stored observations with the same
    sub-streams it used during simulation (so the work timed equals the
    filter's share of the episode)."""
    state = fwd.init(traj.y[0], sim_stream.child("fwd_init"))
    for k in range(1, traj.horizon + 1):
        state, _, _ = fwd.step(model, state, traj.y[k - 1], k, sim_stream.child(k, "fwd"))
    return state


def run_monte_carlo(cfg, threads=1):
    """Run the configured scenario over cfg.runs Monte Carlo runs."""
    results = [None] * cfg.runs
    failures = 0
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_try_run, cfg, m) for m in range(cfg.runs)]
            results = [f.result() for f in futures]
    else:
        results = [_try_run(cfg, m) for m in range(cfg.runs)]
    good = [r for r in results if r is not None]
    failures = cfg.runs - len(good)
    if failures > 0.1 * cfg.runs:
        raise RuntimeError(f"{failures}/{cfg.runs} runs failed; aborting")

    res = ExperimentResult(scenario=cfg.name, horizon=cfg.horizon, runs=len(good),
                           seed=cfg.seed, failures=failures)
    for label in ALL_LABELS:
        errors = np.stack([r[0][label]["errors"] for r in good])
        covs = np.stack([r[0][label]["covs"] for r in good])
        agg = McAggregate(errors=errors, covs=covs)
        res.rmse[label] = rmse_per_step(agg)
        res.rmse_avg[label] = time_averaged_rmse(agg)
        if len(good) >= 2:
            res.nci[label] = nci(agg)
        res.timing[label] = float(sum(r[0][label]["seconds"] for r in good))
        if cfg.name == "bearing":
            est = np.stack([r[0][label]["est"][:, 0] for r in good])
            truth = np.stack([r[0][label]["truth"][:, 0] for r in good])
            res.rel_error[label] = relative_position_error(est, truth)

    if cfg.name == "ungm":
        _attach_ungm_rcrlb(cfg, good, res)
    return res


def _try_run(cfg, m):
    try:
        return _run_one(cfg, m)
    except (ModelError, FilterError):
        return None


def _attach_ungm_rcrlb(cfg, good, res):
    p = cfg.params
    F = np.stack([r[1]["fwd_FH"][0] for r in good])
    H = np.stack([r[1]["fwd_FH"][1] for r in good])
    _, bound = rcrlb_recursion(F, H, [[p["process_var"]]], [[p["attacker_obs_var"]]],
                               [[1.0 / p["prior_var"]]])
    res.rcrlb["EKF"] = bound
    R = np.array([[p["attacker_obs_var"]]])
    for attacker in ("E", "P"):
        A = np.stack([r[1][f"inv_ABG_{attacker}"][0] for r in good])
        B = np.stack([r[1][f"inv_ABG_{attacker}"][1] for r in good])
        G = np.stack([r[1][f"inv_ABG_{attacker}"][2] for r in good])
        Qeq = B @ R @ np.swapaxes(B, -1, -2)
        # guard: tracker gains can be tiny, keep the equivalent noise invertible
        Qeq = Qeq + 1e-12 * np.eye(Qeq.shape[-1])
        _, bound = rcrlb_recursion(A, G, Qeq, [[p["action_var"]]],
                                   np.linalg.inv(np.atleast_2d(
                                       inverse_initialization(cfg)[0].cov)))
        res.rcrlb[f"INV-{attacker}"] = bound


# ------------------------------------------------------- convergence study

@dataclass
class ConvergenceResult:
    n_list: list
    errors: np.ndarray          # mean fourth-moment error per N
    slope: float                # fitted log-log slope
    spearman_rho: float
    spearman_p: float
    retries: np.ndarray         # mean modification retries per N
    reference: np.ndarray       # reference estimate used
    ref_spread: float           # distance between the two reference passes
    n_ref: int


def convergence_study(cfg, n_list, reps, k_probe, gamma, n_ref=100_000):
    """Empirical fourth-moment convergence of the inverse PF on one fixed
    trajectory, against a large-N reference pass."""
    n_list = sorted(int(n) for n in n_list)
    if len(n_list) < 4:
        raise ValueError("need at least 4 ensemble sizes")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    root = RngStream(cfg.seed).child("converge")
    model = make_episode_model(cfg, root.child("model"))
    fwd = make_forward_filter(cfg, "ekf")
    traj = simulate_episode(model, fwd, k_probe, root.child("sim"))
    init_dist, tracker_cov = inverse_initialization(cfg)
    policy = ModificationPolicy(gamma, cfg.max_retries)

    def one_pass(n, stream):
        means, _, diags = run_inverse_pf(
            model, traj.x, traj.a, n, init_dist, tracker_cov, policy, stream,
            cfg.resample_scheme, collect_diagnostics=True)
        return means[k_probe], sum(d["retries"] for d in diags)

    for escalation in range(3):
        ref_a, _ = one_pass(n_ref, root.child("ref", escalation, 0))
        ref_b, _ = one_pass(n_ref, root.child("ref", escalation, 1))
        reference = 0.5 * (ref_a + ref_b)
        ref_spread = float(np.linalg.norm(ref_a - ref_b))

        errors = np.empty(len(n_list))
        retries = np.empty(len(n_list))
        for i, n in enumerate(n_list):
            errs = np.empty(reps)
            rts = np.empty(reps)
            for r in range(reps):
                est, rt = one_pass(n, root.child("rep", n, r))
                errs[r] = np.linalg.norm(est - reference) ** 4
                rts[r] = rt
            errors[i] = errs.mean()
            retries[i] = rts.mean()
        if ref_spread**4 < 0.1 * errors.min():
            break
        n_ref *= 4  # reference not yet stable enough

    slope = float(np.polyfit(np.log(n_list), np.log(errors), 1)[0])
    rho, pval = spearmanr(n_list, errors)
    return ConvergenceResult(n_list=n_list, errors=errors, slope=slope,
                             spearman_rho=float(rho), spearman_p=float(pval),
                             retries=retries, reference=reference,
                             ref_spread=ref_spread, n_ref=n_ref)
