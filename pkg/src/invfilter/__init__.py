"""Inverse particle filtering for counter-adversarial state estimation.

A defender that knows its own state trajectory observes noisy actions of an
adversary tracking it, and estimates the adversary's tracker output.  The
package provides the attacker-side trackers (EKF, bootstrap PF), the inverse
particle filter and an inverse EKF baseline, quality metrics (RMSE, recursive
Cramer-Rao bound, non-credibility index), two benchmark scenarios, and a
batch CLI.
"""

from .forward import (EkfState, FilterError, ForwardEkf, ForwardPf,
                      ParticleEnsemble, bootstrap_pf_step, ekf_step,
                      multinomial_resample, systematic_resample,
                      weighted_mean_cov)
from .inverse_ekf import IekfState, iekf_step, run_inverse_ekf
from .inverse_pf import (InverseEnsemble, ModificationPolicy,
                         expectation_under_ensemble, ipf_estimate,
                         ipf_modification, ipf_resample, ipf_sis, ipf_step,
                         ipf_weight_update, run_inverse_pf)
from .metrics import (McAggregate, nci, rcrlb_recursion,
                      relative_position_error, rmse_per_step,
                      time_averaged_rmse, timing_capture)
from .rng import RngStream
from .runner import (ConvergenceResult, ExperimentResult, convergence_study,
                     run_monte_carlo)
from .scenarios import (ConfigError, ScenarioConfig, build_bearing, build_ungm,
                        config_from_dict, make_episode_model,
                        make_linear_gaussian_model)
from .ssm import (AdditiveGaussianObservation, AdditiveGaussianTransition,
                  GaussianDist, ModelError, SimulationError, SystemModel,
                  Trajectory, obs_logdensity, sample_obs, sample_transition,
                  simulate_episode)

__version__ = "0.1.0"
