"""Attack-resilient state estimation with a secure quadratic measurement
channel, a wild-bootstrap MMD attack detector, and a pursuit-evasion
Monte Carlo harness."""

from .system import (ModelError, NumericError, RngStream, StepRecord, SystemModel,
                     linear_measurement, quadratic_measurement, sample_gaussian,
                     step_dynamics)
from .observers import (HistoryEntry, LinearObserverState, QuadObserverConfig,
                        QuadObserverState, kf_predict, kf_update, qobs_ekf_correct,
                        qobs_init, qobs_jacobian, qobs_predict, qobs_step)
from .feasible import (ConstraintRecord, FeasibleSet, InfeasibleProjectionError,
                       ProjectionConfig, ProjectionStatus, build, check_nondegeneracy,
                       evaluate, is_feasible, project)
from .mmd import (DetectionOutcome, KernelConfig, WildBootstrapConfig, center_kernel,
                  critical_value, detect, median_heuristic, mmd_squared, online_detect,
                  rbf, wild_bootstrap_null)
from .pursuit import (AttackSpec, GameConfig, InitSpec, attack_vector, build_model,
                      evader_policy, intercept_time, pursuer_policy, sample_initial_state,
                      saturate)
from .harness import (AggregateReport, ExperimentConfig, RunLog, export_csv, mse_series,
                      run_experiment, run_trial)
from .svg import export_svg

__version__ = "0.1.0"
