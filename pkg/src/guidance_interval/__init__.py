"""Classifier-free guidance limited to a noise-level interval, on analytic Gaussian-mixture data."""

from .batch import SampleBatch, load_batch, save_batch
from .errors import (DomainError, InputError, ResumeConflict, ScheduleError, SearchError,
                     SolverDivergence)
from .metrics import (MetricsReport, evaluate, frechet_distance, kl_histogram,
                      knn_precision_recall, mode_masses, wasserstein1_1d)
from .mixture import (ConditionedFamily, GaussianMixture, guided_denoise, ideal_denoise,
                      load_family, sample_data, score, smoothed_density)
from .sampler import (GuidanceSpec, Trajectory, constant_guidance, custom_weight_profile, drift,
                      euler_solve, guidance_from_indices, heun_solve, interval_guidance,
                      nfe_count, no_guidance, sample_batch, sample_trajectories)
from .schedule import (DIT, EDM2, SDXL_RECONSTRUCTED, SDXL_STATED, IddpmScheduleParams,
                       NoiseSchedule, RhoScheduleParams, iddpm_schedule, rho_schedule,
                       schedule_from_rule, snap_interval)
from .search import (Cell, SweepGrid, SweepProblem, SweepReport, bisection_refine, grid_sweep,
                     screen_then_confirm, step_importance_ablation, two_phase_search)

__version__ = "0.1.0"
