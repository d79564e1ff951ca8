"""Energy-efficient downlink power allocation for a cell-free secondary
network sharing spectrum with a primary network in underlay mode."""

from .config import ConfigError, SystemConfig, noise_power, parse_config
from .estimation import (EstimationStatistics, SinrCoefficients,
                         compute_coefficients, estimate_covariance,
                         estimation_statistics, leakage_coefficients,
                         pilot_projection_covariance, primary_statistics,
                         sinr_coefficients)
from .metrics import (ConstraintReport, MetricsReport, constraint_report,
                      energy_efficiency, metrics_report, sinr,
                      spectral_efficiency, total_power)
from .optimizer import (NumericalError, OptimizerResult, PowerControlProblem,
                        TaylorBound, build_problem, dinkelbach_maximize,
                        equal_power_allocation, f_interference, f_total,
                        grad_f_interference, linearize_interference,
                        maximize_energy_efficiency, solve_subproblem)
from .scenario import (PilotAssignment, Scenario, assign_pilots,
                       build_scenario, channel_gain_db,
                       local_scattering_covariance, validate_scenario)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
