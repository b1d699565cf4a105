"""System identification of linear models driven by Levy noise.

Prediction-error and empirical-characteristic-function estimators, their
closed-form asymptotic covariances, and a Monte Carlo harness.
"""

from .levy_noise import CgmyParams, SamplingConfig, VgParams, char_fn, sample_increments
from .linear_system import SisoSystem, Trajectory, forward_filter, innovation_filter
from .ecf import EcfGrid, JointParams, estimate_joint, estimate_theta_known_eta
from .pe import combined_pe_ecf, estimate_pe
from .asymptotics import asymptotic_report, optimal_u, single_term_ratio

__version__ = "0.1.0"
