"""Classical Bose-Hubbard chain: chaos, anomalous action diffusion and kinetic theory."""
__version__ = "0.1.0"

from .model import (ActionAngleState, AngleSingularity, Boundary, ChainParams, DimensionMismatch,
                    NegativeAction, PQState, Trajectory, action_angle_to_pq, constraint_value,
                    eom_action_angle, eom_pq, hamiltonian_action_angle, hamiltonian_pq,
                    pq_to_action_angle)
from .integrate import IntegratorConfig, IntegrationOutcome, Mode, Status, integrate_orbit, log_schedule
from .chaos import LyapunovConfig, LyapunovMode, LyapunovResult, lyapunov, lyapunov_per_site, lyapunov_spectrum, variational_rhs
from .ensemble import (AngleInit, Distribution, EnsembleSpec, Spread, VarianceSeries, evolve_ensemble,
                       filled_base, homogeneous_base, make_ensemble)
from .scaling import (Classification, ExponentPrediction, ScalingFit, Series, classify, detect_crossover,
                      fit_diffusion_coefficients, fit_exponent, predict_exponents, rg_exponent)
