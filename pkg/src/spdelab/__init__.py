"""spdelab: a desk-scale laboratory for small-noise SPDEs with indicator
coefficients, their controlled equations, large-deviation rate
functionals, and the particle systems they approximate."""

from .grid import (BC_DIRICHLET_PINNED, BC_NEUMANN, Field, Grid, PathField,
                   heat_flow_exact, heat_kernel, heat_step)
from .models import (ConditionReport, InitialCondition, ModelSpec, g_cross,
                     g_eval, initial_field, verify_coefficient_conditions)
from .noise import NoiseStream, brownian_basis, sample_step_noise, stochastic_increment
from .solver import (BlowUpError, NoiseWindowError, deterministic_limit,
                     monotone_project, solve_spde, solve_spde_batch)
from .control import (Control, MeanShiftEvent, RateReport, TerminalFieldEvent,
                      basis_to_control, cameron_martin_check, center_control,
                      control_energy, control_to_basis, minimize_rate,
                      rate_density, solve_controlled)
from .metrics import (AtomicMeasure, MeasurePath, MetricParams, cdf_to_measure,
                      cdf_to_probability, holder_norm, metric_d,
                      mollified_weight, sandwich_constants, weak_metric,
                      weak_test_dictionary)
from .particles import empirical_cdf_field, simulate_fv_moran, simulate_sbm_particles

__version__ = "0.1.0"
