"""Lie-Trotter splitting with exact SDE sampling for boundary-preserving SPDE simulation."""

from .core import Domain, Grid, RngStream, build_grid, derive_stream, ell, kappa
from .exactsim import (LampertiMachine, RetryCapExceeded, exact_step, fill_bridge,
                       sample_endpoint, thinning_accept)
from .models import ModelSpec, allen_cahn, get_model, nagumo, sis
from .schemes import (SCHEMES, Trajectory, em_step, exp_step, lte_step, sem_step,
                      simulate_path)
from .semigroup import DomainViolation, SemigroupApplicator, apply_semigroup, kernel_value

__version__ = "0.1.0"
