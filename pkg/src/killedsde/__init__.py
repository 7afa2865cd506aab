"""Monte Carlo pricing of killed diffusions with h-transformed implicit Euler schemes."""

from .analytic import BarrierSpec, double_out_call_price, down_out_put_price
from .errors import (BracketError, ConfigError, DifferentiationError, DomainViolationError,
                     InvalidDomainError, KilledSDEError, NonFiniteEstimatorError,
                     ParameterError, SpecViolationError)
from .experiment import ConvergenceReport, ExperimentConfig, run_convergence, run_price
from .htransform import (HMap, HTransform, big_h, invert_big_h, make_double_barrier_h, make_h,
                         make_parabolic_h, make_single_barrier_h, make_transient_h)
from .models import (DiffusionModel, Domain, bs_log_model, bs_log_price_model, hlv_model,
                     hlv_sigma, remove_drift)
from .montecarlo import McResult, combine, run_mc
from .rng import RngSpec
from .schemes import (BACKEND, BemKernel, BridgeKernel, EulerKernel, StepGrid, bem_path,
                      bem_step, bridge_path, euler_path)

__version__ = "0.1.0"
