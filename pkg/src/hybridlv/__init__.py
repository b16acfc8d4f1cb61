"""Local-volatility pricing and calibration with a Hull-White short rate.

The engine evolves the discounted joint density of (spot, rate) forward
with a two-sweep ADI scheme, prices European calls and the stochastic-rates
corrective terms by single-pass grid integration, and bootstraps local-vol
surfaces maturity by maturity. Closed-form constant-vol results and a
Monte Carlo simulator serve as independent cross-checks.
"""

from .analytic import (
    BshwMoments,
    IntrinsicValue,
    PriceAndGreeks,
    analytic_pz,
    analytic_z,
    bshw_call,
    bshw_greeks_fd_check,
    bshw_moments,
    integrated_variance,
)
from .calibration import (
    CalibrationResult,
    CalibrationSettings,
    CallSurface,
    CorrectiveTermCurve,
    LocalVolSurface,
    calibrate,
    corrective_terms,
    dupire_vol,
    local_vol_stochastic_rates,
    make_analytic_surface,
    price_calls_from_pz,
)
from .linalg import TridiagonalSystem, solve_tridiagonal
from .models import (
    ConstantVol,
    HullWhiteParams,
    HybridModel,
    HyperbolicVol,
    SurfaceVol,
    fit_theta,
    forward_rate,
    hyperbolic_vol,
    sde_coefficients,
    zc_price,
)
from .montecarlo import McConfig, McEstimate, conditional_z_estimate, simulate_paths
from .pde import (
    AdiCoefficients,
    Field2D,
    Grid2D,
    adi_step,
    auto_grid,
    build_coefficients,
    default_kernel_concentration,
    evolve,
    init_dirac,
    integrate,
    short_time_start,
)
from .version import __version__
