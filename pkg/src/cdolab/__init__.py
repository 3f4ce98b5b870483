"""Pricing and calibration toolkit for synthetic CDOs in a large homogeneous
basket structural model.

The package is organised by pipeline stage:

* :mod:`cdolab.core` — parameters, schedules, tranche definitions.
* :mod:`cdolab.single_name` — analytic CDS survival/quotes and x0 inversion.
* :mod:`cdolab.discretization` — space grid and tridiagonal operators.
* :mod:`cdolab.spde_solvers` — common-factor driver, Euler and Magnus
  stochastic evolution of the conditional density.
* :mod:`cdolab.pde_solvers` — theta scheme, exact propagator, spline shift.
* :mod:`cdolab.pricing` — loss surfaces, tranche and index spreads.
* :mod:`cdolab.monte_carlo` — basket/CDS Monte Carlo and dataset files.
* :mod:`cdolab.nn_inference` — network weight files and numpy forwards.
* :mod:`cdolab.calibration` — joint (sigma, rho) fit to market quotes.
* :mod:`cdolab.cli` — the ``cdolab`` command-line tool.
"""

from .calibration import CalibrationConfig, CalibrationResult, calibrate, infer_x0, synthetic_market
from .core import (
    MarketQuotes,
    ModelParams,
    Schedule,
    TrancheSpec,
    build_schedule,
    derive_beta,
    standard_tranches,
)
from .discretization import (
    ModelOperators,
    SpaceGrid,
    TridiagOperator,
    build_operators,
    default_grid,
    mass,
    smooth_initial_datum,
    truncate_at_barrier,
)
from .errors import (
    CdolabError,
    ConfigError,
    DegenerateQuoteError,
    FormatError,
    InvalidParameterError,
    NoSolutionError,
    NumericError,
    ScheduleError,
)
from .monte_carlo import (
    DefaultTimes,
    generate_cds_dataset,
    load_cds_dataset,
    mc_cds_quote,
    price_cdo_direct,
    simulate_basket,
)
from .nn_inference import (
    NetworkWeights,
    forward_f,
    forward_g,
    fraction_monotone,
    load_weights,
    save_weights,
)
from .pde_solvers import (
    PropagatorCache,
    ThetaSolverPlan,
    build_propagator,
    evolve_quarter_pde,
    evolve_quarter_theta,
    spline_shift,
    step_theta,
)
from .pricing import (
    SCHEMES,
    LossSurface,
    PricingResult,
    evolve_loss_surface,
    index_spread,
    price_from_surface,
    price_large_pool,
    tranche_spread,
)
from .single_name import (
    SingleNameState,
    cds_quote_analytic,
    invert_x0,
    invert_x0_vector,
    survival_prob,
)
from .spde_solvers import (
    CommonFactorDriver,
    MagnusLog,
    evolve_quarter_spde,
    expm_action,
    magnus_log,
    philox_gen,
    step_euler_maruyama,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
