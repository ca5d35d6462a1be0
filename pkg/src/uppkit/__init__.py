"""Merger screening when prices and quantities are unobserved.

Revenues, relative margins, and revenue diversion ratios identify own-price
elasticities, GUPPIs, first-order price and welfare effects, and compensating
marginal cost reductions; CES demand assumptions additionally identify the
diversion ratios themselves and make full merger simulation feasible in
percentage-price-change space.
"""

from .ces import (
    CESEconomy,
    CompensatingVariation,
    Consumer,
    NestedCESEconomy,
    ShareTable,
    compensating_variation,
    economy_from_dict,
    economy_from_shares,
    identify_eta,
    invert_shares,
    load_economy,
    nested_shares,
    own_price_elasticity_of_demand,
    own_price_revenue_elasticity,
    revenue_diversion,
    second_choice_diversion,
    shares,
)
from .diversion import (
    ElasticityBundle,
    elasticity_bundle_from_derivatives,
    quantity_to_revenue_diversion,
    revenue_to_quantity_term,
)
from .effects import (
    CmcrResult,
    EffectsReport,
    PassThroughMatrix,
    WelfareReport,
    cmcr,
    compensating_efficiency,
    effects_report,
    guppi,
    naive_cmcr,
    naive_guppi,
    own_price_elasticity,
    price_effects,
    welfare,
)
from .errors import ConvergenceError, InputValidationError, UppkitError
from .fitting import FitResult, NestedCESRevenueFitter, fit_nested_ces
from .market import (
    OUTSIDE,
    DiversionMatrix,
    Market,
    MarketBundle,
    MergerSpec,
    Product,
    Violation,
    load_market,
    save_market,
    validate,
)
from .passthrough import PassthroughInputs, passthrough_matrix, passthrough_matrix_from_market
from .simulation import (
    SimulationProblem,
    SimulationResult,
    SolverConfig,
    consistency_check,
    foc_residual,
    merger_problem,
    post_merger_state,
    simulate,
)

__version__ = "0.1.0"
