"""Battery-swapping-station placement: analytic and simulation evaluators,
Bayesian-optimization-assisted large neighborhood search, and the GPS
ingestion pipeline that builds instances from raw traces."""

from .analytic import (
    AnalyticEvaluator,
    EvalResult,
    StationParams,
    evaluate,
    mm1k_loss_prob,
    mm1k_mean_wait_s,
    station_arrival_rates,
    type2_loss,
)
from .bo import boens, expected_improvement, penalized_acquisition, select_batch
from .demand import (
    ChoiceParams,
    PathDemand,
    choice_probabilities,
    load_demands,
    sample_battery,
    save_demands,
    utility,
)
from .errors import BudgetExhausted, FitError, InputError
from .gp import GPModel, Posterior, fit, kernel, posterior
from .network import (
    AdmissibleSets,
    DistanceMatrix,
    RoadNetwork,
    admissible_sets,
    build_distance_matrix,
    load_network,
    save_network,
)
from .optimize import (
    LnsConfig,
    OptResult,
    OptTrace,
    SaConfig,
    destroy,
    enumerate_exact,
    lns_bo,
    repair,
    simulated_annealing,
)
from .sim import ReplicationResult, SimConfig, SimEvaluator, replicate, simulate

__version__ = "0.1.0"
