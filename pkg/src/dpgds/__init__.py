"""Deep Poisson-gamma dynamical systems for multivariate count time series."""

__version__ = "0.1.0"

from .model import (
    CountMatrix,
    GlobalParams,
    HyperParams,
    LatentState,
    expected_rate,
    generate,
    poisson_log_likelihood,
    project_topic,
)
from .gibbs import gibbs_sweep, init_chain
from .sgmcmc import SgmcmcState, init_sgmcmc_state, sgmcmc_step
from .evaluate import (
    align_factors,
    forecast_next,
    forecast_next_monte_carlo,
    make_holdout,
    mean_precision_recall,
    top_m_precision_recall,
)
from .data import (
    Checkpoint,
    generate_bouncing_balls,
    load_checkpoint,
    load_count_matrix,
    save_checkpoint,
    save_count_matrix,
)
from .rng import RngStream

__all__ = [
    "CountMatrix", "GlobalParams", "HyperParams", "LatentState",
    "expected_rate", "generate", "poisson_log_likelihood", "project_topic",
    "gibbs_sweep", "init_chain",
    "SgmcmcState", "init_sgmcmc_state", "sgmcmc_step",
    "align_factors", "forecast_next", "forecast_next_monte_carlo",
    "make_holdout", "mean_precision_recall", "top_m_precision_recall",
    "Checkpoint", "generate_bouncing_balls", "load_checkpoint",
    "load_count_matrix", "save_checkpoint", "save_count_matrix",
    "RngStream",
]
