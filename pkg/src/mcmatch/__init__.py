"""Monte Carlo PI tuning and MPC stage-cost design by controller matching."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ConvergenceError,
    DivergenceError,
    DomainError,
    InfeasibleError,
    McMatchError,
    NotStabilizingError,
    SimulationError,
)
from .matching import (  # noqa: E402
    AugmentedPlant,
    ControllerMatcher,
    StageCost,
    build_augmented,
    match,
    mpc_feedback_of,
    simulate_linear_law,
)
from .mpc import CondensedOcp, MatchedMPC, OcpSpec, condense, mpc_step  # noqa: E402
from .pi import PIController, PiGains, pi_step  # noqa: E402
from .reactor import ReactorParameters, StateSpace, cstr_state_space  # noqa: E402
from .sde import SimConfig, SimRecord, run_ensemble, simulate_closed_loop  # noqa: E402
from .tuning import GridSpec, MonteCarloTuner, TuningObjective, tune_gain, tune_pi  # noqa: E402

__all__ = [
    "AugmentedPlant",
    "CondensedOcp",
    "ControllerMatcher",
    "ConvergenceError",
    "DivergenceError",
    "DomainError",
    "GridSpec",
    "InfeasibleError",
    "MatchedMPC",
    "McMatchError",
    "MonteCarloTuner",
    "NotStabilizingError",
    "OcpSpec",
    "PIController",
    "PiGains",
    "ReactorParameters",
    "SimConfig",
    "SimRecord",
    "SimulationError",
    "StageCost",
    "StateSpace",
    "TuningObjective",
    "build_augmented",
    "condense",
    "cstr_state_space",
    "match",
    "mpc_feedback_of",
    "mpc_step",
    "pi_step",
    "run_ensemble",
    "simulate_closed_loop",
    "simulate_linear_law",
    "tune_gain",
    "tune_pi",
]
