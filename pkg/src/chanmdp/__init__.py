"""Runtime reconfiguration of a polyphase channelizer driven by a factored MDP."""

from .errors import (
    ChanMdpError, ConfigError, EncodingError, FilterDesignError, InfeasibleSpecError,
    NonConvergenceError, ShapeError, SizeError,
)
from .filters import FilterSpec, FirFilter, design_prototype, polyphase_decompose
from .model import (
    ActionSpace, Category, ChannelizerModel, CrChainParams, PowerTable, SeqParams, StateSpace,
    TransitionTimeTable, build_cr_stm, build_model, build_reward, build_seq_cr_stm,
    build_sp_stm, factored_size,
)
from .sim import ScenarioConfig, run_simulation, sweep
from .solver import PolicyTable, SolverConfig, pack_policy, unpack_policy, value_iteration

__version__ = "0.1.0"
