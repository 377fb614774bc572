"""Travel-time distributions and latest reliable departure times on road
networks whose link speeds follow continuous-time Markov chains."""

from .departure import (
    DepartureAdvice,
    DepartureQuery,
    FrozenStateSource,
    OfflineMemo,
    ReplayStateSource,
    on_time_probability,
    optimal_departure_offline,
    optimal_departure_online,
)
from .distribution import TravelTimeDistribution
from .extensions import (
    DayPeriodModel,
    PhaseTypeArc,
    RecurrentArc,
    mixture_erlang_arc,
    tagged_path_distribution,
)
from .kernels import BACKEND
from .link import GranularityBudget, choose_delta, link_distribution
from .model import Arc, ModelError, Network, NetworkState, forecast_state, two_state_kernel
from .path import EngineSettings, Path, path_distribution, path_distribution_cached, precompute_subpath
from .routing import (
    max_prob_path,
    optimal_departure_od_bisection,
    optimal_departure_od_ksp,
    yen_k_shortest,
)

__version__ = "0.1.0"

__all__ = [
    "Arc", "BACKEND", "DayPeriodModel", "DepartureAdvice", "DepartureQuery", "EngineSettings",
    "FrozenStateSource", "GranularityBudget", "ModelError", "Network", "NetworkState", "OfflineMemo", "Path",
    "PhaseTypeArc", "RecurrentArc", "ReplayStateSource", "TravelTimeDistribution", "choose_delta",
    "forecast_state", "link_distribution", "max_prob_path", "mixture_erlang_arc", "on_time_probability",
    "optimal_departure_od_bisection", "optimal_departure_od_ksp", "optimal_departure_offline",
    "optimal_departure_online", "path_distribution", "path_distribution_cached", "precompute_subpath",
    "tagged_path_distribution", "two_state_kernel", "yen_k_shortest",
]
