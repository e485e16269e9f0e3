"""Agent policies and the online-learning machinery behind them."""
from .dha import DynamicHedgeAIXI, dha_policy
from .hedge import HedgeState, bayes_mixture_squared_error, hedge_init, hedge_step, mixture_log_loss
from .kt import KTCounter, kt_distribution, kt_predict
from .qlearn import EpsilonSchedule, QLearningBidder, bid_grid, holdings_states, qlearn_policy, variant_reward
from .simple import FixedAgent, OracleAgent, ScriptedAgent
from .specialist import Specialist, specialist_value
from .swap import (
    SwapMaster,
    ce_violation,
    empirical_swap_regret,
    matching_pennies_selfplay,
    swap_fixed_point,
    swap_master_step,
)

__all__ = [
    "DynamicHedgeAIXI", "dha_policy", "HedgeState", "bayes_mixture_squared_error", "hedge_init", "hedge_step",
    "mixture_log_loss", "KTCounter", "kt_distribution", "kt_predict", "EpsilonSchedule", "QLearningBidder",
    "bid_grid", "holdings_states", "qlearn_policy", "variant_reward", "FixedAgent", "OracleAgent",
    "ScriptedAgent", "Specialist", "specialist_value", "SwapMaster", "ce_violation", "empirical_swap_regret",
    "matching_pennies_selfplay", "swap_fixed_point", "swap_master_step",
]
