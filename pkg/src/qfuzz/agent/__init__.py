from .checkpoint import load_checkpoint, save_checkpoint
from .dqn import (
    AgentConfig, DoubleQLearner, TargetNetworkPair, agent_loop, double_q_target,
    double_q_targets, gradient_check, select_action, train_step,
)
from .network import QNetwork
from .replay import PrioritizedReplay, SumTree
from .scheduler import MutatorScheduler

__all__ = [
    "AgentConfig", "DoubleQLearner", "MutatorScheduler", "PrioritizedReplay", "QNetwork", "SumTree",
    "TargetNetworkPair", "agent_loop", "double_q_target", "double_q_targets",
    "gradient_check", "load_checkpoint", "save_checkpoint", "select_action", "train_step",
]
