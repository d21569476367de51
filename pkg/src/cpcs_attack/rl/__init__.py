"""Model-free attack synthesis on the error-dynamics environment."""

from .env import ErrorDynamicsEnv
from .evaluate import ConstantPolicy, EvalResult, RandomPolicy, ZeroPolicy, evaluate_policy
from .linear import FsrEncoder, JointOneHotEncoder, LinearQ, qlfa_train
from .tabular import DivergenceError, RlConfig, TabularQ, epsilon_greedy, q_learning_train, q_update

__all__ = [
    "ConstantPolicy",
    "DivergenceError",
    "ErrorDynamicsEnv",
    "EvalResult",
    "FsrEncoder",
    "JointOneHotEncoder",
    "LinearQ",
    "RandomPolicy",
    "RlConfig",
    "TabularQ",
    "ZeroPolicy",
    "epsilon_greedy",
    "evaluate_policy",
    "q_learning_train",
    "q_update",
    "qlfa_train",
]
