"""Safe-support Q-learning: KL-regularized Bellman targets anchored to a safe behavior policy."""
from .behavior import (
    MeanNoiseBehavior, PidController, PidDiscreteBehavior, SafeDataset, SoftmaxBehavior, TabularBehaviorPolicy,
    TanhGaussianBehavior, hc_frozenlake_policy, smooth_discrete,
)
from .core import DiscreteDistribution, TabularMdp, Transition, ValidationError, make_rng
from .envs import CartPoleEnv, FrozenLakeEnv, is_unsafe
from .extract import SurrogatePolicy, discrete_optimal_policy
from .learners import ContinuousSafeQ, DeepSafeQ, ReplayBuffer, TabularSafeQ
from .runner import ExperimentConfig, run_case, run_seed

__version__ = "0.1.0"
