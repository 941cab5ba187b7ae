"""Preference-shift estimation and penalised recommender training in a simulated slate environment."""
from prefshift.data import Trajectory, read_jsonl, write_jsonl
from prefshift.env import LearnedEstimators, rollout_oracle, rollout_sim
from prefshift.metrics import EvalConfig, ShiftMetrics, cross_engagement, evaluate_policy, penalized_reward, shift_distance
from prefshift.oracle import NHMMOracle
from prefshift.policies import random_policy, rl_action_slates
from prefshift.policy_opt import PGConfig, RecurrentPolicy, train_policy
from prefshift.pref_model import MixtureBelief, SequenceModel, TrainConfig, density_at_bins
from prefshift.rollout import generate_dataset, simulate_counterfactual, simulate_future
from prefshift.space import DEFAULT_SPACE, PrefSpace
from prefshift.user import UserParams

__all__ = [
    "DEFAULT_SPACE",
    "EvalConfig",
    "LearnedEstimators",
    "MixtureBelief",
    "NHMMOracle",
    "PGConfig",
    "PrefSpace",
    "RecurrentPolicy",
    "SequenceModel",
    "ShiftMetrics",
    "TrainConfig",
    "Trajectory",
    "UserParams",
    "cross_engagement",
    "density_at_bins",
    "evaluate_policy",
    "generate_dataset",
    "penalized_reward",
    "random_policy",
    "read_jsonl",
    "rl_action_slates",
    "rollout_oracle",
    "rollout_sim",
    "shift_distance",
    "simulate_counterfactual",
    "simulate_future",
    "train_policy",
    "write_jsonl",
]
