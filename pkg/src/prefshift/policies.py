"""Fixed (non-learned) recommender policies over finite slate sets."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from prefshift.errors import ParameterError
from prefshift.space import (
    DEFAULT_SPACE,
    PrefSpace,
    check_simplex,
    make_wrapped_gaussian_slate,
    sample_categorical,
    uniform_slate,
)


class SlatePolicy:
    """A policy choosing among ``actions`` (an ``(A, n)`` stack of slates).

    Subclasses implement :meth:`action_probs`. A history-independent policy
    returns the same probabilities for every history, which lets exact inference
    marginalise over its slates in closed form.
    """

    policy_id = "policy"
    history_independent = False

    def __init__(self, actions: np.ndarray):
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        for a in actions:
            check_simplex(a, "action slate")
        self.actions = actions
        self.actions.setflags(write=False)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def action_probs(self, slates: Sequence[np.ndarray], choices: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def sample(self, slates, choices, rng: np.random.Generator) -> np.ndarray:
        a = int(sample_categorical(self.action_probs(slates, choices), rng.random())[0])
        return self.actions[a]

    # batch interface used by the vectorised environments
    def initial_state(self, batch: int):
        return None

    def act_batch(self, obs: np.ndarray, state, uniforms: np.ndarray):
        raise NotImplementedError


class FixedMixturePolicy(SlatePolicy):
    history_independent = True

    def __init__(self, actions: np.ndarray, probs: np.ndarray | None = None, policy_id: str = "fixed"):
        super().__init__(actions)
        if probs is None:
            probs = np.full(self.n_actions, 1.0 / self.n_actions)
        self.probs = check_simplex(probs, "action probabilities").copy()
        if self.probs.shape != (self.n_actions,):
            raise ParameterError("one probability per action required")
        self.probs.setflags(write=False)
        self.policy_id = policy_id

    def action_probs(self, slates=(), choices=()) -> np.ndarray:
        return self.probs

    def act_batch(self, obs, state, uniforms):
        return sample_categorical(np.broadcast_to(self.probs, (len(uniforms), self.n_actions)), uniforms), state


class HistoryPolicy(SlatePolicy):
    """Wraps ``fn(slates, choices) -> action probabilities``; used mostly in tests."""

    def __init__(self, actions: np.ndarray, fn: Callable[[list, list], np.ndarray], policy_id: str = "history"):
        super().__init__(actions)
        self._fn = fn
        self.policy_id = policy_id

    def action_probs(self, slates, choices) -> np.ndarray:
        return check_simplex(self._fn(list(slates), list(choices)), "action probabilities")


def random_policy(space: PrefSpace = DEFAULT_SPACE) -> FixedMixturePolicy:
    """The random recommender: always shows the uniform slate."""
    return FixedMixturePolicy(uniform_slate(space)[None, :], np.ones(1), policy_id="random")


def constant_policy(slate: np.ndarray, policy_id: str = "constant") -> FixedMixturePolicy:
    return FixedMixturePolicy(np.asarray(slate)[None, :], np.ones(1), policy_id=policy_id)


def dataset_slate_set(space: PrefSpace = DEFAULT_SPACE, step_deg: float = 10.0, stds=(30.0, 60.0)) -> np.ndarray:
    """Wrapped-Gaussian slates with means every ``step_deg`` degrees and the given stds (72 by default)."""
    means = np.arange(0.0, 360.0, step_deg)
    return np.stack([make_wrapped_gaussian_slate(m, s, space) for s in stds for m in means])


def slate_set_policy(space: PrefSpace = DEFAULT_SPACE) -> FixedMixturePolicy:
    return FixedMixturePolicy(dataset_slate_set(space), policy_id="slate_set")


def near_random_policy(space: PrefSpace = DEFAULT_SPACE, p_uniform: float = 0.8) -> FixedMixturePolicy:
    """Uniform slate with probability ``p_uniform``, otherwise a random slate from the set."""
    slates = dataset_slate_set(space)
    actions = np.vstack([uniform_slate(space)[None, :], slates])
    probs = np.concatenate([[p_uniform], np.full(len(slates), (1.0 - p_uniform) / len(slates))])
    return FixedMixturePolicy(actions, probs, policy_id="near_random")


def rl_action_slates(space: PrefSpace = DEFAULT_SPACE, n_actions: int = 6, std: float = 60.0) -> np.ndarray:
    """Recommender action space: evenly spaced wrapped-Gaussian slates."""
    means = np.arange(n_actions) * (360.0 / n_actions)
    return np.stack([make_wrapped_gaussian_slate(m, std, space) for m in means])
