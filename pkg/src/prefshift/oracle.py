"""Exact inference over preferences with full access to the user dynamics.

The hidden state is the preference bin alone: the user's slate belief is a
deterministic function of the last slate, so every slate induces a known
``n x n`` transition matrix. Observation likelihoods are the item-choice
probabilities; the policy's own slate probabilities are constant in the hidden
preference and drop out of every normalisation.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from prefshift.errors import DegenerateEvidenceError, ParameterError, ShapeError
from prefshift.policies import SlatePolicy
from prefshift.space import check_simplex, sample_categorical
from prefshift.user import UserParams, choice_matrix, initial_pref_distribution, transition_matrix, update_slate_belief

DEFAULT_MC_SAMPLES = 1000


def predict_step(belief: np.ndarray, op: np.ndarray) -> np.ndarray:
    """Propagate a belief one step through a row-stochastic transition matrix."""
    out = np.asarray(belief) @ op
    return out / out.sum(axis=-1, keepdims=True)


def _filter(belief: np.ndarray, likelihood: np.ndarray) -> np.ndarray:
    post = belief * likelihood
    z = post.sum(axis=-1, keepdims=True)
    if np.any(z <= 0):
        raise DegenerateEvidenceError("observation impossible under every preference")
    return post / z


class NHMMOracle:
    """Inference engine for one set of user parameters.

    Choice and transition matrices are cached per distinct slate (keyed by the
    slate's bytes). Once warm the object is read-only.
    """

    def __init__(self, params: UserParams, prior: np.ndarray | None = None):
        self.params = params
        self.space = params.space
        self.n = params.n_bins
        self.prior = check_simplex(initial_pref_distribution(params) if prior is None else prior, "prior")
        self._choice_cache: dict[bytes, np.ndarray] = {}
        self._trans_cache: dict[bytes, np.ndarray] = {}

    @staticmethod
    def _key(slate: np.ndarray) -> bytes:
        return np.ascontiguousarray(slate, dtype=float).tobytes()

    def choice_matrix(self, slate: np.ndarray) -> np.ndarray:
        key = self._key(slate)
        m = self._choice_cache.get(key)
        if m is None:
            m = choice_matrix(np.asarray(slate, dtype=float), self.params.beta_c_field, self.space)
            m.setflags(write=False)
            m = self._choice_cache.setdefault(key, m)
        return m

    def transition_for_slate(self, slate: np.ndarray) -> np.ndarray:
        key = self._key(slate)
        m = self._trans_cache.get(key)
        if m is None:
            m = transition_matrix(self.params, update_slate_belief(np.asarray(slate, dtype=float)))
            m.setflags(write=False)
            m = self._trans_cache.setdefault(key, m)
        return m

    def likelihood(self, slate: np.ndarray, choice: int) -> np.ndarray:
        self.space.check_bin(choice)
        return self.choice_matrix(slate)[:, choice]

    def filter_step(self, belief: np.ndarray, slate: np.ndarray, choice: int) -> np.ndarray:
        return _filter(np.asarray(belief, dtype=float), self.likelihood(slate, choice))

    def _check_history(self, slates, choices):
        if len(slates) != len(choices):
            raise ShapeError(f"{len(slates)} slates but {len(choices)} choices")

    def filter_sequence(self, slates: Sequence[np.ndarray], choices: Sequence[int]) -> np.ndarray:
        """Belief over the preference at the step after the last observation."""
        self._check_history(slates, choices)
        b = self.prior
        for s, x in zip(slates, choices):
            b = predict_step(self.filter_step(b, s, x), self.transition_for_slate(s))
        return b

    def predictive_beliefs(self, slates: Sequence[np.ndarray], choices: Sequence[int]) -> np.ndarray:
        """Stack of beliefs over ``u_t`` given steps ``0..t-1``, for ``t = 0..len``."""
        self._check_history(slates, choices)
        out = [self.prior]
        for s, x in zip(slates, choices):
            out.append(predict_step(self.filter_step(out[-1], s, x), self.transition_for_slate(s)))
        return np.stack(out)

    def smooth_initial(self, slates: Sequence[np.ndarray], choices: Sequence[int]) -> np.ndarray:
        """Posterior over the initial preference given the whole history (forward-backward)."""
        self._check_history(slates, choices)
        beta = np.ones(self.n)
        for s, x in reversed(list(zip(slates, choices))):
            beta = self.likelihood(s, x) * (self.transition_for_slate(s) @ beta)
            beta = beta / beta.max()
        post = self.prior * beta
        z = post.sum()
        if z <= 0:
            raise DegenerateEvidenceError("history impossible under every initial preference")
        return post / z

    def _rollout_exact(self, belief: np.ndarray, policy: SlatePolicy, steps: int) -> list[np.ndarray]:
        ops = [self.transition_for_slate(a) for a in policy.actions]
        probs = policy.action_probs([], [])
        mixed = sum(p * m for p, m in zip(probs, ops))
        out = []
        for _ in range(steps):
            belief = predict_step(belief, mixed)
            out.append(belief)
        return out

    def _rollout_mc(self, belief, slates, choices, policy, steps, n_samples, rng) -> list[np.ndarray]:
        acc = np.zeros((steps, self.n))
        for _ in range(n_samples):
            b, hs, hx = belief, list(slates), list(choices)
            for k in range(steps):
                s = policy.sample(hs, hx, rng)
                x = int(sample_categorical(b @ self.choice_matrix(s), rng.random())[0])
                b = predict_step(self.filter_step(b, s, x), self.transition_for_slate(s))
                hs.append(s)
                hx.append(x)
                acc[k] += b
        return list(acc / n_samples)

    def predict_future(
        self,
        slates: Sequence[np.ndarray],
        choices: Sequence[int],
        policy: SlatePolicy,
        horizon: int,
        n_samples: int = DEFAULT_MC_SAMPLES,
        rng: np.random.Generator | None = None,
    ) -> list[np.ndarray]:
        """Beliefs over ``u_t`` for ``t = len(slates) .. horizon`` when ``policy`` takes over.

        Exact for history-independent policies, Monte Carlo over slates and
        choices (with exact per-branch filtering) otherwise.
        """
        T1 = len(slates)
        if horizon < T1:
            raise ParameterError(f"horizon {horizon} must exceed the last observed step {T1 - 1}")
        first = self.filter_sequence(slates, choices)
        steps = horizon - T1
        if steps == 0:
            return [first]
        if policy.history_independent:
            return [first] + self._rollout_exact(first, policy, steps)
        rng = np.random.default_rng() if rng is None else rng
        return [first] + self._rollout_mc(first, slates, choices, policy, steps, n_samples, rng)

    def counterfactual(
        self,
        slates: Sequence[np.ndarray],
        choices: Sequence[int],
        policy: SlatePolicy,
        t_target: int,
        n_samples: int = DEFAULT_MC_SAMPLES,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        """Belief over ``u_{t_target}`` had ``policy`` been deployed from the first step."""
        if t_target < 0:
            raise ParameterError("t_target must be non-negative")
        b0 = self.smooth_initial(slates, choices)
        if t_target == 0:
            return b0
        if policy.history_independent:
            return self._rollout_exact(b0, policy, t_target)[-1]
        rng = np.random.default_rng() if rng is None else rng
        return self._rollout_mc(b0, [], [], policy, t_target, n_samples, rng)[-1]

    def counterfactual_path(self, b0: np.ndarray, policy: SlatePolicy, steps: int) -> np.ndarray:
        """Beliefs over ``u_0..u_steps`` from an initial belief under a history-independent policy."""
        if not policy.history_independent:
            raise ParameterError("closed-form path needs a history-independent policy")
        return np.stack([b0] + self._rollout_exact(np.asarray(b0, dtype=float), policy, steps))
