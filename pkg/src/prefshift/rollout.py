"""Monte Carlo simulation with preference predictors, dataset generation and training rollouts.

A *predictor* holds a batch of simulated histories and returns a belief over
the preference at the step after each history. The learned models and the
exact NHMM both fit this interface, so either can drive the same simulations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Protocol, Sequence

import numpy as np

from prefshift.data import TrajArrays, Trajectory, stack, unstack
from prefshift.env import (
    Dynamics,
    LearnedEstimators,
    NPSPropagator,
    rollout_oracle,
    rollout_sim,
    simulate_users,
)
from prefshift.errors import ConfigurationError, ParameterError, ShapeError
from prefshift.oracle import NHMMOracle
from prefshift.policies import SlatePolicy, near_random_policy, slate_set_policy
from prefshift.pref_model import SequenceModel, bayes_correct_initial, batch_beliefs
from prefshift.space import DEFAULT_SPACE, PrefSpace, check_simplex, sample_categorical
from prefshift.user import UserParams, choice_matrix

WINDOW_CAP = 10


# ---------------------------------------------------------------- predictors


class Predictor(Protocol):
    beta_field: np.ndarray
    space: PrefSpace

    def start(self, slates: np.ndarray, choices: np.ndarray, n_sims: int): ...

    def belief(self, state) -> np.ndarray: ...

    def advance(self, state, slates: np.ndarray, choices: np.ndarray): ...


class OraclePredictor:
    """Exact filtering under known dynamics, optionally from a custom prior."""

    def __init__(self, oracle: NHMMOracle, prior: np.ndarray | None = None):
        self.oracle = oracle
        self.beta_field = oracle.params.beta_c_field
        self.space = oracle.space
        self.prior = oracle.prior if prior is None else check_simplex(prior, "prior")

    def start(self, slates, choices, n_sims):
        ora = NHMMOracle(self.oracle.params, self.prior)
        ora._choice_cache, ora._trans_cache = self.oracle._choice_cache, self.oracle._trans_cache
        b = ora.filter_sequence(list(slates), list(choices))
        return np.tile(b, (n_sims, 1))

    def belief(self, state):
        return state

    def advance(self, state, slates, choices):
        out = np.empty_like(state)
        keys, inv = np.unique(slates, axis=0, return_inverse=True)
        for k, s in enumerate(keys):
            rows = np.flatnonzero(inv.reshape(-1) == k)
            C = self.oracle.choice_matrix(s)
            M = self.oracle.transition_for_slate(s)
            post = state[rows] * C[:, choices[rows]].T
            post /= post.sum(1, keepdims=True)
            nxt = post @ M
            out[rows] = nxt / nxt.sum(1, keepdims=True)
        return out


@dataclass
class _ModelState:
    slates: np.ndarray  # (N, L, n)
    choices: np.ndarray  # (N, L)
    masks: np.ndarray  # (N, L)


class ModelPredictor:
    """A learned sequence model; windows longer than the cap keep only the latest steps.

    For the counterfactual task ``init_belief`` conditions the model, and an
    empty history returns ``init_belief`` itself.
    """

    def __init__(self, model: SequenceModel, beta_field: np.ndarray, init_belief: np.ndarray | None = None,
                 space: PrefSpace = DEFAULT_SPACE, window: int = WINDOW_CAP):
        if model.task == "initial":
            raise ConfigurationError("the initial-preference model does not predict forward")
        if model.conditioned and init_belief is None:
            raise ConfigurationError("counterfactual model needs an initial belief")
        self.model, self.beta_field, self.space, self.window = model, beta_field, space, window
        self.init_belief = None if init_belief is None else check_simplex(init_belief, "init_belief")

    def start(self, slates, choices, n_sims):
        slates = np.asarray(slates, dtype=float).reshape(-1, self.space.n_bins)
        choices = np.asarray(choices, dtype=int).reshape(-1)
        L = len(choices)
        return _ModelState(np.tile(slates, (n_sims, 1, 1)), np.tile(choices, (n_sims, 1)), np.ones((n_sims, L)))

    def belief(self, state: _ModelState) -> np.ndarray:
        N, L = state.choices.shape
        if L == 0 and self.init_belief is not None:
            return np.tile(self.init_belief, (N, 1))
        lo = max(0, L - self.window)
        ib = None if self.init_belief is None else np.tile(self.init_belief, (N, 1))
        b = batch_beliefs(self.model, state.slates[:, lo:], state.choices[:, lo:], state.masks[:, lo:], ib)[:, -1]
        return b / b.sum(1, keepdims=True)

    def advance(self, state: _ModelState, slates, choices):
        return _ModelState(np.concatenate([state.slates, slates[:, None]], 1),
                           np.concatenate([state.choices, choices[:, None]], 1),
                           np.concatenate([state.masks, np.ones((len(choices), 1))], 1))


# ---------------------------------------------------------------- Monte Carlo procedures


@dataclass
class RolloutReport:
    """Population-averaged beliefs and choice distributions for steps ``start..H``."""

    start: int
    beliefs: np.ndarray  # (H - start + 1, n)
    choice_dists: np.ndarray  # (H - start, n): for steps start..H-1

    def at(self, t: int) -> np.ndarray:
        return self.beliefs[t - self.start]


def _policy_slates(policy: SlatePolicy, hist_slates, hist_choices, rng, n):
    """Slates for every simulation (history-independent policies are vectorised)."""
    if policy.history_independent:
        a = sample_categorical(np.broadcast_to(policy.action_probs(), (n, policy.n_actions)), rng.random(n))
        return policy.actions[a]
    return np.stack([policy.sample(hs, hx, rng) for hs, hx in zip(hist_slates, hist_choices)])


def simulate_future(slates: Sequence, choices: Sequence, policy: SlatePolicy, predictor: Predictor, horizon: int,
                    n_sims: int, rng: np.random.Generator) -> RolloutReport:
    """Imagine ``n_sims`` continuations of a history under ``policy`` and average the beliefs.

    Each simulation repeatedly predicts the next preference, draws the policy's
    slate, draws an imagined choice from the belief-averaged choice model and
    appends both to its own history. Beliefs are reported for steps
    ``len(history)..horizon``.
    """
    L = len(choices)
    if len(slates) != L:
        raise ShapeError(f"{len(slates)} slates but {L} choices")
    if horizon < L:
        raise ParameterError(f"horizon {horizon} must be at least the history length {L}")
    if n_sims < 1:
        raise ParameterError("n_sims must be positive")
    n = predictor.space.n_bins
    state = predictor.start(np.asarray(slates, dtype=float).reshape(L, n), np.asarray(choices, dtype=int), n_sims)
    hs = [list(np.asarray(slates, dtype=float).reshape(L, n)) for _ in range(n_sims)]
    hx = [list(choices) for _ in range(n_sims)]
    beliefs, qs = [], []
    b = predictor.belief(state)
    beliefs.append(b.mean(0))
    for _ in range(L, horizon):
        s = _policy_slates(policy, hs, hx, rng, n_sims)
        C = choice_matrix(s, predictor.beta_field, predictor.space)  # (N, u, x)
        q = np.einsum("nu,nux->nx", b, C)
        x = sample_categorical(q, rng.random(n_sims))
        qs.append(q.mean(0))
        state = predictor.advance(state, s, x)
        if not policy.history_independent:
            for i in range(n_sims):
                hs[i].append(s[i])
                hx[i].append(int(x[i]))
        b = predictor.belief(state)
        beliefs.append(b.mean(0))
    qs_arr = np.stack(qs) if qs else np.zeros((0, n))
    return RolloutReport(L, np.stack(beliefs), qs_arr)


class Estimators(Protocol):
    space: PrefSpace

    def initial_belief(self, slates, choices) -> np.ndarray: ...

    def conditioned(self, init_belief: np.ndarray) -> Predictor: ...


class OracleEstimators:
    """Exact smoothing and exact filtering from a recovered initial belief."""

    def __init__(self, oracle: NHMMOracle):
        self.oracle, self.space = oracle, oracle.space

    def initial_belief(self, slates, choices):
        return self.oracle.smooth_initial(list(slates), list(choices))

    def conditioned(self, init_belief):
        return OraclePredictor(self.oracle, init_belief)


class ModelEstimators:
    """Learned initial model with Bayes correction and the conditioned counterfactual model."""

    def __init__(self, est: LearnedEstimators, space: PrefSpace = DEFAULT_SPACE):
        self.est, self.space = est, space

    def initial_belief(self, slates, choices):
        slates = np.asarray(slates, dtype=float).reshape(-1, self.space.n_bins)
        choices = np.asarray(choices, dtype=int).reshape(-1)
        if len(choices) == 0:
            return batch_beliefs(self.est.initial, slates[None], choices[None])[0, 0]
        mask = np.ones(len(choices))
        mask[0] = 0.0
        b = batch_beliefs(self.est.initial, slates[None], choices[None], mask[None])[0, -1]
        return bayes_correct_initial(b, slates[0], choices[0], self.est.beta_field, self.space)

    def conditioned(self, init_belief):
        return ModelPredictor(self.est.counterfactual, self.est.beta_field, init_belief, self.space)


def simulate_counterfactual(slates: Sequence, choices: Sequence, policy: SlatePolicy, estimators: Estimators,
                            t_target: int, n_sims: int, rng: np.random.Generator) -> RolloutReport:
    """Beliefs over ``u_0..u_{t_target}`` had ``policy`` been deployed from the start.

    Recovers the initial-preference belief from the logged history, then imagines
    fresh trajectories from an empty history with the conditioned predictor.
    """
    if t_target < 0:
        raise ParameterError("t_target must be non-negative")
    b0 = estimators.initial_belief(slates, choices)
    return simulate_future([], [], policy, estimators.conditioned(b0), t_target, n_sims, rng)


def counterfactual_shortcut(model: SequenceModel, init_belief: np.ndarray, slate: np.ndarray, steps: int) -> np.ndarray:
    """Beliefs over ``u_0..u_steps`` under a constant slate, read directly off the counterfactual model."""
    from prefshift.env import learned_nps_path

    return learned_nps_path(model, np.asarray(init_belief, dtype=float)[None], steps + 1, slate)[0]


# ---------------------------------------------------------------- datasets


def generate_dataset(params: UserParams, n_traj: int = 10000, horizon: int = 10,
                     rng: np.random.Generator | None = None,
                     policies: Sequence[SlatePolicy] | None = None) -> list[Trajectory]:
    """Logged trajectories: the first half from the slate-set policy, the second from the near-random one."""
    if n_traj < 1 or horizon < 1:
        raise ParameterError("n_traj and horizon must be positive")
    rng = np.random.default_rng() if rng is None else rng
    policies = policies or (slate_set_policy(params.space), near_random_policy(params.space))
    sizes = [n_traj // len(policies) + (1 if i < n_traj % len(policies) else 0) for i in range(len(policies))]
    out: list[Trajectory] = []
    for pol, size, stream in zip(policies, sizes, rng.spawn(len(policies))):
        if size == 0:
            continue
        _, slates, choices, prefs = simulate_users(params, pol, size, horizon, stream)
        arr = TrajArrays(slates, choices, prefs, [pol.policy_id] * size)
        out.extend(unstack(arr, user_offset=len(out)))
    return out


def split_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Every fourth trajectory (index ``3 mod 4``) is held out: 7,500 / 2,500 for 10,000."""
    idx = np.arange(n)
    return idx[idx % 4 != 3], idx[idx % 4 == 3]


def split_dataset(trajs: Sequence[Trajectory]) -> tuple[TrajArrays, TrajArrays]:
    arr = stack(trajs)
    tr, va = split_indices(len(arr))
    return arr.subset(tr), arr.subset(va)


# ---------------------------------------------------------------- training rollouts

EnvMode = Literal["oracle", "sim"]


def make_collector(mode: EnvMode, params: UserParams, actions: np.ndarray, horizon: int = 10,
                   estimators: LearnedEstimators | None = None):
    """A batch collector ``(policy, n, rng, nu) -> RolloutBatch`` with precomputed dynamics."""
    if mode == "oracle":
        dyn = Dynamics(params, actions)
        nps = NPSPropagator(params, horizon)
        return lambda pol, n, rng, nu: rollout_oracle(params, pol, n, horizon, rng, nu=nu, dynamics=dyn, nps=nps)
    if mode == "sim":
        if estimators is None:
            raise ConfigurationError("simulation mode needs trained estimators")
        dyn = Dynamics(params, actions, choice_beta=estimators.beta_field)
        return lambda pol, n, rng, nu: rollout_sim(params, estimators, pol, n, horizon, rng, nu=nu, dynamics=dyn)
    raise ConfigurationError(f"unknown environment mode {mode!r}")


def generate_training_trajectory(mode: EnvMode, params: UserParams, policy: SlatePolicy, horizon: int,
                                 rng: np.random.Generator, nu: tuple[float, float] = (0.0, 0.0),
                                 estimators: LearnedEstimators | None = None) -> tuple[Trajectory, np.ndarray]:
    """One training trajectory and its per-step penalised rewards."""
    batch = make_collector(mode, params, policy.actions, horizon, estimators)(policy, 1, rng, nu)
    prefs = None if batch.prefs is None else batch.prefs[0].tolist()
    traj = Trajectory(batch.slates[0].tolist(), batch.choices[0].tolist(), prefs, policy.policy_id, 0)
    return traj, batch.rewards[0].copy()
