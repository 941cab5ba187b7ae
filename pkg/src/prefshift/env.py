"""Vectorised user-recommender rollouts with per-step belief bookkeeping.

Two environment modes share one loop:

``oracle``
    Ground-truth users generate choices; beliefs come from exact NHMM inference.
``sim``
    A learned future-preference model imagines the choices; beliefs come from
    the learned future, initial and counterfactual models.

For every step the environment records the three engagement terms of the
penalised objective: expected engagement under the current preference belief,
cross-engagement under the initial-preference belief and cross-engagement
under the natural-preference-shift (random recommender) belief.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np
import torch

from prefshift.errors import ConfigurationError, ParameterError
from prefshift.policies import SlatePolicy, random_policy
from prefshift.space import sample_categorical, uniform_slate
from prefshift.user import UserParams, choice_matrix, initial_pref_distribution, transition_matrix, update_slate_belief

if TYPE_CHECKING:
    from prefshift.pref_model import SequenceModel

EnvMode = Literal["oracle", "sim"]


def spawn_streams(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Independent child generators, one per trajectory.

    ``Generator.spawn`` derives children from the parent's seed sequence, so the
    i-th stream depends only on the parent seed and how many spawns came before.
    """
    return rng.spawn(n)


def draw_uniforms(streams: list[np.random.Generator], steps: int, width: int = 3) -> np.ndarray:
    return np.stack([g.random((steps, width)) for g in streams]) if streams else np.zeros((0, steps, width))


def observation_dim(n: int) -> int:
    return 5 * n


@dataclass
class RolloutBatch:
    """Arrays for ``B`` trajectories of ``T`` steps (``n`` bins, ``A`` actions)."""

    actions: np.ndarray  # (B, T) int
    slates: np.ndarray  # (B, T, n)
    choices: np.ndarray  # (B, T) int
    obs: np.ndarray  # (B, T, 5n)
    rewards: np.ndarray  # (B, T) penalised training reward
    eng: np.ndarray  # (B, T) expected engagement under own-preference belief
    eng_u0: np.ndarray  # (B, T) causal cross-engagement vs initial-preference belief
    eng_nps: np.ndarray  # (B, T) causal cross-engagement vs NPS belief
    choice_dists: np.ndarray  # (B, T, n)
    beliefs: np.ndarray  # (B, T, n) belief over u_t before x_t
    final_u0_belief: np.ndarray  # (B, n) initial-preference belief from the full trajectory
    final_nps_beliefs: np.ndarray  # (B, T, n)
    prefs: np.ndarray | None = None  # (B, T+1) ground-truth preferences (oracle mode)

    @property
    def eval_eng_u0(self) -> np.ndarray:
        """Per-step cross-engagement against the full-trajectory initial belief."""
        return np.einsum("btx,xu,bu->bt", self.choice_dists, self._cos, self.final_u0_belief)

    @property
    def eval_eng_nps(self) -> np.ndarray:
        return np.einsum("btx,xu,btu->bt", self.choice_dists, self._cos, self.final_nps_beliefs)

    _cos: np.ndarray = field(default=None, repr=False)


class BeliefTracker:
    """Exact causal beliefs for a batch of users.

    Keeps ``F[b, u0, ut] ∝ P(u_t, observations so far | u_0)`` so that both the
    predictive belief over the current preference and the smoothed initial
    preference are available at every step.
    """

    def __init__(self, prior: np.ndarray, batch: int):
        n = len(prior)
        self.prior = prior
        self.F = np.broadcast_to(np.eye(n), (batch, n, n)).copy()

    def current(self) -> np.ndarray:
        b = self.prior @ self.F
        return b / b.sum(axis=-1, keepdims=True)

    def initial(self) -> np.ndarray:
        b = self.prior * self.F.sum(axis=-1)
        return b / b.sum(axis=-1, keepdims=True)

    def update(self, likelihoods: np.ndarray, transitions: np.ndarray) -> None:
        """``likelihoods`` (B, n) over ``u_t``; ``transitions`` (B, n, n)."""
        F = np.matmul(self.F * likelihoods[:, None, :], transitions)
        self.F = F / F.sum(axis=(1, 2), keepdims=True)


class Dynamics:
    """Precomputed choice/transition tensors for a fixed action set."""

    def __init__(self, params: UserParams, actions: np.ndarray, choice_beta: np.ndarray | None = None):
        self.params = params
        self.n = params.n_bins
        self.cos = params.space.cos_matrix
        self.actions = np.asarray(actions, dtype=float)
        beta = params.beta_c_field if choice_beta is None else np.asarray(choice_beta, dtype=float)
        self.choice = np.stack([choice_matrix(a, beta, params.space) for a in self.actions])  # (A, u, x)
        self.trans = np.stack([transition_matrix(params, update_slate_belief(a)) for a in self.actions])
        self.own_eng = np.einsum("aux,ux->au", self.choice, self.cos)  # (A, u)


class NPSPropagator:
    """Beliefs under the random recommender from an initial belief (constant-slate shortcut)."""

    def __init__(self, params: UserParams, horizon: int, safe_policy: SlatePolicy | None = None):
        safe_policy = safe_policy or random_policy(params.space)
        if not safe_policy.history_independent:
            raise ParameterError("safe policy must be history-independent")
        mixed = sum(
            p * transition_matrix(params, update_slate_belief(a))
            for p, a in zip(safe_policy.action_probs(), safe_policy.actions)
        )
        powers = [np.eye(params.n_bins)]
        for _ in range(horizon):
            powers.append(powers[-1] @ mixed)
        self.powers = np.stack(powers)

    def at(self, b0: np.ndarray, t: int) -> np.ndarray:
        return b0 @ self.powers[t]

    def path(self, b0: np.ndarray, steps: int) -> np.ndarray:
        """(B, steps, n) beliefs for t = 0..steps-1."""
        return np.einsum("bu,tuv->btv", b0, self.powers[:steps])


def cross_terms(choice_dist: np.ndarray, belief: np.ndarray, cos: np.ndarray) -> np.ndarray:
    return np.einsum("bx,xu,bu->b", choice_dist, cos, belief)


def simulate_users(
    params: UserParams,
    policy: SlatePolicy,
    n_users: int,
    horizon: int,
    rng: np.random.Generator,
    dynamics: Dynamics | None = None,
    init_prefs: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Ground-truth interactions without belief bookkeeping.

    Returns ``(actions (B, T), slates (B, T, n), choices (B, T), prefs (B, T+1))``.
    The policy only sees zero observations, so it must not depend on them.
    Uses the same per-trajectory streams and uniform columns as :func:`rollout_oracle`.
    ``init_prefs`` fixes the starting preferences (e.g. to replay users under another policy).
    """
    dyn = dynamics or Dynamics(params, policy.actions)
    n, B, T = params.n_bins, n_users, horizon
    U = draw_uniforms(spawn_streams(rng, B), T + 1, 4)
    u = sample_categorical(np.broadcast_to(initial_pref_distribution(params), (B, n)), U[:, 0, 3])
    if init_prefs is not None:
        u = np.asarray(init_prefs, dtype=int).copy()
        if u.shape != (B,):
            raise ParameterError("one initial preference per user required")
    actions = np.zeros((B, T), dtype=int)
    choices = np.zeros((B, T), dtype=int)
    prefs = np.zeros((B, T + 1), dtype=int)
    prefs[:, 0] = u
    state = policy.initial_state(B)
    obs = np.zeros((B, observation_dim(n)))
    rows = np.arange(B)
    for t in range(T):
        a, state = policy.act_batch(obs, state, U[:, t, 0])
        actions[:, t] = a
        choices[:, t] = sample_categorical(dyn.choice[a, u], U[:, t, 1])
        u = sample_categorical(dyn.trans[a][rows, u], U[:, t, 2])
        prefs[:, t + 1] = u
    return actions, dyn.actions[actions], choices, prefs


def rollout_oracle(
    params: UserParams,
    policy: SlatePolicy,
    n_users: int,
    horizon: int,
    rng: np.random.Generator,
    nu: tuple[float, float] = (0.0, 0.0),
    dynamics: Dynamics | None = None,
    nps: NPSPropagator | None = None,
) -> RolloutBatch:
    """Roll ``n_users`` ground-truth users for ``horizon`` steps under ``policy``."""
    dyn = dynamics or Dynamics(params, policy.actions)
    nps = nps or NPSPropagator(params, horizon)
    n, B, T = params.n_bins, n_users, horizon
    U = draw_uniforms(spawn_streams(rng, B), T + 1, 4)
    prior = initial_pref_distribution(params)
    u = sample_categorical(np.broadcast_to(prior, (B, n)), U[:, 0, 3])
    tracker = BeliefTracker(prior, B)
    out = _alloc(B, T, n)
    prefs = np.zeros((B, T + 1), dtype=int)
    prefs[:, 0] = u
    state = policy.initial_state(B)
    prev_slate = np.zeros((B, n))
    prev_choice = np.zeros((B, n))
    rows = np.arange(B)
    for t in range(T):
        b = tracker.current()
        b0 = tracker.initial()
        bn = nps.at(b0, t)
        obs = np.concatenate([prev_slate, prev_choice, b, b0, bn], axis=1)
        a, state = policy.act_batch(obs, state, U[:, t, 0])
        C = dyn.choice[a]  # (B, u, x)
        q = np.einsum("bu,bux->bx", b, C)
        x = sample_categorical(C[rows, u], U[:, t, 1])
        _record(out, t, a, dyn.actions[a], x, obs, b, q, (b * dyn.own_eng[a]).sum(1),
                cross_terms(q, b0, dyn.cos), cross_terms(q, bn, dyn.cos), nu)
        tracker.update(C[rows, :, x], dyn.trans[a])
        u = sample_categorical(dyn.trans[a][rows, u], U[:, t, 2])
        prefs[:, t + 1] = u
        prev_slate = dyn.actions[a]
        prev_choice = np.eye(n)[x]
    b0_final = tracker.initial()
    return _finish(out, b0_final, nps.path(b0_final, T), dyn.cos, prefs)


def _alloc(B, T, n) -> dict:
    return dict(
        actions=np.zeros((B, T), dtype=int),
        slates=np.zeros((B, T, n)),
        choices=np.zeros((B, T), dtype=int),
        obs=np.zeros((B, T, 5 * n)),
        rewards=np.zeros((B, T)),
        eng=np.zeros((B, T)),
        eng_u0=np.zeros((B, T)),
        eng_nps=np.zeros((B, T)),
        choice_dists=np.zeros((B, T, n)),
        beliefs=np.zeros((B, T, n)),
    )


def _record(out, t, a, slates, x, obs, b, q, eng, eng_u0, eng_nps, nu):
    out["actions"][:, t] = a
    out["slates"][:, t] = slates
    out["choices"][:, t] = x
    out["obs"][:, t] = obs
    out["beliefs"][:, t] = b
    out["choice_dists"][:, t] = q
    out["eng"][:, t] = eng
    out["eng_u0"][:, t] = eng_u0
    out["eng_nps"][:, t] = eng_nps
    out["rewards"][:, t] = eng + nu[0] * eng_u0 + nu[1] * eng_nps


def _finish(out, b0_final, nps_path, cos, prefs=None) -> RolloutBatch:
    return RolloutBatch(**out, final_u0_belief=b0_final, final_nps_beliefs=nps_path, prefs=prefs, _cos=cos)


@dataclass
class LearnedEstimators:
    """The three trained models plus the choice model they were trained with."""

    future: "SequenceModel"
    initial: "SequenceModel"
    counterfactual: "SequenceModel"
    beta_field: np.ndarray

    def __post_init__(self):
        for name, task in (("future", "future"), ("initial", "initial"), ("counterfactual", "counterfactual")):
            m = getattr(self, name)
            if m is None:
                raise ConfigurationError(f"missing trained {name} model")
            if m.task != task:
                raise ConfigurationError(f"{name} slot holds a {m.task!r} model")


def _torch_beliefs(model, h) -> np.ndarray:
    with torch.no_grad():
        b = torch.exp(model.log_belief(h)).double().numpy()
    return b / b.sum(axis=-1, keepdims=True)


def learned_nps_path(model, b0: np.ndarray, steps: int, safe_slate: np.ndarray) -> np.ndarray:
    """Beliefs over ``u_0..u_{steps-1}`` under a constant slate, choices masked.

    Position 0 is ``b0`` itself; later positions come from the counterfactual model.
    """
    B, n = b0.shape
    out = np.zeros((B, steps, n))
    if steps == 0:
        return out
    out[:, 0] = b0
    dt = next(model.parameters()).dtype
    with torch.no_grad():
        h = model.initial_hidden(B, torch.as_tensor(b0, dtype=dt))
        s = torch.as_tensor(np.broadcast_to(safe_slate, (B, n)).copy(), dtype=dt)
        z, m = torch.zeros((B, n), dtype=dt), torch.zeros(B, dtype=dt)
        for t in range(1, steps):
            h = model.step(h, s, z, m)
            out[:, t] = _torch_beliefs(model, h)
    return out


def rollout_sim(
    params: UserParams,
    est: LearnedEstimators,
    policy: SlatePolicy,
    n_users: int,
    horizon: int,
    rng: np.random.Generator,
    nu: tuple[float, float] = (0.0, 0.0),
    dynamics: Dynamics | None = None,
    safe_slate: np.ndarray | None = None,
) -> RolloutBatch:
    """Imagined users: choices come from the learned future model, beliefs from all three models.

    ``params`` supplies only the space; the choice model is ``est.beta_field``.
    The safe-policy belief uses the constant-slate shortcut of the counterfactual model.
    """
    dyn = dynamics or Dynamics(params, policy.actions, choice_beta=est.beta_field)
    safe_slate = uniform_slate(params.space) if safe_slate is None else safe_slate
    n, B, T = params.n_bins, n_users, horizon
    U = draw_uniforms(spawn_streams(rng, B), T + 1, 4)
    F, I = est.future, est.initial
    dt = next(F.parameters()).dtype
    out = _alloc(B, T, n)
    rows = np.arange(B)
    state = policy.initial_state(B)
    prev_slate = np.zeros((B, n))
    prev_choice = np.zeros((B, n))
    L0 = None
    with torch.no_grad():
        hf, hi = F.initial_hidden(B), I.initial_hidden(B)
        for t in range(T):
            b = _torch_beliefs(F, hf)
            b0 = _torch_beliefs(I, hi)
            if L0 is not None:
                b0 = b0 * L0
                b0 /= b0.sum(1, keepdims=True)
            bn = learned_nps_path(est.counterfactual, b0, t + 1, safe_slate)[:, t]
            obs = np.concatenate([prev_slate, prev_choice, b, b0, bn], axis=1)
            a, state = policy.act_batch(obs, state, U[:, t, 0])
            C = dyn.choice[a]
            q = np.einsum("bu,bux->bx", b, C)
            x = sample_categorical(q, U[:, t, 1])
            _record(out, t, a, dyn.actions[a], x, obs, b, q, (b * dyn.own_eng[a]).sum(1),
                    cross_terms(q, b0, dyn.cos), cross_terms(q, bn, dyn.cos), nu)
            s_t = torch.as_tensor(dyn.actions[a], dtype=dt)
            x_t = torch.as_tensor(np.eye(n)[x], dtype=dt)
            hf = F.step(hf, s_t, x_t, torch.ones(B, dtype=dt))
            hi = I.step(hi, s_t, x_t, torch.full((B,), 0.0 if t == 0 else 1.0, dtype=dt))
            if t == 0:
                L0 = C[rows, :, x]
            prev_slate = dyn.actions[a]
            prev_choice = np.eye(n)[x]
        b0_final = _torch_beliefs(I, hi)
        if L0 is not None:
            b0_final = b0_final * L0
            b0_final /= b0_final.sum(1, keepdims=True)
    return _finish(out, b0_final, learned_nps_path(est.counterfactual, b0_final, T, safe_slate), dyn.cos)
