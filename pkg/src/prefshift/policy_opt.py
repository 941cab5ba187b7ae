"""Recurrent recommender policies and a clipped-surrogate policy-gradient trainer.

Myopic training is the same trainer with ``gamma = 0``. Penalised training adds
the weighted initial-preference and natural-shift cross-engagement terms to the
per-step reward.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from prefshift.env import RolloutBatch
from prefshift.errors import ConfigurationError, ParameterError, TrainingError
from prefshift.policies import SlatePolicy, rl_action_slates
from prefshift.space import DEFAULT_SPACE, PrefSpace

log = logging.getLogger(__name__)

N_ACTIONS = 6


@dataclass
class PGConfig:
    batch_size: int = 1200
    minibatch_size: int = 600
    workers: int = 4
    learning_rate: float = 0.005
    updates_per_minibatch: int = 50
    policy_clip: float = 0.5
    value_clip: float = 50.0
    value_loss_coeff: float = 8.0
    gamma: float = 0.99
    penalized: bool = False
    nu1: float = 1.0
    nu2: float = 1.0
    horizon: int = 10
    iterations: int = 60
    hidden: int = 64

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError("gamma must lie in [0, 1]")
        for name in ("batch_size", "minibatch_size", "workers", "updates_per_minibatch", "horizon", "hidden"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.policy_clip <= 0 or self.value_clip <= 0:
            raise ParameterError("learning rate and clip parameters must be positive")
        if self.nu1 < 0 or self.nu2 < 0:
            raise ParameterError("penalty weights must be non-negative")

    @property
    def nu(self) -> tuple[float, float]:
        return (self.nu1, self.nu2) if self.penalized else (0.0, 0.0)


def worker_count(requested: int) -> int:
    cap = os.environ.get("PREFSHIFT_THREADS")
    return max(1, min(requested, int(cap))) if cap else max(1, requested)


class PolicyNet(nn.Module):
    """Separate LSTM trunks for the action distribution and the value estimate."""

    def __init__(self, obs_dim: int, n_actions: int = N_ACTIONS, hidden: int = 64, input_scale: float = 5.0):
        super().__init__()
        self.input_scale = input_scale
        self.pi_lstm = nn.LSTM(obs_dim, hidden, batch_first=True)
        self.pi_head = nn.Linear(hidden, n_actions)
        self.v_lstm = nn.LSTM(obs_dim, hidden, batch_first=True)
        self.v_head = nn.Linear(hidden, 1)
        with torch.no_grad():
            self.pi_head.weight.mul_(0.01)
            self.pi_head.bias.zero_()

    def forward(self, obs: torch.Tensor, state=None):
        """``obs`` is ``(B, T, d)``; returns logits ``(B, T, A)``, values ``(B, T)`` and the new state."""
        pi_state, v_state = state if state is not None else (None, None)
        x = obs * self.input_scale
        h_pi, pi_state = self.pi_lstm(x, pi_state)
        h_v, v_state = self.v_lstm(x, v_state)
        return self.pi_head(h_pi), self.v_head(h_v).squeeze(-1), (pi_state, v_state)


class RecurrentPolicy(SlatePolicy):
    """A learned recommender over a finite slate action space."""

    def __init__(self, actions: np.ndarray | None = None, hidden: int = 64, space: PrefSpace = DEFAULT_SPACE,
                 seed: int = 0, policy_id: str = "recurrent"):
        super().__init__(rl_action_slates(space) if actions is None else actions)
        self.space = space
        self.hidden = hidden
        self.policy_id = policy_id
        torch.manual_seed(seed)
        self.net = PolicyNet(5 * space.n_bins, self.n_actions, hidden).double()

    # single-user interface
    def act(self, obs: np.ndarray, hidden, rng: np.random.Generator):
        """One decision for one user: ``(action, log_prob, value, new_hidden)``."""
        with torch.no_grad():
            logits, value, new_hidden = self.net(torch.as_tensor(obs, dtype=torch.float64).reshape(1, 1, -1), hidden)
        logp = torch.log_softmax(logits[0, 0], -1).numpy()
        a = int(np.searchsorted(np.cumsum(np.exp(logp)), rng.random() * np.exp(logp).sum(), side="right"))
        a = min(a, self.n_actions - 1)
        return a, float(logp[a]), float(value[0, 0]), new_hidden

    def action_probs(self, slates, choices) -> np.ndarray:
        raise NotImplementedError("recurrent policies act on observations; use act() or act_batch()")

    # batch interface for the environments
    def initial_state(self, batch: int):
        return None

    def act_batch(self, obs: np.ndarray, state, uniforms: np.ndarray):
        with torch.no_grad():
            logits, _, state = self.net(torch.as_tensor(obs, dtype=torch.float64)[:, None, :], state)
        p = torch.softmax(logits[:, 0], -1).numpy()
        cdf = np.cumsum(p, axis=1)
        a = np.minimum((cdf < uniforms[:, None] * cdf[:, -1:]).sum(1), self.n_actions - 1)
        return a, state

    def state_dict(self) -> dict:
        return {k: v.detach().cpu().numpy() for k, v in self.net.state_dict().items()}

    def load_state_dict(self, d: dict) -> None:
        self.net.load_state_dict({k: torch.as_tensor(np.asarray(v), dtype=torch.float64) for k, v in d.items()})


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Per-step discounted return within each (finite) episode; ``rewards`` is ``(B, T)``."""
    rewards = np.asarray(rewards, dtype=float)
    if gamma == 0.0:
        return rewards.copy()
    out = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[0])
    for t in range(rewards.shape[1] - 1, -1, -1):
        acc = rewards[:, t] + gamma * acc
        out[:, t] = acc
    return out


def ppo_losses(net: PolicyNet, obs, actions, old_logp, old_values, returns, adv, cfg: PGConfig):
    logits, values, _ = net(obs)
    logp_all = torch.log_softmax(logits, -1)
    logp = logp_all.gather(-1, actions[..., None]).squeeze(-1)
    ratio = torch.exp(logp - old_logp)
    surr = torch.minimum(ratio * adv, torch.clamp(ratio, 1 - cfg.policy_clip, 1 + cfg.policy_clip) * adv)
    pg_loss = -surr.mean()
    v_clipped = old_values + torch.clamp(values - old_values, -cfg.value_clip, cfg.value_clip)
    vf_loss = torch.maximum((values - returns) ** 2, (v_clipped - returns) ** 2).mean()
    return pg_loss, vf_loss


@dataclass
class TrainingCurveRow:
    iteration: int
    mean_return: float
    eng: float
    eng_u0: float
    eng_nps: float


Collector = Callable[[SlatePolicy, int, np.random.Generator, tuple[float, float]], RolloutBatch]


def collect(collector: Collector, policy: SlatePolicy, n_traj: int, rng: np.random.Generator,
            nu: tuple[float, float], workers: int) -> RolloutBatch:
    """Run ``workers`` chunks, each with its own child stream, and concatenate in chunk order."""
    workers = worker_count(workers)
    sizes = [n_traj // workers + (1 if i < n_traj % workers else 0) for i in range(workers)]
    sizes = [s for s in sizes if s > 0]
    streams = rng.spawn(len(sizes))
    if len(sizes) == 1:
        return collector(policy, sizes[0], streams[0], nu)
    with ThreadPoolExecutor(max_workers=len(sizes)) as pool:
        parts = list(pool.map(lambda a: collector(policy, a[0], a[1], nu), zip(sizes, streams)))
    return concat_batches(parts)


def concat_batches(parts: list[RolloutBatch]) -> RolloutBatch:
    first = parts[0]
    kw = {}
    for name in first.__dataclass_fields__:
        vals = [getattr(p, name) for p in parts]
        if name == "_cos":
            kw[name] = vals[0]
        elif vals[0] is None:
            kw[name] = None
        else:
            kw[name] = np.concatenate(vals, axis=0)
    return RolloutBatch(**kw)


def train_policy(cfg: PGConfig, collector: Collector, rng: np.random.Generator,
                 policy: RecurrentPolicy | None = None, seed: int = 0,
                 on_iteration: Callable[[TrainingCurveRow], None] | None = None
                 ) -> tuple[RecurrentPolicy, list[TrainingCurveRow]]:
    """Clipped-surrogate policy gradient with plain discounted returns.

    ``collector(policy, n_traj, rng, nu)`` must return a :class:`RolloutBatch`;
    see :func:`prefshift.rollout.make_collector`.
    """
    policy = policy or RecurrentPolicy(hidden=cfg.hidden, seed=seed)
    net = policy.net
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    n_traj = max(1, cfg.batch_size // cfg.horizon)
    mb_traj = max(1, cfg.minibatch_size // cfg.horizon)
    gen = torch.Generator().manual_seed(seed)
    curve = []
    for it in range(cfg.iterations):
        batch = collect(collector, policy, n_traj, rng, cfg.nu, cfg.workers)
        returns = discounted_returns(batch.rewards, cfg.gamma)
        obs = torch.as_tensor(batch.obs, dtype=torch.float64)
        acts = torch.as_tensor(batch.actions, dtype=torch.long)
        with torch.no_grad():
            logits, values, _ = net(obs)
            old_logp = torch.log_softmax(logits, -1).gather(-1, acts[..., None]).squeeze(-1)
        ret_t = torch.as_tensor(returns, dtype=torch.float64)
        adv = ret_t - values
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        perm = torch.randperm(n_traj, generator=gen)
        for start in range(0, n_traj, mb_traj):
            idx = perm[start:start + mb_traj]
            for _ in range(cfg.updates_per_minibatch):
                pg, vf = ppo_losses(net, obs[idx], acts[idx], old_logp[idx], values[idx], ret_t[idx], adv[idx], cfg)
                loss = pg + cfg.value_loss_coeff * vf
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite policy loss at iteration {it} (pg={pg.item()}, vf={vf.item()})")
                opt.zero_grad()
                loss.backward()
                opt.step()
        row = TrainingCurveRow(it, float(batch.rewards.sum(1).mean()), float(batch.eng.sum(1).mean()),
                               float(batch.eng_u0.sum(1).mean()), float(batch.eng_nps.sum(1).mean()))
        curve.append(row)
        if on_iteration:
            on_iteration(row)
        log.debug("iter %d return %.3f eng %.3f", it, row.mean_return, row.eng)
    return policy, curve


POLICY_FORMAT, POLICY_VERSION = "prefshift-policy", 1


def save_policy(policy: RecurrentPolicy, path, extra: dict | None = None) -> None:
    """JSON checkpoint with the action slates and flat parameter arrays."""
    doc = {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "policy_id": policy.policy_id,
        "hidden": policy.hidden,
        "n_bins": policy.space.n_bins,
        "actions": policy.actions.tolist(),
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in policy.state_dict().items()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_policy(path) -> RecurrentPolicy:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != POLICY_FORMAT or doc.get("version") != POLICY_VERSION:
        raise ConfigurationError(f"{path} is not a version-{POLICY_VERSION} policy checkpoint")
    space = PrefSpace(doc["n_bins"])
    pol = RecurrentPolicy(np.array(doc["actions"]), doc["hidden"], space, policy_id=doc["policy_id"])
    pol.load_state_dict({k: np.array(v["data"]).reshape(v["shape"]) for k, v in doc["params"].items()})
    return pol
