"""Engagement under induced and safe-shift preferences, and policy evaluation.

For every step the three quantities compared are

* ``eng``: expected engagement of the chosen item under the user's own
  (policy-induced) preference,
* ``eng_u0``: the same item scored by the initial preference,
* ``eng_nps``: the same item scored by the preference the user would have
  drifted to under the random recommender.

The safe terms are expectations over independent beliefs (the chosen item
and the safe preference are not jointly observed), so they are products of
the choice distribution and the safe belief.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from prefshift.env import LearnedEstimators, RolloutBatch
from prefshift.errors import ConfigurationError, ParameterError, ShapeError
from prefshift.policies import SlatePolicy
from prefshift.space import DEFAULT_SPACE, PrefSpace, check_simplex

METRIC_FIELDS = ("eng", "eng_u0", "eng_nps", "sum")


def cross_engagement(choice_dist: np.ndarray, safe_belief: np.ndarray, space: PrefSpace = DEFAULT_SPACE) -> float:
    """``E[cos(u, x)]`` with ``x ~ choice_dist`` and ``u ~ safe_belief`` independent."""
    q = check_simplex(choice_dist, "choice_dist")
    b = check_simplex(safe_belief, "safe_belief")
    return float(q @ space.cos_matrix @ b)


def shift_distance(beliefs_pi: np.ndarray, choices_pi: np.ndarray, beliefs_safe: np.ndarray,
                   space: PrefSpace = DEFAULT_SPACE) -> float:
    """Summed per-step gap between the chosen items scored by the policy's and the safe preferences.

    ``beliefs_pi`` and ``beliefs_safe`` are ``(T, n)`` beliefs, ``choices_pi`` the
    ``(T, n)`` choice distributions.
    """
    bp, q, bs = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (beliefs_pi, choices_pi, beliefs_safe))
    if not (bp.shape == q.shape == bs.shape):
        raise ShapeError("beliefs and choice distributions must have matching (T, n) shapes")
    C = space.cos_matrix
    return float(np.einsum("tx,xu,tu->", q, C, bp) - np.einsum("tx,xu,tu->", q, C, bs))


def penalized_reward(eng: float | np.ndarray, eng_u0: float | np.ndarray, eng_nps: float | np.ndarray,
                     nu1: float = 1.0, nu2: float = 1.0):
    """Step reward: own engagement plus weighted engagement under the two safe baselines."""
    if nu1 < 0 or nu2 < 0:
        raise ParameterError("penalty weights must be non-negative")
    return eng + nu1 * eng_u0 + nu2 * eng_nps


@dataclass
class ShiftMetrics:
    """Cumulative metrics averaged over trajectories, with standard errors."""

    eng: float
    eng_u0: float
    eng_nps: float
    sum: float
    se_eng: float = 0.0
    se_eng_u0: float = 0.0
    se_eng_nps: float = 0.0
    se_sum: float = 0.0
    n_traj: int = 0

    @classmethod
    def from_batch(cls, batch: RolloutBatch) -> "ShiftMetrics":
        per = {
            "eng": batch.eng.sum(1),
            "eng_u0": batch.eval_eng_u0.sum(1),
            "eng_nps": batch.eval_eng_nps.sum(1),
        }
        per["sum"] = per["eng"] + per["eng_u0"] + per["eng_nps"]
        n = len(per["eng"])
        se = {f"se_{k}": float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0 for k, v in per.items()}
        means = {k: float(v.mean()) for k, v in per.items()}
        means["sum"] = means["eng"] + means["eng_u0"] + means["eng_nps"]
        return cls(**means, **se, n_traj=n)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalConfig:
    mode: Literal["oracle", "estimated"] = "oracle"
    n_traj: int = 1000
    horizon: int = 10
    nu1: float = 1.0
    nu2: float = 1.0

    def __post_init__(self):
        if self.mode not in ("oracle", "estimated"):
            raise ParameterError(f"unknown evaluation mode {self.mode!r}")
        if self.n_traj < 1 or self.horizon < 1:
            raise ParameterError("n_traj and horizon must be positive")
        if self.nu1 < 0 or self.nu2 < 0:
            raise ParameterError("penalty weights must be non-negative")


def evaluate_policy(policy: SlatePolicy, cfg: EvalConfig, rng: np.random.Generator, params,
                    estimators: LearnedEstimators | None = None) -> tuple[ShiftMetrics, RolloutBatch]:
    """Roll ``cfg.n_traj`` users and accumulate the three metrics.

    Oracle mode uses ground-truth users with exact beliefs; estimated mode
    imagines users with the learned models and scores them with the learned
    estimators. The initial-preference and natural-shift beliefs are recovered
    once per trajectory from its full history.
    """
    from prefshift.rollout import make_collector

    if cfg.mode == "estimated" and estimators is None:
        raise ConfigurationError("estimated evaluation needs trained estimators")
    mode = "oracle" if cfg.mode == "oracle" else "sim"
    collector = make_collector(mode, params, policy.actions, cfg.horizon, estimators)
    batch = collector(policy, cfg.n_traj, rng, (cfg.nu1, cfg.nu2))
    return ShiftMetrics.from_batch(batch), batch


CSV_COLUMNS = ["policy", "training_mode", "eval_mode", "eng", "eng_u0", "eng_nps", "sum",
               "se_eng", "se_eng_u0", "se_eng_nps", "se_sum"]


def metrics_row(policy: str, training_mode: str, eval_mode: str, m: ShiftMetrics) -> dict:
    d = m.as_dict()
    return {"policy": policy, "training_mode": training_mode, "eval_mode": eval_mode,
            **{k: d[k] for k in CSV_COLUMNS[3:]}}


def write_metrics_csv(rows: Sequence[dict], path: str | Path, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        if new:
            w.writeheader()
        for r in rows:
            w.writerow(r)
