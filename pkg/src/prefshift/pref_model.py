"""Learned preference-dynamics models trained only on slates and choices.

Three tasks share one recurrent architecture:

``future``
    Belief over ``u_t`` from steps ``0..t-1`` (position ``t`` of the output).
``initial``
    Belief over ``u_0`` from the slates of steps ``0..t-1`` and the choices of
    steps ``1..t-1``. The step-0 choice is withheld so that a Bayes update with
    it afterwards recovers the smoothing posterior.
``counterfactual``
    Like ``future`` but the recurrent state starts from an initial-preference
    belief. Half of the training trajectories have every choice masked, which
    teaches the model to roll a belief forward under slates alone.

The network never sees preferences. Its output belief is scored by the
likelihood it assigns to the observed choice through the known choice model:
``-log sum_u b(u) P(x | u, s)``.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
import torch
from scipy.special import i0e
from torch import nn

from prefshift.data import TrajArrays
from prefshift.errors import ConfigurationError, ParameterError, ShapeError, TrainingError
from prefshift.space import DEFAULT_SPACE, PrefSpace, check_simplex, normalize
from prefshift.user import choice_matrix

log = logging.getLogger(__name__)

Task = Literal["future", "initial", "counterfactual"]
TASKS: tuple[str, ...] = ("future", "initial", "counterfactual")
CHECKPOINT_VERSION = 1
KAPPA_FLOOR, KAPPA_CAP = 1e-3, 1e3


# ---------------------------------------------------------------- numpy side


@dataclass
class MixtureBelief:
    """Weighted von Mises mixture over the preference circle (angles in degrees)."""

    means: np.ndarray
    kappas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_1d(np.asarray(self.means, dtype=float))
        self.kappas = np.atleast_1d(np.asarray(self.kappas, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if not (self.means.shape == self.kappas.shape == self.weights.shape):
            raise ShapeError("mixture fields must have equal length")
        if np.any(self.kappas <= 0):
            raise ParameterError("concentrations must be positive")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-6:
            raise ParameterError("mixture weights must be a probability vector")

    @property
    def k(self) -> int:
        return len(self.weights)

    def density_at_bins(self, space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
        return density_at_bins(self, space)


def density_at_bins(belief: MixtureBelief, space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """Mixture density evaluated at the bin centers, renormalised over bins."""
    d = np.deg2rad(space.centers_deg[:, None] - belief.means[None, :])
    # log of the von Mises density up to 2*pi; log I0(k) = log i0e(k) + k
    logp = belief.kappas * (np.cos(d) - 1.0) - np.log(i0e(belief.kappas))
    logw = np.log(np.maximum(belief.weights, 1e-300))
    a = logp + logw
    m = a.max()
    dens = np.exp(a - m).sum(axis=1)
    return dens / dens.sum()


def choice_likelihoods(slates: np.ndarray, choices: np.ndarray, beta_field: np.ndarray,
                       space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """``P(x | u, s)`` as a vector over ``u`` for every (slate, choice) pair; shape ``(..., n)``."""
    slates = np.asarray(slates, dtype=float)
    choices = np.asarray(choices, dtype=int)
    E = np.exp(np.asarray(beta_field)[:, None] * space.cos_matrix)  # (u, x)
    Z = slates @ E.T  # (..., u)
    return np.take_along_axis(slates, choices[..., None], -1) * E.T[choices] / Z


def choice_belief(belief: np.ndarray, slate: np.ndarray, beta_field: np.ndarray,
                  space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """Item distribution averaged over a preference belief."""
    belief = np.asarray(belief, dtype=float)
    return belief @ choice_matrix(np.asarray(slate, dtype=float), beta_field, space)


def bayes_correct_initial(belief: np.ndarray, s0: np.ndarray, x0: int, beta_field: np.ndarray,
                          space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """Fold the step-0 choice into a belief over the initial preference."""
    post = np.asarray(belief, dtype=float) * choice_likelihoods(s0, np.asarray(x0), beta_field, space)
    return normalize(post)


# ---------------------------------------------------------------- torch side


def mixture_log_density(raw: torch.Tensor, space: PrefSpace, k: int) -> torch.Tensor:
    """Map head outputs ``(..., 4k)`` to normalised log-beliefs ``(..., n)``."""
    c, s, kr, wl = raw.split(k, dim=-1)
    mu = torch.atan2(s, c)
    kappa = (nn.functional.softplus(kr) + KAPPA_FLOOR).clamp(max=KAPPA_CAP)
    centers = torch.as_tensor(space.centers_rad, dtype=raw.dtype)
    cosd = torch.cos(centers[:, None] - mu.unsqueeze(-2))  # (..., n, k)
    logp = kappa.unsqueeze(-2) * (cosd - 1.0) - torch.log(torch.special.i0e(kappa)).unsqueeze(-2)
    logw = torch.log_softmax(wl, -1).unsqueeze(-2)
    logd = torch.logsumexp(logp + logw, dim=-1)
    return logd - torch.logsumexp(logd, dim=-1, keepdim=True)


def mixture_params(raw: torch.Tensor, k: int) -> MixtureBelief:
    c, s, kr, wl = raw.detach().double().split(k, dim=-1)
    kappa = (nn.functional.softplus(kr) + KAPPA_FLOOR).clamp(max=KAPPA_CAP)
    w = torch.softmax(wl, -1).numpy()
    return MixtureBelief(np.rad2deg(torch.atan2(s, c).numpy()) % 360.0, kappa.numpy(), w / w.sum())


class SequenceModel(nn.Module):
    """GRU encoder over (slate, masked choice) steps with a von Mises mixture head.

    Position ``j`` of the output is the belief after reading ``j`` steps; position
    0 comes from the initial state alone (learned, or derived from an initial
    belief for the counterfactual task).
    """

    def __init__(self, task: Task, n_bins: int = 36, horizon: int = 10, hidden: int = 64, k: int = 4,
                 space: PrefSpace = DEFAULT_SPACE, raw_inputs: bool = True, beta_field: np.ndarray | None = None):
        super().__init__()
        if task not in TASKS:
            raise ParameterError(f"unknown task {task!r}")
        if space.n_bins != n_bins:
            raise ShapeError("space and n_bins disagree")
        self.task, self.n_bins, self.horizon, self.hidden, self.k = task, n_bins, horizon, hidden, k
        self.space = space
        ang = torch.as_tensor(space.centers_rad)
        # first two circular harmonics give the net a notion of nearby bins
        self.register_buffer("harmonics", torch.stack([ang.cos(), ang.sin(), (2 * ang).cos(), (2 * ang).sin()], 1).float())
        self.raw_inputs = raw_inputs
        # with a choice model attached, each step also feeds the choice's log-likelihood over preferences
        self.beta_field = None if beta_field is None else np.asarray(beta_field, dtype=float)
        if self.beta_field is not None:
            E = np.exp(self.beta_field[:, None] * space.cos_matrix)
            self.register_buffer("evidence", torch.as_tensor(E).float())
        n_in = (2 * n_bins if raw_inputs else 0) + (n_bins if self.beta_field is not None else 0) + 9
        self.cell = nn.GRUCell(n_in, hidden)
        self.head = nn.Linear(hidden, 4 * k)
        if task == "counterfactual":
            self.cond = nn.Linear(n_bins, hidden)
        else:
            self.h_init = nn.Parameter(torch.zeros(hidden))

    @property
    def conditioned(self) -> bool:
        return self.task == "counterfactual"

    def initial_hidden(self, batch: int, init_belief: torch.Tensor | None = None) -> torch.Tensor:
        if self.conditioned:
            if init_belief is None:
                raise ConfigurationError("counterfactual model needs an initial belief")
            return torch.tanh(self.cond(init_belief * self.n_bins))
        return self.h_init.expand(batch, -1)

    def step(self, h: torch.Tensor, slate: torch.Tensor, choice_onehot: torch.Tensor, mask: torch.Tensor):
        c = choice_onehot * mask[:, None]
        H = self.harmonics.to(slate.dtype)
        parts = [slate @ H, c @ H, mask[:, None]]
        if self.raw_inputs:
            parts = [slate * self.n_bins, c] + parts
        if self.beta_field is not None:
            E = self.evidence.to(slate.dtype)
            logl = torch.log(c @ E.T + (1 - mask[:, None])) - torch.log(slate @ E.T)
            logl = (logl - torch.logsumexp(logl, -1, keepdim=True) + math.log(self.n_bins)) * mask[:, None]
            parts = [logl] + parts
        x = torch.cat(parts, dim=-1)
        return self.cell(x, h)

    def log_belief(self, h: torch.Tensor) -> torch.Tensor:
        return mixture_log_density(self.head(h), self.space, self.k)

    def forward(self, slates: torch.Tensor, choices_onehot: torch.Tensor, mask: torch.Tensor,
                init_belief: torch.Tensor | None = None, return_raw: bool = False) -> torch.Tensor:
        """Log-beliefs ``(B, L+1, n)`` for inputs ``(B, L, n)``."""
        B, L = slates.shape[:2]
        h = self.initial_hidden(B, init_belief)
        hs = [h]
        for j in range(L):
            h = self.step(h, slates[:, j], choices_onehot[:, j], mask[:, j])
            hs.append(h)
        raw = self.head(torch.stack(hs, dim=1))
        return raw if return_raw else mixture_log_density(raw, self.space, self.k)

    def describe(self) -> dict:
        return {"task": self.task, "n_bins": self.n_bins, "horizon": self.horizon, "hidden": self.hidden, "k": self.k,
                "architecture": "gru", "raw_inputs": self.raw_inputs,
                "beta_field": None if self.beta_field is None else self.beta_field.tolist()}


def _prepare(model: SequenceModel, slates, choices, mask=None, init_belief=None):
    slates = np.asarray(slates, dtype=float)
    choices = np.asarray(choices, dtype=int)
    if slates.ndim == 2:
        slates, choices = slates[None], choices[None]
        init_belief = None if init_belief is None else np.asarray(init_belief)[None]
    if slates.shape[:2] != choices.shape or slates.shape[-1] != model.n_bins:
        raise ShapeError(f"slates {slates.shape} and choices {choices.shape} do not form a history")
    if choices.size and (choices.min() < 0 or choices.max() >= model.n_bins):
        raise ShapeError("choice index out of range")
    m = np.ones(choices.shape) if mask is None else np.broadcast_to(np.asarray(mask, dtype=float), choices.shape)
    dt = next(model.parameters()).dtype
    onehot = np.eye(model.n_bins)[choices] if choices.size else np.zeros(choices.shape + (model.n_bins,))
    t = lambda a: torch.tensor(np.asarray(a), dtype=dt)
    ib = None if init_belief is None else t(init_belief)
    return t(slates), t(onehot), t(m), ib


def batch_beliefs(model: SequenceModel, slates, choices, mask=None, init_belief=None) -> np.ndarray:
    """Beliefs at every position, ``(B, L+1, n)``, for a batch of equal-length histories."""
    with torch.no_grad():
        out = model(*_prepare(model, slates, choices, mask, init_belief))
    return torch.exp(out.double()).numpy()


def _last_raw(model, slates, choices, mask=None, init_belief=None) -> MixtureBelief:
    args = _prepare(model, np.asarray(slates, dtype=float).reshape(-1, model.n_bins),
                    np.asarray(choices, dtype=int).reshape(-1), mask, init_belief)
    with torch.no_grad():
        raw = model(*args, return_raw=True)
    return mixture_params(raw[0, -1], model.k)


def _check_history(model: SequenceModel, slates, choices, task: Task):
    if model.task != task:
        raise ConfigurationError(f"model was trained for {model.task!r}, not {task!r}")
    if len(slates) != len(choices):
        raise ShapeError(f"{len(slates)} slates but {len(choices)} choices")


def predict_next(model: SequenceModel, slates: Sequence, choices: Sequence) -> MixtureBelief:
    """Belief over ``u_{t+1}`` from ``s_{0:t}, x_{0:t}`` (the prior on an empty history)."""
    _check_history(model, slates, choices, "future")
    return _last_raw(model, slates, choices)


def predict_initial(model: SequenceModel, slates: Sequence, choices: Sequence) -> MixtureBelief:
    """Belief over ``u_0`` from the history with the step-0 choice withheld.

    ``slates``/``choices`` are the full ``s_{0:t}, x_{0:t}``; ``x_0`` is masked here
    and is meant to be folded back in with :func:`bayes_correct_initial`.
    """
    _check_history(model, slates, choices, "initial")
    mask = np.ones(len(choices))
    if len(mask):
        mask[0] = 0.0
    return _last_raw(model, slates, choices, mask)


def predict_counterfactual(model: SequenceModel, init_belief: np.ndarray, slates: Sequence, choices: Sequence,
                           mask: Sequence | None = None) -> MixtureBelief:
    """Belief over ``u_{k+1}`` given an initial belief and a (counterfactual) history ``s_{0:k}, x_{0:k}``."""
    _check_history(model, slates, choices, "counterfactual")
    check_simplex(init_belief, "init_belief")
    return _last_raw(model, slates, choices, mask, np.asarray(init_belief, dtype=float))


def corrected_initial_beliefs(model_i: SequenceModel, arrays: TrajArrays, beta_field: np.ndarray,
                              space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """Bayes-corrected initial beliefs ``(N, n)`` from each full trajectory."""
    mask = np.ones(arrays.choices.shape)
    mask[:, 0] = 0.0
    b = batch_beliefs(model_i, arrays.slates, arrays.choices, mask)[:, -1]
    L0 = choice_likelihoods(arrays.slates[:, 0], arrays.choices[:, 0], beta_field, space)
    return normalize(b * L0)


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    learning_rate: float = 3e-3
    weight_decay: float = 0.05
    batch_size: int = 500
    epochs: int = 100
    k: int = 4
    hidden: int = 64
    architecture: str = "gru"
    raw_inputs: bool = True
    evidence_inputs: bool = True
    cf_mask_fraction: float = 0.5
    keep_best: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1 or self.k < 1 or self.hidden < 1:
            raise ParameterError("training settings must be positive")
        if self.architecture != "gru":
            raise ParameterError(f"unsupported architecture {self.architecture!r}")
        if not 0.0 <= self.cf_mask_fraction <= 1.0:
            raise ParameterError("cf_mask_fraction must lie in [0, 1]")


@dataclass
class TaskBatch:
    """Tensors for one task: inputs, mask, per-position log-likelihood targets and their weights."""

    slates: torch.Tensor
    onehot: torch.Tensor
    mask: torch.Tensor
    log_lik: torch.Tensor  # (N, L+1, n)
    weight: torch.Tensor  # (N, L+1)
    init_belief: torch.Tensor | None

    def take(self, idx) -> "TaskBatch":
        ib = None if self.init_belief is None else self.init_belief[idx]
        return TaskBatch(self.slates[idx], self.onehot[idx], self.mask[idx], self.log_lik[idx], self.weight[idx], ib)

    def __len__(self):
        return len(self.slates)


def task_batch(task: Task, arrays: TrajArrays, beta_field: np.ndarray, init_beliefs: np.ndarray | None = None,
               cf_mask: np.ndarray | None = None, space: PrefSpace = DEFAULT_SPACE,
               dtype=torch.float32) -> TaskBatch:
    """Inputs and supervision for ``task`` over every position of every trajectory."""
    N, T = arrays.choices.shape
    n = space.n_bins
    logL = np.log(np.maximum(choice_likelihoods(arrays.slates, arrays.choices, beta_field, space), 1e-300))
    mask = np.ones((N, T))
    target = np.zeros((N, T + 1, n))
    weight = np.ones((N, T + 1))
    if task == "initial":
        mask[:, 0] = 0.0
        target[:] = logL[:, None, 0]
    else:
        target[:, :T] = logL
        weight[:, T] = 0.0  # u_T has no observed choice
        if task == "counterfactual":
            if init_beliefs is None:
                raise ConfigurationError("counterfactual training needs initial beliefs")
            if cf_mask is not None:
                mask = mask * cf_mask[:, None]
    t = lambda a: torch.tensor(np.asarray(a), dtype=dtype)
    return TaskBatch(t(arrays.slates), t(np.eye(n)[arrays.choices]), t(mask), t(target), t(weight),
                     None if init_beliefs is None else t(init_beliefs))


def nll_loss(model: SequenceModel, batch: TaskBatch) -> torch.Tensor:
    logb = model(batch.slates, batch.onehot, batch.mask, batch.init_belief)
    per = -torch.logsumexp(logb + batch.log_lik, dim=-1)
    return (per * batch.weight).sum() / batch.weight.sum()


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None


def train(task: Task, dataset: TrajArrays, config: TrainConfig, beta_field: np.ndarray, rng: np.random.Generator,
          val: TrajArrays | None = None, init_beliefs: np.ndarray | None = None,
          val_init_beliefs: np.ndarray | None = None, space: PrefSpace = DEFAULT_SPACE,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[SequenceModel, list[EpochRecord]]:
    """Fit a model for ``task`` by minimising the choice negative log-likelihood.

    For the counterfactual task ``init_beliefs`` (one per trajectory) must come
    from a trained initial model, see :func:`corrected_initial_beliefs`.
    """
    if len(dataset) == 0:
        raise TrainingError("empty training set")
    torch.manual_seed(int(rng.integers(2**31)))
    model = SequenceModel(task, space.n_bins, dataset.horizon, config.hidden, config.k, space, config.raw_inputs,
                          beta_field if config.evidence_inputs else None)
    cf_mask = None
    if task == "counterfactual":
        cf_mask = (rng.random(len(dataset)) >= config.cf_mask_fraction).astype(float)
    data = task_batch(task, dataset, beta_field, init_beliefs, cf_mask, space)
    vdata = None
    if val is not None and len(val):
        vmask = None if task != "counterfactual" else (rng.random(len(val)) >= config.cf_mask_fraction).astype(float)
        vdata = task_batch(task, val, beta_field, val_init_beliefs, vmask, space)
    opt = torch.optim.AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    history: list[EpochRecord] = []
    best = (np.inf, None)
    for epoch in range(config.epochs):
        perm = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(perm), config.batch_size):
            idx = torch.as_tensor(perm[start:start + config.batch_size])
            loss = nll_loss(model, data.take(idx))
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite {task} loss at epoch {epoch}, batch starting {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        vloss = None
        if vdata is not None:
            with torch.no_grad():
                vloss = nll_loss(model, vdata).item()
            if config.keep_best and vloss < best[0]:
                best = (vloss, copy.deepcopy(model.state_dict()))
        rec = EpochRecord(epoch, total / count, vloss)
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        log.debug("%s epoch %d train %.4f val %s", task, epoch, rec.train_loss, vloss)
    if best[1] is not None:
        model.load_state_dict(best[1])
    model.eval()
    return model, history


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    """Per-timestep and averaged choice/preference prediction quality."""

    choice_nll: np.ndarray
    choice_acc: np.ndarray
    pref_nll: np.ndarray | None = None
    pref_acc: np.ndarray | None = None

    def summary(self) -> dict:
        out = {"choice_nll": float(self.choice_nll.mean()), "choice_acc": float(self.choice_acc.mean())}
        if self.pref_nll is not None:
            out["pref_nll"] = float(self.pref_nll.mean())
            out["pref_acc"] = float(self.pref_acc.mean())
        return out


def report_from_beliefs(beliefs: np.ndarray, slates: np.ndarray, choices: np.ndarray, prefs: np.ndarray | None,
                        beta_field: np.ndarray, space: PrefSpace = DEFAULT_SPACE) -> EvalReport:
    """Score beliefs ``(N, T, n)`` over ``u_t`` against choices ``x_t`` (and true ``u_t`` when known)."""
    E = np.exp(np.asarray(beta_field)[:, None] * space.cos_matrix)
    Z = slates @ E.T  # (N, T, u)
    q = slates * np.einsum("ntu,ux->ntx", beliefs / Z, E)  # choice distribution
    qx = np.take_along_axis(q, choices[..., None], -1)[..., 0]
    choice_nll = -np.log(np.maximum(qx, 1e-300)).mean(0)
    choice_acc = (q.argmax(-1) == choices).mean(0)
    if prefs is None:
        return EvalReport(choice_nll, choice_acc)
    bu = np.take_along_axis(beliefs, prefs[..., None], -1)[..., 0]
    return EvalReport(choice_nll, choice_acc, -np.log(np.maximum(bu, 1e-300)).mean(0),
                      (beliefs.argmax(-1) == prefs).mean(0))


def model_beliefs(model: SequenceModel, arrays: TrajArrays, beta_field: np.ndarray,
                  init_beliefs: np.ndarray | None = None, space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """Beliefs the model assigns to the quantity each step is scored against, ``(N, T, n)``.

    Future/counterfactual: belief over ``u_t`` before step ``t``. Initial: the
    Bayes-corrected belief over ``u_0`` after reading steps ``0..t``.
    """
    T = arrays.horizon
    if model.task == "initial":
        mask = np.ones(arrays.choices.shape)
        mask[:, 0] = 0.0
        b = batch_beliefs(model, arrays.slates, arrays.choices, mask)[:, 1:]
        L0 = choice_likelihoods(arrays.slates[:, 0], arrays.choices[:, 0], beta_field, space)
        return normalize(b * L0[:, None, :])
    return batch_beliefs(model, arrays.slates, arrays.choices, None, init_beliefs)[:, :T]


def evaluate(model: SequenceModel, arrays: TrajArrays, beta_field: np.ndarray,
             init_beliefs: np.ndarray | None = None, space: PrefSpace = DEFAULT_SPACE) -> EvalReport:
    """Choice and preference prediction quality on held-out trajectories.

    For the initial task every position is scored against ``x_0``/``u_0`` (the
    choice score uses the uncorrected belief, otherwise ``x_0`` would leak).
    """
    b = model_beliefs(model, arrays, beta_field, init_beliefs, space)
    if model.task == "initial":
        T = arrays.horizon
        mask = np.ones(arrays.choices.shape)
        mask[:, 0] = 0.0
        raw = batch_beliefs(model, arrays.slates, arrays.choices, mask)[:, 1:]
        s0 = np.repeat(arrays.slates[:, :1], T, axis=1)
        x0 = np.repeat(arrays.choices[:, :1], T, axis=1)
        rep = report_from_beliefs(raw, s0, x0, None, beta_field, space)
        if arrays.prefs is not None:
            p0 = np.repeat(arrays.prefs[:, :1], T, axis=1)
            full = report_from_beliefs(b, s0, x0, p0, beta_field, space)
            rep.pref_nll, rep.pref_acc = full.pref_nll, full.pref_acc
        return rep
    prefs = None if arrays.prefs is None else arrays.prefs[:, : arrays.horizon]
    return report_from_beliefs(b, arrays.slates, arrays.choices, prefs, beta_field, space)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: SequenceModel, path: str | Path, extra: dict | None = None) -> None:
    """JSON checkpoint: format version, model description and named flat parameter arrays."""
    params = {k: {"shape": list(v.shape), "data": v.detach().double().reshape(-1).tolist()}
              for k, v in model.state_dict().items()}
    doc = {"format": "prefshift-seqmodel", "version": CHECKPOINT_VERSION, **model.describe(), "params": params,
           "extra": extra or {}}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path, space: PrefSpace | None = None) -> SequenceModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "prefshift-seqmodel" or doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path} is not a version-{CHECKPOINT_VERSION} model checkpoint")
    space = space or PrefSpace(doc["n_bins"])
    model = SequenceModel(doc["task"], doc["n_bins"], doc["horizon"], doc["hidden"], doc["k"], space,
                          doc.get("raw_inputs", True), doc.get("beta_field"))
    state = {k: torch.tensor(v["data"], dtype=torch.float32).reshape(v["shape"]) for k, v in doc["params"].items()}
    model.load_state_dict(state)
    model.eval()
    return model
