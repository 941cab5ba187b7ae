"""Simulated ground-truth user.

Each step the user sees a slate, picks an item with a slate-weighted conditional
logit whose temperature depends on where their preference sits, forms a belief
about upcoming slates (cube of the slate, renormalised) and then picks their next
preference by a softmax over the value of each candidate preference.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np

from prefshift.errors import ParameterError
from prefshift.space import (
    DEFAULT_SPACE,
    PrefSpace,
    check_simplex,
    engagement,
    sample_categorical,
    uniform_slate,
    wrapped_normal_weights,
)

Anticipation = Literal["next", "split"]


def make_beta_field(
    space: PrefSpace = DEFAULT_SPACE,
    peaks: tuple[tuple[float, float], ...] = ((80.0, 1.0), (270.0, 4.0)),
    width: float = 40.0,
    floor: float = 0.25,
) -> np.ndarray:
    """Choice temperature per preference bin: Gaussian bumps over a floor, pointwise max.

    Each bump is ``height * exp(-d^2 / (2 width^2))`` with ``d`` the wrapped angular
    distance to the peak, so the field equals ``height`` exactly at the peak bin.
    """
    if width <= 0 or floor <= 0:
        raise ParameterError("width and floor must be positive")
    field_ = np.full(space.n_bins, float(floor))
    for angle, height in peaks:
        d = (space.centers_deg - angle + 180.0) % 360.0 - 180.0
        field_ = np.maximum(field_, height * np.exp(-0.5 * (d / width) ** 2))
    return field_


def misspecified_beta_field(space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """The true field with the two peak heights swapped."""
    return make_beta_field(space, peaks=((80.0, 4.0), (270.0, 1.0)))


@dataclass(frozen=True, eq=False)
class UserParams:
    """Ground-truth user parameters.

    ``anticipation`` selects how candidate next preferences are valued:

    * ``"next"`` (default): the user anticipates the item they would pick from the
      believed slate *holding the candidate preference* and scores it ``lam`` by the
      current preference and ``1 - lam`` by the candidate.
    * ``"split"``: the current-preference term uses the item anticipated under the
      current preference. That term is constant across candidates, so transitions
      do not depend on the current preference.
    """

    lam: float = 0.9
    beta_d: float = 40.0
    beta_c_field: np.ndarray = field(default_factory=make_beta_field)
    init_pref_mean: float = 130.0
    init_pref_std: float = 20.0
    anticipation: Anticipation = "next"
    space: PrefSpace = DEFAULT_SPACE

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError(f"lam must lie in [0, 1], got {self.lam}")
        if self.beta_d < 0:
            raise ParameterError("beta_d must be non-negative")
        beta = np.asarray(self.beta_c_field, dtype=float)
        if beta.shape != (self.space.n_bins,):
            raise ParameterError(f"beta_c_field must have shape ({self.space.n_bins},)")
        if np.any(beta <= 0):
            raise ParameterError("beta_c_field entries must be positive")
        beta.setflags(write=False)
        object.__setattr__(self, "beta_c_field", beta)
        if self.init_pref_std <= 0:
            raise ParameterError("init_pref_std must be positive")
        if self.anticipation not in ("next", "split"):
            raise ParameterError(f"unknown anticipation mode {self.anticipation!r}")

    @property
    def n_bins(self) -> int:
        return self.space.n_bins

    def replace(self, **changes) -> "UserParams":
        kw = dict(
            lam=self.lam,
            beta_d=self.beta_d,
            beta_c_field=self.beta_c_field,
            init_pref_mean=self.init_pref_mean,
            init_pref_std=self.init_pref_std,
            anticipation=self.anticipation,
            space=self.space,
        )
        kw.update(changes)
        return UserParams(**kw)

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "beta_d": self.beta_d,
            "beta_c_field": [float(b) for b in self.beta_c_field],
            "init_pref_mean": self.init_pref_mean,
            "init_pref_std": self.init_pref_std,
            "anticipation": self.anticipation,
            "n_bins": self.n_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserParams":
        d = dict(d)
        space = PrefSpace(int(d.pop("n_bins", DEFAULT_SPACE.n_bins)))
        if "beta_c_field" in d and d["beta_c_field"] is not None:
            d["beta_c_field"] = np.asarray(d["beta_c_field"], dtype=float)
        else:
            d.pop("beta_c_field", None)
            d["beta_c_field"] = make_beta_field(space)
        return cls(space=space, **d)


@dataclass(frozen=True, eq=False)
class UserState:
    pref: int
    slate_belief: np.ndarray


class StepOutcome(NamedTuple):
    choice: int
    reward: float
    next_state: UserState


def beta_c(params: UserParams, u: int) -> float:
    params.space.check_bin(u)
    return float(params.beta_c_field[u])


def choice_matrix(slate: np.ndarray, beta_field: np.ndarray, space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """Row ``u`` is the item-choice distribution of a user with preference ``u``.

    Works on a single slate ``(n,)`` or a stack ``(..., n)``; output ``(..., n, n)``.
    """
    slate = np.asarray(slate, dtype=float)
    logits = np.asarray(beta_field, dtype=float)[:, None] * space.cos_matrix
    logits = logits - logits.max(axis=1, keepdims=True)
    w = slate[..., None, :] * np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def choice_distribution(u: int, slate: np.ndarray, beta: float, space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """P(x | slate, u) proportional to ``slate[x] * exp(beta * cos(u, x))``."""
    space.check_bin(u)
    slate = check_simplex(slate, "slate")
    logits = beta * space.cos_matrix[u]
    w = slate * np.exp(logits - logits.max())
    return w / w.sum()


def update_slate_belief(slate: np.ndarray) -> np.ndarray:
    slate = np.asarray(slate, dtype=float)
    cubed = slate**3
    total = cubed.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ParameterError("slate has no mass")
    return cubed / total


def value_matrix(params: UserParams, belief: np.ndarray) -> np.ndarray:
    """``V[u, u']``: value a user at ``u`` assigns to moving to ``u'`` given a slate belief."""
    cos = params.space.cos_matrix
    anticipated = choice_matrix(belief, params.beta_c_field, params.space)  # [u', x]
    own = np.einsum("vx,vx->v", anticipated, cos)  # engagement of u' under its own picks
    if params.anticipation == "next":
        cross = cos @ anticipated.T  # [u, u']: picks made under u', scored by u
    else:
        cross = np.broadcast_to(own[:, None], cos.shape)  # picks made under u, scored by u
    return params.lam * cross + (1.0 - params.lam) * own[None, :]


def preference_value(params: UserParams, u_cur: int, u_next: int, belief: np.ndarray) -> float:
    params.space.check_bin(u_cur)
    params.space.check_bin(u_next)
    belief = check_simplex(belief, "belief")
    return float(value_matrix(params, belief)[u_cur, u_next])


def transition_matrix(params: UserParams, belief: np.ndarray) -> np.ndarray:
    """Row-stochastic ``P[u, u']`` for a fixed slate belief."""
    logits = params.beta_d * value_matrix(params, belief)
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def preference_transition(params: UserParams, u_cur: int, belief: np.ndarray) -> np.ndarray:
    params.space.check_bin(u_cur)
    belief = check_simplex(belief, "belief")
    return transition_matrix(params, belief)[u_cur]


def initial_pref_distribution(params: UserParams) -> np.ndarray:
    return wrapped_normal_weights(params.init_pref_mean, params.init_pref_std, params.space)


def step(params: UserParams, state: UserState, slate: np.ndarray, rng: np.random.Generator) -> StepOutcome:
    u = state.pref
    slate = check_simplex(slate, "slate")
    probs = choice_distribution(u, slate, beta_c(params, u), params.space)
    choice = int(sample_categorical(probs, rng.random())[0])
    reward = engagement(u, choice, params.space)
    belief = update_slate_belief(slate)
    next_pref = int(sample_categorical(preference_transition(params, u, belief), rng.random())[0])
    return StepOutcome(choice, reward, UserState(next_pref, belief))


def sample_initial_state(params: UserParams, rng: np.random.Generator) -> UserState:
    pref = int(sample_categorical(initial_pref_distribution(params), rng.random())[0])
    return UserState(pref, uniform_slate(params.space))
