"""Discretised circular content/preference space.

Preferences, item features and slates all live on the unit circle, binned into
``n_bins`` equal sectors. Bin ``i`` is centred at ``i * 360 / n_bins`` degrees.
Engagement between a preference and an item is the cosine of the angle between
their bin centres.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from prefshift.errors import BinRangeError, ParameterError

SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True)
class PrefSpace:
    n_bins: int = 36

    def __post_init__(self):
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise ParameterError(f"n_bins must be a positive integer, got {self.n_bins!r}")

    @property
    def bin_width(self) -> float:
        return 360.0 / self.n_bins

    def bin_center(self, i: int) -> float:
        self.check_bin(i)
        return float(i) * self.bin_width

    @cached_property
    def centers_deg(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width

    @cached_property
    def centers_rad(self) -> np.ndarray:
        return np.deg2rad(self.centers_deg)

    def angle_to_bin(self, degrees: float) -> int:
        """Index of the bin whose sector contains ``degrees`` (nearest centre)."""
        return int(np.floor((degrees % 360.0) / self.bin_width + 0.5)) % self.n_bins

    def check_bin(self, i) -> None:
        arr = np.asarray(i)
        if arr.dtype.kind not in "iu" and not np.all(np.equal(np.mod(arr, 1), 0)):
            raise BinRangeError(f"bin index must be integral, got {i!r}")
        if np.any(arr < 0) or np.any(arr >= self.n_bins):
            raise BinRangeError(f"bin index {i!r} outside [0, {self.n_bins})")

    @cached_property
    def cos_matrix(self) -> np.ndarray:
        """``cos_matrix[u, x]`` is the engagement of item bin ``x`` under preference bin ``u``."""
        diff = self.centers_rad[:, None] - self.centers_rad[None, :]
        m = np.cos(diff)
        m.setflags(write=False)
        return m

    def rotate(self, vec: np.ndarray, k: int) -> np.ndarray:
        """Rotate a per-bin vector (or the last axis of an array) by ``k`` bins."""
        return np.roll(vec, k, axis=-1)


DEFAULT_SPACE = PrefSpace()


def engagement(u: int, x: int, space: PrefSpace = DEFAULT_SPACE) -> float:
    """Cosine engagement between preference bin ``u`` and item bin ``x``."""
    space.check_bin(u)
    space.check_bin(x)
    return float(space.cos_matrix[u, x])


def check_simplex(p: np.ndarray, name: str = "distribution", atol: float = SIMPLEX_ATOL) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim < 1:
        raise ParameterError(f"{name} must be a vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ParameterError(f"{name} has negative or non-finite entries")
    if not np.allclose(p.sum(axis=-1), 1.0, atol=atol, rtol=0):
        raise ParameterError(f"{name} does not sum to 1 (sum={p.sum(axis=-1)})")
    return p


def normalize(p: np.ndarray, axis: int = -1) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p / p.sum(axis=axis, keepdims=True)


def wrapped_normal_weights(mean_deg: float, std_deg: float, space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    """Wrapped-normal density at the bin centres, normalised over bins.

    The wrap sums the Gaussian over the central period and one period either side.
    """
    if not std_deg > 0:
        raise ParameterError(f"std must be positive, got {std_deg!r}")
    d = (space.centers_deg - mean_deg + 180.0) % 360.0 - 180.0
    dens = sum(np.exp(-0.5 * ((d + 360.0 * k) / std_deg) ** 2) for k in (-1, 0, 1))
    return dens / dens.sum()


def make_wrapped_gaussian_slate(mean: float, std: float, space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    return wrapped_normal_weights(mean, std, space)


def uniform_slate(space: PrefSpace = DEFAULT_SPACE) -> np.ndarray:
    return np.full(space.n_bins, 1.0 / space.n_bins)


def one_hot(i: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def sample_categorical(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of one index per row of ``probs`` from given uniforms."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < (np.asarray(uniforms)[..., None] * cdf[..., -1:])).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)
