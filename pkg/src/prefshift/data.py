"""Logged trajectories, their JSON-lines encoding and batched array views."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from prefshift.errors import BinRangeError, ShapeError


@dataclass
class Trajectory:
    """One user's logged interaction: ``slates[t]`` shown, ``choices[t]`` picked."""

    slates: list[list[float]]
    choices: list[int]
    gt_prefs: list[int] | None = None
    policy_id: str = ""
    user_id: int = 0

    def __post_init__(self):
        if len(self.slates) != len(self.choices):
            raise ShapeError(f"{len(self.slates)} slates but {len(self.choices)} choices")
        if self.gt_prefs is not None and len(self.gt_prefs) < len(self.choices):
            raise ShapeError("gt_prefs shorter than the choice sequence")
        n = len(self.slates[0]) if self.slates else 0
        if any(len(s) != n for s in self.slates):
            raise ShapeError("slates have inconsistent lengths")
        for c in list(self.choices) + list(self.gt_prefs or []):
            if not 0 <= c < max(n, 1):
                raise BinRangeError(f"bin {c} outside [0, {n})")

    def __len__(self) -> int:
        return len(self.choices)

    def to_json(self) -> str:
        d = {"user_id": self.user_id, "policy_id": self.policy_id, "slates": self.slates, "choices": self.choices}
        if self.gt_prefs is not None:
            d["gt_prefs"] = self.gt_prefs
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "Trajectory":
        d = json.loads(line)
        return cls(d["slates"], d["choices"], d.get("gt_prefs"), d.get("policy_id", ""), d.get("user_id", 0))


def write_jsonl(trajs: Iterable[Trajectory], path: str | Path) -> None:
    # json.dumps uses repr-style shortest float formatting, so floats round-trip exactly
    with open(path, "w") as f:
        for tr in trajs:
            f.write(tr.to_json() + "\n")


def read_jsonl(path: str | Path) -> list[Trajectory]:
    with open(path) as f:
        return [Trajectory.from_json(line) for line in f if line.strip()]


@dataclass
class TrajArrays:
    """Stacked equal-length trajectories: slates ``(N, T, n)``, choices ``(N, T)``, prefs ``(N, T')``."""

    slates: np.ndarray
    choices: np.ndarray
    prefs: np.ndarray | None = None
    policy_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.choices)

    @property
    def horizon(self) -> int:
        return self.choices.shape[1]

    def subset(self, idx) -> "TrajArrays":
        idx = np.asarray(idx)
        pids = [self.policy_ids[i] for i in idx] if self.policy_ids else []
        return TrajArrays(self.slates[idx], self.choices[idx], None if self.prefs is None else self.prefs[idx], pids)


def stack(trajs: Sequence[Trajectory]) -> TrajArrays:
    if not trajs:
        raise ShapeError("no trajectories to stack")
    if len({len(t) for t in trajs}) != 1:
        raise ShapeError("trajectories have different lengths")
    prefs = None
    if all(t.gt_prefs is not None for t in trajs):
        prefs = np.array([t.gt_prefs for t in trajs], dtype=int)
    return TrajArrays(
        np.array([t.slates for t in trajs], dtype=float),
        np.array([t.choices for t in trajs], dtype=int),
        prefs,
        [t.policy_id for t in trajs],
    )


def unstack(arr: TrajArrays, user_offset: int = 0) -> list[Trajectory]:
    out = []
    for i in range(len(arr)):
        prefs = None if arr.prefs is None else arr.prefs[i].tolist()
        pid = arr.policy_ids[i] if arr.policy_ids else ""
        out.append(Trajectory(arr.slates[i].tolist(), arr.choices[i].tolist(), prefs, pid, user_offset + i))
    return out
