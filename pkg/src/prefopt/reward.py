"""Ground-truth rewards and the Bradley-Terry preference model."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class GroundTruth:
    """Oracle reward table r*(y|x) over base queries.

    ``prompt_gain`` controls how strongly the augmented contexts of a
    constructed policy reflect these rewards (see
    :func:`prefopt.datagen.make_assumption_satisfying_policies`).
    """

    rewards: np.ndarray
    prompt_gain: float = 1.0

    def __post_init__(self):
        self.rewards = np.array(self.rewards, dtype=np.float64)
        if self.rewards.ndim != 2:
            raise ValueError(f"rewards must be a matrix, got shape {self.rewards.shape}")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if self.prompt_gain < 0:
            raise ValueError("prompt_gain must be non-negative")

    @property
    def num_queries(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_responses(self) -> int:
        return self.rewards.shape[1]

    def best_response(self, x: int) -> int:
        return int(np.argmax(self.rewards[x]))

    def has_ties(self, x: int) -> bool:
        row = self.rewards[x]
        return np.unique(row).size < row.size

    def gap(self, x: int, y_pos: int, y_neg: int) -> float:
        return float(self.rewards[x, y_pos] - self.rewards[x, y_neg])

    def judge_scores(self) -> np.ndarray:
        return quantize_scores(self.rewards)

    def to_dict(self) -> dict:
        return {
            "rewards": [[float(v) for v in row] for row in self.rewards],
            "prompt_gain": float(self.prompt_gain),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GroundTruth:
        return cls(np.array(d["rewards"], dtype=np.float64), float(d["prompt_gain"]))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> GroundTruth:
        with open(path) as f:
            return cls.from_dict(json.load(f))


def quantize_scores(rewards, levels: int = 5) -> np.ndarray:
    """Map rewards onto the integer judge scale 0..levels (global min-max)."""
    r = np.asarray(rewards, dtype=np.float64)
    lo, hi = r.min(), r.max()
    if hi == lo:
        return np.zeros_like(r)
    return np.rint(levels * (r - lo) / (hi - lo))


def sigmoid(z):
    """Logistic function, evaluated without overflow on either tail."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def log_sigmoid(z):
    """log(sigmoid(z)) as ``min(z, 0) - log1p(exp(-|z|))``."""
    z = np.asarray(z, dtype=np.float64)
    out = np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))
    return out if out.ndim else float(out)


def bt_probability(r_pos: float, r_neg: float) -> float:
    """Bradley-Terry probability that the first response is preferred."""
    if not (math.isfinite(r_pos) and math.isfinite(r_neg)):
        raise ValueError(f"rewards must be finite, got ({r_pos}, {r_neg})")
    return sigmoid(r_pos - r_neg)


def bt_log_likelihood(batch) -> float:
    """Mean Bradley-Terry log-likelihood of ``(r_pos, r_neg)`` pairs."""
    pairs = np.asarray(batch, dtype=np.float64)
    if pairs.size == 0:
        raise ValueError("batch must be non-empty")
    pairs = pairs.reshape(-1, 2)
    if not np.all(np.isfinite(pairs)):
        raise ValueError("rewards must be finite")
    return float(np.mean(log_sigmoid(pairs[:, 0] - pairs[:, 1])))
