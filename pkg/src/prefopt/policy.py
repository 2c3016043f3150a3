"""Tabular softmax policies over finite contexts and responses.

Rows ``0 .. num_queries - 1`` of a table are the base queries.  When an
augmentation map is present, ``aug_map[x]`` is the row holding the
prompt-augmented counterpart of query ``x``; those rows sit after the base
rows and are only reached through the map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError


class ContextId(NamedTuple):
    """A base query index, optionally routed to its augmented row."""

    index: int
    augmented: bool = False


Context = Union[int, ContextId]


@dataclass(eq=False)
class PolicyTable:
    logits: np.ndarray
    aug_map: np.ndarray | None = None
    trainable: bool = True

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64)
        if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 1:
            raise ConfigurationError(f"logits must be a non-empty matrix, got shape {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ConfigurationError("logits must be finite")
        self.logits = logits
        if self.aug_map is not None:
            aug = np.array(self.aug_map, dtype=np.int64).reshape(-1)
            q = aug.size
            if q == 0:
                raise ConfigurationError("aug_map must not be empty; use None for no augmentation")
            if aug.min() < q or aug.max() >= logits.shape[0]:
                raise ConfigurationError(
                    f"aug_map targets must lie in [{q}, {logits.shape[0]}), got {aug.tolist()}"
                )
            if np.unique(aug).size != q:
                raise ConfigurationError("aug_map must be injective")
            self.aug_map = aug
        if not self.trainable:
            self.logits.flags.writeable = False

    @property
    def shape(self):
        return self.logits.shape

    @property
    def num_contexts(self) -> int:
        return self.logits.shape[0]

    @property
    def num_responses(self) -> int:
        return self.logits.shape[1]

    @property
    def num_queries(self) -> int:
        if self.aug_map is None:
            return self.num_contexts
        return int(self.aug_map.size)

    @property
    def has_augmentation(self) -> bool:
        return self.aug_map is not None

    def row(self, c: Context) -> int:
        """Resolve a context to a row index of the logit matrix."""
        if isinstance(c, ContextId):
            x = int(c.index)
            if not 0 <= x < self.num_queries:
                raise IndexError(f"query index {x} out of range for {self.num_queries} queries")
            if c.augmented:
                if self.aug_map is None:
                    raise ConfigurationError("policy has no augmentation map")
                return int(self.aug_map[x])
            return x
        r = int(c)
        if not 0 <= r < self.num_contexts:
            raise IndexError(f"context index {r} out of range for {self.num_contexts} contexts")
        return r

    def aug_rows(self, queries) -> np.ndarray:
        if self.aug_map is None:
            raise ConfigurationError("policy has no augmentation map")
        return self.aug_map[np.asarray(queries, dtype=np.int64)]

    def log_probs(self) -> np.ndarray:
        """Row-wise log-softmax of the full table."""
        return self.logits - logsumexp(self.logits, axis=1, keepdims=True)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def copy(self, trainable: bool | None = None) -> PolicyTable:
        return PolicyTable(
            self.logits.copy(),
            None if self.aug_map is None else self.aug_map.copy(),
            self.trainable if trainable is None else trainable,
        )

    def frozen(self) -> PolicyTable:
        return self.copy(trainable=False)

    @classmethod
    def uniform(cls, num_queries: int, num_responses: int, augmented=True, trainable=False):
        """All-zero logits; with ``augmented`` the table gets one extra row per query."""
        rows = 2 * num_queries if augmented else num_queries
        aug = np.arange(num_queries, 2 * num_queries) if augmented else None
        return cls(np.zeros((rows, num_responses)), aug, trainable)

    # serialization

    def to_dict(self) -> dict:
        return {
            "num_contexts": self.num_contexts,
            "num_responses": self.num_responses,
            "aug_map": [] if self.aug_map is None else [int(v) for v in self.aug_map],
            "logits": [[float(v) for v in row] for row in self.logits],
        }

    @classmethod
    def from_dict(cls, d: dict, trainable=True) -> PolicyTable:
        logits = np.array(d["logits"], dtype=np.float64)
        if logits.shape != (d["num_contexts"], d["num_responses"]):
            raise ConfigurationError(
                f"declared shape ({d['num_contexts']}, {d['num_responses']}) "
                f"does not match logits {logits.shape}"
            )
        aug = d.get("aug_map") or None
        return cls(logits, aug, trainable)

    def to_json(self) -> str:
        # json emits repr() floats, which round-trip exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str, trainable=True) -> PolicyTable:
        return cls.from_dict(json.loads(text), trainable)

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path, trainable=True) -> PolicyTable:
        with open(path) as f:
            return cls.from_json(f.read(), trainable)


def _check_response(policy: PolicyTable, y) -> int:
    y = int(y)
    if not 0 <= y < policy.num_responses:
        raise IndexError(f"response index {y} out of range for {policy.num_responses} responses")
    return y


def check_compatible(pi: PolicyTable, ref: PolicyTable):
    if pi.shape != ref.shape:
        raise ConfigurationError(f"policy shape {pi.shape} != reference shape {ref.shape}")
    same_aug = (pi.aug_map is None and ref.aug_map is None) or (
        pi.aug_map is not None
        and ref.aug_map is not None
        and np.array_equal(pi.aug_map, ref.aug_map)
    )
    if not same_aug:
        raise ConfigurationError("policy and reference disagree on the augmentation map")


def log_prob(policy: PolicyTable, c: Context, y: int) -> float:
    """log pi(y | c), computed as ``logits[c, y] - logsumexp(logits[c])``."""
    r = policy.row(c)
    y = _check_response(policy, y)
    row = policy.logits[r]
    return float(row[y] - logsumexp(row))


def log_ratio(pi: PolicyTable, ref: PolicyTable, rows: Sequence[int], responses: Sequence[int]):
    """Vectorized ``log pi(y|c) - log ref(y|c)`` for paired row/response arrays."""
    rows = np.asarray(rows, dtype=np.int64)
    responses = np.asarray(responses, dtype=np.int64)
    return pi.log_probs()[rows, responses] - ref.log_probs()[rows, responses]


def implicit_reward_diff(pi, ref, c: Context, y_pos: int, y_neg: int, beta: float) -> float:
    """beta * (log-ratio of y_pos minus log-ratio of y_neg) at context ``c``.

    This is the reward gap implied by the policy pair; the per-context
    normalizer cancels in the difference.
    """
    check_compatible(pi, ref)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    pos = log_prob(pi, c, y_pos) - log_prob(ref, c, y_pos)
    neg = log_prob(pi, c, y_neg) - log_prob(ref, c, y_neg)
    return beta * (pos - neg)
