"""Synthetic preference data with a known reward oracle, plus JSONL I/O."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import (
    DatasetParseError,
    DatasetValidationError,
    EmptyDatasetError,
)
from .policy import PolicyTable
from .reward import GroundTruth, quantize_scores, sigmoid


@dataclass(frozen=True)
class PreferenceTuple:
    query: int
    y_pos: int
    y_neg: int
    true_gap: float | None = None
    judge_scores: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        d = {"query": self.query, "y_pos": self.y_pos, "y_neg": self.y_neg}
        if self.true_gap is not None:
            d["true_gap"] = self.true_gap
        if self.judge_scores is not None:
            d["judge_scores"] = list(self.judge_scores)
        return d


@dataclass
class Dataset:
    num_queries: int
    num_responses: int
    tuples: list[PreferenceTuple] = field(default_factory=list)

    def __len__(self):
        return len(self.tuples)

    def __iter__(self):
        return iter(self.tuples)

    def __getitem__(self, i):
        return self.tuples[i]

    def subset(self, indices) -> Dataset:
        if isinstance(indices, slice):
            return Dataset(self.num_queries, self.num_responses, self.tuples[indices])
        return Dataset(self.num_queries, self.num_responses, [self.tuples[i] for i in indices])

    def arrays(self):
        """``(queries, y_pos, y_neg)`` as int arrays."""
        return as_arrays(self.tuples)

    def true_gaps(self) -> np.ndarray | None:
        if not self.tuples or any(t.true_gap is None for t in self.tuples):
            return None
        return np.array([t.true_gap for t in self.tuples])

    def score_gaps(self) -> np.ndarray | None:
        if not self.tuples or any(t.judge_scores is None for t in self.tuples):
            return None
        return np.array([t.judge_scores[0] - t.judge_scores[1] for t in self.tuples])

    def write_jsonl(self, path):
        Path(path).write_text(self.to_jsonl())

    def to_jsonl(self) -> str:
        lines = [json.dumps({"num_queries": self.num_queries, "num_responses": self.num_responses})]
        lines += [json.dumps(t.to_dict()) for t in self.tuples]
        return "\n".join(lines) + "\n"


Batch = Union[Dataset, Sequence[PreferenceTuple]]


def as_arrays(batch: Batch):
    tuples = batch.tuples if isinstance(batch, Dataset) else batch
    q = np.array([t.query for t in tuples], dtype=np.int64)
    yp = np.array([t.y_pos for t in tuples], dtype=np.int64)
    yn = np.array([t.y_neg for t in tuples], dtype=np.int64)
    return q, yp, yn


# reward distributions


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError("uniform needs lo <= hi")


@dataclass(frozen=True)
class Gaussian:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("gaussian needs sigma >= 0")


@dataclass(frozen=True)
class TwoCluster:
    """Responses split into a low and a high reward cluster.

    Within-cluster rewards spread over ``[0, gap_small)`` and the clusters sit
    ``gap_large`` apart, so a within-cluster pair has a gap below
    ``gap_small`` and a cross-cluster pair a gap near ``gap_large``.  ``mix``
    is the probability that a drawn pair crosses clusters.
    """

    gap_small: float = 0.1
    gap_large: float = 3.0
    mix: float = 0.5

    def __post_init__(self):
        if not 0 < self.mix < 1:
            raise ValueError("two_cluster mix must lie in (0, 1)")
        if not 0 < self.gap_small < self.gap_large:
            raise ValueError("two_cluster needs 0 < gap_small < gap_large")

    def is_large(self, gap: float) -> bool:
        return abs(gap) > 0.5 * (self.gap_small + self.gap_large)


RewardDistribution = Union[Uniform, Gaussian, TwoCluster]
_DISTRIBUTIONS = {"uniform": Uniform, "gaussian": Gaussian, "two_cluster": TwoCluster}


def parse_distribution(value) -> RewardDistribution:
    """Accept a distribution object, ``{"kind": ..., ...}`` or ``"kind(a, b, ...)"``."""
    if isinstance(value, (Uniform, Gaussian, TwoCluster)):
        return value
    if isinstance(value, dict):
        params = dict(value)
        kind = params.pop("kind")
        return _DISTRIBUTIONS[kind](**params)
    m = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", str(value))
    if not m or m.group(1) not in _DISTRIBUTIONS:
        raise ValueError(f"unknown reward distribution {value!r}")
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) else []
    return _DISTRIBUTIONS[m.group(1)](*args)


def distribution_to_dict(dist: RewardDistribution) -> dict:
    kind = {Uniform: "uniform", Gaussian: "gaussian", TwoCluster: "two_cluster"}[type(dist)]
    return {"kind": kind, **dist.__dict__}


@dataclass
class ScenarioSpec:
    num_queries: int = 10
    num_responses: int = 8
    reward_distribution: RewardDistribution = field(default_factory=Uniform)
    label_noise: float = 0.0
    tuples_per_query: int = 10
    seed: int = 0
    prompt_gain: float = 1.0

    def __post_init__(self):
        self.reward_distribution = parse_distribution(self.reward_distribution)

    def validate(self):
        if self.num_responses < 2:
            raise ValueError(f"num_responses must be at least 2, got {self.num_responses}")
        if self.num_queries < 1 or self.tuples_per_query < 1:
            raise ValueError("num_queries and tuples_per_query must be positive")
        if not 0 <= self.label_noise < 0.5:
            raise ValueError(f"label_noise must lie in [0, 0.5), got {self.label_noise}")
        if self.prompt_gain <= 0:
            raise ValueError("prompt_gain must be positive")
        if isinstance(self.reward_distribution, TwoCluster) and self.num_responses < 4:
            raise ValueError("two_cluster needs at least 4 responses (2 per cluster)")
        dist = self.reward_distribution
        degenerate = (isinstance(dist, Uniform) and dist.lo == dist.hi) or (
            isinstance(dist, Gaussian) and dist.sigma == 0
        )
        if degenerate and self.label_noise == 0:
            raise ValueError("constant rewards cannot be labeled deterministically; set label_noise > 0")

    def to_dict(self) -> dict:
        return {
            "num_queries": self.num_queries,
            "num_responses": self.num_responses,
            "reward_distribution": distribution_to_dict(self.reward_distribution),
            "label_noise": self.label_noise,
            "tuples_per_query": self.tuples_per_query,
            "seed": self.seed,
            "prompt_gain": self.prompt_gain,
        }


def _draw_rewards(dist, n, rng):
    if isinstance(dist, Uniform):
        return rng.uniform(dist.lo, dist.hi, n), None
    if isinstance(dist, Gaussian):
        return rng.normal(dist.mu, dist.sigma, n), None
    half = n // 2
    cluster = np.zeros(n, dtype=bool)
    cluster[rng.permutation(n)[:half]] = True
    r = rng.uniform(0.0, dist.gap_small, n) + dist.gap_large * cluster
    return r, cluster


def generate(spec: ScenarioSpec):
    """Draw a reward table and preference tuples from a scenario.

    With ``label_noise == 0`` each pair is labeled by r*; queries with tied
    rewards are redrawn.  Otherwise labels are Bradley-Terry draws with the
    preference probability floored at ``label_noise`` on both sides, and a
    tuple's ``true_gap`` may be negative.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dist = spec.reward_distribution
    deterministic = spec.label_noise == 0
    n = spec.num_responses

    rewards = np.empty((spec.num_queries, n))
    clusters = []
    for x in range(spec.num_queries):
        while True:
            r, cl = _draw_rewards(dist, n, rng)
            if not deterministic or np.unique(r).size == n:
                break
        rewards[x] = r
        clusters.append(cl)

    gt = GroundTruth(rewards, spec.prompt_gain)
    scores = quantize_scores(rewards)
    tuples = []
    for x in range(spec.num_queries):
        for _ in range(spec.tuples_per_query):
            a, b = _draw_pair(dist, clusters[x], n, rng)
            gap = rewards[x, a] - rewards[x, b]
            if deterministic:
                keep = gap > 0
            else:
                p = spec.label_noise + (1 - 2 * spec.label_noise) * sigmoid(gap)
                keep = rng.random() < p
            pos, neg = (a, b) if keep else (b, a)
            tuples.append(
                PreferenceTuple(
                    x,
                    int(pos),
                    int(neg),
                    float(rewards[x, pos] - rewards[x, neg]),
                    (float(scores[x, pos]), float(scores[x, neg])),
                )
            )
    return gt, Dataset(spec.num_queries, n, tuples)


def _draw_pair(dist, cluster, n, rng):
    if cluster is None:
        a, b = rng.choice(n, size=2, replace=False)
        return int(a), int(b)
    if rng.random() < dist.mix:
        a = rng.choice(np.flatnonzero(cluster))
        b = rng.choice(np.flatnonzero(~cluster))
    else:
        side = cluster if rng.random() < 0.5 else ~cluster
        a, b = rng.choice(np.flatnonzero(side), size=2, replace=False)
    if rng.random() < 0.5:
        a, b = b, a
    return int(a), int(b)


def make_assumption_satisfying_policies(gt: GroundTruth, beta: float, prompt_gain: float | None = None,
                                        base_scale: float = 0.5):
    """Build ``(pi, ref)`` whose augmented contexts rank responses exactly as r* does.

    ``ref`` is uniform everywhere.  On ``aug(x)`` the log-ratio of ``pi`` is
    ``(prompt_gain / beta) * r*(y|x)``, so the implied reward gap at the
    augmented context equals ``prompt_gain`` times the true gap.  Base rows
    get ``base_scale`` times the same profile; pass ``base_scale=0`` for a
    training start whose base rows still equal the reference.
    """
    if prompt_gain is None:
        prompt_gain = gt.prompt_gain
    if not prompt_gain > 0:
        raise ValueError("prompt_gain must be positive")
    if not beta > 0:
        raise ValueError("beta must be positive")
    q, n = gt.rewards.shape
    ref = PolicyTable.uniform(q, n, augmented=True, trainable=False)
    centered = gt.rewards - gt.rewards.mean(axis=1, keepdims=True)
    logits = np.zeros((2 * q, n))
    logits[:q] = base_scale * (prompt_gain / beta) * centered
    logits[ref.aug_map] = (prompt_gain / beta) * centered
    pi = PolicyTable(logits, ref.aug_map.copy(), trainable=True)
    return pi, ref


# JSONL ingestion


def _int_field(obj, key, line_no):
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise DatasetValidationError(line_no, f"{key!r} must be an integer, got {v!r}")
    return v


def load_jsonl(path) -> Dataset:
    """Read a dataset written by :meth:`Dataset.write_jsonl`.

    The first line declares ``num_queries`` and ``num_responses``; every
    other line is one tuple.  Blank lines are skipped.
    """
    text = Path(path).read_text()
    rows = [(i + 1, line) for i, line in enumerate(text.splitlines()) if line.strip()]
    if not rows:
        raise EmptyDatasetError(f"{path}: empty dataset")
    parsed = []
    for line_no, line in rows:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetParseError(line_no, f"invalid JSON ({e.msg})") from None
        if not isinstance(obj, dict):
            raise DatasetParseError(line_no, "expected a JSON object")
        parsed.append((line_no, obj))

    header_no, header = parsed[0]
    nq = _int_field(header, "num_queries", header_no)
    nr = _int_field(header, "num_responses", header_no)
    if nq < 1 or nr < 2:
        raise DatasetValidationError(header_no, "header needs num_queries >= 1 and num_responses >= 2")
    if len(parsed) == 1:
        raise EmptyDatasetError(f"{path}: header present but no tuples")

    tuples = []
    for line_no, obj in parsed[1:]:
        x = _int_field(obj, "query", line_no)
        yp = _int_field(obj, "y_pos", line_no)
        yn = _int_field(obj, "y_neg", line_no)
        if not 0 <= x < nq:
            raise DatasetValidationError(line_no, f"query {x} out of range [0, {nq})")
        for key, y in (("y_pos", yp), ("y_neg", yn)):
            if not 0 <= y < nr:
                raise DatasetValidationError(line_no, f"{key} {y} out of range [0, {nr})")
        if yp == yn:
            raise DatasetValidationError(line_no, "y_pos equals y_neg")
        gap = obj.get("true_gap")
        if gap is not None and not isinstance(gap, (int, float)):
            raise DatasetValidationError(line_no, "true_gap must be a number")
        scores = obj.get("judge_scores")
        if scores is not None:
            if not (isinstance(scores, list) and len(scores) == 2):
                raise DatasetValidationError(line_no, "judge_scores must be a pair")
            scores = (float(scores[0]), float(scores[1]))
        tuples.append(PreferenceTuple(x, yp, yn, None if gap is None else float(gap), scores))
    return Dataset(nq, nr, tuples)
