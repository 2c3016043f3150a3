"""Refinement functions and the checks for their ordering guarantees.

``delta_refine(pi, ref, x, y_pos, y_neg, beta)`` evaluates the refinement of
the tuple ``(x, y_pos, y_neg)``: the implicit reward gap measured on the
prompt-augmented context of ``x``.  Its first mathematical argument is the
negative response, so ``Delta(a, b)`` below always means
``delta_refine(..., y_pos=b, y_neg=a)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .policy import ContextId, PolicyTable, check_compatible, implicit_reward_diff
from .reward import GroundTruth


@dataclass(frozen=True)
class RefinementValue:
    delta: float
    detached: bool = True

    def __float__(self):
        return self.delta


def _require_base(policy: PolicyTable, x) -> int:
    if isinstance(x, ContextId):
        if x.augmented:
            raise ValueError("refinement is defined on the raw query, got an augmented context")
        x = x.index
    x = int(x)
    if not 0 <= x < policy.num_queries:
        raise ValueError(f"{x} is not a base query (have {policy.num_queries})")
    return x


def delta_naive(pi, ref, x, y_pos, y_neg, beta) -> float:
    """Refinement built from the raw query's own implicit reward gap.

    Substituting this into the DPO objective only rescales beta.
    """
    x = _require_base(pi, x)
    return implicit_reward_diff(pi, ref, x, y_pos, y_neg, beta)


def delta_refine(pi, ref, x, y_pos, y_neg, beta, detached=True) -> RefinementValue:
    """Implicit reward gap on the augmented context ``aug(x)``."""
    x = _require_base(pi, x)
    check_compatible(pi, ref)
    if not pi.has_augmentation:
        raise ConfigurationError("delta_refine needs an augmentation map")
    d = implicit_reward_diff(pi, ref, ContextId(x, augmented=True), y_pos, y_neg, beta)
    return RefinementValue(d, detached)


DeltaFn = Callable[..., float]


def _refine_value(pi, ref, x, y_pos, y_neg, beta) -> float:
    return delta_refine(pi, ref, x, y_pos, y_neg, beta).delta


def check_telescoping(pi, ref, x, y_pos, y_neg, y_star, beta, delta: DeltaFn = _refine_value) -> float:
    """Residual of ``Delta(y-, y+) = Delta(y-, y*) - Delta(y+, y*)``.

    Holds for any anchor ``y_star``; each term is evaluated independently.
    """
    lhs = delta(pi, ref, x, y_pos, y_neg, beta)
    via_neg = delta(pi, ref, x, y_star, y_neg, beta)
    via_pos = delta(pi, ref, x, y_star, y_pos, beta)
    return abs(lhs - (via_neg - via_pos))


@dataclass
class MonotoneReport:
    query: int
    y_star: int
    checked_pairs: int = 0
    checked_pair_pairs: int = 0
    sign: list = field(default_factory=list)
    anchor: list = field(default_factory=list)
    corollary: list = field(default_factory=list)

    @property
    def violations(self) -> int:
        return len(self.sign) + len(self.anchor) + len(self.corollary)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "y_star": self.y_star,
            "checked_pairs": self.checked_pairs,
            "checked_pair_pairs": self.checked_pair_pairs,
            "sign": self.sign,
            "anchor": self.anchor,
            "corollary": self.corollary,
        }


def check_monotone_equivalence(gt: GroundTruth, pi, ref, x, beta=0.1, delta: DeltaFn = _refine_value):
    """Exhaustively compare r* orderings with refinement orderings at query ``x``.

    Three families of entries are reported:

    ``sign``
        ordered pair ``a`` better than ``b`` with ``Delta(b, a) <= 0``.
    ``anchor``
        same pair with ``Delta(a, y*) >= Delta(b, y*)``, i.e. the better
        response is not strictly closer to the optimal one.
    ``corollary``
        two tuples ``i``, ``j`` with ``r*(i+) > r*(j+)`` and
        ``r*(i-) < r*(j-)`` whose gap ordering disagrees with the ordering
        of their refinements.

    Pairs tied in r* are skipped.
    """
    x = _require_base(pi, x)
    r = gt.rewards[x]
    n = r.size
    y_star = gt.best_response(x)
    report = MonotoneReport(query=x, y_star=y_star)

    d = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            # d[a, b] = Delta(a, b): refinement of the tuple (x, b, a)
            d[a, b] = delta(pi, ref, x, b, a, beta)

    tuples = []
    for a, b in combinations(range(n), 2):
        if r[a] == r[b]:
            continue
        if r[a] < r[b]:
            a, b = b, a
        tuples.append((a, b))
        report.checked_pairs += 1
        if not d[b, a] > 0:
            report.sign.append({"y_pos": a, "y_neg": b, "delta": d[b, a]})
        if not d[a, y_star] < d[b, y_star]:
            report.anchor.append(
                {"y_pos": a, "y_neg": b, "delta_pos_star": d[a, y_star], "delta_neg_star": d[b, y_star]}
            )

    for (ip, im) in tuples:
        for (jp, jm) in tuples:
            if not (r[ip] > r[jp] and r[im] < r[jm]):
                continue
            report.checked_pair_pairs += 1
            gap_order = (r[ip] - r[im]) > (r[jp] - r[jm])
            delta_order = d[im, ip] > d[jm, jp]
            if gap_order != delta_order:
                report.corollary.append(
                    {"i": [ip, im], "j": [jp, jm], "delta_i": d[im, ip], "delta_j": d[jm, jp]}
                )
    return report
