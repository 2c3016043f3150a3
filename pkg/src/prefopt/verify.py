"""Registry of algebraic and numerical self-checks.

Each check draws fresh random instances from its own generator, seeded by
``(seed, position in registry)``, so running a subset does not change what
any single check sees.  ``fault="flip-delta"`` negates the refinement used
by the ordering checks; telescoping is antisymmetric and keeps passing
while monotone equivalence breaks.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.special import log_softmax

from .datagen import Dataset, PreferenceTuple, ScenarioSpec, generate, make_assumption_satisfying_policies
from .loss import dpo_loss, ipo_loss, shifted_loss, sr_dpo_loss, sr_dpo_naive_degeneracy, sr_ipo_loss
from .optim import TrainConfig, train
from .policy import PolicyTable, log_prob
from .refine import check_monotone_equivalence, check_telescoping, delta_refine
from .reward import GroundTruth

FAULTS = ("flip-delta",)
MAX_RECORDED = 20


@dataclass
class CheckResult:
    name: str
    passed: bool
    instances: int
    worst: float
    tolerance: float
    violations: list = field(default_factory=list)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Ctx:
    rng: np.random.Generator
    fault: str | None

    def delta(self):
        def fn(pi, ref, x, y_pos, y_neg, beta):
            d = delta_refine(pi, ref, x, y_pos, y_neg, beta).delta
            return -d if self.fault == "flip-delta" else d
        return fn


def random_pair(rng, num_queries=3, num_responses=5, scale=1.0):
    aug = np.arange(num_queries, 2 * num_queries)
    ref = PolicyTable(rng.normal(0, scale, (2 * num_queries, num_responses)), aug, trainable=False)
    pi = PolicyTable(rng.normal(0, scale, (2 * num_queries, num_responses)), aug)
    return pi, ref


def random_batch(rng, num_queries, num_responses, size):
    out = []
    for _ in range(size):
        a, b = rng.choice(num_responses, size=2, replace=False)
        out.append(PreferenceTuple(int(rng.integers(num_queries)), int(a), int(b)))
    return out


def central_difference(f, logits, h=1e-5):
    grad = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        old = logits[idx]
        logits[idx] = old + h
        up = f()
        logits[idx] = old - h
        down = f()
        logits[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def _record(res: CheckResult, value: float, info: dict, tol: float | None = None):
    tol = res.tolerance if tol is None else tol
    res.worst = max(res.worst, value)
    if value > tol or not np.isfinite(value):
        res.passed = False
        if len(res.violations) < MAX_RECORDED:
            res.violations.append({"value": value, **info})


def check_telescoping_identity(ctx: _Ctx, instances=1000) -> CheckResult:
    res = CheckResult("telescoping", True, instances, 0.0, 1e-10)
    for i in range(instances):
        pi, ref = random_pair(ctx.rng, scale=2.0)
        x = int(ctx.rng.integers(3))
        yp, yn, ys = (int(v) for v in ctx.rng.integers(5, size=3))
        r = check_telescoping(pi, ref, x, yp, yn, ys, 0.1, delta=ctx.delta())
        _record(res, r, {"instance": i, "x": x, "y_pos": yp, "y_neg": yn, "y_star": ys})
    return res


def check_monotone(ctx: _Ctx, num_queries=20, num_responses=8) -> CheckResult:
    res = CheckResult("monotone_equivalence", True, num_queries, 0.0, 0.0)
    rewards = np.array([ctx.rng.permutation(num_responses) + ctx.rng.uniform(0, 0.5, num_responses)
                        for _ in range(num_queries)])
    gt = GroundTruth(rewards)
    pi, ref = make_assumption_satisfying_policies(gt, 0.1, prompt_gain=float(ctx.rng.uniform(0.05, 2.0)))
    for x in range(num_queries):
        rep = check_monotone_equivalence(gt, pi, ref, x, delta=ctx.delta())
        _record(res, float(rep.violations), {"query": x, "sign": len(rep.sign), "anchor": len(rep.anchor),
                                             "corollary": len(rep.corollary)})
    return res


def check_naive_degeneracy(ctx: _Ctx, instances=100, lams=(0.1, 0.3, 0.5)) -> CheckResult:
    res = CheckResult("naive_degeneracy", True, instances * len(lams), 0.0, 1e-12)
    for i in range(instances):
        pi, ref = random_pair(ctx.rng)
        batch = random_batch(ctx.rng, 3, 5, 8)
        for lam in lams:
            a, b = sr_dpo_naive_degeneracy(pi, ref, batch, 0.1, lam)
            dv = abs(a.loss - b.loss)
            dg = float(np.max(np.abs(a.gradient - b.gradient)))
            info = {"instance": i, "lambda": lam}
            _record(res, dv, {**info, "quantity": "value"})
            _record(res, dg, {**info, "quantity": "gradient"}, tol=1e-10)
    return res


def check_stop_gradient(ctx: _Ctx, instances=100, lam=0.5, min_distinct=0.95) -> CheckResult:
    res = CheckResult("stop_gradient", True, instances * 2, 0.0, 1e-12)
    distinct = 0
    for i in range(instances):
        pi, ref = random_pair(ctx.rng)
        batch = random_batch(ctx.rng, 3, 5, 8)
        for loss, link in ((sr_dpo_loss, "dpo"), (sr_ipo_loss, "ipo")):
            det = loss(pi, ref, batch, 0.1, lam, detach_delta=True)
            inj = shifted_loss(pi, ref, batch, 0.1, lam * det.per_tuple_delta, link=link)
            gap = float(np.max(np.abs(det.gradient - inj.gradient)))
            _record(res, gap, {"instance": i, "link": link})
            live = loss(pi, ref, batch, 0.1, lam, detach_delta=False)
            rel = np.linalg.norm(live.gradient - det.gradient) / max(np.linalg.norm(det.gradient), 1e-300)
            distinct += rel > 1e-3
    if distinct < min_distinct * res.instances:
        res.passed = False
        res.violations.append({"undetached_distinct": int(distinct), "required": min_distinct * res.instances})
    return res


FD_LOSSES = {
    "dpo": lambda pi, ref, b: dpo_loss(pi, ref, b, 0.1),
    "ipo": lambda pi, ref, b: ipo_loss(pi, ref, b, 0.1),
    "sr-dpo": lambda pi, ref, b: sr_dpo_loss(pi, ref, b, 0.1, 0.5, detach_delta=False),
    "sr-ipo": lambda pi, ref, b: sr_ipo_loss(pi, ref, b, 0.1, 0.5, detach_delta=False),
}


def check_gradient_fd(ctx: _Ctx, instances=100) -> CheckResult:
    res = CheckResult("gradient_fd", True, instances * len(FD_LOSSES), 0.0, 1e-5)
    for name, f in FD_LOSSES.items():
        for i in range(instances):
            pi, ref = random_pair(ctx.rng)
            batch = random_batch(ctx.rng, 3, 5, 6)
            g = f(pi, ref, batch).gradient
            fd = central_difference(lambda: f(pi, ref, batch).loss, pi.logits)
            rel = float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-300))
            _record(res, rel, {"loss": name, "instance": i})
    return res


def fixed_point_instance(rng):
    """One query, four responses, preferences chained down the reward order."""
    rewards = np.sort(rng.uniform(-1, 2, 4))[::-1].copy()
    gt = GroundTruth(rewards[None, :])
    ds = Dataset(1, 4, [PreferenceTuple(0, k, k + 1, float(rewards[k] - rewards[k + 1])) for k in range(3)])
    return gt, ds


FIXED_POINT_CONFIG = TrainConfig(method="sr-ipo", lam=0.5, learning_rate=0.05, batch_size=3, steps=5000,
                                 rmsprop_epsilon=1.0)


def fixed_point_gap(pi, ref, dataset, beta, lam) -> float:
    """Largest per-tuple violation of ``margin = 1/(2 beta) + lam * Delta``."""
    worst = 0.0
    for t in dataset:
        m = (log_prob(pi, t.query, t.y_pos) - log_prob(ref, t.query, t.y_pos)) - (
            log_prob(pi, t.query, t.y_neg) - log_prob(ref, t.query, t.y_neg))
        d = delta_refine(pi, ref, t.query, t.y_pos, t.y_neg, beta).delta
        worst = max(worst, abs(m - 1.0 / (2 * beta) - lam * d))
    return worst


def run_fixed_point(seed: int, config: TrainConfig = FIXED_POINT_CONFIG):
    """Train Sr-IPO on the chained instance; return ``(residual, gap)``."""
    gt, ds = fixed_point_instance(np.random.default_rng(seed))
    init, ref = make_assumption_satisfying_policies(gt, config.beta, 1.0, base_scale=0.0)
    st = train(config, ds, ref, init=init)
    residual = sr_ipo_loss(st.policy, ref, ds, config.beta, config.lam).loss
    return residual, fixed_point_gap(st.policy, ref, ds, config.beta, config.lam)


def check_sr_ipo_fixed_point(ctx: _Ctx) -> CheckResult:
    res = CheckResult("sr_ipo_fixed_point", True, 1, 0.0, 1e-4)
    residual, gap = run_fixed_point(int(ctx.rng.integers(2**31)))
    _record(res, residual, {"quantity": "residual"})
    if gap > 1e-3:
        res.passed = False
        res.violations.append({"quantity": "fixed_point_gap", "value": gap})
    return res


def check_lambda_zero(ctx: _Ctx, steps=300) -> CheckResult:
    res = CheckResult("lambda_zero_reduction", True, 2, 0.0, 1e-12)
    seed = int(ctx.rng.integers(2**31))
    gt, ds = generate(ScenarioSpec(num_queries=4, seed=seed))
    init, ref = make_assumption_satisfying_policies(gt, 0.1, base_scale=0.0)
    for base, sr in (("dpo", "sr-dpo"), ("ipo", "sr-ipo")):
        reports = []
        for method in (base, sr):
            out = []
            train(TrainConfig(method=method, steps=steps, seed=seed), ds, ref,
                  [lambda s, r: out.append(r)], eval_interval=50, init=init)
            reports.append(out)
        worst = 0.0
        for a, b in zip(*reports):
            for k, v in a.to_dict().items():
                w = b.to_dict()[k]
                if v is not None and w is not None:
                    worst = max(worst, abs(v - w))
        _record(res, worst, {"pair": f"{base}/{sr}"})
    return res


def check_log_softmax_rows(ctx: _Ctx, instances=200) -> CheckResult:
    """Policy rows are normalized and agree with a direct log-softmax."""
    res = CheckResult("policy_normalization", True, instances, 0.0, 1e-12)
    for i in range(instances):
        pi, _ = random_pair(ctx.rng, scale=5.0)
        lp = pi.log_probs()
        gap = max(float(np.max(np.abs(np.exp(lp).sum(axis=1) - 1))),
                  float(np.max(np.abs(lp - log_softmax(pi.logits, axis=1)))))
        _record(res, gap, {"instance": i})
    return res


CHECKS: dict[str, Callable[[_Ctx], CheckResult]] = {
    "telescoping": check_telescoping_identity,
    "monotone_equivalence": check_monotone,
    "naive_degeneracy": check_naive_degeneracy,
    "stop_gradient": check_stop_gradient,
    "gradient_fd": check_gradient_fd,
    "sr_ipo_fixed_point": check_sr_ipo_fixed_point,
    "lambda_zero_reduction": check_lambda_zero,
    "policy_normalization": check_log_softmax_rows,
}


def run_checks(seed: int = 0, names=None, fault: str | None = None) -> list[CheckResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; expected one of {FAULTS}")
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {unknown}")
    order = list(CHECKS)
    out = []
    for name in names:
        ctx = _Ctx(np.random.default_rng([seed, order.index(name)]), fault)
        t0 = time.perf_counter()
        r = CHECKS[name](ctx)
        r.seconds = time.perf_counter() - t0
        out.append(r)
    return out


def violation_report(results, seed: int, fault: str | None = None) -> dict:
    return {
        "seed": seed,
        "fault": fault,
        "passed": all(r.passed for r in results),
        "failed": [r.name for r in results if not r.passed],
        "checks": [r.to_dict() for r in results],
    }
