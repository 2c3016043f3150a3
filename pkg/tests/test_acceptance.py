"""End-to-end acceptance criteria, one test each.

Every test records a PASS/FAIL line; the lines are printed in the terminal
summary (see conftest.py) and by running this file directly.
"""

import time
from functools import lru_cache
from math import comb

import numpy as np
import pytest

from prefopt import (
    GroundTruth,
    PolicyTable,
    ScenarioSpec,
    TrainConfig,
    check_monotone_equivalence,
    check_telescoping,
    correlations,
    evaluate,
    generate,
    make_assumption_satisfying_policies,
    shifted_loss,
    sr_dpo_loss,
    sr_dpo_naive_degeneracy,
    sr_ipo_loss,
    train,
)
from prefopt.cli import main as cli_main
from prefopt.verify import FD_LOSSES, run_fixed_point

from conftest import central_difference, random_batch, random_pair, relative_error
from test_metrics import FIXED, bf_kendall_b, bf_pearson, bf_spearman

RESULTS = {}

pytestmark = pytest.mark.acceptance


def record(num, title, ok, detail):
    RESULTS[num] = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {title} ({detail})"
    print(RESULTS[num])
    assert ok, RESULTS[num]


def test_01_telescoping():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        pi, ref = random_pair(rng, scale=2.0)
        x = int(rng.integers(3))
        yp, yn, ys = (int(v) for v in rng.integers(5, size=3))
        worst = max(worst, check_telescoping(pi, ref, x, yp, yn, ys, 0.1))
    dt = time.perf_counter() - t0
    record(1, "telescoping identity", worst <= 1e-10 and dt < 5, f"max residual {worst:.2e}, {dt:.2f}s")


def test_02_monotone_equivalence():
    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    rewards = np.array([rng.permutation(8) + rng.uniform(0, 0.5, 8) for _ in range(20)])
    gt = GroundTruth(rewards)
    pi, ref = make_assumption_satisfying_policies(gt, 0.1, prompt_gain=1.0)
    reports = [check_monotone_equivalence(gt, pi, ref, x) for x in range(20)]
    dt = time.perf_counter() - t0
    violations = sum(r.violations for r in reports)
    exhaustive = all(r.checked_pairs == comb(8, 2) and r.checked_pair_pairs == comb(8, 4) for r in reports)
    record(2, "monotone equivalence", violations == 0 and exhaustive and dt < 10,
           f"{violations} violations over 20 queries, {dt:.2f}s")


def test_03_naive_degeneracy():
    rng = np.random.default_rng(103)
    worst_v = worst_g = 0.0
    for _ in range(100):
        pi, ref = random_pair(rng)
        batch = random_batch(rng, 3, 5, 8)
        for lam in (0.1, 0.3, 0.5):
            a, b = sr_dpo_naive_degeneracy(pi, ref, batch, 0.1, lam)
            worst_v = max(worst_v, abs(a.loss - b.loss))
            worst_g = max(worst_g, float(np.max(np.abs(a.gradient - b.gradient))))
    record(3, "naive refinement degeneracy", worst_v <= 1e-12 and worst_g <= 1e-10,
           f"value gap {worst_v:.2e}, gradient gap {worst_g:.2e}")


def test_04_stop_gradient():
    rng = np.random.default_rng(104)
    worst = 0.0
    distinct = {"dpo": 0, "ipo": 0}
    for _ in range(100):
        pi, ref = random_pair(rng)
        batch = random_batch(rng, 3, 5, 8)
        for loss, link in ((sr_dpo_loss, "dpo"), (sr_ipo_loss, "ipo")):
            det = loss(pi, ref, batch, 0.1, 0.5, detach_delta=True)
            inj = shifted_loss(pi, ref, batch, 0.1, 0.5 * det.per_tuple_delta, link=link)
            worst = max(worst, float(np.max(np.abs(det.gradient - inj.gradient))))
            live = loss(pi, ref, batch, 0.1, 0.5, detach_delta=False)
            distinct[link] += relative_error(live.gradient, det.gradient) > 1e-3
    ok = worst <= 1e-12 and min(distinct.values()) >= 95
    record(4, "stop-gradient contract", ok,
           f"injection gap {worst:.2e}, undetached differs {distinct['dpo']}/100 dpo, {distinct['ipo']}/100 ipo")


def test_05_gradient_finite_differences():
    rng = np.random.default_rng(105)
    t0 = time.perf_counter()
    worst = {}
    for name, f in FD_LOSSES.items():
        w = 0.0
        for _ in range(100):
            pi, ref = random_pair(rng)
            batch = random_batch(rng, 3, 5, 6)
            g = f(pi, ref, batch).gradient
            fd = central_difference(lambda: f(pi, ref, batch).loss, pi.logits, h=1e-5)
            w = max(w, relative_error(fd, g))
        worst[name] = w
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-5 and dt < 30
    record(5, "gradients vs finite differences", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {dt:.1f}s")


def test_06_sr_ipo_fixed_point():
    t0 = time.perf_counter()
    residual, gap = run_fixed_point(seed=106)
    dt = time.perf_counter() - t0
    record(6, "Sr-IPO fixed point", residual < 1e-4 and gap < 1e-3 and dt < 10,
           f"residual {residual:.1e}, optimality gap {gap:.1e}, {dt:.2f}s")


def _reports(method, ds, ref, init, seed):
    out = []
    train(TrainConfig(method=method, steps=300, seed=seed), ds, ref,
          [lambda s, r: out.append(r.to_dict())], eval_interval=25, init=init)
    return out


def test_07_lambda_zero_reduction():
    worst = 0.0
    for seed in range(3):
        gt, ds = generate(ScenarioSpec(num_queries=5, seed=seed))
        init, ref = make_assumption_satisfying_policies(gt, 0.1, base_scale=0.0)
        for base in ("dpo", "ipo"):
            a = _reports(base, ds, ref, init, seed)
            b = _reports("sr-" + base, ds, ref, init, seed)
            assert len(a) == len(b)
            for ra, rb in zip(a, b):
                for k, v in ra.items():
                    if v is not None:
                        worst = max(worst, abs(v - rb[k]))
    record(7, "lambda = 0 reduction", worst <= 1e-12, f"max metric delta {worst:.1e} over 3 seeds x 2 methods")


def test_08_separable_convergence():
    first_hit, finals = [], []
    for seed in range(5):
        _, ds = generate(ScenarioSpec(num_queries=10, seed=seed))
        hits = []
        train(TrainConfig(method="dpo", steps=2000, seed=seed), ds, PolicyTable.uniform(10, 8),
              [lambda s, r: hits.append((s.step, r.accuracy))], eval_interval=10)
        first_hit.append(next((step for step, acc in hits if acc == 1.0), None))
        finals.append(hits[-1][1])
    ok = all(h is not None and h <= 2000 for h in first_hit)
    record(8, "separable-data convergence", ok, f"first step at accuracy 1.0: {first_hit}; final {finals}")


SCENARIO_9 = dict(num_queries=10, num_responses=8, tuples_per_query=20, reward_distribution="two_cluster(0.1,3.0,0.5)")
STEPS_9 = 3000


@lru_cache(maxsize=None)
def _paired_run(base: str, seed: int):
    gt, ds = generate(ScenarioSpec(seed=seed, **SCENARIO_9))
    init, ref = make_assumption_satisfying_policies(gt, 0.1, 1.0, base_scale=0.0)
    out = []
    for method, lam in ((base, 0.0), ("sr-" + base, 0.5)):
        st = train(TrainConfig(method=method, lam=lam, steps=STEPS_9, seed=seed), ds, ref, init=init)
        out.append(evaluate(st.policy, ref, ds))
    return tuple(out)


def test_09_correlation_ordering():
    t0 = time.perf_counter()
    wins, pairs = {}, {}
    for base in ("dpo", "ipo"):
        runs = [_paired_run(base, s) for s in range(5)]
        wins[base] = sum(sr.spearman >= ctl.spearman for ctl, sr in runs)
        pairs[base] = [f"{ctl.spearman:.2f}->{sr.spearman:.2f}" for ctl, sr in runs]
    dt = time.perf_counter() - t0
    ok = min(wins.values()) >= 4 and dt < 300
    record(9, "Spearman ordering vs lambda = 0", ok,
           f"Sr-DPO {wins['dpo']}/5 {pairs['dpo']}, Sr-IPO {wins['ipo']}/5 {pairs['ipo']}, {dt:.0f}s")


def test_10_augmented_accuracy_agreement():
    worst = 0.0
    for base in ("dpo", "ipo"):
        for s in range(5):
            for rep in _paired_run(base, s):
                worst = max(worst, abs(rep.accuracy - rep.aug_accuracy))
    record(10, "accuracy vs augmented accuracy", worst <= 0.05, f"max |acc - aug_acc| {worst:.3f} over 20 runs")


def test_11_correlation_oracle():
    worst = 0.0
    ties = sum(len(set(a)) < len(a) or len(set(b)) < len(b) for a, b in FIXED)
    for a, b in FIXED:
        c = correlations(a, b)
        worst = max(worst, abs(c.pearson - bf_pearson(a, b)), abs(c.spearman - bf_spearman(a, b)),
                    abs(c.kendall_tau - bf_kendall_b(a, b)))
    record(11, "correlation oracle", worst <= 1e-12 and len(FIXED) == 20 and ties > 0,
           f"max gap {worst:.1e} on {len(FIXED)} vectors, {ties} with ties")


def test_12_verify_suite(capsys):
    t0 = time.perf_counter()
    code = cli_main(["verify"])
    dt = time.perf_counter() - t0
    table = capsys.readouterr().out
    record(12, "verify suite", code == 0 and dt < 120, f"exit {code}, {dt:.1f}s, {len(table.splitlines())} checks")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
