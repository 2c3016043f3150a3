import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prefopt import ConfigurationError, ContextId, PolicyTable, implicit_reward_diff, log_prob

from conftest import random_pair

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def test_uniform_logits_give_log_of_count():
    p = PolicyTable(np.zeros((2, 4)))
    for y in range(4):
        assert log_prob(p, 0, y) == pytest.approx(-math.log(4), abs=1e-15)


def test_constant_shift_does_not_change_log_prob():
    a = PolicyTable(np.zeros((1, 4)))
    b = PolicyTable(np.ones((1, 4)))
    for y in range(4):
        assert abs(log_prob(a, 0, y) - log_prob(b, 0, y)) <= 1e-12


def test_rows_sum_to_one(rng):
    p = PolicyTable(rng.normal(0, 3, (3, 5)))
    for c in range(3):
        # direct summation
        total = sum(math.exp(log_prob(p, c, y)) for y in range(5))
        assert abs(total - 1.0) <= 1e-12


def test_out_of_range_names_dimension():
    p = PolicyTable(np.zeros((2, 3)))
    with pytest.raises(IndexError, match="context"):
        log_prob(p, 2, 0)
    with pytest.raises(IndexError, match="response"):
        log_prob(p, 0, 3)


def test_context_id_routes_through_aug_map():
    logits = np.zeros((4, 3))
    logits[3, 1] = 5.0
    p = PolicyTable(logits, aug_map=[3, 2])
    assert p.row(ContextId(0, augmented=True)) == 3
    assert p.row(ContextId(0)) == 0
    assert log_prob(p, ContextId(0, True), 1) > log_prob(p, ContextId(0), 1)


@pytest.mark.parametrize("aug", [[0, 3], [2, 2], [2, 4]])
def test_bad_aug_map_rejected(aug):
    with pytest.raises(ConfigurationError):
        PolicyTable(np.zeros((4, 3)), aug_map=aug)


def test_frozen_table_is_read_only():
    ref = PolicyTable(np.zeros((2, 3)), trainable=False)
    with pytest.raises(ValueError):
        ref.logits[0, 0] = 1.0


def test_implicit_reward_diff_zero_for_identical_tables(rng):
    pi, _ = random_pair(rng)
    ref = pi.frozen()
    for c in range(pi.num_contexts):
        assert implicit_reward_diff(pi, ref, c, 0, 3, 0.1) == 0.0


def test_implicit_reward_diff_antisymmetric(rng):
    pi, ref = random_pair(rng)
    for c in range(pi.num_contexts):
        fwd = implicit_reward_diff(pi, ref, c, 1, 4, 0.1)
        assert abs(fwd + implicit_reward_diff(pi, ref, c, 4, 1, 0.1)) <= 1e-12


def test_implicit_reward_diff_four_term_recomposition(rng):
    for _ in range(20):
        pi, ref = random_pair(rng)
        c = int(rng.integers(pi.num_contexts))
        yp, yn = rng.choice(pi.num_responses, 2, replace=False)
        expected = 0.1 * (
            log_prob(pi, c, yp) - log_prob(ref, c, yp) - log_prob(pi, c, yn) + log_prob(ref, c, yn)
        )
        assert implicit_reward_diff(pi, ref, c, yp, yn, 0.1) == pytest.approx(expected, abs=1e-13)


def test_implicit_reward_diff_shape_mismatch():
    with pytest.raises(ConfigurationError):
        implicit_reward_diff(PolicyTable(np.zeros((2, 3))), PolicyTable(np.zeros((2, 4))), 0, 0, 1, 0.1)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 5), elements=finite), finite)
def test_row_shift_invariance(logits, shift):
    a = PolicyTable(logits)
    shifted = logits.copy()
    shifted[1] += shift
    b = PolicyTable(shifted)
    np.testing.assert_allclose(a.log_probs(), b.log_probs(), atol=1e-12)
    np.testing.assert_allclose(np.exp(a.log_probs()).sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=finite), arrays(np.float64, (4, 5), elements=finite),
       st.lists(finite, min_size=4, max_size=4))
def test_reward_diff_invariant_to_row_shifts(pl, rl, shifts):
    pi, ref = PolicyTable(pl), PolicyTable(rl)
    s = np.array(shifts)[:, None]
    pi2, ref2 = PolicyTable(pl + s), PolicyTable(rl - s)
    for c in range(4):
        assert implicit_reward_diff(pi, ref, c, 0, 2, 0.1) == pytest.approx(
            implicit_reward_diff(pi2, ref2, c, 0, 2, 0.1), abs=1e-11
        )


def test_json_round_trip_is_exact(rng):
    pi, _ = random_pair(rng)
    back = PolicyTable.from_json(pi.to_json())
    assert np.array_equal(back.logits, pi.logits)
    assert np.array_equal(back.aug_map, pi.aug_map)
    d = pi.to_dict()
    assert set(d) == {"num_contexts", "num_responses", "aug_map", "logits"}
