import json

import numpy as np
import pytest

from prefopt import (
    Dataset,
    DatasetParseError,
    DatasetValidationError,
    EmptyDatasetError,
    GroundTruth,
    PreferenceTuple,
    ScenarioSpec,
    TwoCluster,
    Uniform,
    generate,
    load_jsonl,
    make_assumption_satisfying_policies,
)
from prefopt.datagen import parse_distribution
from prefopt.metrics import tuple_margins


def test_deterministic_labels_follow_rewards():
    gt, ds = generate(ScenarioSpec(num_queries=6, num_responses=7, tuples_per_query=20, seed=3))
    assert len(ds) == 120
    for t in ds:
        assert t.y_pos != t.y_neg
        assert t.true_gap > 0
        assert t.true_gap == gt.rewards[t.query, t.y_pos] - gt.rewards[t.query, t.y_neg]
        assert gt.rewards[t.query, t.y_pos] > gt.rewards[t.query, t.y_neg]
    for x in range(6):
        assert not gt.has_ties(x)


def test_two_cluster_mix_fraction():
    dist = TwoCluster(0.1, 3.0, 0.5)
    _, ds = generate(ScenarioSpec(num_queries=50, num_responses=8, tuples_per_query=20,
                                  reward_distribution=dist, seed=11))
    assert len(ds) == 1000
    large = np.mean([dist.is_large(t.true_gap) for t in ds])
    assert abs(large - 0.5) <= 0.05
    gaps = ds.true_gaps()
    assert np.all((gaps < 0.1) | ((gaps > 2.9) & (gaps < 3.1)))


def test_bt_mode_with_equal_rewards_flips_half():
    spec = ScenarioSpec(num_queries=10, num_responses=4, tuples_per_query=100,
                        reward_distribution=Uniform(1.0, 1.0), label_noise=0.1, seed=5)
    _, ds = generate(spec)
    # with equal rewards the draw is a fair coin; count how often y_pos is the lower index
    flips = np.mean([t.y_pos < t.y_neg for t in ds])
    assert abs(flips - 0.5) <= 0.03
    assert all(t.true_gap == 0 for t in ds)


def test_bt_mode_labels_mostly_follow_large_gaps():
    spec = ScenarioSpec(num_queries=20, num_responses=6, tuples_per_query=50,
                        reward_distribution="uniform(0, 10)", label_noise=0.01, seed=2)
    _, ds = generate(spec)
    agree = np.mean([t.true_gap > 0 for t in ds])
    assert 0.8 < agree < 1.0


def test_invalid_specs():
    with pytest.raises(ValueError):
        generate(ScenarioSpec(num_responses=1))
    with pytest.raises(ValueError):
        generate(ScenarioSpec(label_noise=0.5))
    with pytest.raises(ValueError):
        generate(ScenarioSpec(reward_distribution=Uniform(2.0, 2.0)))
    with pytest.raises(ValueError):
        TwoCluster(3.0, 0.1, 0.5)
    with pytest.raises(ValueError):
        TwoCluster(0.1, 3.0, 1.0)


@pytest.mark.parametrize("text, expected", [
    ("uniform(0, 2)", Uniform(0.0, 2.0)),
    ("two_cluster(0.1, 3.0, 0.5)", TwoCluster(0.1, 3.0, 0.5)),
    ({"kind": "two_cluster", "gap_small": 0.2, "gap_large": 1.0, "mix": 0.3}, TwoCluster(0.2, 1.0, 0.3)),
])
def test_parse_distribution(text, expected):
    assert parse_distribution(text) == expected


def test_seeded_output_is_byte_identical(tmp_path):
    spec = ScenarioSpec(num_queries=4, seed=9)
    generate(spec)[1].write_jsonl(tmp_path / "a.jsonl")
    generate(ScenarioSpec(num_queries=4, seed=9))[1].write_jsonl(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_round_trip(tmp_path):
    _, ds = generate(ScenarioSpec(num_queries=5, seed=1))
    ds.write_jsonl(tmp_path / "d.jsonl")
    back = load_jsonl(tmp_path / "d.jsonl")
    assert back == ds
    header = json.loads((tmp_path / "d.jsonl").read_text().splitlines()[0])
    assert header == {"num_queries": 5, "num_responses": 8}


def _write(tmp_path, lines):
    p = tmp_path / "d.jsonl"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    with pytest.raises(EmptyDatasetError):
        load_jsonl(p)
    with pytest.raises(EmptyDatasetError):
        load_jsonl(_write(tmp_path, ['{"num_queries": 1, "num_responses": 2}']))


def test_equal_responses_name_the_line(tmp_path):
    p = _write(tmp_path, ['{"num_queries": 2, "num_responses": 3}',
                          '{"query": 0, "y_pos": 1, "y_neg": 0}',
                          '{"query": 1, "y_pos": 2, "y_neg": 2}'])
    with pytest.raises(DatasetValidationError, match="line 3") as e:
        load_jsonl(p)
    assert e.value.line_no == 3


def test_malformed_and_out_of_range(tmp_path):
    p = _write(tmp_path, ['{"num_queries": 2, "num_responses": 3}', '{"query": 0, "y_pos": 1,'])
    with pytest.raises(DatasetParseError, match="line 2"):
        load_jsonl(p)
    p = _write(tmp_path, ['{"num_queries": 2, "num_responses": 3}', '{"query": 0, "y_pos": 3, "y_neg": 0}'])
    with pytest.raises(DatasetValidationError, match="y_pos"):
        load_jsonl(p)
    p = _write(tmp_path, ['{"num_queries": 2, "num_responses": 3}', '{"query": 2, "y_pos": 1, "y_neg": 0}'])
    with pytest.raises(DatasetValidationError, match="query"):
        load_jsonl(p)


def test_optional_fields_load(tmp_path):
    p = _write(tmp_path, ['{"num_queries": 1, "num_responses": 3}',
                          '{"query": 0, "y_pos": 1, "y_neg": 0, "true_gap": 0.5, "judge_scores": [4, 2]}',
                          '{"query": 0, "y_pos": 2, "y_neg": 0}'])
    ds = load_jsonl(p)
    assert ds[0] == PreferenceTuple(0, 1, 0, 0.5, (4.0, 2.0))
    assert ds[1].true_gap is None and ds.true_gaps() is None


def test_assumption_policies_order_augmented_contexts_like_rewards():
    gt, ds = generate(ScenarioSpec(num_queries=5, seed=4))
    pi, ref = make_assumption_satisfying_policies(gt, beta=0.1, prompt_gain=2.0)
    assert not ref.trainable and np.all(ref.logits == 0)
    aug_lr = pi.log_probs()[pi.aug_map] - ref.log_probs()[pi.aug_map]
    centered = aug_lr - aug_lr.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(centered, (2.0 / 0.1) * (gt.rewards - gt.rewards.mean(axis=1, keepdims=True)),
                               atol=1e-10)
    assert np.all(tuple_margins(pi, ref, ds, augmented=True) > 0)
    assert np.all(tuple_margins(pi, ref, ds) > 0)


def test_zero_base_scale_leaves_base_rows_at_reference():
    gt = GroundTruth(np.array([[0.0, 1.0, 2.0]]))
    pi, ref = make_assumption_satisfying_policies(gt, 0.1, base_scale=0.0)
    assert np.all(pi.logits[0] == ref.logits[0])
    assert np.any(pi.logits[1] != ref.logits[1])


def test_subset_and_arrays():
    ds = Dataset(2, 3, [PreferenceTuple(0, 1, 2), PreferenceTuple(1, 0, 2), PreferenceTuple(1, 2, 1)])
    q, yp, yn = ds.subset([2, 0]).arrays()
    assert q.tolist() == [1, 0] and yp.tolist() == [2, 1] and yn.tolist() == [1, 2]
