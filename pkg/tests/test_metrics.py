from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypafx import metrics
from hypafx.afx import ChainVocabulary
from hypafx.errors import UsageError

VOCAB = ChainVocabulary()


def oracle_f1(pairs, K):
    """Exact rational F1 straight from (truth, pred) pairs, no confusion matrix."""
    per = []
    for k in range(K):
        tp = sum(1 for t, p in pairs if t == k and p == k)
        fp = sum(1 for t, p in pairs if t != k and p == k)
        fn = sum(1 for t, p in pairs if t == k and p != k)
        per.append(Fraction(2 * tp, 2 * tp + fp + fn) if tp + fp + fn else Fraction(0))
    TP = sum(1 for t, p in pairs if t == p)
    n = len(pairs)
    micro = Fraction(2 * TP, 2 * TP + 2 * (n - TP)) if n else Fraction(0)
    return sum(per) / K, micro, per


def test_hand_example():
    rep = metrics.f1_scores(metrics.ConfusionMatrix(np.array([[2, 1], [0, 1]]), ["a", "b"]))
    assert rep.per_class == pytest.approx([4 / 5, 2 / 3], abs=1e-15)
    assert rep.macro == pytest.approx(11 / 15, abs=1e-15)
    assert rep.micro == 3 / 4


def test_confusion_examples():
    cm = metrics.confusion([0, 1, 2], [0, 1, 2], 4)
    np.testing.assert_array_equal(cm.counts, np.diag([1, 1, 1, 0]))
    cm = metrics.confusion([5], [2], 6)
    assert cm.counts[2, 5] == 1 and cm.total == 1
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 16, 200), rng.integers(0, 16, 200)
    np.testing.assert_array_equal(metrics.confusion(p, t, 16).counts.sum(axis=1), np.bincount(t, minlength=16))
    with pytest.raises(UsageError):
        metrics.confusion([0, 1], [0], 3)
    with pytest.raises(UsageError):
        metrics.confusion([3], [0], 3)


def test_perfect_predictions():
    rep = metrics.f1_scores(metrics.confusion(np.arange(16), np.arange(16), 16))
    assert rep.macro == rep.micro == 1.0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), K=st.integers(2, 16), n=st.integers(1, 300))
def test_f1_matches_exact_oracle(seed, K, n):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, K, n)
    p = np.where(rng.random(n) < 0.4, t, rng.integers(0, K, n))
    rep = metrics.f1_scores(metrics.confusion(p, t, K))
    macro, micro, per = oracle_f1(list(zip(t.tolist(), p.tolist())), K)
    assert rep.per_class == [float(v) for v in per]
    assert rep.macro == pytest.approx(float(macro), abs=1e-15)
    assert rep.micro == float(micro) == np.mean(t == p)
    assert all(0 <= v <= 1 for v in rep.per_class)


def test_absent_classes_count_as_zero_in_macro():
    rep = metrics.f1_scores(metrics.confusion([0, 0], [0, 0], 4))
    assert rep.per_class == [1.0, 0.0, 0.0, 0.0]
    assert rep.macro == 0.25


def test_label_reductions():
    ch = ("chorus", "delay", "distortion")
    assert metrics.first_n_labels(ch, 1) == ("chorus",)
    assert metrics.latest_n_labels(ch, 1) == ("distortion",)
    assert metrics.first_n_labels(("delay",), 2) == ("delay", "")
    assert metrics.latest_n_labels(("delay",), 2) == ("", "delay")
    assert metrics.latest_n_labels((), 2) == ("", "")
    assert metrics.tuple_label(("delay",), 3) == "('delay', '', '')"
    with pytest.raises(UsageError):
        metrics.first_n_labels(ch, 0)
    with pytest.raises(UsageError):
        metrics.first_n_f1([0], [0], VOCAB, 4)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 200))
def test_n_equal_to_length_is_the_identity_reduction(seed, n):
    rng = np.random.default_rng(seed)
    t, p = rng.integers(0, 16, n), rng.integers(0, 16, n)
    full, _ = metrics.full_f1(p, t, VOCAB)
    for rep in (metrics.first_n_f1(p, t, VOCAB, 3), metrics.latest_n_f1(p, t, VOCAB, 3)):
        assert rep.macro == full.macro and rep.micro == full.micro


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 200))
def test_presence_is_at_least_full_micro(seed, n):
    rng = np.random.default_rng(seed)
    t, p = rng.integers(0, 16, n), rng.integers(0, 16, n)
    full, _ = metrics.full_f1(p, t, VOCAB)
    assert metrics.presence_f1(p, t, VOCAB).micro >= full.micro


def test_presence_examples():
    dc, cd = VOCAB.index(("delay", "chorus")), VOCAB.index(("chorus", "delay"))
    d = VOCAB.index(("delay",))
    assert metrics.presence_f1([dc], [cd], VOCAB).micro == 1.0
    assert metrics.presence_f1([d], [dc], VOCAB).micro == 0.0


def test_order_scrambled_predictions():
    truths, preds = [], []
    for i, ch in enumerate(VOCAB.chains):
        truths.append(i)
        preds.append(VOCAB.index(tuple(reversed(ch))))
    pres = metrics.presence_f1(preds, truths, VOCAB)
    full, _ = metrics.full_f1(preds, truths, VOCAB)
    assert pres.macro == pres.micro == 1.0
    assert full.macro < 1.0 and full.micro < 1.0


def test_reduced_universe_is_fixed_a_priori():
    # first-1 over three kinds always has four classes (three kinds plus empty)
    rep = metrics.first_n_f1([1], [1], VOCAB, 1)
    assert len(rep.per_class) == 4
    assert metrics.presence_f1([1], [1], VOCAB).labels[0] == "()"
    assert len(metrics.presence_f1([1], [1], VOCAB).per_class) == 8


def test_aggregate_examples():
    agg = metrics.aggregate([{"f1": 0.74}, {"f1": 0.75}, {"f1": 0.76}])
    assert agg.mean["f1"] == pytest.approx(0.75)
    assert agg.stderr["f1"] == pytest.approx(0.01 / np.sqrt(3), rel=1e-9)
    assert round(agg.stderr["f1"], 5) == 0.00577
    same = metrics.aggregate([{"f1": 0.5}] * 3)
    assert same.stderr["f1"] == 0.0 and not same.single_run
    one = metrics.aggregate([{"f1": 0.5}])
    assert one.stderr["f1"] == 0.0 and one.single_run
    assert one.to_dict()["stderr_undefined_single_run"] is True
    with pytest.raises(UsageError):
        metrics.aggregate([])


def test_confusion_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    labels = [metrics.tuple_label(c, 3) for c in VOCAB.chains]
    cm = metrics.confusion(rng.integers(0, 16, 100), rng.integers(0, 16, 100), 16, labels)
    metrics.write_confusion_csv(cm, tmp_path / "c.csv")
    back = metrics.read_confusion_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.counts, cm.counts)
    assert back.labels == labels
    assert "('chorus', 'delay', 'distortion')" in (tmp_path / "c.csv").read_text()


def test_evaluate_predictions_blocks():
    rng = np.random.default_rng(4)
    t, p = rng.integers(0, 16, 50), rng.integers(0, 16, 50)
    blocks, cm = metrics.evaluate_predictions(p, t, VOCAB, first_n=[1, 2], latest_n=[1, 2])
    assert set(blocks) == {"full", "presence", "first-1", "first-2", "latest-1", "latest-2"}
    assert cm.total == 50
    scalars = metrics.summary_scalars(blocks)
    assert scalars["full/micro_f1"] == np.mean(t == p)
