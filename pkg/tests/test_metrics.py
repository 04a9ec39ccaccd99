import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_oracles import brute_metrics, enumerate_ap
from mktcn.errors import ParameterError
from mktcn.metrics import (METRIC_NAMES, ConfusionMatrix, average_precision, confusion, evaluate, macro_metrics,
                           pr_curve, radar_area, report_json, write_pr_csv)
from mktcn.numeric import make_rng


def test_confusion_examples():
    np.testing.assert_array_equal(confusion([0, 1, 2], [0, 1, 2]).counts, np.eye(3))
    cm = confusion([2], [0], 3)
    assert cm.counts[2, 0] == 1 and cm.total == 1
    with pytest.raises(ParameterError):
        confusion([0, 1], [0])


def test_confusion_loop_oracle():
    rng = make_rng(0)
    y, p = rng.integers(0, 4, 500), rng.integers(0, 4, 500)
    expect = np.zeros((4, 4), dtype=int)
    for a, b in zip(y, p):
        expect[a][b] += 1
    np.testing.assert_array_equal(confusion(y, p, 4).counts, expect)


def test_diagonal_is_perfect():
    r = macro_metrics(ConfusionMatrix(np.diag([5, 3, 9])))
    for name in METRIC_NAMES:
        assert getattr(r, name) == pytest.approx(1.0, abs=1e-15), name


def test_uniform_is_chance():
    r = macro_metrics(ConfusionMatrix(np.full((3, 3), 4)))
    assert r.kappa == pytest.approx(0.0, abs=1e-15)
    assert r.mcc == pytest.approx(0.0, abs=1e-15)
    assert r.accuracy == pytest.approx(1 / 3)


def test_binary_hand_case():
    r = macro_metrics(ConfusionMatrix(np.array([[50, 10], [5, 35]])))
    assert r.accuracy == pytest.approx(0.85, abs=1e-15)
    np.testing.assert_allclose(r.per_class["precision"], [50 / 55, 35 / 45])
    np.testing.assert_allclose(r.per_class["recall"], [50 / 60, 35 / 40])
    np.testing.assert_allclose(r.per_class["specificity"], [35 / 40, 50 / 60])
    np.testing.assert_allclose(r.per_class["npv"], [35 / 45, 50 / 55])
    classic = (50 * 35 - 10 * 5) / math.sqrt(55 * 45 * 60 * 40)
    assert r.mcc == pytest.approx(classic, abs=1e-12)


def test_empty_matrix():
    with pytest.raises(ParameterError):
        macro_metrics(ConfusionMatrix(np.zeros((3, 3), dtype=int)))


def test_degenerate_flag():
    r = macro_metrics(ConfusionMatrix(np.array([[5, 0, 0], [0, 4, 0], [0, 0, 0]])))
    assert "precision[2]" in r.degenerate and "recall[2]" in r.degenerate
    assert r.per_class["precision"][2] == 0.0


@pytest.mark.parametrize("c", [2, 3, 5])
def test_against_brute_force(c):
    rng = make_rng(c)
    for _ in range(20):
        counts = rng.integers(0, 30, size=(c, c))
        counts[0, 0] += 1
        r = macro_metrics(ConfusionMatrix(counts))
        expect, per = brute_metrics(counts)
        for name in METRIC_NAMES:
            assert getattr(r, name) == pytest.approx(expect[name], abs=1e-10), name
        for name, vals in per.items():
            np.testing.assert_allclose(r.per_class[name], vals, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 4).flatmap(lambda c: st.lists(st.integers(0, 20), min_size=c * c, max_size=c * c)),
       st.integers(2, 5))
def test_metric_properties(flat, factor):
    c = int(round(math.sqrt(len(flat))))
    counts = np.array(flat).reshape(c, c)
    if counts.sum() == 0:
        return
    r = macro_metrics(ConfusionMatrix(counts))
    pc = r.per_class
    for name in ("precision", "recall", "specificity", "npv"):
        assert np.all((pc[name] >= 0) & (pc[name] <= 1))
    assert np.all(pc["f1"] <= np.maximum(pc["precision"], pc["recall"]) + 1e-15)
    assert np.all(pc["g_measure"] <= np.maximum(pc["recall"], pc["specificity"]) + 1e-15)
    assert -1 - 1e-12 <= r.kappa <= 1 + 1e-12 and -1 - 1e-12 <= r.mcc <= 1 + 1e-12
    scaled = macro_metrics(ConfusionMatrix(counts * factor))
    for name in METRIC_NAMES:
        assert getattr(scaled, name) == pytest.approx(getattr(r, name), abs=1e-12)


def test_permutation_invariance():
    rng = make_rng(9)
    y, p = rng.integers(0, 3, 300), rng.integers(0, 3, 300)
    perm = rng.permutation(300)
    a = macro_metrics(confusion(y, p, 3)).scalars()
    b = macro_metrics(confusion(y[perm], p[perm], 3)).scalars()
    assert a == b


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(5, 40))
def test_binary_mcc_matches_classic(seed, n):
    rng = make_rng(seed)
    counts = rng.integers(1, n, size=(2, 2))
    (tn, fp), (fn, tp) = counts
    classic = (tp * tn - fp * fn) / math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    assert macro_metrics(ConfusionMatrix(counts)).mcc == pytest.approx(classic, abs=1e-12)


def test_ap_examples():
    assert average_precision([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1], 1) == 1.0
    ap = average_precision([1, 0, 1, 0], [0.9, 0.8, 0.7, 0.1], 1)
    assert ap == pytest.approx(enumerate_ap([1, 0, 1, 0], [0.9, 0.8, 0.7, 0.1], 1), abs=1e-15)
    assert ap == pytest.approx(0.5 + 0.5 * 2 / 3, abs=1e-15)
    with pytest.raises(ParameterError):
        average_precision([0, 0], [0.1, 0.2], 1)


def test_ap_random_ranking_matches_prevalence():
    rng = make_rng(11)
    y = (rng.random(10_000) < 0.3).astype(int)
    ap = average_precision(y, rng.random(10_000), 1)
    assert abs(ap - y.mean()) < 0.05


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 6)), min_size=1, max_size=20))
def test_ap_matches_enumeration_with_ties(pairs):
    labels = [a for a, _ in pairs]
    scores = [b / 6 for _, b in pairs]
    for k in set(labels):
        assert average_precision(labels, scores, k) == pytest.approx(enumerate_ap(labels, scores, k), abs=1e-12)


def test_pr_points_ordering():
    rng = make_rng(3)
    y = rng.integers(0, 2, 50)
    pts, _ = pr_curve(y, rng.random(50), 1)
    assert np.all(np.diff(pts[:, 0]) <= 0)
    assert tuple(pts[-1]) == (0.0, 1.0) and pts[0, 0] == 1.0


def test_evaluate_and_report_json(tmp_path):
    rng = make_rng(4)
    y = rng.integers(0, 3, 200)
    probs = rng.dirichlet(np.ones(3), 200)
    r = evaluate(y, probs)
    assert set(r.ap) == {0, 1, 2}
    path = tmp_path / "m.json"
    report_json(r, path)
    text = path.read_text()
    d = json.loads(text)
    assert list(d) == sorted(d)
    assert list(d["metrics"]) == sorted(METRIC_NAMES)
    assert set(d["metrics"]) == set(METRIC_NAMES) and len(d["metrics"]) == 10
    for name in METRIC_NAMES:
        assert d["metrics"][name] == getattr(r, name)
    assert d["confusion"] == r.confusion.tolist()
    assert "degenerate" in d
    write_pr_csv(r.pr_curves[0], tmp_path / "pr.csv")
    rows = (tmp_path / "pr.csv").read_text().splitlines()
    assert rows[0] == "recall,precision" and len(rows) == len(r.pr_curves[0]) + 1


def test_evaluate_aunp_modes():
    rng = make_rng(5)
    y = rng.integers(0, 3, 300)
    probs = np.eye(3)[y] * 0.6 + rng.dirichlet(np.ones(3), 300) * 0.4
    lit = evaluate(y, probs, "npv-recall")
    assert lit.aunp_mode == "npv-recall" and 0 < lit.aunp <= 1
    perfect = evaluate(y, np.eye(3)[y], "npv-recall")
    assert perfect.aunp == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        evaluate(y, probs, "bogus")


def test_radar_area():
    assert radar_area(np.ones(10)) == pytest.approx(5 * math.sin(2 * math.pi / 10), abs=1e-12)
    assert radar_area(np.ones(10)) == pytest.approx(2.939, abs=1e-3)
    assert radar_area(np.zeros(10)) == 0.0
    assert radar_area([2.0] * 10) == radar_area(np.ones(10))
