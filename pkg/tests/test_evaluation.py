import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faircl import _pykernels
from faircl.evaluation import (demographic_probe, edit_distance, greedy_ctc_decode, project_2d,
                               report_from_pairs, top_eigenpairs, wer, wer_gap)
from oracles import min_edit_cost_exhaustive

seqs = st.lists(st.integers(0, 2), max_size=6)


def test_edit_distance_examples():
    assert edit_distance([1, 2, 3], [1, 2, 3]) == (0, 0, 0)
    assert edit_distance([1, 2, 3], [1, 2]) == (0, 1, 0)
    assert edit_distance([1, 2], [1, 2, 3]) == (0, 0, 1)
    assert edit_distance([1, 2], [1, 3]) == (1, 0, 0)
    assert edit_distance([], []) == (0, 0, 0)
    assert edit_distance([], [4, 4]) == (0, 0, 2)


def test_edit_distance_tie_prefers_substitution():
    # ref "a b", hyp "b c": two substitutions cost 2, as do deletion + insertion
    assert edit_distance([1, 2], [2, 3]) == (2, 0, 0)


@settings(max_examples=300, deadline=None)
@given(seqs, seqs)
def test_edit_cost_matches_exhaustive(ref, hyp):
    assert sum(edit_distance(ref, hyp)) == min_edit_cost_exhaustive(ref, hyp)


@settings(max_examples=200, deadline=None)
@given(seqs, seqs)
def test_edit_distance_symmetry(a, b):
    s1, d1, i1 = edit_distance(a, b)
    s2, d2, i2 = edit_distance(b, a)
    assert s1 + d1 + i1 == s2 + d2 + i2
    # deletions and insertions trade places; their difference is the length difference
    assert d1 - i1 == len(a) - len(b) == i2 - d2


@settings(max_examples=200, deadline=None)
@given(seqs, seqs)
def test_edit_backends_agree(a, b):
    assert edit_distance(a, b) == _pykernels.edit_ops(a, b)


def test_wer_examples():
    assert wer([([1, 2, 3], [1, 2])]) == pytest.approx(1 / 3)
    assert wer([([1, 2], [1, 2]), ([3], [3])]) == 0.0
    assert wer([([1, 2], [1, 9]), ([1, 2, 3, 4], [1, 2, 3, 4])]) == pytest.approx(1 / 6)
    with pytest.raises(ValueError):
        wer([([], [1])])


def test_wer_gap_paper_values():
    assert wer_gap({"female": 5.68, "male": 8.47}) == pytest.approx(32.9, abs=0.05)
    assert wer_gap({"a": 5.54, "b": 6.93, "c": 8.08, "d": 5.59}) == pytest.approx(31.4, abs=0.05)


def test_wer_gap_edge_cases():
    assert wer_gap({"a": 0.3, "b": 0.3}) == 0.0
    assert wer_gap({"a": 0.0, "b": 0.0}) == 0.0
    with pytest.raises(ValueError):
        wer_gap({"a": 0.1})


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.001, 10), min_size=2, max_size=6), st.floats(0.01, 100))
def test_wer_gap_range_and_scale_invariance(ws, c):
    d = {str(i): w for i, w in enumerate(ws)}
    g = wer_gap(d)
    assert 0 <= g < 100
    assert wer_gap({k: c * v for k, v in d.items()}) == pytest.approx(g, abs=1e-9)


def _onehot_path(path, V=4):
    lp = np.full((len(path), V), np.log(1e-6))
    lp[np.arange(len(path)), path] = 0.0
    return lp


def test_greedy_decode_examples():
    assert greedy_ctc_decode(_onehot_path([0, 1, 1, 0, 2])) == [1, 2]
    assert greedy_ctc_decode(_onehot_path([0, 0, 0])) == []
    assert greedy_ctc_decode(_onehot_path([1, 0, 1])) == [1, 1]
    assert greedy_ctc_decode(_onehot_path([3] * 5)) == [3]


# -- report ---------------------------------------------------------------------------
def test_report_perfect_model():
    pairs = [([1, 2], [1, 2]), ([3], [3]), ([1], [1])]
    demo = [{"g": "a"}, {"g": "b"}, {"g": "a"}]
    rep = report_from_pairs(pairs, demo, ["g"])
    assert rep.total_wer == 0 and rep.gaps["g"] == 0
    assert rep.cohorts["g"]["a"] == (2, 0.0)


def test_report_single_cohort_has_no_gap(caplog):
    rep = report_from_pairs([([1, 2], [1])], [{"g": "a"}], ["g"])
    assert "g" not in rep.gaps and rep.cohorts["g"]["a"][1] == 0.5


def test_report_total_equals_pooled_wer(rng):
    pairs, demo = [], []
    for i in range(30):
        ref = list(rng.integers(1, 4, size=rng.integers(1, 6)))
        hyp = list(rng.integers(1, 4, size=rng.integers(0, 6)))
        pairs.append((ref, hyp))
        demo.append({"g": "ab"[i % 2], "h": "xyz"[i % 3]})
    rep = report_from_pairs(pairs, demo, ["g", "h"])
    assert rep.total_wer == wer(pairs)
    for attr in ("g", "h"):
        ws = {c: w for c, (_, w) in rep.cohorts[attr].items()}
        assert rep.gaps[attr] == pytest.approx(wer_gap(ws))
    text, csv = rep.to_text(), rep.to_csv()
    assert "WER gap" in text and csv.splitlines()[0] == "attribute,cohort,count,wer,gap"
    assert len(csv.splitlines()) == 1 + 2 + 3 + 1


# -- probe -----------------------------------------------------------------------------------
def test_probe_random_labels_at_chance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 8))
    labels = rng.choice(["a", "b"], size=400)
    r = demographic_probe(X, labels, "g", seed=0)
    sd = np.sqrt(r.chance * (1 - r.chance) / 80)
    assert abs(r.test_accuracy - r.chance) < 3 * sd + 1 / 80


def test_probe_shuffled_labels_binomial():
    """Label-shuffled embeddings: test accuracy is consistent with chance (p > 0.01)."""
    from math import comb
    rng = np.random.default_rng(3)
    y = np.repeat(["a", "b", "c"], 100)
    X = np.eye(3)[np.searchsorted(["a", "b", "c"], y)] + 0.1 * rng.normal(size=(300, 3))
    r = demographic_probe(X, rng.permutation(y), "g", seed=1)
    n, k, p = 60, int(round(r.test_accuracy * 60)), 1 / 3
    tail = sum(comb(n, j) * p ** j * (1 - p) ** (n - j) for j in range(k, n + 1))
    assert tail > 0.01


def test_probe_one_hot_perfect():
    y = np.repeat(np.arange(4), 25)
    r = demographic_probe(np.eye(4)[y], y.astype(str), "g", seed=0)
    assert r.test_accuracy == 1.0 and r.n_classes == 4


def test_probe_degenerate():
    with pytest.raises(ValueError):
        demographic_probe(np.zeros((5, 2)), ["a"] * 4 + ["b"])


# -- 2-D projection ----------------------------------------------------------------------------
def test_planar_points_keep_distances(rng):
    plane = rng.normal(size=(20, 2)) * [3.0, 1.0]
    basis, _ = np.linalg.qr(rng.normal(size=(6, 2)))
    X = plane @ basis.T + rng.normal(size=6)
    coords = project_2d(X)
    d_in = np.linalg.norm(X[:, None] - X[None], axis=-1)
    d_out = np.linalg.norm(coords[:, None] - coords[None], axis=-1)
    np.testing.assert_allclose(d_out, d_in, atol=1e-6)


def test_duplicated_dataset_same_projection(rng):
    X = rng.normal(size=(15, 4)) * [4, 2, 1, 0.5]
    a = project_2d(X)
    b = project_2d(np.vstack([X, X]))[:15]
    for j in range(2):
        assert min(np.abs(a[:, j] - b[:, j]).max(), np.abs(a[:, j] + b[:, j]).max()) < 1e-6


def test_power_iteration_against_characteristic_polynomial(rng):
    for _ in range(5):
        A = rng.normal(size=(10, 3)) * [3, 1.5, 0.5]
        C = np.cov(A.T, bias=True)
        # det(C - x I) = -x^3 + tr x^2 - m2 x + det
        tr = np.trace(C)
        m2 = sum(C[i, i] * C[j, j] - C[i, j] ** 2 for i in range(3) for j in range(i + 1, 3))
        det = (C[0, 0] * (C[1, 1] * C[2, 2] - C[1, 2] ** 2)
               - C[0, 1] * (C[0, 1] * C[2, 2] - C[1, 2] * C[0, 2])
               + C[0, 2] * (C[0, 1] * C[1, 2] - C[1, 1] * C[0, 2]))
        roots = np.sort(np.roots([-1, tr, -m2, det]).real)[::-1]
        vals, _ = top_eigenpairs(C, 2)
        np.testing.assert_allclose(vals, roots[:2], rtol=1e-6)


def test_rank_one_zeroes_second_axis(caplog):
    X = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    coords = project_2d(X)
    assert np.all(coords[:, 1] == 0) and "rank" in caplog.text
