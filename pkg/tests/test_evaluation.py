import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eer_oracle import brute_force_eer
from eldkit import evaluation as E
from eldkit.baysmm import SmmTrainConfig
from eldkit.corpus import LabelManifest
from eldkit.errors import SingleClass, TooFewExamples


@pytest.mark.parametrize(
    "en,non,expected",
    [
        ([0.9, 0.8], [0.2, 0.1], 0.0),
        ([0.1, 0.2], [0.8, 0.9], 1.0),
        ([0.9, 0.8, 0.7, 0.4], [0.6, 0.3, 0.2, 0.1], 0.25),
    ],
)
def test_eer_fixtures(en, non, expected):
    eer, _ = E.compute_eer(E.ScoredSet.from_scores(en, non))
    assert eer == expected


def test_eer_threshold_lies_in_crossing_gap():
    _, thr = E.compute_eer(E.ScoredSet.from_scores([0.9, 0.8, 0.7, 0.4], [0.6, 0.3, 0.2, 0.1]))
    assert 0.4 < thr <= 0.6


def _random_set(rng, heavy_ties):
    n_en, n_non = rng.integers(1, 40, size=2)
    if heavy_ties:
        levels = rng.integers(1, 5)
        en = rng.integers(0, levels + 1, n_en).astype(float)
        non = rng.integers(0, levels + 1, n_non).astype(float)
    else:
        en = rng.normal(rng.normal(0, 2), 1, n_en)
        non = rng.normal(0, 1, n_non)
    return en.tolist(), non.tolist()


def test_eer_matches_brute_force_sweep():
    rng = np.random.default_rng(0)
    for i in range(200):
        en, non = _random_set(rng, heavy_ties=i % 2 == 0)
        eer, _ = E.compute_eer(E.ScoredSet.from_scores(en, non))
        assert abs(eer - brute_force_eer(en, non)) <= 1 / (2 * min(len(en), len(non)))
        assert 0.0 <= eer <= 1.0


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(-400, 400), min_size=1, max_size=20),
    st.lists(st.integers(-400, 400), min_size=1, max_size=20),
)
def test_eer_invariant_under_increasing_maps(en, non):
    # quarter steps stay distinct under both maps in floating point
    en, non = [v / 4 for v in en], [v / 4 for v in non]
    base, _ = E.compute_eer(E.ScoredSet.from_scores(en, non))
    for f in (lambda x: 3 * x - 7, lambda x: np.exp(x / 50)):
        m = E.compute_eer(E.ScoredSet.from_scores(f(np.array(en)).tolist(), f(np.array(non)).tolist()))[0]
        assert m == pytest.approx(base, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(-5, 5), min_size=1, max_size=20),
    st.lists(st.integers(-5, 5), min_size=1, max_size=20),
)
def test_eer_label_swap_with_negation(en, non):
    a, _ = E.compute_eer(E.ScoredSet.from_scores(en, non))
    b, _ = E.compute_eer(E.ScoredSet.from_scores([-s for s in non], [-s for s in en]))
    assert a == pytest.approx(b, abs=1e-12)


def test_eer_requires_both_classes():
    with pytest.raises(SingleClass):
        E.compute_eer(E.ScoredSet.from_scores([0.1, 0.2], []))


def test_scored_set_rejects_non_finite():
    with pytest.raises(ValueError):
        E.ScoredSet.from_scores([np.nan], [0.0])


def test_det_points_endpoints_and_monotonicity(rng):
    pts = E.det_points(E.ScoredSet.from_scores(rng.normal(1, 1, 30).tolist(), rng.normal(0, 1, 25).tolist()))
    assert pts[0] == (-np.inf, 1.0, 0.0)
    assert pts[-1] == (np.inf, 0.0, 1.0)
    far = [p[1] for p in pts]
    frr = [p[2] for p in pts]
    assert np.all(np.diff(far) <= 0) and np.all(np.diff(frr) >= 0)


def test_det_perfect_separation_has_zero_point():
    pts = E.det_points(E.ScoredSet.from_scores([0.9, 0.8], [0.2, 0.1]))
    assert any(far == 0 and frr == 0 for _, far, frr in pts)
    buf = io.StringIO()
    E.write_det(pts, buf)
    assert buf.getvalue().splitlines()[0] == "threshold\tfar\tfrr"
    assert len(buf.getvalue().splitlines()) == len(pts) + 1


# -- k-fold ------------------------------------------------------------------


def _manifest(n_en, n_non, extra=()):
    m = LabelManifest()
    for i in range(n_en):
        m[f"e{i}"] = "english"
    for i in range(n_non):
        m[f"n{i}"] = "non_english"
    for u, t in extra:
        m[u] = t
    return m


def test_kfold_balanced_partition():
    man = _manifest(10, 10, extra=[("x", "mixed")])
    folds = E.stratified_kfold(man, k=5, seed=1)
    tests = [set(t) for _, t in folds]
    assert all(sum(u.startswith("e") for u in t) == 2 and sum(u.startswith("n") for u in t) == 2 for t in tests)
    assert set().union(*tests) == set(man) - {"x"}
    assert sum(len(t) for t in tests) == 20
    for tr, te in folds:
        assert not set(tr) & set(te)


@given(st.integers(2, 6), st.integers(6, 30), st.integers(6, 30), st.integers(0, 1000))
def test_kfold_per_class_counts_differ_by_at_most_one(k, n_en, n_non, seed):
    folds = E.stratified_kfold(_manifest(n_en, n_non), k=k, seed=seed)
    for prefix in "en":
        counts = [sum(u.startswith(prefix) for u in te) for _, te in folds]
        assert max(counts) - min(counts) <= 1


def test_kfold_deterministic():
    man = _manifest(12, 9)
    assert E.stratified_kfold(man, 3, 7) == E.stratified_kfold(man, 3, 7)
    assert E.stratified_kfold(man, 3, 7) != E.stratified_kfold(man, 3, 8)


def test_kfold_too_few_examples():
    with pytest.raises(TooFewExamples):
        E.stratified_kfold(_manifest(3, 10), k=5)


# -- grid --------------------------------------------------------------------


def test_full_grid_size():
    assert E.GRID_REG_WEIGHTS[0] == 1e-5 and E.GRID_REG_WEIGHTS[-1] == 1e-2
    assert len(E.GridSpec()) == 3 * len(E.GRID_REG_WEIGHTS) * 5 == 150
    assert len(list(E.GridSpec().configs())) == 150


def test_grid_rejects_empty_axis():
    with pytest.raises(ValueError):
        E.GridSpec(dims=())
    with pytest.raises(ValueError):
        E.GridSpec(reg_types=("l3",))


def test_grid_sort_key_tie_breaks():
    rs = [E.GridResult("so", 1e-3, 32, [0.1]), E.GridResult("l2", 1e-3, 32, [0.1]),
          E.GridResult("l1", 1e-4, 32, [0.1]), E.GridResult("l2", 1e-5, 64, [0.1]),
          E.GridResult("l2", 1e-5, 64, [0.05])]
    order = [(r.reg_type, r.reg_weight, r.K) for r in sorted(rs, key=E.GridResult.sort_key)]
    assert order == [("l2", 1e-5, 64), ("l1", 1e-4, 32), ("l2", 1e-3, 32), ("so", 1e-3, 32), ("l2", 1e-5, 64)]


def test_grid_single_config(synth_corpus):
    matrix, manifest, _ = synth_corpus
    grid = E.GridSpec(("l2",), (1e-4,), (8,))
    smm = SmmTrainConfig(iters=20, extract_iters=20)
    (res,) = E.grid_search(matrix, manifest, grid, k=3, seed=1, smm_cfg=smm, backend="glc")
    assert (res.reg_type, res.reg_weight, res.K) == ("l2", 1e-4, 8)
    assert len(res.fold_eers) == 3 and 0 <= res.mean_eer <= 1
    buf = io.StringIO()
    E.write_cv_report([res], buf)
    assert buf.getvalue().splitlines()[0] == "reg_type\tlambda\tK\tfold\teer"
    assert len(buf.getvalue().splitlines()) == 4


# -- score files ------------------------------------------------------------------


def test_score_file_round_trip():
    buf = io.StringIO()
    E.write_scores(["a", "b", "c"], [1.5, -0.25, 3.0], ["english", "non_english", "mixed"], buf)
    ids, scores, tags = E.read_scores(io.StringIO(buf.getvalue()))
    assert ids == ["a", "b", "c"] and scores.tolist() == [1.5, -0.25, 3.0]
    s = E.scored_set_from_file(ids, scores, tags)
    assert s.utt_ids == ["a", "b"] and s.labels.tolist() == [True, False]
