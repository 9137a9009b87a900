import numpy as np
import pytest

from ecgmatch import metrics as m
from ecgmatch.errors import UndefinedMetricError

from oracles import METRIC_ORACLES

IMPLS = {
    "ranking_loss": lambda sm: m.ranking_loss(sm),
    "hamming_loss": lambda sm: m.hamming_loss(sm),
    "coverage": lambda sm: m.coverage(sm),
    "map": lambda sm: m.mean_average_precision(sm),
    "macro_auc": lambda sm: m.macro_auc(sm),
    "macro_gbeta": lambda sm: m.macro_gbeta(sm),
}


def sm(scores, labels):
    return m.ScoreMatrix(np.atleast_2d(scores), np.atleast_2d(labels))


def random_instance(g, n=None, c=5):
    n = n or int(g.integers(2, 51))
    scores = g.random((n, c))
    labels = (g.random((n, c)) < 0.4).astype(float)
    return scores, labels


def test_ranking_loss_examples():
    assert m.ranking_loss(sm([0.9, 0.1], [1, 0])) == 0.0
    assert m.ranking_loss(sm([0.1, 0.9], [1, 0])) == 1.0
    assert m.ranking_loss(sm([0.5, 0.7, 0.9], [1, 0, 1])) == 0.5


def test_ranking_loss_no_valid_rows():
    with pytest.raises(UndefinedMetricError):
        m.ranking_loss(sm([0.5, 0.5], [1, 1]))


def test_hamming_loss_examples():
    assert m.hamming_loss(sm([0.9, 0.1], [1, 0])) == 0.0
    assert m.hamming_loss(sm([0.1, 0.9], [1, 0])) == 1.0
    assert m.hamming_loss(sm([0.9, 0.9, 0.1, 0.1, 0.1], [1, 0, 0, 0, 0])) == pytest.approx(0.2)


def test_coverage_examples():
    assert m.coverage(sm([0.9, 0.5, 0.4, 0.3, 0.2], [1, 0, 0, 0, 0])) == 1.0
    assert m.coverage(sm([0.1, 0.5, 0.6, 0.7, 0.8], [1, 0, 0, 0, 0])) == 5.0
    assert m.coverage(sm([0.9, 0.8, 0.7, 0.1, 0.05], [1, 0, 1, 0, 0])) == 3.0


def test_map_examples():
    # all positives above all negatives
    assert m.mean_average_precision(sm([[0.9], [0.8], [0.2]], [[1], [1], [0]])) == 1.0
    assert m.mean_average_precision(sm([[0.9], [0.1]], [[0], [1]])) == 0.5


def test_macro_auc_examples():
    assert m.macro_auc(sm([[0.9], [0.8], [0.2]], [[1], [1], [0]])) == 1.0
    assert m.macro_auc(sm([[0.5], [0.5], [0.5]], [[1], [0], [1]])) == 0.5
    assert m.macro_auc(sm([[0.8], [0.6], [0.4], [0.2]], [[1], [0], [1], [0]])) == 0.75


def test_macro_gbeta_examples():
    perfect = m.macro_gbeta(sm([[0.9, 0.1], [0.1, 0.9]], [[1, 0], [0, 1]]))
    assert perfect == 1.0
    # one class: TP=2, FN=1, FP=1 -> 2 / (2 + 1 + 2*1) = 0.4
    scores = [[0.9], [0.9], [0.1], [0.9]]
    labels = [[1], [1], [1], [0]]
    assert m.macro_gbeta(sm(scores, labels), beta=2.0) == pytest.approx(0.4)
    # beta=0 reduces to recall: TP / (TP + FN) = 2/3
    assert m.macro_gbeta(sm(scores, labels), beta=0.0) == pytest.approx(2.0 / 3.0)


def test_all_metrics_match_bruteforce_oracles():
    g = np.random.default_rng(0)
    for _ in range(200):
        scores, labels = random_instance(g)
        inst = m.ScoreMatrix(scores, labels)
        for name, impl in IMPLS.items():
            try:
                got = impl(inst)
            except UndefinedMetricError:
                with pytest.raises(ValueError):
                    METRIC_ORACLES[name](scores, labels)
                continue
            want = METRIC_ORACLES[name](scores, labels)
            assert abs(got - want) < 1e-9, name


def test_rank_metrics_invariant_under_monotone_transform():
    g = np.random.default_rng(1)
    for _ in range(20):
        scores, labels = random_instance(g, n=15)
        inst = m.ScoreMatrix(scores, labels)
        warped = m.ScoreMatrix(scores**3 / (1.0 + scores**3), labels)  # strictly monotone
        for name in ("ranking_loss", "coverage", "map", "macro_auc"):
            try:
                base = IMPLS[name](inst)
            except UndefinedMetricError:
                continue
            assert IMPLS[name](warped) == pytest.approx(base, abs=1e-12), name


def test_threshold_metrics_do_change_under_monotone_transform():
    scores = np.array([[0.6, 0.4], [0.7, 0.3]])
    labels = np.array([[1.0, 0.0], [1.0, 0.0]])
    warped = scores / 2.0  # monotone, but crosses the fixed threshold
    assert m.hamming_loss(m.ScoreMatrix(scores, labels)) != m.hamming_loss(m.ScoreMatrix(warped, labels))


def test_sample_permutation_invariance():
    g = np.random.default_rng(2)
    scores, labels = random_instance(g, n=20)
    perm = g.permutation(20)
    a, b = m.ScoreMatrix(scores, labels), m.ScoreMatrix(scores[perm], labels[perm])
    for name, impl in IMPLS.items():
        assert impl(a) == pytest.approx(impl(b), abs=1e-12), name


def test_class_permutation_keeps_row_metrics_and_permutes_macro_vectors():
    g = np.random.default_rng(3)
    scores, labels = random_instance(g, n=25)
    perm = g.permutation(5)
    a = m.ScoreMatrix(scores, labels)
    b = m.ScoreMatrix(scores[:, perm], labels[:, perm])
    for name in ("ranking_loss", "hamming_loss", "coverage"):
        assert IMPLS[name](a) == pytest.approx(IMPLS[name](b), abs=1e-12)
    ra, rb = m.compute_all(scores, labels), m.compute_all(scores[:, perm], labels[:, perm])
    for c in range(5):
        assert ra.per_class["macro_gbeta"][perm[c]] == pytest.approx(rb.per_class["macro_gbeta"][c])


def test_ranking_loss_complements_pairwise_auc_per_sample():
    g = np.random.default_rng(4)
    for _ in range(20):
        scores = g.random((1, 6))  # continuous, tie-free w.p. 1
        labels = np.zeros((1, 6))
        labels[0, :3] = 1.0
        inst = m.ScoreMatrix(scores, labels)
        rl = m.ranking_loss(inst)
        # pair accuracy over (relevant, irrelevant) pairs within the row
        pos, neg = scores[0, :3], scores[0, 3:]
        acc = np.mean([1.0 if p > q else 0.0 for p in pos for q in neg])
        assert rl == pytest.approx(1.0 - acc, abs=1e-12)


def test_compute_all_records_skips_and_nan_for_undefined():
    # single row: no class has both label values, auc is undefined
    report = m.compute_all(np.array([[0.9, 0.2, 0.4]]), np.array([[1.0, 0.0, 1.0]]))
    assert np.isnan(report.macro_auc)
    assert report.skipped["auc_classes"] == 3
    assert report.coverage == 2.0
    assert report.skipped["map_classes"] == 1


def test_report_csv_roundtrip():
    report = m.compute_all(np.random.default_rng(5).random((10, 5)),
                           (np.random.default_rng(6).random((10, 5)) > 0.5).astype(float))
    row = report.to_csv_row()
    back = m.MetricsReport.from_csv_row(row)
    for name in ("ranking_loss", "hamming_loss", "coverage", "map", "macro_auc", "macro_gbeta"):
        assert back.value(name) == pytest.approx(report.value(name), abs=1e-15)
    assert back.skipped == report.skipped


def test_score_matrix_validation():
    with pytest.raises(ValueError):
        m.ScoreMatrix(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        m.ScoreMatrix(np.zeros((2, 2)), np.full((2, 2), 0.5))
