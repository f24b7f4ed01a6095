"""AUROC and masked-evaluation tests against exhaustive pair counting."""

import numpy as np
import pytest

from glocal import evaluation as ev

import oracles


class TestAuroc:
    def test_perfect_separation(self):
        assert ev.auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_hand_case_three_quarters(self):
        assert ev.auroc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75

    def test_all_ties_half(self):
        assert ev.auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_single_class_undefined(self):
        assert ev.auroc([0.1, 0.2], [1, 1]) is None
        assert ev.auroc([0.1, 0.2], [0, 0]) is None

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(2, 40))
            scores = np.round(rng.uniform(0, 1, n), 2)  # rounding forces ties
            labels = rng.integers(0, 2, n)
            want = oracles.auroc_pairs_oracle(scores.tolist(), labels.tolist())
            got = ev.auroc(scores, labels)
            if want is None:
                assert got is None
            else:
                assert abs(got - want) < 1e-12, f"trial {trial}"

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(0, 1, 30)
        labels = rng.integers(0, 2, 30)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        a = ev.auroc(scores, labels)
        b = ev.auroc(np.exp(3.0 * scores) + 5.0, labels)
        assert abs(a - b) < 1e-12

    def test_complement_identity_for_tie_free_scores(self):
        rng = np.random.default_rng(2)
        scores = rng.permutation(30) / 30.0
        labels = rng.integers(0, 2, 30)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert abs(ev.auroc(scores, labels) + ev.auroc(scores, 1 - labels) - 1.0) < 1e-12

    def test_nonbinary_labels_rejected(self):
        with pytest.raises(ev.EvaluationError):
            ev.auroc([0.1, 0.2], [1, -1])


class TestEvaluate:
    def test_fully_masked_class_excluded_from_mean(self):
        preds = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.5]])
        labels = np.array([[1, -2], [0, -2], [1, -2]])
        report = ev.evaluate(preds, labels, ["a", "b"])
        assert report.per_class["b"].auroc is None
        assert report.per_class["b"].counted == 0
        assert report.mean_auroc == report.per_class["a"].auroc

    def test_masking_equals_prefiltering(self):
        rng = np.random.default_rng(3)
        preds = rng.uniform(0, 1, (40, 3))
        labels = rng.choice([1, 0, -1, -2], size=(40, 3), p=[0.4, 0.4, 0.1, 0.1])
        report = ev.evaluate(preds, labels, ["a", "b", "c"])
        for j, cname in enumerate(["a", "b", "c"]):
            keep = np.isin(labels[:, j], (0, 1))
            want = ev.auroc(preds[keep, j], labels[keep, j])
            got = report.per_class[cname].auroc
            if want is None:
                assert got is None
            else:
                assert abs(got - want) < 1e-15

    def test_poisoned_masked_cells_do_not_change_output(self):
        rng = np.random.default_rng(4)
        preds = rng.uniform(0, 1, (30, 4))
        labels = rng.choice([1, 0, -1, -2], size=(30, 4), p=[0.35, 0.35, 0.15, 0.15])
        clean = ev.evaluate(preds, labels, list("abcd"))
        poisoned = preds.copy()
        poisoned[~np.isin(labels, (0, 1))] = np.nan
        dirty = ev.evaluate(poisoned, labels, list("abcd"))
        assert clean.mean_auroc == dirty.mean_auroc
        for c in "abcd":
            assert clean.per_class[c].auroc == dirty.per_class[c].auroc

    def test_random_50x5_matches_oracle(self):
        rng = np.random.default_rng(5)
        for trial in range(50):
            preds = rng.uniform(0, 1, (50, 5))
            labels = rng.choice([1, 0, -1, -2], size=(50, 5), p=[0.4, 0.4, 0.1, 0.1])
            try:
                report = ev.evaluate(preds, labels)
            except ev.EvaluationError:
                continue
            vals = []
            for j in range(5):
                keep = np.isin(labels[:, j], (0, 1))
                want = oracles.auroc_pairs_oracle(preds[keep, j].tolist(), labels[keep, j].tolist())
                got = report.per_class[f"class_{j}"].auroc
                if want is None:
                    assert got is None
                else:
                    assert abs(got - want) < 1e-12
                    vals.append(want)
            assert abs(report.mean_auroc - np.mean(vals)) < 1e-12

    def test_zero_evaluable_classes_raises(self):
        preds = np.ones((3, 2)) * 0.5
        labels = np.full((3, 2), -2)
        with pytest.raises(ev.EvaluationError):
            ev.evaluate(preds, labels)

    def test_csv_output(self, tmp_path):
        preds = np.array([[0.9, 0.4], [0.1, 0.6]])
        labels = np.array([[1, 0], [0, 1]])
        report = ev.evaluate(preds, labels, ["x", "y"])
        p = tmp_path / "eval.csv"
        report.write_csv(p)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "class,auroc,n_pos,n_neg"
        assert lines[-1].startswith("mean,")
