import numpy as np
import pytest

from needlesense.dataset import build_dataset, kfold_split
from needlesense.evaluation import (
    REFERENCE_ACCURACY,
    cross_validate,
    mean_std,
    score,
    write_confusion_csv,
    write_metrics_csv,
)
from needlesense.labels import ClassLabel
from needlesense.model import ModelConfig
from needlesense.training import TrainConfig

N, P, U = int(ClassLabel.NEUTRAL), int(ClassLabel.PRE_PUNCTURE), int(ClassLabel.PUNCTURE)
L, K, H, B, C = (int(l) for l in (ClassLabel.LIVER, ClassLabel.KIDNEY,
                                  ClassLabel.HEART, ClassLabel.BELLY, ClassLabel.HOCK))


class TestScore:
    def test_perfect_predictions(self):
        truth = [N, P, U, L, K, H, B, C] * 3
        report = score(truth, truth)
        assert report.accuracy == 1.0
        assert report.a_pre == 1.0
        assert report.a_punc == 1.0
        assert report.a_tissue == 1.0
        assert np.array_equal(np.diag(report.confusion), report.class_counts)
        assert report.confusion.sum() == len(truth)

    def test_hand_counted_example(self):
        truth = [P, P, U, L]
        pred = [P, U, U, H]
        report = score(pred, truth)
        assert report.a_pre == pytest.approx(0.5)
        assert report.a_punc == pytest.approx(1.0)
        assert report.a_tissue == pytest.approx(0.0)

    def test_absent_class_reported_as_none(self):
        truth = [N, N, P]
        pred = [N, N, P]
        report = score(pred, truth)
        assert report.a_punc is None
        assert report.a_tissue is None
        assert report.per_tissue["liver"] is None
        assert report.a_pre == 1.0

    def test_confusion_row_sums_match_truth_counts(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 8, size=500)
        pred = rng.integers(0, 8, size=500)
        report = score(pred, truth)
        assert np.array_equal(report.confusion.sum(axis=1), report.class_counts)
        assert report.confusion.sum() == 500

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        truth = rng.integers(0, 8, size=200)
        pred = rng.integers(0, 8, size=200)
        perm = rng.permutation(200)
        a = score(pred, truth)
        b = score(pred[perm], truth[perm])
        assert a.accuracy == b.accuracy
        assert np.array_equal(a.confusion, b.confusion)

    def test_micro_vs_macro_tissue(self):
        truth = [L] * 9 + [K]
        pred = [L] * 9 + [L]
        report = score(pred, truth)
        assert report.a_tissue == pytest.approx(0.9)  # sample-weighted
        assert report.a_tissue_macro == pytest.approx(0.5)  # mean of {1.0, 0.0}

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            score([0, 1], [0])

    def test_label_domain_enforced(self):
        with pytest.raises(ValueError):
            score([0, 9], [0, 1])


class TestAggregation:
    def test_mean_matches_hand_average(self):
        truth = [P, U, L]
        reports = [score([P, U, L], truth), score([P, P, L], truth), score([U, U, H], truth)]
        stats = mean_std(reports, "accuracy")
        hand = np.mean([r.accuracy for r in reports])
        assert abs(stats[0] - hand) < 1e-12

    def test_none_metrics_skipped(self):
        reports = [score([N], [N]), score([L], [L])]
        mean, _ = mean_std(reports, "a_tissue")
        assert mean == 1.0
        assert mean_std(reports, "a_punc") is None


class TestCsvExport:
    def test_metrics_csv_has_reference_row(self, tmp_path):
        report = score([N, P, U, L], [N, P, U, L])
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, [report], names=["fold0"])
        text = path.read_text()
        assert "reference" in text
        for value in REFERENCE_ACCURACY.values():
            assert repr(value) in text
        assert text.strip().splitlines()[-1].startswith("#")

    def test_confusion_grid_csv(self, tmp_path):
        report = score([N, P, U, L], [N, P, U, H])
        path = tmp_path / "confusion.csv"
        write_confusion_csv(path, report.confusion)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("row,col,count")
        assert len(lines) == 1 + 64
        grid = np.zeros((8, 8), dtype=int)
        for line in lines[1:]:
            r, c, n = line.split(",")[:3]
            grid[int(r), int(c)] = int(n)
        assert np.array_equal(grid, report.confusion)


class TestCrossValidate:
    def test_structure_on_small_dataset(self, small_dataset):
        split = kfold_split(small_dataset, k=3, eval_fraction=0.2, seed=1)
        model_config = ModelConfig(
            seq_len=120, in_features=2, d_model=8, num_heads=2, num_blocks=1, ffn_dim=16
        )
        report = cross_validate(
            small_dataset, split, model_config,
            TrainConfig(epochs=1, batch_size=32, seed=0, dtype="float32"),
        )
        assert len(report.fold_eval) == 3
        assert len(report.fold_val) == 3
        assert len(report.models) == 3
        assert report.confusion_eval_total.sum() == 3 * len(split.eval_indices)
        total = sum(r.confusion for r in report.fold_eval)
        assert np.array_equal(report.confusion_eval_total, total)
        assert report.mean("accuracy") is not None
        lines = report.summary_lines()
        assert any("reference" in line for line in lines)
