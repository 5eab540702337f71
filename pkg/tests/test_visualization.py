"""2-D projection behavior and deterministic SVG emission."""

import numpy as np
import pytest

from helpers import make_blobs, nearest_centroid_recovery, separated_centers

from cvdlab.evaluation import roc
from cvdlab.visualization import (
    ProjectionConfig,
    class_silhouette,
    emit_roc_plot,
    emit_scatter_plot,
    project_2d,
    write_coordinates,
)


class TestProjection:
    def test_well_separated_blobs_stay_separated(self):
        vectors, labels = make_blobs(30, separated_centers(3, 16), noise=1.0, seed=2)
        config = ProjectionConfig(perplexity=20.0, iterations=500, seed=0)
        points = project_2d(vectors, config)
        assert points.shape == (90, 2)
        assert nearest_centroid_recovery(points, labels) >= 0.95

    def test_deterministic_per_seed(self):
        vectors, _ = make_blobs(10, separated_centers(2, 8), seed=4)
        config = ProjectionConfig(perplexity=10.0, iterations=300, seed=0)
        assert np.array_equal(project_2d(vectors, config), project_2d(vectors, config))

    def test_perplexity_changes_the_embedding(self):
        vectors, _ = make_blobs(10, separated_centers(2, 8), seed=4)
        a = project_2d(vectors, ProjectionConfig(perplexity=5.0, iterations=300, seed=0))
        b = project_2d(vectors, ProjectionConfig(perplexity=12.0, iterations=300, seed=0))
        assert not np.array_equal(a, b)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError, match="at least 4"):
            project_2d(np.zeros((3, 5)) + np.arange(3)[:, None])

    def test_perplexity_must_be_below_the_point_count(self):
        vectors = np.random.default_rng(0).normal(size=(10, 4))
        with pytest.raises(ValueError, match="perplexity"):
            project_2d(vectors, ProjectionConfig(perplexity=10.0))

    def test_non_finite_rejected(self):
        vectors = np.ones((6, 3))
        vectors[2, 1] = np.nan
        with pytest.raises(ValueError, match="finite"):
            project_2d(vectors)

    def test_identical_points_rejected(self):
        with pytest.raises(ValueError, match="identical"):
            project_2d(np.ones((8, 3)))

    def test_config_validation(self):
        with pytest.raises(ValueError, match="method"):
            ProjectionConfig(method="umap")
        with pytest.raises(ValueError, match="perplexity"):
            ProjectionConfig(perplexity=0.0)
        with pytest.raises(ValueError, match="iterations"):
            ProjectionConfig(iterations=0)


class TestSilhouette:
    def test_hand_checked_four_points(self):
        # two tight pairs 10 apart; by symmetry every point has intra
        # distance a = 1 and inter mean b = (10 + sqrt(101)) / 2
        points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        labels = [0, 0, 1, 1]
        b = (10.0 + np.sqrt(101.0)) / 2.0
        assert class_silhouette(points, labels) == pytest.approx((b - 1.0) / b, abs=1e-12)

    def test_tight_blobs_score_high(self):
        points, labels = make_blobs(20, [np.array([0.0, 0.0]), np.array([50.0, 0.0])], noise=0.5, seed=1)
        assert class_silhouette(points, labels) > 0.9

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="two classes"):
            class_silhouette(np.zeros((4, 2)), [1, 1, 1, 1])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="vs"):
            class_silhouette(np.zeros((4, 2)), [0, 1])


class TestRocPlot:
    def test_legend_carries_the_area(self, tmp_path):
        curve = roc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        path = tmp_path / "roc.svg"
        emit_roc_plot([("zero-shot", curve)], path)
        text = path.read_text()
        assert "zero-shot (AUC = 1.000)" in text
        assert "chance" in text

    def test_re_emission_is_byte_identical(self, tmp_path):
        curves = [
            ("a", roc([0.9, 0.4, 0.2], [1, 1, 0])),
            ("b", roc([0.6, 0.5, 0.4, 0.1], [1, 0, 1, 0])),
        ]
        first, second = tmp_path / "one.svg", tmp_path / "two.svg"
        emit_roc_plot(curves, first)
        emit_roc_plot(curves, second)
        assert first.read_bytes() == second.read_bytes()

    def test_zero_curves_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="at least one curve"):
            emit_roc_plot([], tmp_path / "roc.svg")


class TestScatterPlot:
    def test_emits_both_class_names(self, tmp_path):
        points = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5], [3.0, 1.5]])
        path = tmp_path / "scatter.svg"
        emit_scatter_plot(points, [0, 0, 1, 1], path, title="projection")
        text = path.read_text()
        assert "safe (0)" in text
        assert "vulnerable (1)" in text
        assert "projection" in text

    def test_re_emission_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        points = rng.normal(size=(24, 2))
        labels = (rng.random(24) > 0.5).astype(int)
        first, second = tmp_path / "one.svg", tmp_path / "two.svg"
        emit_scatter_plot(points, labels, first)
        emit_scatter_plot(points, labels, second)
        assert first.read_bytes() == second.read_bytes()

    def test_shape_validation(self, tmp_path):
        with pytest.raises(ValueError, match=r"\(N, 2\)"):
            emit_scatter_plot(np.zeros((4, 3)), [0, 1, 0, 1], tmp_path / "bad.svg")
        with pytest.raises(ValueError, match="vs"):
            emit_scatter_plot(np.zeros((4, 2)), [0, 1], tmp_path / "bad.svg")


class TestCoordinateDump:
    def test_round_trip_is_lossless(self, tmp_path):
        rng = np.random.default_rng(8)
        points = rng.normal(size=(12, 2))
        labels = [int(v) for v in (rng.random(12) > 0.4)]
        path = tmp_path / "coords.csv"
        write_coordinates(points, labels, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x,y,label"
        restored = np.array(
            [[float(cell) for cell in line.split(",")[:2]] for line in lines[1:]]
        )
        assert np.array_equal(restored, points)
        assert [int(line.split(",")[2]) for line in lines[1:]] == labels

    def test_labels_are_optional(self, tmp_path):
        path = tmp_path / "coords.csv"
        write_coordinates(np.zeros((2, 2)), None, path)
        assert path.read_text().splitlines()[0] == "x,y"

    def test_shape_validation(self, tmp_path):
        with pytest.raises(ValueError, match=r"\(N, 2\)"):
            write_coordinates(np.zeros((4, 3)), None, tmp_path / "bad.csv")
        with pytest.raises(ValueError, match="vs"):
            write_coordinates(np.zeros((4, 2)), [0], tmp_path / "bad.csv")
