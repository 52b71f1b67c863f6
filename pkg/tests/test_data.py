"""Shape generator, file formats, splits and part samplers"""
import numpy as np
import pytest
from pydantic import ValidationError

from src.exceptions import DataError
from src.services.data import (
    SHAPE_KINDS,
    DatasetSpec,
    PointCloud,
    generate_dataset,
    generate_shape,
    knn_part,
    load_dataset_dir,
    load_manifest,
    load_splits,
    load_xyz,
    save_dataset_dir,
    save_xyz,
    split,
    subsample,
)


class TestGenerator:

    @pytest.mark.parametrize("kind", SHAPE_KINDS)
    def test_every_kind_is_normalized(self, kind, rng):
        cloud = generate_shape(kind, 256, rng)
        assert cloud.points.shape == (256, 3)
        np.testing.assert_allclose(cloud.points.mean(axis=0), 0.0, atol=1e-12)
        assert np.max(np.linalg.norm(cloud.points, axis=1)) == pytest.approx(1.0)

    def test_noiseless_sphere_has_equal_norms(self, rng):
        cloud = generate_shape("sphere", 500, rng, noise_sigma=0.0, normalize=False)
        np.testing.assert_allclose(np.linalg.norm(cloud.points, axis=1), 1.0, atol=1e-12)

    def test_table_height_is_bimodal(self, rng):
        z = generate_shape("table", 2000, rng, noise_sigma=0.0).points[:, 2]
        top = z.max()
        at_top = np.mean(np.isclose(z, top, atol=1e-9))
        low = np.mean(z < top - 0.5 * (top - z.min()))
        assert 0.4 < at_top < 0.8
        assert low > 0.1

    def test_scale_jitter_stretches_each_axis(self):
        kwargs = dict(noise_sigma=0.0, rotate=False, normalize=False)
        plain = generate_shape("cube", 300, np.random.default_rng(5), scale_jitter=0.0, **kwargs)
        stretched = generate_shape("cube", 300, np.random.default_rng(5), scale_jitter=0.3, **kwargs)
        ratio = stretched.points / plain.points
        np.testing.assert_allclose(ratio, np.broadcast_to(ratio[0], ratio.shape), rtol=1e-12)
        assert np.all((ratio[0] >= 0.7) & (ratio[0] <= 1.3))

    def test_scale_jitter_range(self, rng):
        with pytest.raises(DataError):
            generate_shape("cube", 64, rng, scale_jitter=1.0)
        with pytest.raises(ValidationError):
            DatasetSpec(scale_jitter=-0.1)

    def test_unknown_kind(self, rng):
        with pytest.raises(DataError):
            generate_shape("teapot", 100, rng)

    def test_too_few_points(self, rng):
        with pytest.raises(DataError):
            generate_shape("cube", 3, rng)

    def test_dataset_is_deterministic(self, tiny_spec):
        a, names_a = generate_dataset(tiny_spec)
        b, names_b = generate_dataset(tiny_spec)
        assert names_a == names_b == ["sphere", "cube", "torus"]
        assert [c.id for c in a] == [c.id for c in b]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.points, y.points)

    def test_dataset_ids_and_labels(self, tiny_spec):
        clouds, _ = generate_dataset(tiny_spec)
        assert len(clouds) == 3 * (4 + 2)
        assert clouds[0].id == "sphere_0000"
        assert {c.label for c in clouds if c.id.startswith("torus")} == {2}

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            DatasetSpec(classes=["sphere", "teapot"])
        with pytest.raises(ValidationError):
            DatasetSpec(classes=["sphere", "sphere"])
        with pytest.raises(ValidationError):
            DatasetSpec(classes=["sphere"])


class TestPointCloud:

    def test_rejects_bad_shapes(self):
        with pytest.raises(DataError):
            PointCloud(np.zeros((4, 2)))
        with pytest.raises(DataError):
            PointCloud(np.zeros((0, 3)))
        with pytest.raises(DataError):
            PointCloud(np.array([[0.0, np.inf, 0.0]]))


class TestSplit:

    def test_exact_counts_and_disjoint(self, tiny_spec):
        clouds, _ = generate_dataset(tiny_spec)
        train, test = split(clouds, tiny_spec)
        assert len(train) == 3 * 4
        assert len(test) == 3 * 2
        for label in range(3):
            assert sum(c.label == label for c in train) == 4
            assert sum(c.label == label for c in test) == 2
        assert not {c.id for c in train} & {c.id for c in test}

    def test_seeded(self, tiny_spec):
        clouds, _ = generate_dataset(tiny_spec)
        first = [c.id for c in split(clouds, tiny_spec)[0]]
        again = [c.id for c in split(list(reversed(clouds)), tiny_spec)[0]]
        assert first == again

    def test_not_enough_clouds(self, tiny_spec):
        clouds, _ = generate_dataset(tiny_spec)
        bigger = tiny_spec.model_copy(update={"per_class_train": 10})
        with pytest.raises(DataError):
            split(clouds, bigger)


class TestFiles:

    def test_load_three_lines(self, tmp_path):
        path = tmp_path / "tri.xyz"
        path.write_text("0 0 0\n1 0 0\n0 1 0\n")
        cloud = load_xyz(path, label=1)
        assert len(cloud) == 3
        assert cloud.id == "tri"
        assert cloud.label == 1
        assert np.max(np.linalg.norm(cloud.points, axis=1)) == pytest.approx(1.0)

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("a b c\n")
        with pytest.raises(DataError, match=":1:"):
            load_xyz(path)

    def test_wrong_field_count(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0\n1 2\n")
        with pytest.raises(DataError, match=":2:"):
            load_xyz(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.xyz"
        path.write_text("\n")
        with pytest.raises(DataError):
            load_xyz(path)

    def test_save_load_keeps_coordinates(self, tmp_path, rng):
        cloud = generate_shape("cone", 128, rng)
        save_xyz(cloud, tmp_path / "cone.xyz")
        np.testing.assert_allclose(load_xyz(tmp_path / "cone.xyz").points, cloud.points, atol=1e-12)

    def test_dataset_dir_roundtrip(self, tmp_path, tiny_dataset):
        train, _, names = tiny_dataset
        save_dataset_dir(train, tmp_path / "ds", names)
        loaded, loaded_names = load_dataset_dir(tmp_path / "ds")
        assert loaded_names == names
        assert [c.id for c in loaded] == [c.id for c in train]
        assert [c.label for c in loaded] == [c.label for c in train]
        for a, b in zip(loaded, train):
            np.testing.assert_allclose(a.points, b.points, atol=1e-12)

    def test_manifest_without_label(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("a,0\nb,\n")
        with pytest.raises(DataError):
            load_manifest(path)

    def test_missing_point_file(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("ghost,0\n")
        with pytest.raises(DataError, match="ghost"):
            load_dataset_dir(tmp_path)

    def test_load_splits_prefers_split_dirs(self, tmp_path, tiny_dataset, tiny_spec):
        train, test, names = tiny_dataset
        save_dataset_dir(train, tmp_path / "train", names)
        save_dataset_dir(test, tmp_path / "test", names)
        got_train, got_test, got_names = load_splits(tiny_spec, tmp_path)
        assert [c.id for c in got_train] == [c.id for c in train]
        assert [c.id for c in got_test] == [c.id for c in test]
        assert got_names == names

    def test_load_splits_splits_flat_dir(self, tmp_path, tiny_spec):
        clouds, names = generate_dataset(tiny_spec)
        save_dataset_dir(clouds, tmp_path, names)
        got_train, got_test, _ = load_splits(tiny_spec, tmp_path)
        assert len(got_train) == 12
        assert len(got_test) == 6

    def test_load_splits_missing_dir(self, tmp_path, tiny_spec):
        with pytest.raises(DataError):
            load_splits(tiny_spec, tmp_path / "nowhere")


class TestSamplers:

    def test_knn_part_is_contiguous(self, rng):
        cloud = generate_shape("chair", 400, rng)
        part = knn_part(cloud, 50, rng, anchor=17)
        assert len(part) == 50
        d_all = np.linalg.norm(cloud.points - cloud.points[17], axis=1)
        d_part = np.linalg.norm(part.points - cloud.points[17], axis=1)
        assert d_part.max() <= np.sort(d_all)[50]
        assert np.any(np.all(part.points == cloud.points[17], axis=1))
        assert part.meta["source"] == cloud.id
        assert part.meta["part_size"] == 50

    def test_knn_part_keeps_source_order(self, rng):
        cloud = PointCloud(np.arange(30.0).reshape(10, 3), label=2, id="line")
        part = knn_part(cloud, 3, rng, anchor=5)
        np.testing.assert_array_equal(part.points, cloud.points[[4, 5, 6]])
        assert part.label == 2
        assert part.id == "line#part3"

    def test_knn_part_size_bounds(self, rng):
        cloud = generate_shape("cube", 32, rng)
        with pytest.raises(DataError):
            knn_part(cloud, 33, rng)
        with pytest.raises(DataError):
            knn_part(cloud, 0, rng)

    def test_subsample(self, rng):
        cloud = generate_shape("torus", 100, rng)
        sub = subsample(cloud, 40, rng)
        assert len(sub) == 40
        assert len({tuple(p) for p in sub.points}) == 40
        assert {tuple(p) for p in sub.points} <= {tuple(p) for p in cloud.points}
        assert len(subsample(cloud, 500, rng)) == 100
        with pytest.raises(DataError):
            subsample(cloud, 0, rng)


def test_make_dataset_script(tmp_path, tiny_spec):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parent.parent / "scripts" / "make_dataset.py"
    module_spec = importlib.util.spec_from_file_location("make_dataset", path)
    module = importlib.util.module_from_spec(module_spec)
    module_spec.loader.exec_module(module)
    module.make_dataset(tmp_path / "shapes", tiny_spec)
    train, test, names = load_splits(tiny_spec, tmp_path / "shapes")
    assert (len(train), len(test)) == (12, 6)
    assert names == ["sphere", "cube", "torus"]
