import json

import numpy as np
import pytest
import torch

from ganslim.data import (
    TASK_TAGS,
    TaskSpec,
    batch_stream,
    dataset_fingerprint,
    eval_split,
    load_image_folder,
    make_task,
    write_manifest,
)


class TestTaskSpec:
    def test_unknown_tag_rejected(self):
        with pytest.raises(ValueError, match="task tag"):
            TaskSpec(tag="sharpen")

    def test_bad_sizes_rejected(self):
        with pytest.raises(ValueError):
            TaskSpec(image_size=4)
        with pytest.raises(ValueError):
            TaskSpec(n_per_domain=0)


class TestMakeTask:
    @pytest.mark.parametrize("tag", TASK_TAGS)
    def test_deterministic(self, tag):
        spec = TaskSpec(tag=tag, n_per_domain=16, seed=4)
        x1, y1 = make_task(spec)
        x2, y2 = make_task(spec)
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
        x3, _ = make_task(TaskSpec(tag=tag, n_per_domain=16, seed=5))
        assert not np.array_equal(x1, x3)

    @pytest.mark.parametrize("tag", TASK_TAGS)
    def test_shapes_and_range(self, tag):
        spec = TaskSpec(tag=tag, image_size=32, n_per_domain=8, seed=0)
        x, y = make_task(spec)
        assert x.shape == (8, 3, 32, 32) and y.shape == (8, 3, 32, 32)
        assert x.dtype == np.float32 and y.dtype == np.float32
        for arr in (x, y):
            assert arr.min() >= -1.0 and arr.max() <= 1.0

    @pytest.mark.parametrize("tag", TASK_TAGS)
    def test_domains_disjoint(self, tag):
        x, y = make_task(TaskSpec(tag=tag, n_per_domain=64, seed=1))
        for i in range(64):
            for j in range(64):
                if np.array_equal(x[i], y[j]):
                    pytest.fail(f"image {i} of X equals image {j} of Y")

    def test_eval_split_differs_from_train(self):
        spec = TaskSpec(n_per_domain=32, seed=2)
        x, _ = make_task(spec)
        ex, ey = eval_split(spec, 16)
        assert ex.shape[0] == 16
        assert not any(np.array_equal(ex[0], x[i]) for i in range(32))

    def test_fingerprint_sensitivity(self):
        x, y = make_task(TaskSpec(n_per_domain=8, seed=0))
        f1 = dataset_fingerprint(x, y)
        assert f1 == dataset_fingerprint(x, y)
        y2 = y.copy()
        y2[0, 0, 0, 0] += 1e-3
        assert f1 != dataset_fingerprint(x, y2)


class TestBatchStream:
    def test_reproducible(self):
        data = np.arange(40, dtype=np.float32).reshape(10, 4)
        a = batch_stream(data, 3, seed=7)
        b = batch_stream(data, 3, seed=7)
        for _ in range(8):
            assert np.array_equal(next(a), next(b))

    def test_epoch_coverage(self):
        data = np.arange(12, dtype=np.float32).reshape(12, 1)
        stream = batch_stream(data, 4, seed=0)
        seen = np.concatenate([next(stream) for _ in range(3)]).ravel()
        assert sorted(seen.tolist()) == list(range(12))

    def test_batch_shapes(self):
        x, _ = make_task(TaskSpec(n_per_domain=8, seed=0))
        stream = batch_stream(x, 4, seed=0)
        assert next(stream).shape == (4, 3, 32, 32)


class TestIngestion:
    def test_image_folder_round_trip(self, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(0)
        for i in range(3):
            arr = rng.integers(0, 256, size=(40, 48, 3), dtype=np.uint8)
            Image.fromarray(arr).save(tmp_path / f"img{i}.png")
        data, manifest = load_image_folder(tmp_path, size=16)
        assert data.shape == (3, 3, 16, 16)
        assert data.min() >= -1.0 and data.max() <= 1.0
        assert len(manifest["images"]) == 3
        assert all(len(e["sha256"]) == 64 for e in manifest["images"])
        write_manifest(tmp_path / "manifest.json", manifest)
        again = json.loads((tmp_path / "manifest.json").read_text())
        assert again == manifest

    def test_empty_folder_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image_folder(tmp_path)
