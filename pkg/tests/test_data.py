"""Synthetic generation, dataset I/O, and augmentation."""

import os

import cv2
import numpy as np
import pytest

from gmbinet.data import (DatasetError, Sample, SynthSpec, augment,
                          export_prediction, generate, generate_set,
                          load_classification_dataset, load_dataset,
                          load_prediction, save_sample, zscore)
from gmbinet.tensor import Tensor


class TestGeneration:
    def test_deterministic(self):
        spec = SynthSpec(kind="patch", seed=42)
        a, b = generate(spec), generate(spec)
        np.testing.assert_array_equal(a.image.data, b.image.data)
        np.testing.assert_array_equal(a.mask.data, b.mask.data)
        assert a.id == b.id

    def test_different_seeds_differ(self):
        a = generate(SynthSpec(kind="patch", seed=1))
        b = generate(SynthSpec(kind="patch", seed=2))
        assert not np.array_equal(a.image.data, b.image.data)

    def test_zero_defects_gives_empty_mask(self):
        spec = SynthSpec(kind="scratch", count_min=0, count_max=0, seed=0)
        sample = generate(spec)
        assert sample.mask.data.sum() == 0

    def test_mask_is_strictly_binary(self):
        for kind in ("scratch", "patch", "inclusion"):
            sample = generate(SynthSpec(kind=kind, seed=3))
            values = np.unique(sample.mask.data)
            assert set(values.tolist()) <= {0.0, 1.0}

    def test_scratch_single_component(self):
        """Connected-component oracle: one scratch, one component."""
        spec = SynthSpec(kind="scratch", count_min=1, count_max=1, noise=0.0, seed=5)
        sample = generate(spec)
        mask8 = sample.mask.data[0, 0].astype(np.uint8)
        n_components, _ = cv2.connectedComponents(mask8, connectivity=8)
        assert n_components == 2  # background + one scratch

    def test_image_range_and_shape(self):
        sample = generate(SynthSpec(kind="inclusion", canvas=96, seed=0))
        assert sample.image.shape == (1, 3, 96, 96)
        assert sample.mask.shape == (1, 1, 96, 96)
        assert 0.0 <= sample.image.data.min() and sample.image.data.max() <= 1.0

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            SynthSpec(kind="dent")
        with pytest.raises(ValueError):
            SynthSpec(kind="patch", canvas=32)
        with pytest.raises(ValueError):
            SynthSpec(kind="patch", count_min=3, count_max=1)

    def test_generate_set_cycles_kinds(self):
        samples = generate_set(("scratch", "patch"), 4, base_seed=10)
        assert [s.id.split("-")[0] for s in samples] == \
            ["scratch", "patch", "scratch", "patch"]
        assert len({s.id for s in samples}) == 4


class TestDatasetIO:
    def test_save_load_roundtrip(self, tmp_path):
        samples = generate_set(("patch",), 3, base_seed=0, canvas=64)
        root = str(tmp_path / "ds")
        for s in samples:
            save_sample(s, root)
        loaded = load_dataset(root)
        assert [s.id for s in loaded] == sorted(s.id for s in samples)
        by_id = {s.id: s for s in samples}
        for s in loaded:
            np.testing.assert_array_equal(s.mask.data, by_id[s.id].mask.data)
            np.testing.assert_allclose(s.image.data, by_id[s.id].image.data,
                                       atol=1.0 / 255 + 1e-6)

    def test_missing_mask_lists_offenders(self, tmp_path):
        root = str(tmp_path / "ds")
        samples = generate_set(("patch",), 2, base_seed=0, canvas=64)
        for s in samples:
            save_sample(s, root)
        os.remove(os.path.join(root, "masks", samples[0].id + ".png"))
        with pytest.raises(DatasetError, match=samples[0].id):
            load_dataset(root)

    def test_missing_layout_rejected(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(str(tmp_path))

    def test_split_manifest(self, tmp_path):
        root = str(tmp_path / "ds")
        samples = generate_set(("patch",), 4, base_seed=0, canvas=64)
        for s in samples:
            save_sample(s, root)
        ids = sorted(s.id for s in samples)
        with open(os.path.join(root, "split.txt"), "w") as f:
            f.write("[train]\n" + "\n".join(ids[:3]) + "\n[val]\n" + ids[3] + "\n")
        assert [s.id for s in load_dataset(root, "train")] == ids[:3]
        assert [s.id for s in load_dataset(root, "val")] == [ids[3]]
        with pytest.raises(DatasetError):
            load_dataset(str(tmp_path / "nosplit"), "train")

    def test_classification_layout(self, tmp_path):
        for cls in ("crazing", "scratches"):
            d = tmp_path / "cls" / cls
            d.mkdir(parents=True)
            for i in range(2):
                img = np.full((32, 32), 100 + i, np.uint8)
                cv2.imwrite(str(d / f"s{i}.png"), img)
        images, labels, classes = load_classification_dataset(str(tmp_path / "cls"))
        assert classes == ["crazing", "scratches"]
        assert labels.tolist() == [0, 0, 1, 1]
        assert images[0].shape == (1, 3, 32, 32)

    def test_empty_classification_root(self, tmp_path):
        with pytest.raises(DatasetError):
            load_classification_dataset(str(tmp_path))


class TestAugmentation:
    def test_deterministic_per_seed_and_id(self):
        sample = generate(SynthSpec(kind="patch", seed=0))
        a = augment(sample, seed=7)
        b = augment(sample, seed=7)
        np.testing.assert_array_equal(a.image.data, b.image.data)
        np.testing.assert_array_equal(a.mask.data, b.mask.data)
        c = augment(sample, seed=8)
        assert not np.array_equal(a.image.data, c.image.data)

    def test_mask_stays_binary_and_shape_kept(self):
        sample = generate(SynthSpec(kind="patch", seed=1))
        out = augment(sample, seed=3)
        assert out.mask.shape == sample.mask.shape
        assert out.image.shape == sample.image.shape
        assert set(np.unique(out.mask.data).tolist()) <= {0.0, 1.0}

    def test_normalized_output_is_zscored(self):
        sample = generate(SynthSpec(kind="patch", seed=2))
        out = augment(sample, seed=0)
        img = out.image.data
        assert abs(img.mean()) < 1e-3
        assert abs(img.std() - 1.0) < 1e-2

    def test_unnormalized_keeps_unit_range(self):
        sample = generate(SynthSpec(kind="patch", seed=2))
        out = augment(sample, seed=0, normalize=False)
        assert out.image.data.min() >= 0.0 and out.image.data.max() <= 1.0

    def test_mask_roughly_tracks_image(self):
        """The defect region must survive the joint transform: the dark
        painted area of the augmented image should coincide with the
        augmented mask far better than with the original mask."""
        spec = SynthSpec(kind="patch", seed=9, noise=0.0)
        sample = generate(spec)
        out = augment(sample, seed=11, normalize=False)
        gray = out.image.data[0, 0]
        mask = out.mask.data[0, 0]
        if mask.sum() == 0:
            pytest.skip("augmentation cropped the defect away")
        inside = gray[mask > 0.5].mean()
        outside = gray[mask < 0.5].mean()
        assert abs(inside - outside) > 0.05

    def test_zscore(self, rng):
        x = rng.random((3, 8, 8)).astype(np.float32) * 5 + 2
        z = zscore(x)
        assert abs(z.mean()) < 1e-4
        assert abs(z.std() - 1.0) < 1e-3


class TestPredictionExport:
    def test_roundtrip_quantized(self, tmp_path, rng):
        arr = rng.random((1, 1, 16, 16)).astype(np.float32)
        path = str(tmp_path / "pred.png")
        export_prediction(Tensor(arr), path)
        back = load_prediction(path)
        np.testing.assert_allclose(back, arr[0, 0], atol=0.5 / 255 + 1e-6)

    def test_values_are_round_255p(self, tmp_path):
        arr = np.array([[0.0, 0.5], [0.25, 1.0]], np.float32).reshape(1, 1, 2, 2)
        path = str(tmp_path / "pred.png")
        export_prediction(Tensor(arr), path)
        raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        np.testing.assert_array_equal(raw, [[0, 128], [64, 255]])

    def test_multichannel_rejected(self, tmp_path, rng):
        with pytest.raises(ValueError):
            export_prediction(Tensor(rng.random((1, 2, 4, 4))), str(tmp_path / "x.png"))
