import numpy as np
import pytest

from mgil.data import (
    CIFAR_RECORD_BYTES,
    DataFormatError,
    avg_pool_image,
    load_cifar10,
    lowres_transform,
    render_heatmap,
    synth_class_image,
    synth_keypoint_dataset,
    write_synthetic_cifar,
)
from mgil.rng import derived_generator


def write_raw_cifar(path, records):
    """Write hand-built (label, pixel_bytes) records in CIFAR binary layout."""
    out = np.empty((len(records), CIFAR_RECORD_BYTES), dtype=np.uint8)
    for i, (label, pixels) in enumerate(records):
        out[i, 0] = label
        out[i, 1:] = pixels
    out.tofile(path)


class TestCifarIngestion:
    def test_raw_byte_oracle(self, tmp_path):
        # decode a hand-built record and check pixels land at known indices
        rng = derived_generator(0, "cifar-oracle")
        pixels = rng.integers(0, 256, size=3072).astype(np.uint8)
        write_raw_cifar(tmp_path / "data_batch_1.bin", [(7, pixels)])
        write_raw_cifar(tmp_path / "test_batch.bin", [(2, pixels)])
        sample = load_cifar10(str(tmp_path), "train")[0]
        assert sample.label == 7
        expected = pixels.reshape(3, 32, 32).astype(np.float32) / 255.0
        assert np.array_equal(sample.image, expected)
        # channel-major layout: byte 0 is red at (0, 0), byte 1024 is green
        assert sample.image[0, 0, 0] == np.float32(pixels[0]) / np.float32(255)
        assert sample.image[1, 0, 0] == np.float32(pixels[1024]) / np.float32(255)
        assert sample.image[2, 31, 31] == np.float32(pixels[3071]) / np.float32(255)
        assert load_cifar10(str(tmp_path), "test")[0].label == 2

    def test_multiple_train_batches_ordered(self, tmp_path):
        pixels = np.zeros(3072, np.uint8)
        write_raw_cifar(tmp_path / "data_batch_1.bin", [(1, pixels), (2, pixels)])
        write_raw_cifar(tmp_path / "data_batch_2.bin", [(3, pixels)])
        labels = [s.label for s in load_cifar10(str(tmp_path), "train")]
        assert labels == [1, 2, 3]

    def test_truncated_file_rejected(self, tmp_path):
        (tmp_path / "test_batch.bin").write_bytes(b"\x00" * (CIFAR_RECORD_BYTES - 1))
        with pytest.raises(DataFormatError, match="not a multiple"):
            load_cifar10(str(tmp_path), "test")

    def test_missing_files_rejected(self, tmp_path):
        with pytest.raises(DataFormatError, match="no CIFAR batch files"):
            load_cifar10(str(tmp_path), "train")

    def test_unknown_split_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="split"):
            load_cifar10(str(tmp_path), "validation")


class TestSyntheticCifar:
    def test_counts_and_label_range(self, tmp_path):
        write_synthetic_cifar(str(tmp_path), 64, 32, seed=5)
        train = load_cifar10(str(tmp_path), "train")
        test = load_cifar10(str(tmp_path), "test")
        assert len(train) == 64 and len(test) == 32
        labels = {s.label for s in train + test}
        assert labels <= set(range(10))
        assert len(labels) > 3  # all-ish classes present in 96 draws

    def test_deterministic_bytes(self, tmp_path):
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        write_synthetic_cifar(str(a_dir), 16, 8, seed=9)
        write_synthetic_cifar(str(b_dir), 16, 8, seed=9)
        for name in ("data_batch_1.bin", "test_batch.bin"):
            assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()

    def test_images_in_unit_range(self):
        rng = derived_generator(0, "synth-range")
        for label in range(10):
            img = synth_class_image(label, rng)
            assert img.shape == (3, 32, 32)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_classes_distinguishable_by_motif_correlation(self):
        # sliding zero-mean motif templates should match the embedded patch
        # of their own class best
        from mgil.data import _CLASS_MOTIFS
        rng = derived_generator(0, "synth-sep")
        templates = np.stack([np.kron(m, np.ones((2, 2), np.float32))
                              for m in _CLASS_MOTIFS])
        templates -= templates.mean(axis=(1, 2), keepdims=True)
        correct = 0
        n = 100
        for i in range(n):
            label = int(rng.integers(0, 10))
            img = synth_class_image(label, rng, noise=0.0)
            gray = img.mean(axis=0)
            # the patch lands on even offsets; odd offsets would alias the
            # phase that distinguishes translated motifs
            windows = np.lib.stride_tricks.sliding_window_view(gray, (8, 8))[::2, ::2]
            scores = np.einsum("ijkl,tkl->tij", windows, templates).max(axis=(1, 2))
            correct += int(np.argmax(scores) == label)
        assert correct / n > 0.9


class TestLowres:
    def test_avg_pool_oracle(self):
        img = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        pooled = avg_pool_image(img, 2)
        assert np.array_equal(pooled, [[[2.5, 4.5], [10.5, 12.5]]])

    def test_indivisible_factor_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            avg_pool_image(np.zeros((3, 6, 6), np.float32), 4)

    def test_label_preserved_and_size_halved(self, tmp_path):
        write_synthetic_cifar(str(tmp_path), 4, 1, seed=3)
        for s in load_cifar10(str(tmp_path), "train"):
            low = lowres_transform(s, 2)
            assert low.label == s.label
            assert low.image.shape == (3, 16, 16)

    def test_factor_one_is_identity(self):
        rng = derived_generator(0, "lowres-id")
        s = synth_keypoint_dataset(1, 16, 0)[0]
        assert lowres_transform(s, 1) is s

    def test_keypoint_and_heatmap_rescaled(self):
        s = synth_keypoint_dataset(1, 32, 1)[0]
        low = lowres_transform(s, 2)
        assert low.keypoint == (s.keypoint[0] / 2, s.keypoint[1] / 2)
        assert low.heatmap.shape == (1, 4, 4)
        peak_flat = int(np.argmax(low.heatmap[0]))
        py, px = divmod(peak_flat, 4)
        assert abs(px - low.keypoint[0] / 4) <= 1
        assert abs(py - low.keypoint[1] / 4) <= 1


class TestHeatmaps:
    def test_peak_value_and_location(self):
        hm = render_heatmap((8, 8), (3.0, 5.0), sigma=1.0)
        assert hm.shape == (8, 8)
        assert hm[5, 3] == pytest.approx(1.0)
        assert hm.max() == pytest.approx(1.0)

    def test_radial_symmetry(self):
        hm = render_heatmap((9, 9), (4.0, 4.0), sigma=1.5)
        assert hm[4, 6] == pytest.approx(hm[4, 2])
        assert hm[6, 4] == pytest.approx(hm[2, 4])

    def test_keypoint_dataset_determinism_and_bounds(self):
        a = synth_keypoint_dataset(5, 16, 7)
        b = synth_keypoint_dataset(5, 16, 7)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.image, sb.image)
            assert sa.keypoint == sb.keypoint
            assert sa.image.shape == (3, 16, 16)
            assert sa.heatmap.shape == (1, 4, 4)
            assert 0 <= sa.keypoint[0] < 16 and 0 <= sa.keypoint[1] < 16

    def test_keypoint_odd_size_rejected(self):
        with pytest.raises(ValueError, match="even"):
            synth_keypoint_dataset(1, 15, 0)
