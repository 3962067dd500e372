import gzip
import struct

import numpy as np
import pytest

from reshuffle_opt import (
    ConfigurationError,
    IdxFormatError,
    IdxLengthError,
    IdxValueError,
    load_idx_dataset,
    make_gaussian_blobs,
    parse_idx_images,
    parse_idx_labels,
    serialize_idx_images,
    serialize_idx_labels,
)


def _image_blob(count=3, rows=2, cols=2, fill=None):
    body = bytes(range(count * rows * cols)) if fill is None else fill
    return struct.pack(">4I", 0x00000803, count, rows, cols) + body


def _label_blob(labels=(0, 1, 2)):
    return struct.pack(">2I", 0x00000801, len(labels)) + bytes(labels)


class TestParsing:
    def test_image_round_trip_is_bit_exact(self):
        pixels = np.arange(12).reshape(3, 4) / 255.0
        blob = serialize_idx_images(pixels, 2, 2)
        decoded, rows, cols = parse_idx_images(blob)
        assert (rows, cols) == (2, 2)
        assert np.array_equal(decoded, pixels)
        assert serialize_idx_images(decoded, rows, cols) == blob

    def test_label_round_trip_is_bit_exact(self):
        labels = np.array([0, 9, 3, 3, 7])
        blob = serialize_idx_labels(labels)
        decoded = parse_idx_labels(blob)
        assert decoded.dtype == np.int64
        assert np.array_equal(decoded, labels)
        assert serialize_idx_labels(decoded) == blob

    def test_gzipped_input_is_transparent(self):
        blob = _image_blob()
        plain = parse_idx_images(blob)[0]
        zipped = parse_idx_images(gzip.compress(blob))[0]
        assert np.array_equal(plain, zipped)
        labels = parse_idx_labels(gzip.compress(_label_blob()))
        assert np.array_equal(labels, [0, 1, 2])

    def test_pixels_scaled_to_unit_interval(self):
        decoded, _, _ = parse_idx_images(
            _image_blob(count=1, fill=bytes([0, 255, 128, 1]))
        )
        assert decoded.min() == 0.0
        assert decoded.max() == 1.0
        assert decoded[0, 2] == 128 / 255.0

    def test_wrong_magic_rejected_with_hex_detail(self):
        blob = struct.pack(">4I", 0x00000804, 1, 2, 2) + bytes(4)
        with pytest.raises(IdxFormatError, match="0x00000803"):
            parse_idx_images(blob)
        with pytest.raises(IdxFormatError):
            parse_idx_labels(_image_blob())

    def test_truncated_header_rejected(self):
        with pytest.raises(IdxLengthError):
            parse_idx_images(b"\x00\x00\x08")
        with pytest.raises(IdxLengthError):
            parse_idx_labels(b"")

    def test_truncated_payload_rejected(self):
        with pytest.raises(IdxLengthError):
            parse_idx_images(_image_blob()[:-1])
        with pytest.raises(IdxLengthError):
            parse_idx_labels(_label_blob()[:-1])

    def test_trailing_bytes_rejected(self):
        with pytest.raises(IdxLengthError):
            parse_idx_images(_image_blob() + b"\x00")
        with pytest.raises(IdxLengthError):
            parse_idx_labels(_label_blob() + b"\x00")

    def test_hostile_count_rejected_before_allocation(self):
        # header declares ~2^44 pixels with a 4-byte body; must fail on the
        # length check, not inside an allocation
        blob = struct.pack(">4I", 0x00000803, 2**32 - 1, 4096, 1) + bytes(4)
        with pytest.raises(IdxLengthError):
            parse_idx_images(blob)

    def test_label_values_above_nine_rejected(self):
        with pytest.raises(IdxValueError):
            parse_idx_labels(_label_blob((1, 10, 3)))

    def test_corrupt_gzip_rejected(self):
        broken = gzip.compress(_label_blob())[:-4]
        with pytest.raises(IdxLengthError):
            parse_idx_labels(broken)

    def test_serializer_validates_shape(self):
        with pytest.raises(ConfigurationError):
            serialize_idx_images(np.zeros((2, 5)), 2, 2)
        with pytest.raises(ConfigurationError):
            serialize_idx_labels(np.array([1, 11]))
        with pytest.raises(ConfigurationError):
            serialize_idx_labels(np.zeros((2, 2)))


class TestGaussianBlobs:
    def test_shapes_and_range(self):
        dataset = make_gaussian_blobs(3, 10, 4, 2.0, seed=0)
        assert dataset.samples == 30
        assert dataset.feature_dim == 4
        assert dataset.features.shape == (30, 4)
        assert dataset.features.min() >= 0.0
        assert dataset.features.max() <= 1.0
        assert dataset.classes == 3
        assert np.array_equal(np.bincount(dataset.labels), [10, 10, 10])

    def test_seed_determinism(self):
        a = make_gaussian_blobs(2, 5, 2, 3.0, seed=4)
        b = make_gaussian_blobs(2, 5, 2, 3.0, seed=4)
        c = make_gaussian_blobs(2, 5, 2, 3.0, seed=5)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
        assert not np.array_equal(a.features, c.features)

    def test_more_classes_than_dims(self):
        # classes beyond the dimension count wrap onto the axes further out
        dataset = make_gaussian_blobs(5, 50, 2, 6.0, seed=1)
        per_class_mean = np.array(
            [
                dataset.features[dataset.labels == c].mean(axis=0)
                for c in range(5)
            ]
        )
        # class 0 and class 2 share axis 0 but sit at different offsets
        assert per_class_mean[2, 0] > per_class_mean[0, 0]

    def test_bad_inputs(self):
        with pytest.raises(ConfigurationError):
            make_gaussian_blobs(1, 5, 2, 1.0)
        with pytest.raises(ConfigurationError):
            make_gaussian_blobs(2, 0, 2, 1.0)
        with pytest.raises(ConfigurationError):
            make_gaussian_blobs(2, 5, 0, 1.0)
        with pytest.raises(ConfigurationError):
            make_gaussian_blobs(2, 5, 2, 0.0)


class TestLoadIdxDataset:
    def _write_pair(self, tmp_path, count=4):
        pixels = np.linspace(0.0, 1.0, count * 4).reshape(count, 4)
        pixels = np.rint(pixels * 255.0) / 255.0
        labels = np.arange(count) % 3
        images_path = tmp_path / "images.idx"
        labels_path = tmp_path / "labels.idx"
        images_path.write_bytes(serialize_idx_images(pixels, 2, 2))
        labels_path.write_bytes(serialize_idx_labels(labels))
        return images_path, labels_path, pixels, labels

    def test_loads_pair(self, tmp_path):
        images_path, labels_path, pixels, labels = self._write_pair(tmp_path)
        dataset = load_idx_dataset(images_path, labels_path)
        assert dataset.samples == 4
        assert dataset.feature_dim == 4
        assert np.array_equal(dataset.features, pixels)
        assert np.array_equal(dataset.labels, labels)
        assert dataset.classes == 3

    def test_limit_and_explicit_classes(self, tmp_path):
        images_path, labels_path, _, _ = self._write_pair(tmp_path)
        dataset = load_idx_dataset(images_path, labels_path, limit=2, classes=5)
        assert dataset.samples == 2
        assert dataset.classes == 5
        with pytest.raises(ConfigurationError):
            load_idx_dataset(images_path, labels_path, limit=0)
        with pytest.raises(ConfigurationError):
            load_idx_dataset(images_path, labels_path, classes=2)

    def test_count_mismatch_rejected(self, tmp_path):
        images_path, labels_path, _, _ = self._write_pair(tmp_path)
        labels_path.write_bytes(serialize_idx_labels(np.arange(3) % 3))
        with pytest.raises(ConfigurationError):
            load_idx_dataset(images_path, labels_path)
