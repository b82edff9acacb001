import struct

import numpy as np
import pytest

from prunelab.data import (
    DataFormatError,
    DatasetSpec,
    gen_synthetic,
    load_cifar_binary,
    load_dataset,
    load_idx,
    write_idx,
)


def test_synthetic_same_seed_is_byte_identical():
    spec = DatasetSpec(kappa=3, dim=5, m_train=64, m_test=64, seed=11)
    a_train, a_test = gen_synthetic(spec)
    b_train, b_test = gen_synthetic(spec)
    assert a_train.inputs.tobytes() == b_train.inputs.tobytes()
    assert a_train.labels.tobytes() == b_train.labels.tobytes()
    assert a_test.inputs.tobytes() == b_test.inputs.tobytes()


def test_synthetic_class_proportions_within_three_sigma():
    spec = DatasetSpec(kappa=4, dim=3, m_train=4000, m_test=4, seed=2)
    train, _ = gen_synthetic(spec)
    p = 1.0 / spec.kappa
    sigma = np.sqrt(spec.m_train * p * (1 - p))
    counts = np.bincount(train.labels, minlength=4)
    assert np.all(np.abs(counts - spec.m_train * p) <= 3 * sigma)


def test_synthetic_linear_probe_separable_when_noise_small():
    spec = DatasetSpec(kappa=3, dim=6, m_train=200, m_test=200, seed=4,
                       separation=8.0, noise=0.3)
    train, _ = gen_synthetic(spec)
    # independent linear probe: one-hot least squares then argmax
    x = np.hstack([train.inputs, np.ones((train.m, 1))])
    onehot = np.eye(3)[train.labels]
    coef, *_ = np.linalg.lstsq(x, onehot, rcond=None)
    pred = (x @ coef).argmax(axis=1)
    assert (pred != train.labels).mean() == 0.0


def test_synthetic_label_noise_half_kills_information():
    spec = DatasetSpec(kappa=2, dim=4, m_train=4000, m_test=4, seed=6,
                       separation=8.0, noise=0.3, label_noise=0.5)
    train, _ = gen_synthetic(spec)
    clean = DatasetSpec(kappa=2, dim=4, m_train=4000, m_test=4, seed=6,
                        separation=8.0, noise=0.3, label_noise=0.0)
    clean_train, _ = gen_synthetic(clean)
    # exactly half the labels were reassigned uniformly to the wrong class,
    # so agreement with the clean labels is ~50% for kappa=2
    agree = (train.labels == clean_train.labels).mean()
    assert abs(agree - 0.5) < 0.05


def test_label_noise_fraction_validated():
    with pytest.raises(ValueError):
        DatasetSpec(label_noise=0.6)


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(ip, lp, pixels, labels)
    ds = load_idx(ip, lp)
    assert ds.inputs.shape == (5, 21)
    np.testing.assert_allclose(ds.inputs, pixels.reshape(5, 21) / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)


def test_idx_header_arithmetic(tmp_path):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    with open(ip, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, 2, 28, 28))
        f.write(bytes(2 * 28 * 28))
    with open(lp, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, 2))
        f.write(bytes([3, 1]))
    ds = load_idx(ip, lp)
    assert ds.inputs.shape == (2, 784)
    assert ds.kappa == 4


def test_idx_bad_magic(tmp_path):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    with open(ip, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000802, 1, 2, 2))
        f.write(bytes(4))
    with open(lp, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, 1) + bytes(1))
    with pytest.raises(DataFormatError, match="magic"):
        load_idx(ip, lp)


def test_idx_truncated_payload_reports_expected_length(tmp_path):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    with open(ip, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, 3, 4, 4))
        f.write(bytes(30))  # expected 48
    with open(lp, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, 3) + bytes(3))
    with pytest.raises(DataFormatError, match="expected 48"):
        load_idx(ip, lp)


def test_idx_count_mismatch(tmp_path):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    with open(ip, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, 2, 2, 2))
        f.write(bytes(8))
    with open(lp, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, 3) + bytes(3))
    with pytest.raises(DataFormatError, match="does not match"):
        load_idx(ip, lp)


def test_cifar_binary_layout(tmp_path):
    rng = np.random.default_rng(1)
    records = []
    labels = [3, 7]
    for lab in labels:
        records.append(bytes([lab]) + rng.integers(0, 256, 3072, dtype=np.uint8).tobytes())
    p = tmp_path / "batch.bin"
    p.write_bytes(b"".join(records))
    ds = load_cifar_binary(p)
    assert ds.inputs.shape == (2, 3, 32, 32)
    np.testing.assert_array_equal(ds.labels, labels)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 100)
    with pytest.raises(DataFormatError, match="multiple"):
        load_cifar_binary(bad)


def test_load_dataset_dispatch(tmp_path):
    spec = DatasetSpec(kappa=2, dim=3, m_train=8, m_test=8, seed=0)
    train, test = load_dataset(spec)
    assert train.m == 8 and test.m == 8
    with pytest.raises(DataFormatError):
        load_dataset(DatasetSpec(kind="parquet"))
