import numpy as np
import pytest

from flowcrypt import (
    CorruptFileError,
    EncryptionContext,
    build_default_flow,
    load_context,
    sample_haar_orthogonal,
    save_context,
)
from flowcrypt.formats import (
    dataset_to_bytes,
    key_to_bytes,
    load_csv,
    load_dataset,
    load_key,
    load_model,
    model_to_bytes,
    save_csv,
    save_dataset,
    save_key,
    save_model,
)


def small_model(seed=0):
    model = build_default_flow(3, blocks=2, hidden=4, rng=seed, head_scale=0.5)
    model.initialize_actnorms(np.random.default_rng(seed).standard_normal((64, 3)))
    return model


def test_key_roundtrip_byte_exact(tmp_path):
    key = sample_haar_orthogonal(5, 7)
    p1 = tmp_path / "a.fkey"
    p2 = tmp_path / "b.fkey"
    save_key(key, p1)
    loaded = load_key(p1)
    save_key(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(loaded.matrix, key.matrix)
    assert loaded.seed is None


def test_key_crc_flip_detected(tmp_path):
    key = sample_haar_orthogonal(4, 8)
    path = tmp_path / "k.fkey"
    save_key(key, path)
    raw = bytearray(path.read_bytes())
    raw[20] ^= 0x01  # flip a payload bit
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptFileError, match="CRC"):
        load_key(path)


def test_non_orthogonal_key_file_rejected(tmp_path):
    # Hand-assemble a valid-CRC file whose matrix is not orthogonal.
    import struct
    import zlib

    bad = np.array([[1.0, 0.2], [0.0, 1.0]])
    body = b"FKEY" + struct.pack("<HI", 1, 2) + bad.astype("<f8").tobytes()
    data = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path = tmp_path / "bad.fkey"
    path.write_bytes(data)
    with pytest.raises(CorruptFileError, match="orthogonal"):
        load_key(path)


def test_model_roundtrip_byte_exact(tmp_path):
    model = small_model()
    p1 = tmp_path / "m1.fmod"
    p2 = tmp_path / "m2.fmod"
    save_model(model, p1)
    loaded = load_model(p1)
    save_model(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    x = np.random.default_rng(1).standard_normal((10, 3))
    z1, ld1 = model.forward(x)
    z2, ld2 = loaded.forward(x)
    assert np.array_equal(z1, z2)
    assert np.array_equal(ld1, ld2)


def test_model_bad_magic(tmp_path):
    path = tmp_path / "x.fmod"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CorruptFileError, match="magic"):
        load_model(path)


def test_dataset_roundtrip_with_labels(tmp_path):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((20, 4))
    y = rng.integers(0, 3, 20)
    path = tmp_path / "d.ftns"
    save_dataset(x, path, labels=y)
    lx, ly = load_dataset(path)
    assert np.array_equal(lx, x)
    assert np.array_equal(ly, y)


def test_dataset_roundtrip_unlabeled(tmp_path):
    x = np.random.default_rng(3).standard_normal((7, 2))
    path = tmp_path / "u.ftns"
    save_dataset(x, path)
    lx, ly = load_dataset(path)
    assert np.array_equal(lx, x)
    assert ly is None


def test_dataset_truncation_detected(tmp_path):
    x = np.random.default_rng(4).standard_normal((5, 2))
    path = tmp_path / "t.ftns"
    save_dataset(x, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(CorruptFileError):
        load_dataset(path)


def test_serialization_is_deterministic():
    m1 = small_model(seed=5)
    m2 = small_model(seed=5)
    assert model_to_bytes(m1) == model_to_bytes(m2)
    assert key_to_bytes(sample_haar_orthogonal(3, 6)) == key_to_bytes(sample_haar_orthogonal(3, 6))
    x = np.arange(12.0).reshape(3, 4)
    assert dataset_to_bytes(x) == dataset_to_bytes(x.copy())


def test_context_roundtrip_and_fingerprint(tmp_path):
    ctx = EncryptionContext(small_model(), sample_haar_orthogonal(3, 9))
    mp, kp = tmp_path / "c.fmod", tmp_path / "c.fkey"
    save_context(ctx, mp, kp)
    loaded = load_context(mp, kp)
    assert loaded.fingerprint() == ctx.fingerprint()
    mp2, kp2 = tmp_path / "c2.fmod", tmp_path / "c2.fkey"
    save_context(loaded, mp2, kp2)
    assert mp.read_bytes() == mp2.read_bytes()
    assert kp.read_bytes() == kp2.read_bytes()


def test_csv_roundtrip(tmp_path):
    x = np.random.default_rng(5).standard_normal((9, 3))
    y = np.random.default_rng(6).integers(0, 2, 9)
    path = tmp_path / "d.csv"
    save_csv(x, path, labels=y)
    lx, ly = load_csv(path)
    assert np.allclose(lx, x, atol=1e-15)
    assert np.array_equal(ly, y)


def test_csv_unlabeled_autodetect(tmp_path):
    x = np.random.default_rng(7).standard_normal((5, 2))
    path = tmp_path / "plain.csv"
    save_csv(x, path)
    lx, ly = load_csv(path)
    assert ly is None
    assert np.allclose(lx, x, atol=1e-15)


def test_csv_explicit_labeled_override(tmp_path):
    # Integer-valued features would fool the autodetector; labeled=False wins.
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    path = tmp_path / "ints.csv"
    save_csv(x, path)
    lx, ly = load_csv(path, labeled=False)
    assert ly is None
    assert lx.shape == (2, 2)
