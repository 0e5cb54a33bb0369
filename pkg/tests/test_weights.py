"""Tests for the CFW1 weight container."""

import struct

import numpy as np
import pytest

from cfkit.blocks import ParamStore
from cfkit.config import micro_config, stem_only_config
from cfkit.exceptions import ConfigurationError, IngestionError, WeightMismatchError
from cfkit.main import build_model
from cfkit.weights import MAGIC, check_weights, load_matching, load_weights, save_weights


def test_round_trip_is_bit_exact(tmp_path):
    """Test save then load returns identical names, order, shapes and bytes."""
    _, params = build_model(micro_config(), seed=11)
    path = tmp_path / "w.cfw"
    assert save_weights(params, path) == params.numel()
    loaded = load_weights(path)
    assert loaded.names() == params.names()
    for name, value in params.items():
        assert loaded[name].dtype == value.dtype
        assert loaded[name].tobytes() == value.tobytes()


def test_float64_and_scalar_shapes(tmp_path):
    """Test float64 tensors and rank-0/rank-1 entries survive."""
    store = ParamStore([("a", np.float64(2.5) * np.ones(())), ("b", np.arange(3, dtype=np.float64))])
    path = tmp_path / "w.cfw"
    save_weights(store, path)
    loaded = load_weights(path)
    assert loaded["a"].shape == ()
    assert loaded["a"] == 2.5
    np.testing.assert_array_equal(loaded["b"], [0, 1, 2])


def test_header_layout(tmp_path):
    """Test the magic, count and first entry header bytes."""
    path = tmp_path / "w.cfw"
    save_weights(ParamStore([("w", np.zeros((2, 3), dtype=np.float32))]), path)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<I", raw, 4) == (1,)
    assert struct.unpack_from("<H", raw, 8) == (1,)
    assert raw[10:11] == b"w"
    assert struct.unpack_from("<BB2Q", raw, 11) == (0, 2, 2, 3)
    assert len(raw) == 11 + 2 + 16 + 6 * 4


def test_unsupported_dtype(tmp_path):
    """Test integer tensors cannot be saved."""
    with pytest.raises(WeightMismatchError) as exc_info:
        save_weights(ParamStore([("ids", np.arange(3))]), tmp_path / "w.cfw")
    assert exc_info.value.field == "ids"


def test_bad_magic(tmp_path):
    """Test files without the CFW1 magic are refused at offset 0."""
    path = tmp_path / "w.cfw"
    path.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(IngestionError) as exc_info:
        load_weights(path)
    assert exc_info.value.offset == 0


def test_truncated_payload(tmp_path):
    """Test a cut-off payload reports where the entry's data starts."""
    path = tmp_path / "w.cfw"
    save_weights(ParamStore([("w", np.ones((4,), dtype=np.float32))]), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(IngestionError) as exc_info:
        load_weights(path)
    assert exc_info.value.offset == len(raw) - 16
    assert "truncated" in str(exc_info.value)


def test_truncated_header(tmp_path):
    """Test a file that ends inside the entry count."""
    path = tmp_path / "w.cfw"
    path.write_bytes(MAGIC + b"\x01\x00")
    with pytest.raises(IngestionError) as exc_info:
        load_weights(path)
    assert exc_info.value.offset == 4


def test_missing_file(tmp_path):
    """Test a missing path is an ingestion error."""
    with pytest.raises(IngestionError):
        load_weights(tmp_path / "absent.cfw")


def test_duplicate_names_rejected(tmp_path):
    """Test a file naming one tensor twice cannot be loaded."""
    entry = struct.pack("<H", 1) + b"w" + struct.pack("<BBQ", 0, 1, 1) + np.float32(1).tobytes()
    path = tmp_path / "w.cfw"
    path.write_bytes(MAGIC + struct.pack("<I", 2) + entry + entry)
    with pytest.raises(ConfigurationError):
        load_weights(path)


def test_check_weights_mismatches():
    """Test order, shape, missing and extra entries are each reported."""
    expected = ParamStore([("a", np.zeros(2)), ("b", np.zeros(3))])
    check_weights(ParamStore([("a", np.ones(2)), ("b", np.ones(3))]), expected)

    with pytest.raises(WeightMismatchError) as exc_info:
        check_weights(ParamStore([("b", np.ones(3)), ("a", np.ones(2))]), expected)
    assert exc_info.value.field == "b"
    with pytest.raises(WeightMismatchError, match="shape"):
        check_weights(ParamStore([("a", np.ones(2)), ("b", np.ones(4))]), expected)
    with pytest.raises(WeightMismatchError, match="missing"):
        check_weights(ParamStore([("a", np.ones(2))]), expected)
    with pytest.raises(WeightMismatchError, match="not a parameter"):
        check_weights(ParamStore([("a", np.ones(2)), ("b", np.ones(3)), ("c", np.ones(1))]), expected)


def test_load_matching_casts_dtype(tmp_path):
    """Test weights saved in float64 load into a float32 model."""
    _, params = build_model(stem_only_config(), dtype=np.float64)
    path = tmp_path / "w.cfw"
    save_weights(params, path)
    _, target = build_model(stem_only_config())
    loaded = load_matching(path, target)
    assert loaded.dtype == np.float32
    np.testing.assert_allclose(loaded["stem.conv.weight"], params["stem.conv.weight"], rtol=1e-6)
