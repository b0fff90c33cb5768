import io

import numpy as np
import pytest

from style_toolkit import serialization


def test_array_round_trip():
    arr = np.linspace(-3, 3, 17)
    data = serialization.array_to_bytes(arr)
    out = serialization.array_from_bytes(data)
    assert out.dtype == np.float64
    np.testing.assert_allclose(out, arr, atol=1e-6)


def test_header_layout():
    data = serialization.array_to_bytes(np.zeros(5))
    assert data[:4] == b"SCLT"
    assert len(data) == 16 + 5 * 4


def test_exact_for_float32_representable_values():
    arr = np.array([0.5, -2.25, 1024.0, 0.0])
    out = serialization.array_from_bytes(serialization.array_to_bytes(arr))
    assert np.array_equal(out, arr)


def test_bad_magic_rejected():
    data = bytearray(serialization.array_to_bytes(np.zeros(3)))
    data[:4] = b"XXXX"
    with pytest.raises(ValueError, match="magic"):
        serialization.array_from_bytes(bytes(data))


def test_truncated_payload_rejected():
    data = serialization.array_to_bytes(np.zeros(3))
    with pytest.raises(ValueError, match="truncated"):
        serialization.array_from_bytes(data[:-2])


def test_json_header_round_trip():
    buf = io.BytesIO()
    serialization.write_json_header(buf, {"b": 2, "a": [1, 2]})
    serialization.write_array(buf, np.arange(4.0))
    buf.seek(0)
    assert serialization.read_json_header(buf) == {"a": [1, 2], "b": 2}
    np.testing.assert_array_equal(serialization.read_array(buf), np.arange(4.0))
