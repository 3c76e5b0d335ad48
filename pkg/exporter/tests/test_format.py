"""Interchange-format conformance of the exporter's writer."""

import struct

import numpy as np
import pytest

from douc_exporter.tensorio import MAGIC, load_tensor, save_tensor


class TestTensorIO:
    @pytest.mark.parametrize("shape", [(3,), (2, 4), (2, 3, 4), (2, 2, 2, 2)])
    def test_round_trip(self, tmp_path, shape):
        rng = np.random.default_rng(sum(shape))
        arr = rng.standard_normal(shape).astype(np.float32)
        p = tmp_path / "t.dten"
        save_tensor(p, arr)
        assert np.array_equal(load_tensor(p), arr)

    def test_byte_layout_matches_spec(self, tmp_path):
        arr = np.array([[1.5, -2.0], [0.25, 4.0]], dtype=np.float32)
        p = tmp_path / "t.dten"
        save_tensor(p, arr)
        want = (
            MAGIC
            + struct.pack("<BB", 0, 2)
            + struct.pack("<2I", 2, 2)
            + struct.pack("<4f", 1.5, -2.0, 0.25, 4.0)
        )
        assert p.read_bytes() == want

    def test_rejects_bad_rank(self, tmp_path):
        with pytest.raises(ValueError):
            save_tensor(tmp_path / "bad.dten", np.ones((1, 1, 1, 1, 1), np.float32))

    def test_truncated_payload_detected(self, tmp_path):
        p = tmp_path / "t.dten"
        save_tensor(p, np.ones((4, 4), np.float32))
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(ValueError):
            load_tensor(p)
