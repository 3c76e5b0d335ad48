"""Tests for the tensor interchange format and manifest validation."""

import json
import struct

import numpy as np
import pytest

from douc.errors import (
    BadMagicError,
    ManifestError,
    PayloadMismatchError,
    TensorFileError,
    UnsupportedDtypeError,
)
from douc.manifest import load_manifest
from douc.tensorfile import MAGIC, read_tensor, read_tensor_shape, write_tensor


class TestTensorFile:
    @pytest.mark.parametrize(
        "shape", [(5,), (3, 4), (2, 3, 4), (2, 2, 2, 2)], ids=["r1", "r2", "r3", "r4"]
    )
    def test_round_trip_each_rank(self, tmp_path, shape):
        rng = np.random.default_rng(sum(shape))
        arr = rng.standard_normal(shape).astype(np.float32)
        p = tmp_path / "t.dten"
        write_tensor(p, arr)
        back = read_tensor(p)
        assert back.dtype == np.float32
        assert np.array_equal(back, arr)

    def test_round_trip_special_values(self, tmp_path):
        arr = np.array(
            [0.0, -0.0, 1e-45, -1e-45, 3.4e38, -3.4e38, 1e-38], dtype=np.float32
        ).reshape(1, 7)
        p = tmp_path / "special.dten"
        write_tensor(p, arr)
        back = read_tensor(p)
        assert back.tobytes() == arr.tobytes()

    def test_byte_layout_is_pinned(self, tmp_path):
        arr = np.array([[1.5, -2.0], [0.25, 4.0]], dtype=np.float32)
        p = tmp_path / "layout.dten"
        write_tensor(p, arr)
        raw = p.read_bytes()
        want = (
            MAGIC
            + struct.pack("<BB", 0, 2)
            + struct.pack("<2I", 2, 2)
            + struct.pack("<4f", 1.5, -2.0, 0.25, 4.0)
        )
        assert raw == want

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "trunc.dten"
        write_tensor(p, np.ones((3, 4), dtype=np.float32))
        data = p.read_bytes()
        p.write_bytes(data[:-8])
        with pytest.raises(PayloadMismatchError):
            read_tensor(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.dten"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(BadMagicError):
            read_tensor(p)

    def test_unsupported_dtype(self, tmp_path):
        p = tmp_path / "dtype.dten"
        p.write_bytes(MAGIC + struct.pack("<BB", 7, 1) + struct.pack("<I", 1) + b"\x00" * 4)
        with pytest.raises(UnsupportedDtypeError):
            read_tensor(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_tensor(tmp_path / "nope.dten")

    def test_overwrite_is_atomic_replace(self, tmp_path):
        p = tmp_path / "over.dten"
        write_tensor(p, np.zeros((2, 2), dtype=np.float32))
        write_tensor(p, np.ones((3,), dtype=np.float32))
        assert np.array_equal(read_tensor(p), np.ones((3,), dtype=np.float32))
        leftovers = [q for q in tmp_path.iterdir() if q.suffix == ".tmp"]
        assert leftovers == []

    def test_rank_zero_and_five_rejected(self, tmp_path):
        with pytest.raises(TensorFileError):
            write_tensor(tmp_path / "r0.dten", np.float32(1.0).reshape(()))
        with pytest.raises(TensorFileError):
            write_tensor(tmp_path / "r5.dten", np.ones((1, 1, 1, 1, 1), dtype=np.float32))

    def test_header_only_shape_read(self, tmp_path):
        p = tmp_path / "hdr.dten"
        write_tensor(p, np.zeros((4, 5, 6), dtype=np.float32))
        assert read_tensor_shape(p) == (4, 5, 6)


def write_minimal_manifest(tmp_path, mutate=None):
    """Produce a tiny valid manifest on disk; ``mutate`` edits the dict first."""
    tdir = tmp_path / "tensors"
    tdir.mkdir(exist_ok=True)
    write_tensor(tdir / "text.dten", np.eye(3, 4, dtype=np.float32))
    write_tensor(tdir / "proj.dten", np.ones((8, 4), dtype=np.float32))
    doc = {
        "model_id": "toy",
        "layer_count": 2,
        "embed_dim": 8,
        "proj_dim": 4,
        "patch_size": 2,
        "head_count": 2,
        "grid_h": 2,
        "grid_w": 2,
        "entries": {
            "text.embeddings": {"path": "tensors/text.dten", "shape": [3, 4]},
            "proj": {"path": "tensors/proj.dten", "shape": [8, 4]},
        },
        "images": [{"image_id": "img0", "pixel_h": 8, "pixel_w": 8}],
        "text": {"class_names": ["a", "b"], "query_to_class": [0, 0, 1]},
        "export_config": {"ln_eps": 1e-5},
    }
    if mutate:
        mutate(doc)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


class TestManifest:
    def test_minimal_manifest_validates(self, tmp_path):
        m = load_manifest(write_minimal_manifest(tmp_path))
        assert m.model_id == "toy"
        assert m.layer_count == 2 and m.embed_dim == 8 and m.proj_dim == 4
        assert m.image_ids() == ["img0"]
        assert np.array_equal(m.load("proj"), np.ones((8, 4), dtype=np.float32))

    def test_missing_field_is_named(self, tmp_path):
        path = write_minimal_manifest(tmp_path, lambda d: d.pop("embed_dim"))
        with pytest.raises(ManifestError, match="embed_dim"):
            load_manifest(path)

    def test_wrong_type_is_named(self, tmp_path):
        path = write_minimal_manifest(tmp_path, lambda d: d.update(layer_count="two"))
        with pytest.raises(ManifestError, match="layer_count"):
            load_manifest(path)

    def test_wrong_declared_shape_names_role(self, tmp_path):
        def mutate(d):
            d["entries"]["text.embeddings"]["shape"] = [5, 4]

        with pytest.raises(ManifestError, match="text.embeddings"):
            load_manifest(write_minimal_manifest(tmp_path, mutate))

    def test_dangling_reference_names_role(self, tmp_path):
        def mutate(d):
            d["entries"]["proj"]["path"] = "tensors/ghost.dten"

        with pytest.raises(ManifestError, match="'proj'"):
            load_manifest(write_minimal_manifest(tmp_path, mutate))

    def test_text_bank_dim_checked_against_proj_dim(self, tmp_path):
        def mutate(d):
            d["proj_dim"] = 5
            d["entries"]["proj"]["shape"] = [8, 4]  # untouched file

        with pytest.raises(ManifestError, match="text.embeddings"):
            load_manifest(write_minimal_manifest(tmp_path, mutate))

    def test_head_count_must_divide_embed_dim(self, tmp_path):
        path = write_minimal_manifest(tmp_path, lambda d: d.update(head_count=3))
        with pytest.raises(ManifestError, match="head_count"):
            load_manifest(path)

    def test_unknown_role_lookup_fails(self, tmp_path):
        m = load_manifest(write_minimal_manifest(tmp_path))
        with pytest.raises(ManifestError, match="pos_embed"):
            m.tensor_path("pos_embed")
