"""Export manifest: the JSON document tying an export directory together.

A manifest declares the model architecture constants, a role-name -> tensor
file map with declared shapes, the text-bank metadata, the image list, and a
snapshot of the configuration the exporter used.  ``load_manifest`` validates
everything at the door: after it returns, every declared tensor exists on
disk with exactly the declared shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .tensorfile import read_tensor, read_tensor_shape

_INT_FIELDS = (
    "layer_count",
    "embed_dim",
    "proj_dim",
    "patch_size",
    "head_count",
    "grid_h",
    "grid_w",
)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    shape: tuple[int, ...]


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    pixel_h: int
    pixel_w: int


@dataclass
class Manifest:
    """Validated, immutable view of one export. Safe to share across threads."""

    model_id: str
    layer_count: int
    embed_dim: int
    proj_dim: int
    patch_size: int
    head_count: int
    grid_h: int
    grid_w: int
    entries: dict[str, ManifestEntry]
    images: list[ImageEntry]
    text_meta: dict
    export_config: dict
    base_dir: Path = field(default_factory=Path)

    def has(self, role: str) -> bool:
        return role in self.entries

    def tensor_path(self, role: str) -> Path:
        if role not in self.entries:
            raise ManifestError(f"manifest has no tensor for role '{role}'")
        return self.base_dir / self.entries[role].path

    def load(self, role: str) -> np.ndarray:
        return read_tensor(self.tensor_path(role))

    def image(self, image_id: str) -> ImageEntry:
        for entry in self.images:
            if entry.image_id == image_id:
                return entry
        raise ManifestError(f"manifest lists no image '{image_id}'")

    def image_ids(self) -> list[str]:
        return [entry.image_id for entry in self.images]


def _require(doc: dict, name: str, kind, positive: bool = False):
    if name not in doc:
        raise ManifestError(f"manifest field '{name}' is missing")
    value = doc[name]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ManifestError(f"manifest field '{name}' has wrong type {type(value).__name__}")
    if positive and value <= 0:
        raise ManifestError(f"manifest field '{name}' must be positive, got {value}")
    return value


def _parse_entries(doc: dict) -> dict[str, ManifestEntry]:
    raw = _require(doc, "entries", dict)
    entries: dict[str, ManifestEntry] = {}
    for role, spec in raw.items():
        if not isinstance(spec, dict) or "path" not in spec or "shape" not in spec:
            raise ManifestError(f"entry '{role}' must be an object with 'path' and 'shape'")
        shape = spec["shape"]
        if not (
            isinstance(shape, list)
            and shape
            and all(isinstance(d, int) and not isinstance(d, bool) and d > 0 for d in shape)
        ):
            raise ManifestError(f"entry '{role}' has invalid shape {shape!r}")
        entries[role] = ManifestEntry(path=str(spec["path"]), shape=tuple(shape))
    return entries


def _parse_images(doc: dict) -> list[ImageEntry]:
    images = []
    for item in doc.get("images", []):
        if not isinstance(item, dict):
            raise ManifestError("manifest field 'images' must hold objects")
        try:
            images.append(
                ImageEntry(
                    image_id=str(item["image_id"]),
                    pixel_h=int(item["pixel_h"]),
                    pixel_w=int(item["pixel_w"]),
                )
            )
        except KeyError as exc:
            raise ManifestError(f"image entry missing field {exc}") from exc
    return images


def load_manifest(path) -> Manifest:
    """Load and fully validate a manifest.

    Every declared tensor file is checked for existence and header shape
    before this returns, so later loads cannot fail shape checks.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot parse manifest: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")

    model_id = _require(doc, "model_id", str)
    ints = {name: _require(doc, name, int, positive=True) for name in _INT_FIELDS}
    entries = _parse_entries(doc)

    manifest = Manifest(
        model_id=model_id,
        entries=entries,
        images=_parse_images(doc),
        text_meta=doc.get("text", {}),
        export_config=doc.get("export_config", {}),
        base_dir=path.parent,
        **ints,
    )

    if ints["embed_dim"] % ints["head_count"] != 0:
        raise ManifestError(
            f"manifest field 'head_count' ({ints['head_count']}) does not divide "
            f"embed_dim ({ints['embed_dim']})"
        )

    for role, entry in entries.items():
        tensor_path = manifest.base_dir / entry.path
        if not tensor_path.is_file():
            raise ManifestError(f"role '{role}' references missing file {tensor_path}")
        actual = read_tensor_shape(tensor_path)
        if actual != entry.shape:
            raise ManifestError(
                f"role '{role}' declares shape {list(entry.shape)} but file has {list(actual)}"
            )

    if manifest.has("text.embeddings"):
        declared = entries["text.embeddings"].shape
        if len(declared) != 2 or declared[1] != ints["proj_dim"]:
            raise ManifestError(
                f"role 'text.embeddings' shape {list(declared)} does not match "
                f"proj_dim {ints['proj_dim']}"
            )
    return manifest
