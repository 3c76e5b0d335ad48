"""Self-checks of the reference pipeline against the canonical implementation."""

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
import torch

from douc_exporter.export import ExportJob, build_scenes, build_text_bank, run_export
from douc_exporter.models import build_vision_model, embed_image
from douc_exporter.reference import forward_tokens, project_dense, run_reference
from douc_exporter.tensorio import load_tensor

TINY = dict(
    architecture="tiny-2layer",
    image_count=2,
    num_classes=2,
    regions=3,
    feat_grid=(5, 5),
    feat_channels=16,
    golden_pixel=(16, 16),
)


def tiny_job(out_dir, **overrides):
    return ExportJob(out_dir=out_dir, **{**TINY, "seed": 7, **overrides})


@pytest.fixture(scope="module")
def tiny_export(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny-export")
    manifest = run_export(tiny_job(out))
    return out, json.loads(manifest.read_text())


class TestAgainstCanonicalModel:
    def test_manual_forward_matches_hf_image_embeds(self):
        """The reference's block loop + head reproduce the HF model's own
        image embedding (embeddings -> encoder -> post LN -> projection)."""
        model = build_vision_model("tiny-2layer", seed=3)
        torch.manual_seed(11)
        pixels = torch.rand(1, 3, 8, 8)
        with torch.no_grad():
            want = model(pixel_values=pixels).image_embeds[0]
            tokens = embed_image(model, pixels)
            cfg = ExportJob(out_dir=".", **TINY).engine_config(2)
            ours = project_dense(model, forward_tokens(model, tokens, cfg, gated=False))[0]
        np.testing.assert_allclose(ours.numpy(), want.numpy(), atol=1e-5)


class TestExporterSelfChecks:
    def _setup(self, seed=9):
        job = tiny_job(".", seed=seed)
        model = build_vision_model(job.architecture, seed=seed)
        cfg = job.engine_config(model.config.num_hidden_layers)
        scenes = build_scenes(job, model)
        tokens = [embed_image(model, s.pixel_values) for s in scenes]
        bank, mapping = build_text_bank(job, model, scenes, tokens, cfg)
        return job, model, cfg, scenes, tokens, bank, mapping

    def test_text_bank_rows_unit_norm(self):
        _, _, _, _, _, bank, mapping = self._setup()
        norms = np.linalg.norm(bank.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)
        assert sorted(set(mapping)) == [0, 1]

    def test_alpha_fade_zero_reproduces_og_branch(self):
        job, model, cfg, scenes, tokens, bank, mapping = self._setup()
        cfg = {**cfg, "fusion": {**cfg["fusion"], "alpha_fade": 0.0, "alpha_og": 1.0,
                                 "lambda_cls": 0.0}}
        s, t = scenes[0], tokens[0]
        stages = run_reference(
            model, t, s.features, s.patch_masks, s.pixel_masks,
            torch.from_numpy(bank), np.asarray(mapping), job.num_classes,
            job.golden_pixel, cfg,
        )
        og = torch.from_numpy(stages["logits_og"])
        fh, fw = s.features.shape[:2]
        og_up = torch.nn.functional.interpolate(
            og[None], size=(fh, fw), mode="bilinear", align_corners=False
        )[0].numpy()
        np.testing.assert_allclose(stages["logits_fused"], og_up, atol=1e-6)

    def test_all_covering_mask_equals_mask_off(self):
        job, model, cfg, scenes, tokens, bank, mapping = self._setup()
        s, t = scenes[0], tokens[0]
        text = torch.from_numpy(bank)
        pi = np.asarray(mapping)
        fh, fw = s.features.shape[:2]
        covering = np.ones((1, fh, fw), dtype=np.float32)
        with_mask = run_reference(
            model, t, s.features, covering, None, text, pi,
            job.num_classes, job.golden_pixel, cfg,
        )
        cfg_off = {**cfg, "fade": {**cfg["fade"], "mask_mode": "off"}}
        without = run_reference(
            model, t, s.features, None, None, text, pi,
            job.num_classes, job.golden_pixel, cfg_off,
        )
        np.testing.assert_allclose(
            with_mask["logits_fade"], without["logits_fade"], atol=1e-6
        )

    def test_export_is_deterministic(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        run_export(tiny_job(a, seed=13))
        run_export(tiny_job(b, seed=13))
        doc_a = json.loads((a / "manifest.json").read_text())
        doc_b = json.loads((b / "manifest.json").read_text())
        assert doc_a == doc_b
        for role in ("text.embeddings", "images.img0.tokens", "blocks.1.attn.wv"):
            pa = a / doc_a["entries"][role]["path"]
            pb = b / doc_b["entries"][role]["path"]
            assert pa.read_bytes() == pb.read_bytes(), role
        for stage in ("logits_fused", "label_map"):
            assert (a / "golden/img0" / f"{stage}.dten").read_bytes() == (
                b / "golden/img0" / f"{stage}.dten"
            ).read_bytes()


class TestEngineInterop:
    def test_tiny_export_round_trips_through_engine(self, tiny_export, tmp_path):
        """The engine consumes a tiny export via its public CLI alone."""
        out, doc = tiny_export
        pred = tmp_path / "pred"
        proc = subprocess.run(
            [
                "douc", "segment", "--manifest", str(out / "manifest.json"),
                "--use-export-config", "--out", str(pred),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        ph, pw = TINY["golden_pixel"]
        for image in doc["images"]:
            labels = load_tensor(pred / f"{image['image_id']}_labels.dten")
            assert labels.shape == (ph, pw)
            assert labels.min() >= 0 and labels.max() < TINY["num_classes"]

    def test_declared_shapes_match_files(self, tiny_export):
        out, doc = tiny_export
        for role, entry in doc["entries"].items():
            arr = load_tensor(out / entry["path"])
            assert list(arr.shape) == entry["shape"], role
