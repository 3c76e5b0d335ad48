"""Exporter: dumps frozen model assets and golden reference bundles."""

from .export import ExportJob, run_export
from .models import build_vision_model
from .scenes import build_scene
from .tensorio import load_tensor, save_tensor

__version__ = "0.1.0"
