"""Appearance-based multi-object tracking toolkit for thermal maritime imagery."""

__version__ = "0.1.0"

from .core import BoundingBox, Detection, GroundTruthBox, SequenceManifest  # noqa: F401
