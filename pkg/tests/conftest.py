import numpy as np
import pytest

from seatrack.core import BoundingBox
from seatrack.synth import ObjectSpec, SceneConfig, generate, write_scene
from seatrack.triplets import AugmentConfig, JitterConfig, build_triplet_dataset


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    """A 2-object 12-frame sequence shared by training-oriented tests."""
    cfg = SceneConfig(
        width=160,
        height=120,
        frame_count=12,
        objects=(
            ObjectSpec(BoundingBox(24, 30, 24, 18), (2.0, 0.0), 0),
            ObjectSpec(BoundingBox(100, 70, 24, 18), (-1.0, 0.5), 1),
        ),
        noise_sigma=0.01,
        seed=21,
    )
    scene = generate(cfg)
    manifest = write_scene(scene, str(tmp_path_factory.mktemp("small_scene")), "small")
    return manifest, scene


@pytest.fixture(scope="session")
def small_dataset(small_scene):
    manifest, scene = small_scene
    triplets, _ = build_triplet_dataset(
        manifest,
        scene.ground_truth,
        JitterConfig(samples_per_anchor=3, seed=17),
        AugmentConfig(enabled=False),
        patch_resolution=16,
    )
    return triplets
