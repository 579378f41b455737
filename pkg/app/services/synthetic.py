"""
Deterministic synthetic scenes: horizontal stuff bands with non-overlapping
rectangular and elliptical instances painted on top.
"""

import logging
import os
from typing import Dict, List

import numpy as np
from pydantic import BaseModel, ConfigDict

import config
from app.models.schemas import Category, CategoryKind, CategorySet, InstanceMap, LabelMap
from app.services import io_formats
from app.services.perturb import make_rng

logger = logging.getLogger(__name__)

SYNTHETIC_CATEGORIES = CategorySet(categories=[
    Category(id=0, name="road", kind=CategoryKind.STUFF),
    Category(id=1, name="building", kind=CategoryKind.STUFF),
    Category(id=2, name="sky", kind=CategoryKind.STUFF),
    Category(id=3, name="person", kind=CategoryKind.INSTANCE),
    Category(id=4, name="car", kind=CategoryKind.INSTANCE),
    Category(id=5, name="bicycle", kind=CategoryKind.INSTANCE),
])


class SyntheticScene(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: str
    labels: LabelMap
    instances: InstanceMap
    manifest: Dict[int, int]


def _shape_mask(height: int, width: int, x0: int, y0: int, w: int, h: int, ellipse: bool) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    if not ellipse:
        mask[y0:y0 + h, x0:x0 + w] = True
        return mask
    rows, cols = np.ogrid[:height, :width]
    cy, cx = y0 + (h - 1) / 2.0, x0 + (w - 1) / 2.0
    ry, rx = h / 2.0, w / 2.0
    mask[((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0] = True
    return mask


def make_scene(
    scene_id: str,
    seed: int,
    height: int = 256,
    width: int = 256,
    n_instances: int = 6,
    cats: CategorySet = SYNTHETIC_CATEGORIES,
) -> SyntheticScene:
    """
    Build one synthetic scene.

    Args:
        scene_id: Identifier stored on the scene
        seed: Generator seed
        height, width: Canvas size
        n_instances: Number of instances to place
        cats: Categories with at least three stuff and one instance entry

    Returns:
        SyntheticScene with label raster, instance raster and id→category manifest
    """
    rng = make_rng(seed)
    stuff = cats.stuff_ids
    things = cats.instance_ids

    labels = np.empty((height, width), dtype=np.uint16)
    top = int(rng.integers(height // 5, 2 * height // 5))
    bottom = int(rng.integers(height // 2, 3 * height // 4))
    labels[:top] = stuff[2]
    labels[top:bottom] = stuff[1]
    labels[bottom:] = stuff[0]

    instances = np.zeros((height, width), dtype=np.uint32)
    occupied = np.zeros((height, width), dtype=bool)
    manifest = {}
    low, high = max(4, min(height, width) // 16), max(6, min(height, width) // 4)
    attempts = 0
    while len(manifest) < n_instances:
        attempts += 1
        if attempts > 1000:
            raise RuntimeError(f"Could not place {n_instances} instances in a {width}x{height} scene")
        w = int(rng.integers(low, high))
        h = int(rng.integers(low, high))
        x0 = int(rng.integers(1, width - w - 1))
        y0 = int(rng.integers(1, height - h - 1))
        mask = _shape_mask(height, width, x0, y0, w, h, ellipse=bool(rng.integers(0, 2)))
        # Keep a one-pixel gap between instances
        halo = np.zeros_like(mask)
        halo[max(0, y0 - 1):y0 + h + 1, max(0, x0 - 1):x0 + w + 1] = True
        if (halo & occupied).any():
            continue
        instance_id = len(manifest) + 1
        category = things[int(rng.integers(0, len(things)))]
        instances[mask] = instance_id
        labels[mask] = category
        occupied |= mask
        manifest[instance_id] = category

    return SyntheticScene(
        id=scene_id,
        labels=LabelMap(data=labels),
        instances=InstanceMap(data=instances),
        manifest=manifest,
    )


def make_suite(
    count: int, seed: int = 0, height: int = 256, width: int = 256, n_instances: int = 6
) -> List[SyntheticScene]:
    """count scenes named scene_000, scene_001, ... seeded from (seed, index)."""
    return [
        make_scene(f"scene_{index:03d}", seed * 100003 + index, height, width, n_instances)
        for index in range(count)
    ]


def write_suite(scenes: List[SyntheticScene], root: str, cats: CategorySet = SYNTHETIC_CATEGORIES) -> None:
    """Write scenes in the convert-gt source layout plus a categories.json."""
    layout = config.FILE_LAYOUT["source"]
    for scene in scenes:
        io_formats.write_label_png(os.path.join(root, layout["label"].format(image_id=scene.id)), scene.labels)
        io_formats.write_instance_png(
            os.path.join(root, layout["instance"].format(image_id=scene.id)), scene.instances
        )
        io_formats.write_instance_manifest(
            os.path.join(root, layout["instance_manifest"].format(image_id=scene.id)), scene.manifest
        )
    io_formats.write_category_set(os.path.join(root, "categories.json"), cats)
    logger.info(f"Wrote {len(scenes)} synthetic scenes to {root}")
