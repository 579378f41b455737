"""
Ground-truth conversion from segmentation labels to multi-label boundaries.

A pixel becomes an edge of category k when its Chebyshev neighborhood of
the given radius holds both a k pixel and a pixel of a different non-ignore
label. Both sides of a boundary receive the edge, so a pixel can carry
several categories (or several instances) at once.
"""

import glob
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.ndimage import maximum_filter

import config
from app.errors import FormatError, LabelError, ManifestError, ParamError, PedError
from app.models.schemas import (
    IGNORE_LABEL,
    BoundaryMap,
    CategoryKind,
    CategorySet,
    ConversionFailure,
    DatasetImage,
    DatasetManifest,
    GtInstance,
    InstanceEntry,
    InstanceMap,
    LabelMap,
    ProbMap,
)
from app.services import io_formats
from app.services.raster import bbox_of, expand_box

logger = logging.getLogger(__name__)


def _near(mask: np.ndarray, radius: int) -> np.ndarray:
    """Pixels whose (2r+1)^2 window contains a set pixel of mask."""
    size = 2 * radius + 1
    return maximum_filter(mask.astype(np.uint8), size=size, mode="constant", cval=0).astype(bool)


def _check_radius(radius: int) -> None:
    if radius < 1:
        raise ParamError(f"Boundary radius must be >= 1, got {radius}")


def semantic_boundaries(labels: LabelMap, radius: int, cats: CategorySet) -> ProbMap:
    """
    Per-category boundary ground truth.

    Args:
        labels: Category id raster
        radius: Chebyshev neighborhood radius in pixels
        cats: Category set fixing the channel order

    Returns:
        Binary-valued ProbMap with one channel per category
    """
    _check_radius(radius)
    data = labels.data
    valid = data != IGNORE_LABEL

    present = np.unique(data[valid])
    unknown = sorted(set(int(v) for v in present) - set(cats.ids))
    if unknown:
        raise LabelError(f"Label ids {unknown} are not in the category set")

    channels = np.zeros((len(cats), labels.height, labels.width), dtype=np.float32)
    for index, category_id in enumerate(cats.ids):
        mask = data == category_id
        if not mask.any():
            continue
        others = valid & ~mask
        edges = _near(mask, radius) & _near(others, radius) & valid
        channels[index] = edges
    return ProbMap(values=channels)


def instance_boundaries(
    instances: InstanceMap,
    manifest: Dict[int, int],
    radius: int,
    cats: Optional[CategorySet] = None,
) -> List[GtInstance]:
    """
    Per-instance boundary ground truth.

    Args:
        instances: Instance id raster (0 = no instance)
        manifest: Instance id to category id
        radius: Chebyshev neighborhood radius in pixels
        cats: When given, every instance category must be an instance-kind member

    Returns:
        GtInstance list ordered by instance id
    """
    _check_radius(radius)
    data = instances.data
    height, width = data.shape
    ids = [int(i) for i in np.unique(data) if i != 0]

    missing = [i for i in ids if i not in manifest]
    if missing:
        raise ManifestError(f"Instance ids {missing} have no manifest entry")

    result = []
    for instance_id in ids:
        category = int(manifest[instance_id])
        if cats is not None:
            if category not in cats.ids or cats.get(category).kind != CategoryKind.INSTANCE:
                raise ManifestError(f"Instance {instance_id} maps to non-instance category {category}")

        box = expand_box(bbox_of(data == instance_id), radius, width, height)
        # Neighbors of box pixels reach up to one more radius outside the box
        window = expand_box(box, radius, width, height)
        local = data[window.slices] == instance_id
        local_edges = _near(local, radius) & _near(~local, radius)

        edges = np.zeros((height, width), dtype=bool)
        edges[window.slices] = local_edges
        result.append(
            GtInstance(id=instance_id, category=category, box=box, edges=BoundaryMap(bits=edges))
        )
    return result


def apply_category_filter(labels: LabelMap, keep_ids: Iterable[int]) -> LabelMap:
    """Relabel every category outside keep_ids as ignore."""
    keep = np.asarray(sorted(set(keep_ids)), dtype=np.uint16)
    data = np.where(np.isin(labels.data, keep), labels.data, IGNORE_LABEL)
    return LabelMap(data=data)


def rank_categories_by_edge_density(
    label_maps: Iterable[LabelMap], cats: CategorySet, radius: int
) -> List[Tuple[int, int]]:
    """
    Rank categories by converted edge-pixel count over a dataset.

    Returns:
        (category id, edge pixel count) pairs, densest first, ties by id
    """
    totals = np.zeros(len(cats), dtype=np.int64)
    for labels in label_maps:
        semantic = semantic_boundaries(labels, radius, cats)
        totals += semantic.values.reshape(len(cats), -1).sum(axis=1).astype(np.int64)
    ranked = sorted(zip(cats.ids, (int(t) for t in totals)), key=lambda item: (-item[1], item[0]))
    return ranked


def screen_categories(
    ranked: List[Tuple[int, int]], cats: CategorySet, top: int, per_kind: int
) -> List[int]:
    """Pick per_kind stuff and per_kind instance ids among the first top ranked categories."""
    chosen = {CategoryKind.STUFF: [], CategoryKind.INSTANCE: []}
    for category_id, _ in ranked[:top]:
        kind = cats.get(category_id).kind
        if len(chosen[kind]) < per_kind:
            chosen[kind].append(category_id)
    return sorted(chosen[CategoryKind.STUFF] + chosen[CategoryKind.INSTANCE])


def discover_images(seg_root: str) -> List[str]:
    """Image ids with a label raster under seg_root, sorted."""
    suffix = config.FILE_LAYOUT["source"]["label"].format(image_id="")
    paths = glob.glob(os.path.join(seg_root, "*" + suffix))
    return sorted(os.path.basename(p)[: -len(suffix)] for p in paths)


def _source_paths(seg_root: str, image_id: str) -> Dict[str, str]:
    layout = config.FILE_LAYOUT["source"]
    return {key: os.path.join(seg_root, name.format(image_id=image_id)) for key, name in layout.items()}


def convert_image(
    seg_root: str, out_root: str, image_id: str, cats: CategorySet, radius: int,
    keep_ids: Optional[List[int]] = None,
) -> DatasetImage:
    """
    Convert one image and write its ground-truth files.

    Returns:
        DatasetImage entry with checksums of every written file
    """
    sources = _source_paths(seg_root, image_id)
    labels = io_formats.read_label_png(sources["label"])
    instances = io_formats.read_instance_png(sources["instance"])
    if (labels.width, labels.height) != (instances.width, instances.height):
        raise FormatError(f"{image_id}: label and instance rasters differ in size")
    manifest = io_formats.read_instance_manifest(sources["instance_manifest"])

    if keep_ids is not None:
        labels = apply_category_filter(labels, keep_ids)
        manifest = {i: c for i, c in manifest.items() if c in set(keep_ids)}
        kept = np.isin(instances.data, np.asarray(sorted(manifest), dtype=np.uint32))
        instances = InstanceMap(data=np.where(kept, instances.data, 0))

    semantic = semantic_boundaries(labels, radius, cats)
    gt_instances = instance_boundaries(instances, manifest, radius, cats)

    layout = config.FILE_LAYOUT["converted"]
    names = {key: layout[key].format(image_id=image_id) for key in ("semantic_gt", "instances_gt", "instance_edges", "ignore")}
    checksums = {}
    checksums["semantic_gt"] = io_formats.write_prob_map(os.path.join(out_root, names["semantic_gt"]), semantic)

    edges = np.zeros((len(gt_instances), labels.height, labels.width), dtype=np.float32)
    entries = []
    for channel, instance in enumerate(gt_instances):
        edges[channel] = instance.edges.bits
        entries.append(
            InstanceEntry(id=instance.id, category=instance.category, box=instance.box.as_list(), channel=channel)
        )
    checksums["instance_edges"] = io_formats.write_prob_map(
        os.path.join(out_root, names["instance_edges"]), ProbMap(values=edges)
    )
    checksums["instances_gt"] = io_formats.write_json(
        os.path.join(out_root, names["instances_gt"]),
        {"instances": [entry.model_dump() for entry in entries]},
    )
    checksums["ignore"] = io_formats.write_mask_png(
        os.path.join(out_root, names["ignore"]), labels.data == IGNORE_LABEL
    )

    logger.info(f"Converted {image_id}: {len(gt_instances)} instances")
    return DatasetImage(
        id=image_id,
        width=labels.width,
        height=labels.height,
        label=os.path.relpath(sources["label"], out_root),
        instance=os.path.relpath(sources["instance"], out_root),
        sha256=dict(sorted(checksums.items())),
        **names,
    )


def _convert_job(args) -> Tuple[str, Optional[DatasetImage], Optional[str]]:
    seg_root, out_root, image_id, cats, radius, keep_ids = args
    try:
        return image_id, convert_image(seg_root, out_root, image_id, cats, radius, keep_ids), None
    except (PedError, OSError, ValueError) as e:
        logger.error(f"Failed to convert {image_id}: {e}")
        return image_id, None, str(e)


def convert_dataset(
    seg_root: str,
    out_root: str,
    cats: CategorySet,
    radius: int,
    keep_ids: Optional[List[int]] = None,
    jobs: int = 1,
) -> DatasetManifest:
    """
    Convert every image under seg_root and write the dataset manifest.

    Per-image failures are recorded in the manifest instead of aborting the run.

    Args:
        seg_root: Directory holding <id>_label.png, <id>_instance.png and <id>_instance.json
        out_root: Output directory
        cats: Category set (already restricted to keep_ids when filtering)
        radius: Boundary radius
        keep_ids: Optional category filter; other labels become ignore
        jobs: Worker processes

    Returns:
        The written DatasetManifest
    """
    os.makedirs(out_root, exist_ok=True)
    if keep_ids is not None:
        cats = cats.subset(keep_ids)
    image_ids = discover_images(seg_root)
    logger.info(f"Converting {len(image_ids)} images from {seg_root} with radius {radius}")

    work = [(seg_root, out_root, image_id, cats, radius, keep_ids) for image_id in image_ids]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_convert_job, work))
    else:
        outcomes = [_convert_job(item) for item in work]

    manifest = DatasetManifest(
        categories=cats,
        radius=radius,
        keep_ids=sorted(keep_ids) if keep_ids is not None else None,
        images=[image for _, image, _ in outcomes if image is not None],
        failures=[ConversionFailure(id=i, error=err) for i, _, err in outcomes if err is not None],
    )
    manifest_path = os.path.join(out_root, config.FILE_LAYOUT["converted"]["manifest"])
    io_formats.write_json(manifest_path, manifest.model_dump(mode="json"))
    logger.info(f"Wrote {manifest_path}: {len(manifest.images)} images, {len(manifest.failures)} failures")
    return manifest
