"""
File formats: 16-bit label/instance PNGs, PEDP probability maps, JSON
manifests and report files. Every writer goes through a temporary file in
the target directory followed by os.replace.
"""

import hashlib
import io
import json
import logging
import os
import struct
import tempfile
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import png
from pydantic import ValidationError

import config
from app.errors import FormatError, IoError, ParamError, RangeError, ShapeError
from app.models.schemas import (
    BoundaryMap,
    Box,
    CategorySet,
    DatasetImage,
    DatasetManifest,
    GtInstance,
    GtScene,
    InstanceEntry,
    InstanceMap,
    LabelMap,
    PerturbSpec,
    PredictionManifest,
    PredInstance,
    ProbMap,
    Report,
)

logger = logging.getLogger(__name__)

PEDP_MAGIC = b"PEDP"
PEDP_VERSION = 1
PEDP_HEADER = struct.Struct("<4sHHII")


def atomic_write_bytes(path: str, data: bytes) -> str:
    """
    Write data to path atomically.

    Returns:
        Hex SHA-256 of data
    """
    directory = os.path.dirname(os.path.abspath(path))
    temp_path = None
    try:
        os.makedirs(directory, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=directory, prefix=".tmp-", delete=False) as handle:
            temp_path = handle.name
            handle.write(data)
        os.replace(temp_path, path)
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        if temp_path is not None and os.path.exists(temp_path):
            os.unlink(temp_path)
        raise IoError(f"Cannot write {path}: {e}") from e
    return hashlib.sha256(data).hexdigest()


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as handle:
            return handle.read()
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}") from e


def write_json(path: str, payload: Any) -> str:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    return atomic_write_bytes(path, text.encode("utf-8"))


def read_json(path: str) -> Any:
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path} is not valid JSON: {e}") from e


# PNG rasters

def _read_png(path: str, bitdepth: int) -> np.ndarray:
    data = _read_bytes(path)
    try:
        width, height, rows, info = png.Reader(bytes=data).read()
        if info["bitdepth"] != bitdepth or info["planes"] != 1 or not info["greyscale"]:
            raise FormatError(
                f"{path}: expected single-channel {bitdepth}-bit PNG, got "
                f"{info['planes']} plane(s) at {info['bitdepth']} bits"
            )
        dtype = np.uint16 if bitdepth == 16 else np.uint8
        array = np.array([np.asarray(row, dtype=dtype) for row in rows], dtype=dtype)
    except png.Error as e:
        raise FormatError(f"{path}: {e}") from e
    return array.reshape(height, width)


def _write_png(path: str, array: np.ndarray, bitdepth: int) -> str:
    height, width = array.shape
    writer = png.Writer(width=width, height=height, greyscale=True, bitdepth=bitdepth)
    buffer = io.BytesIO()
    writer.write(buffer, array.tolist())
    return atomic_write_bytes(path, buffer.getvalue())


def read_label_png(path: str) -> LabelMap:
    """Decode a 16-bit label PNG; 65535 marks ignore."""
    return LabelMap(data=_read_png(path, 16))


def write_label_png(path: str, labels: LabelMap) -> str:
    return _write_png(path, labels.data, 16)


def read_instance_png(path: str) -> InstanceMap:
    """Decode a 16-bit instance PNG; 0 marks background."""
    return InstanceMap(data=_read_png(path, 16))


def write_instance_png(path: str, instances: InstanceMap) -> str:
    if instances.data.size and int(instances.data.max()) > 65535:
        raise FormatError("Instance ids above 65535 do not fit a 16-bit PNG")
    return _write_png(path, instances.data.astype(np.uint16), 16)


def write_mask_png(path: str, mask: np.ndarray) -> str:
    """Boolean mask as an 8-bit PNG (0 / 255)."""
    return _write_png(path, np.where(mask, 255, 0).astype(np.uint8), 8)


def read_mask_png(path: str) -> np.ndarray:
    return _read_png(path, 8) > 0


def read_instance_manifest(path: str) -> Dict[int, int]:
    """Sidecar {"instances": {"<id>": category}} mapping."""
    payload = read_json(path)
    try:
        return {int(k): int(v) for k, v in payload["instances"].items()}
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise FormatError(f"{path}: malformed instance manifest") from e


def write_instance_manifest(path: str, manifest: Dict[int, int]) -> str:
    return write_json(path, {"instances": {str(k): int(v) for k, v in sorted(manifest.items())}})


# Probability maps

def encode_prob_map(prob: ProbMap) -> bytes:
    header = PEDP_HEADER.pack(PEDP_MAGIC, PEDP_VERSION, prob.channels, prob.height, prob.width)
    return header + prob.values.astype("<f4").tobytes(order="C")


def decode_prob_map(data: bytes, strict: bool = True, source: str = "<bytes>") -> ProbMap:
    """
    Decode a PEDP payload.

    Args:
        data: File contents
        strict: Reject out-of-range values (RangeError) instead of clamping them
        source: Name used in error messages
    """
    if len(data) < PEDP_HEADER.size:
        raise FormatError(f"{source}: truncated header")
    magic, version, channels, height, width = PEDP_HEADER.unpack_from(data)
    if magic != PEDP_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != PEDP_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    expected = channels * height * width * 4
    payload = data[PEDP_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"{source}: expected {expected} payload bytes, found {len(payload)}")

    values = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(channels, height, width)
    out_of_range = np.isnan(values) | (values < 0.0) | (values > 1.0)
    if out_of_range.any():
        if strict:
            raise RangeError(f"{source}: {int(out_of_range.sum())} values outside [0, 1]")
        logger.warning(f"{source}: clamping {int(out_of_range.sum())} out-of-range values")
        values = np.clip(np.nan_to_num(values, nan=0.0), 0.0, 1.0)
    return ProbMap(values=values)


def read_prob_map(path: str, strict: bool = True) -> ProbMap:
    return decode_prob_map(_read_bytes(path), strict=strict, source=path)


def write_prob_map(path: str, prob: ProbMap) -> str:
    return atomic_write_bytes(path, encode_prob_map(prob))


def quantized_channel_path(stem: str, channel: int) -> str:
    """Channel file of a quantized map: <stem>_c<channel>.png."""
    if stem.endswith(".png"):
        stem = stem[: -len(".png")]
    return f"{stem}_c{channel}.png"


def read_quantized_prob_map(stem: str, channels: int) -> ProbMap:
    """Read the 8-bit PNG planes <stem>_c0.png ... as probabilities (value / 255)."""
    planes = [_read_png(quantized_channel_path(stem, k), 8) for k in range(channels)]
    return ProbMap(values=np.stack(planes).astype(np.float32) / 255.0)


def write_quantized_prob_map(stem: str, prob: ProbMap) -> List[str]:
    quantized = np.floor(prob.values * 255.0 + 0.5).astype(np.uint8)
    return [_write_png(quantized_channel_path(stem, k), quantized[k], 8) for k in range(prob.channels)]


# Category sets and manifests

def load_category_set(source: str) -> CategorySet:
    """Preset name (e.g. "cityscapes") or path to a category JSON file."""
    path = config.CATEGORY_PRESETS.get(source, source)
    try:
        return CategorySet.model_validate(read_json(path))
    except ValidationError as e:
        raise FormatError(f"{path}: invalid category set: {e}") from e


def write_category_set(path: str, cats: CategorySet) -> str:
    return write_json(path, cats.model_dump(mode="json"))


def load_dataset_manifest(path: str) -> DatasetManifest:
    """Load a converted-dataset manifest and check that its files exist."""
    try:
        manifest = DatasetManifest.model_validate(read_json(path))
    except ValidationError as e:
        raise FormatError(f"{path}: invalid dataset manifest: {e}") from e
    root = os.path.dirname(os.path.abspath(path))
    ids = [image.id for image in manifest.images]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate image ids")
    for image in manifest.images:
        for name in (image.semantic_gt, image.instances_gt, image.instance_edges, image.ignore):
            if not os.path.exists(os.path.join(root, name)):
                raise IoError(f"{path}: referenced file {name} is missing")
    return manifest


def load_prediction_manifest(path: str) -> PredictionManifest:
    try:
        return PredictionManifest.model_validate(read_json(path))
    except ValidationError as e:
        raise FormatError(f"{path}: invalid prediction manifest: {e}") from e


def load_perturb_spec(path: str) -> PerturbSpec:
    try:
        return PerturbSpec.model_validate(read_json(path))
    except ValidationError as e:
        raise FormatError(f"{path}: invalid perturbation spec: {e}") from e


def _box_from_entry(coords: List[int], source: str) -> Box:
    x0, y0, x1, y1 = coords
    try:
        return Box(x0=x0, y0=y0, x1=x1, y1=y1)
    except ParamError as e:
        raise FormatError(f"{source} box {coords}: {e}") from e


def load_gt_scene(root: str, image: DatasetImage, strict: bool = True) -> Tuple[GtScene, np.ndarray]:
    """
    Load the converted ground truth of one image.

    Returns:
        (GtScene, ignore mask)
    """
    semantic = read_prob_map(os.path.join(root, image.semantic_gt), strict=strict)
    edges = read_prob_map(os.path.join(root, image.instance_edges), strict=strict)
    payload = read_json(os.path.join(root, image.instances_gt))
    try:
        entries = [InstanceEntry.model_validate(e) for e in payload["instances"]]
    except (KeyError, TypeError, ValidationError) as e:
        raise FormatError(f"{image.instances_gt}: malformed instance list") from e

    instances = []
    for entry in entries:
        if not 0 <= entry.channel < edges.channels:
            raise FormatError(
                f"{image.instances_gt}: instance {entry.id} uses channel {entry.channel} "
                f"of {edges.channels}"
            )
        instances.append(
            GtInstance(
                id=entry.id,
                category=entry.category,
                box=_box_from_entry(entry.box, f"{image.instances_gt}: instance {entry.id}"),
                edges=BoundaryMap(bits=edges.values[entry.channel] > 0.5),
            )
        )
    ignore = read_mask_png(os.path.join(root, image.ignore))
    return GtScene(semantic=semantic, instances=instances), ignore


def load_predictions(
    root: str,
    image_id: str,
    manifest: PredictionManifest,
    channels: int,
    width: int,
    height: int,
    quantized: bool = False,
    strict: bool = True,
) -> Tuple[ProbMap, List[PredInstance]]:
    """
    Load the semantic map and instance predictions of one image.

    Images missing from the prediction manifest yield an all-zero semantic map
    and no instances.
    """
    entry = manifest.images.get(image_id)
    if entry is None:
        logger.warning(f"No predictions for {image_id}; treating as empty")
        return ProbMap(values=np.zeros((channels, height, width), dtype=np.float32)), []

    def load(path: str, k: int) -> ProbMap:
        full = os.path.join(root, path)
        return read_quantized_prob_map(full, k) if quantized else read_prob_map(full, strict=strict)

    semantic = load(entry.semantic, channels)
    if semantic.values.shape != (channels, height, width):
        raise FormatError(
            f"{image_id}: semantic prediction shape {semantic.values.shape} != {(channels, height, width)}"
        )
    preds = []
    for item in entry.instances:
        box = _box_from_entry(item.box, f"{image_id}: predicted")
        if not box.fits(width, height):
            raise FormatError(f"{image_id}: predicted box {item.box} exceeds the image")
        edges = load(item.edges, 1)
        try:
            preds.append(PredInstance(category=item.category, score=item.score, box=box, edges=edges))
        except (ParamError, ShapeError) as e:
            raise FormatError(f"{image_id}: invalid predicted instance {item.edges}: {e}") from e
    return semantic, preds


# Reports

def _percent(value: Optional[float]) -> str:
    return "" if value is None else f"{value * 100:.1f}"


def report_table(report: Report) -> pd.DataFrame:
    """One row per category, skipped categories and means; scores in percent."""
    rows = []
    for score in report.categories:
        rows.append({
            "category": str(score.category),
            "name": score.name,
            "kind": score.kind.value,
            "f_edge": _percent(score.f_edge),
            "f_object": _percent(score.f_object),
            "f2": _percent(score.f2),
            "theta_star": f"{score.theta_star:.2f}",
            "support": str(score.support),
            "note": "",
        })
    for skipped in report.skipped:
        rows.append({
            "category": str(skipped.category),
            "name": skipped.name,
            "kind": skipped.kind.value,
            "f_edge": "", "f_object": "", "f2": "", "theta_star": "", "support": "",
            "note": f"skipped: {skipped.reason}",
        })
    for label, mean in (
        ("stuff_mean", report.stuff_mean),
        ("instance_mean", report.instance_mean),
        ("overall_mean", report.overall_mean),
    ):
        if mean is None:
            continue
        rows.append({
            "category": label,
            "name": "",
            "kind": "",
            "f_edge": _percent(mean.f_edge),
            "f_object": _percent(mean.f_object),
            "f2": _percent(mean.f2),
            "theta_star": "",
            "support": str(mean.count),
            "note": "",
        })
    columns = ["category", "name", "kind", "f_edge", "f_object", "f2", "theta_star", "support", "note"]
    return pd.DataFrame(rows, columns=columns)


def write_report(report: Report, json_path: Optional[str], csv_path: Optional[str]) -> None:
    """Write the full-precision JSON report and the percentage CSV table."""
    if json_path:
        write_json(json_path, report.model_dump(mode="json"))
        logger.info(f"Wrote report JSON to {json_path}")
    if csv_path:
        text = report_table(report).to_csv(index=False, lineterminator="\n")
        atomic_write_bytes(csv_path, text.encode("utf-8"))
        logger.info(f"Wrote report CSV to {csv_path}")


def read_report(path: str) -> Report:
    try:
        return Report.model_validate(read_json(path))
    except ValidationError as e:
        raise FormatError(f"{path}: invalid report: {e}") from e


def write_pr_dump(directory: str, curves: Dict[int, pd.DataFrame]) -> None:
    """One CSV per category with threshold, precision, recall, f columns."""
    for category_id, frame in sorted(curves.items()):
        path = os.path.join(directory, f"pr_category_{category_id}.csv")
        text = frame.to_csv(index=False, lineterminator="\n", float_format="%.10g")
        atomic_write_bytes(path, text.encode("utf-8"))
    logger.info(f"Wrote {len(curves)} PR curves to {directory}")
