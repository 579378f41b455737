import logging
from typing import Iterable, Optional, Tuple, Union

import numpy as np

from app.errors import EmptyMaskError, ParamError, ShapeError
from app.models.schemas import BoundaryMap, Box, ProbMap

logger = logging.getLogger(__name__)

MaskLike = Union[BoundaryMap, np.ndarray, Iterable[Tuple[int, int]]]


def bbox_of(mask: MaskLike) -> Box:
    """
    Tight half-open box around the set pixels of a mask.

    Args:
        mask: BoundaryMap, boolean (H, W) array, or an iterable of (x, y) pixels

    Returns:
        Smallest Box containing every set pixel
    """
    if isinstance(mask, BoundaryMap):
        mask = mask.bits
    if isinstance(mask, np.ndarray):
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        if rows.size == 0:
            raise EmptyMaskError("Cannot compute the bounding box of an empty mask")
        return Box(x0=int(cols[0]), y0=int(rows[0]), x1=int(cols[-1]) + 1, y1=int(rows[-1]) + 1)

    pixels = list(mask)
    if not pixels:
        raise EmptyMaskError("Cannot compute the bounding box of an empty pixel set")
    xs = [x for x, _ in pixels]
    ys = [y for _, y in pixels]
    return Box(x0=min(xs), y0=min(ys), x1=max(xs) + 1, y1=max(ys) + 1)


def embed(crop: ProbMap, box: Box, width: int, height: int) -> ProbMap:
    """
    Place a one-channel crop on a zero canvas at box.

    Args:
        crop: One-channel ProbMap with the box's dimensions
        box: Target location on the canvas
        width: Canvas width
        height: Canvas height

    Returns:
        Canvas-sized one-channel ProbMap
    """
    return ProbMap(values=embed_array(crop.values, box, width, height))


def embed_array(crop: np.ndarray, box: Box, width: int, height: int) -> np.ndarray:
    """Array form of embed; crop is (1, h, w) or (h, w), result is (1, H, W)."""
    if crop.ndim == 2:
        crop = crop[np.newaxis]
    if crop.shape[0] != 1:
        raise ShapeError(f"Expected a one-channel crop, got {crop.shape[0]} channels")
    if crop.shape[1:] != (box.height, box.width):
        raise ShapeError(f"Crop shape {crop.shape[1:]} does not match box {box.height}x{box.width}")
    if not box.fits(width, height):
        raise ShapeError(f"Box {box.as_list()} exceeds canvas {width}x{height}")
    canvas = np.zeros((1, height, width), dtype=np.float32)
    rows, cols = box.slices
    canvas[0, rows, cols] = crop[0]
    return canvas


def restrict(canvas: ProbMap, box: Box) -> ProbMap:
    """Crop a canvas-sized map back to box."""
    if not box.fits(canvas.width, canvas.height):
        raise ShapeError(f"Box {box.as_list()} exceeds canvas {canvas.width}x{canvas.height}")
    rows, cols = box.slices
    return ProbMap(values=canvas.values[:, rows, cols])


def binarize_array(values: np.ndarray, theta: float) -> np.ndarray:
    """values >= theta, compared in the values' own precision."""
    return values >= np.asarray(theta, dtype=values.dtype)


def binarize(prob: ProbMap, theta: float) -> BoundaryMap:
    """
    Threshold a one-channel probability map.

    A pixel is set iff its value is >= theta; ODS results depend on this
    closed-on-the-left convention.

    Args:
        prob: One-channel ProbMap
        theta: Threshold in (0, 1)

    Returns:
        BoundaryMap of the thresholded channel
    """
    if not 0.0 < theta < 1.0:
        raise ParamError(f"Threshold {theta} outside (0, 1)")
    if prob.channels != 1:
        raise ShapeError(f"binarize expects one channel, got {prob.channels}")
    return BoundaryMap(bits=binarize_array(prob.values[0], theta))


def disk_footprint(radius: float) -> np.ndarray:
    """Boolean footprint of offsets (dy, dx) with dy^2 + dx^2 <= radius^2."""
    if radius < 0:
        raise ParamError(f"Radius {radius} must be non-negative")
    reach = int(np.floor(radius))
    offsets = np.arange(-reach, reach + 1)
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    return dy * dy + dx * dx <= radius * radius


def shift_array(values: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate the last two axes by (dx, dy), filling vacated pixels with zero."""
    height, width = values.shape[-2:]
    shifted = np.zeros_like(values)
    if abs(dx) >= width or abs(dy) >= height:
        return shifted
    src_rows = slice(max(0, -dy), height - max(0, dy))
    dst_rows = slice(max(0, dy), height - max(0, -dy))
    src_cols = slice(max(0, -dx), width - max(0, dx))
    dst_cols = slice(max(0, dx), width - max(0, -dx))
    shifted[..., dst_rows, dst_cols] = values[..., src_rows, src_cols]
    return shifted


def clip_box(x0: int, y0: int, x1: int, y1: int, width: int, height: int) -> Optional[Box]:
    """Clip raw coordinates to the canvas; None when nothing is left."""
    x0, x1 = max(0, x0), min(width, x1)
    y0, y1 = max(0, y0), min(height, y1)
    if x0 >= x1 or y0 >= y1:
        return None
    return Box(x0=x0, y0=y0, x1=x1, y1=y1)


def expand_box(box: Box, margin: int, width: int, height: int) -> Box:
    """Grow box by margin on every side, clipped to the canvas."""
    return clip_box(box.x0 - margin, box.y0 - margin, box.x1 + margin, box.y1 + margin, width, height)
