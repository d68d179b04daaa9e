"""Saliency masking, marker localization, and local-region cropping.

Each scene photo carries a binary saliency mask covering the food items and
the fiducial marker.  The environment signal is what remains after those
pixels are zeroed.  The marker itself is found among the mask's 8-connected
components as the one richest in ring-test interest points; a scaled crop
around it provides the local view of the surrounding surface.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

# Fraction of image pixels below which a mask component is discarded.
DEFAULT_MIN_COMPONENT_FRACTION = 0.0005

DEFAULT_CORNER_THRESHOLD = 20.0
DEFAULT_EXPANSION = 2.0

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


class FiducialNotFoundError(RuntimeError):
    """No usable mask component to anchor the local crop."""


@dataclass(frozen=True)
class ConnectedComponent:
    """One 8-connected salient region.

    ``bbox`` is inclusive ``(min_x, min_y, max_x, max_y)``; ``pixels`` is an
    (n, 2) int array of (x, y) coordinates in scan order.
    """

    id: int
    pixel_count: int
    bbox: tuple[int, int, int, int]
    pixels: np.ndarray


@dataclass(frozen=True)
class InterestPoint:
    x: int
    y: int
    score: float


@dataclass(frozen=True)
class FiducialLocation:
    component_id: int
    bbox: tuple[int, int, int, int]
    interest_point_count: int


def mask_salient(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out salient pixels: ``out = (1 - mask) * img``.

    Args:
        img: (H, W, 3) float array in [0, 1].
        mask: (H, W) binary array, 1 = salient.

    Returns:
        float32 copy with salient pixels exactly zero and the rest exactly
        preserved.
    """
    img = np.asarray(img)
    mask = np.asarray(mask)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    if mask.shape != img.shape[:2]:
        raise ValueError(
            f"mask shape {mask.shape} does not match image {img.shape[:2]}"
        )
    keep = (mask == 0).astype(np.float32)
    return img.astype(np.float32, copy=False) * keep[:, :, None]


def connected_components(
    mask: np.ndarray, min_component_area: float | None = None
) -> list[ConnectedComponent]:
    """Extract 8-connected salient components, largest first.

    Components with fewer pixels than ``min_component_area`` (default:
    0.05% of the image) are dropped.  Ordering is by descending pixel count,
    then by scan position of the first pixel, and ids follow that order, so
    the result is deterministic.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    if min_component_area is None:
        min_component_area = DEFAULT_MIN_COMPONENT_FRACTION * mask.size
    labels, count = kernels.label8(mask)
    comps = []
    for lab in range(1, count + 1):
        ys, xs = np.nonzero(labels == lab)
        if ys.size < min_component_area:
            continue
        comps.append(
            (
                -int(ys.size),
                int(ys[0] * mask.shape[1] + xs[0]),
                (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
                np.column_stack([xs, ys]).astype(np.int32),
            )
        )
    comps.sort(key=lambda c: (c[0], c[1]))
    return [
        ConnectedComponent(id=i, pixel_count=-neg, bbox=bbox, pixels=px)
        for i, (neg, _, bbox, px) in enumerate(comps)
    ]


def rgb_to_gray255(img: np.ndarray) -> np.ndarray:
    """Luma conversion of a [0, 1] RGB array onto the 0..255 scale."""
    r, g, b = GRAY_WEIGHTS
    return (img[:, :, 0] * r + img[:, :, 1] * g + img[:, :, 2] * b) * 255.0


def detect_interest_points(
    img: np.ndarray,
    region: tuple[int, int, int, int],
    threshold: float = DEFAULT_CORNER_THRESHOLD,
) -> list[InterestPoint]:
    """Ring-test corners inside an inclusive bbox of the original image.

    Detection intentionally runs on unmasked pixels: the marker pattern that
    makes a component identifiable is itself salient and would be erased by
    masking.  The bbox must have positive area and lie inside the image.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    x0, y0, x1, y1 = (int(v) for v in region)
    h, w = img.shape[:2]
    if not (0 <= x0 <= x1 < w and 0 <= y0 <= y1 < h):
        raise ValueError(f"region {region} outside image {w}x{h} or degenerate")
    gray = rgb_to_gray255(img[y0 : y1 + 1, x0 : x1 + 1])
    ys, xs, scores = kernels.fast9(gray, threshold)
    return [
        InterestPoint(x=int(x + x0), y=int(y + y0), score=float(s))
        for y, x, s in zip(ys, xs, scores)
    ]


def locate_fiducial(
    img: np.ndarray,
    components: list[ConnectedComponent],
    threshold: float = DEFAULT_CORNER_THRESHOLD,
) -> FiducialLocation:
    """Pick the component whose bbox holds the most interest points.

    Ties go to the larger component, then to the smaller id.  Raises
    :class:`FiducialNotFoundError` when the component list is empty; the
    caller decides the fallback (the pipeline reuses the global feature).
    """
    if not components:
        raise FiducialNotFoundError("no salient components to examine")
    best = None
    for comp in components:
        pts = detect_interest_points(img, comp.bbox, threshold)
        key = (-len(pts), -comp.pixel_count, comp.id)
        if best is None or key < best[0]:
            best = (key, comp, len(pts))
    _, comp, npts = best
    return FiducialLocation(
        component_id=comp.id, bbox=comp.bbox, interest_point_count=npts
    )


def expand_bbox(
    bbox: tuple[int, int, int, int],
    expansion: float,
    width: int,
    height: int,
) -> tuple[int, int, int, int]:
    """Scale an inclusive bbox about its center and clip to the image.

    Each side length is multiplied by ``expansion`` (>= 1); the new origin is
    ``floor(center - (new_side - 1) / 2)``.  With ``expansion = 1.0`` the
    bbox comes back unchanged.
    """
    if expansion < 1.0:
        raise ValueError("expansion must be >= 1")
    x0, y0, x1, y1 = bbox
    bw = x1 - x0 + 1
    bh = y1 - y0 + 1
    nw = int(round(bw * expansion))
    nh = int(round(bh * expansion))
    cx = (x0 + x1) / 2.0
    cy = (y0 + y1) / 2.0
    nx0 = int(np.floor(cx - (nw - 1) / 2.0))
    ny0 = int(np.floor(cy - (nh - 1) / 2.0))
    nx1 = nx0 + nw - 1
    ny1 = ny0 + nh - 1
    return (max(0, nx0), max(0, ny0), min(width - 1, nx1), min(height - 1, ny1))


def crop_local_region(
    masked: np.ndarray,
    fiducial: FiducialLocation,
    expansion: float = DEFAULT_EXPANSION,
) -> np.ndarray:
    """Cut the expanded marker neighborhood out of the masked image."""
    masked = np.asarray(masked)
    h, w = masked.shape[:2]
    x0, y0, x1, y1 = expand_bbox(fiducial.bbox, expansion, w, h)
    return masked[y0 : y1 + 1, x0 : x1 + 1].copy()
