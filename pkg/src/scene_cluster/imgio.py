"""Image and mask loading.

Scene images are 8-bit RGB (PNG or JPEG) and become float32 arrays in
[0, 1].  Masks are 8-bit single-channel PNGs; values of 128 and above mark
salient pixels, which become 1 in the binary array.
"""

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

SALIENT_CUTOFF = 128


def load_image(path) -> np.ndarray:
    """Load an RGB image as float32 (H, W, 3) scaled to [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def load_mask(path) -> np.ndarray:
    """Load a saliency mask as uint8 (H, W) with values in {0, 1}."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= SALIENT_CUTOFF).astype(np.uint8)


def save_image_u8(arr: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 array as PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr, mode="RGB").save(path)


def save_image_float(arr: np.ndarray, path) -> None:
    """Write an (H, W, 3) float array in [0, 1] as PNG, rounding to 8 bits."""
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    save_image_u8(u8, path)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a binary (H, W) mask as an 8-bit PNG with values {0, 255}."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    u8 = np.where(mask != 0, 255, 0).astype(np.uint8)
    PILImage.fromarray(u8, mode="L").save(path)


def image_size(path) -> tuple[int, int]:
    """Return (width, height) without decoding the full image."""
    with PILImage.open(path) as im:
        return im.size
