"""Feature tensors: on-disk format, pooling, and the extractor backends.

Per image the pipeline produces two descriptors from conv feature maps via
global average pooling: a global one from the whole masked scene and a local
one from the marker crop (falling back to the global descriptor when no
marker was found).

Feature maps travel as ``.ftns`` files so they can be produced out of
process.  Layout, all little-endian: magic ``FTNS``, version byte (1), dtype
code byte (1 = float32), ndim byte, one pad byte, then ndim u64 dims and the
row-major float32 payload.  Files are named ``<image_id>.<scope>.<layer>.ftns``
with scope ``global`` or ``local``.
"""

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import network

FTNS_MAGIC = b"FTNS"
FTNS_VERSION = 1
FTNS_DTYPE_F32 = 1

# channel width of each extractable conv layer of the VGG16 trunk
LAYER_CHANNELS = {2: 64, 4: 128, 7: 256, 10: 512, 13: 512}

SCOPES = ("global", "local")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

DEFAULT_INPUT_SIZE = (224, 224)


class TensorFormatError(ValueError):
    """A .ftns file failed validation; the message names the bad field."""


def write_tensor(path, array: np.ndarray) -> None:
    """Write a float32 tensor as .ftns, atomically (temp file + rename)."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = FTNS_MAGIC + struct.pack(
        "<BBBB", FTNS_VERSION, FTNS_DTYPE_F32, arr.ndim, 0
    )
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(dims)
            fh.write(arr.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_tensor(path) -> np.ndarray:
    """Read and validate a .ftns tensor file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8:
        raise TensorFormatError(f"{path}: file shorter than the 8-byte header")
    if data[:4] != FTNS_MAGIC:
        raise TensorFormatError(f"{path}: bad magic {data[:4]!r}")
    version, dtype_code, ndim, pad = struct.unpack("<BBBB", data[4:8])
    if version != FTNS_VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if dtype_code != FTNS_DTYPE_F32:
        raise TensorFormatError(f"{path}: unsupported dtype code {dtype_code}")
    if ndim < 1 or ndim > 8:
        raise TensorFormatError(f"{path}: implausible ndim {ndim}")
    if pad != 0:
        raise TensorFormatError(f"{path}: nonzero pad byte {pad}")
    need = 8 + 8 * ndim
    if len(data) < need:
        raise TensorFormatError(f"{path}: truncated dims block")
    shape = struct.unpack(f"<{ndim}Q", data[8:need])
    count = 1
    for d in shape:
        count *= d
    if len(data) - need != 4 * count:
        raise TensorFormatError(
            f"{path}: payload for dims {shape}: expected {4 * count} bytes,"
            f" got {len(data) - need}"
        )
    arr = np.frombuffer(data, dtype="<f4", offset=need)
    return arr.reshape(shape).copy()


def tensor_filename(image_id: str, scope: str, layer: int) -> str:
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    return f"{image_id}.{scope}.{layer}.ftns"


def global_average_pool(fmap: np.ndarray) -> np.ndarray:
    """Mean over the spatial axes of a (C, H, W) map, as float32 (C,)."""
    fmap = np.asarray(fmap)
    if fmap.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {fmap.shape}")
    return fmap.reshape(fmap.shape[0], -1).mean(axis=1).astype(np.float32)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers and edge replication."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3:
        raise ValueError("expected (H, W, C)")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0).astype(np.float32)
    wx = (xs - x0).astype(np.float32)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    row0 = img[y0c]
    row1 = img[y1c]
    top = row0[:, x0c] * (1.0 - wx)[None, :, None] + row0[:, x1c] * wx[None, :, None]
    bot = row1[:, x0c] * (1.0 - wx)[None, :, None] + row1[:, x1c] * wx[None, :, None]
    out = top * (1.0 - wy)[:, None, None] + bot * wy[:, None, None]
    return out.astype(np.float32)


@dataclass(frozen=True)
class ExtractorSpec:
    """How feature maps are obtained.

    ``backend`` is ``"precomputed"`` (read .ftns files from ``tensor_dir``)
    or ``"inference"`` (run the embedded executor over ``network_path``).
    """

    backend: str = "precomputed"
    layer: int = 2
    tensor_dir: Path | None = None
    network_path: Path | None = None
    input_size: tuple[int, int] = DEFAULT_INPUT_SIZE

    def __post_init__(self):
        if self.backend not in ("precomputed", "inference"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.layer not in LAYER_CHANNELS:
            raise ValueError(
                f"layer must be one of {sorted(LAYER_CHANNELS)}, got {self.layer}"
            )
        if self.backend == "precomputed" and self.tensor_dir is None:
            raise ValueError("precomputed backend needs tensor_dir")
        if self.backend == "inference" and self.network_path is None:
            raise ValueError("inference backend needs network_path")


def _check_fmap(fmap: np.ndarray, layer: int, origin: str) -> np.ndarray:
    if fmap.ndim != 3:
        raise ValueError(f"{origin}: feature map must be 3-D, got {fmap.shape}")
    want = LAYER_CHANNELS[layer]
    if fmap.shape[0] != want:
        raise ValueError(
            f"{origin}: layer {layer} must have {want} channels,"
            f" got {fmap.shape[0]}"
        )
    if not np.isfinite(fmap).all():
        raise ValueError(f"{origin}: feature map contains NaN or Inf")
    return fmap


class PrecomputedExtractor:
    """Serves feature maps from .ftns files under a tensor directory."""

    def __init__(self, spec: ExtractorSpec):
        self.spec = spec
        self.tensor_dir = Path(spec.tensor_dir)

    def extract(self, img, image_id: str, scope: str) -> np.ndarray:
        path = self.tensor_dir / tensor_filename(image_id, scope, self.spec.layer)
        if not path.is_file():
            raise FileNotFoundError(
                f"no precomputed tensor for image {image_id!r} scope {scope!r}"
                f" layer {self.spec.layer} (expected {path})"
            )
        return _check_fmap(read_tensor(path), self.spec.layer, str(path))


class InferenceExtractor:
    """Runs the embedded executor over a network file.

    Images are resized to ``input_size`` (bilinear), normalized with the
    standard per-channel mean/std, and pushed through the trunk up to the
    requested conv layer.  Holds the loaded network; not thread-safe, one
    instance per worker.
    """

    def __init__(self, spec: ExtractorSpec):
        self.spec = spec
        self.model = network.load_network(spec.network_path)
        if self.model.conv_count() < spec.layer:
            raise ValueError(
                f"network has {self.model.conv_count()} conv layers,"
                f" layer {spec.layer} requested"
            )

    def extract(self, img, image_id: str, scope: str) -> np.ndarray:
        img = np.asarray(img, dtype=np.float32)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("image must be (H, W, 3)")
        h, w = self.spec.input_size
        x = resize_bilinear(img, h, w)
        mean = np.asarray(IMAGENET_MEAN, np.float32)
        std = np.asarray(IMAGENET_STD, np.float32)
        x = (x - mean) / std
        fmap = network.run_convnet(
            self.model, x.transpose(2, 0, 1), upto_conv=self.spec.layer
        )
        return _check_fmap(fmap, self.spec.layer, f"inference:{image_id}:{scope}")


def make_extractor(spec: ExtractorSpec):
    if spec.backend == "precomputed":
        return PrecomputedExtractor(spec)
    return InferenceExtractor(spec)


def compute_features(
    masked: np.ndarray,
    local: np.ndarray | None,
    extractor,
    image_id: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Pool one image's global and local descriptors.

    ``local`` is the marker crop, or None when no marker was found; the
    fallback then reuses the global descriptor so downstream fusion always
    has both views.
    """
    g = global_average_pool(extractor.extract(masked, image_id, "global"))
    if local is None:
        return g, g.copy()
    l = global_average_pool(extractor.extract(local, image_id, "local"))
    return g, l


# ---------------------------------------------------------------------------
# stand-in feature maps (for tests and synthetic studies without a network)

# spatial grid per layer, mirroring how resolution shrinks down the trunk
STANDIN_GRID = {2: 32, 4: 16, 7: 8, 10: 4, 13: 2}


def standin_feature_map(img: np.ndarray, layer: int, seed: int = 0) -> np.ndarray:
    """Deterministic stand-in for a conv activation map.

    Splits the image into a layer-sized cell grid, takes per-cell color
    statistics (mean and spread per channel), and projects them through a
    fixed seeded random matrix to the layer's channel width.  Cheap, fully
    seeded, and distance-faithful enough to exercise the pipeline without a
    trained network.
    """
    if layer not in LAYER_CHANNELS:
        raise ValueError(f"layer must be one of {sorted(LAYER_CHANNELS)}")
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    channels = LAYER_CHANNELS[layer]
    grid = STANDIN_GRID[layer]
    rng = np.random.default_rng(seed * 1009 + layer)
    proj = rng.standard_normal((channels, 6)).astype(np.float32)
    h, w = img.shape[:2]
    ys = np.array_split(np.arange(h), grid)
    xs = np.array_split(np.arange(w), grid)
    stats = np.zeros((grid, grid, 6), np.float32)
    for i, yr in enumerate(ys):
        if yr.size == 0:
            continue
        band = img[yr[0] : yr[-1] + 1]
        for j, xr in enumerate(xs):
            if xr.size == 0:
                continue
            cell = band[:, xr[0] : xr[-1] + 1].reshape(-1, 3)
            stats[i, j, :3] = cell.mean(axis=0)
            stats[i, j, 3:] = cell.std(axis=0)
    fmap = np.einsum("cf,ijf->cij", proj, stats)
    return np.ascontiguousarray(fmap, dtype=np.float32)


def write_standin_tensors(items, out_dir, layers, seed: int = 0) -> int:
    """Materialize stand-in .ftns files for (image_id, scope, image) items.

    Existing files are kept (the stand-in is deterministic, so a present
    file is already correct).  Returns the number written.
    """
    out_dir = Path(out_dir)
    written = 0
    for image_id, scope, img in items:
        for layer in layers:
            path = out_dir / tensor_filename(image_id, scope, layer)
            if path.is_file():
                continue
            write_tensor(path, standin_feature_map(img, layer, seed))
            written += 1
    return written


BASELINE_SIDE = 32


def baseline_pixel_features(img: np.ndarray) -> np.ndarray:
    """Raw-pixel descriptor for the baseline clusterers: 32x32 RGB, flat."""
    small = resize_bilinear(np.asarray(img, np.float32), BASELINE_SIDE, BASELINE_SIDE)
    return small.reshape(-1).astype(np.float32)
