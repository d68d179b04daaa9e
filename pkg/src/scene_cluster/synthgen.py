"""Synthetic eating-scene studies with known environment truth.

Each scene stacks four layers onto a fixed-size canvas:

1. the environment's background texture (solid fill, horizontal stripes, or
   a smooth seeded noise field) plus per-pixel jitter of at most 10/255,
2. a flat surface patch around the marker in the environment's surface tone,
3. one to three smooth elliptical food blobs (salient),
4. a 6x6-cell colored checkerboard fiducial marker (salient), 42 px square.

The saliency mask is exactly the union of blob and marker pixels, by
construction.  Textures are chosen corner-free (axis-aligned stripe edges
and smooth fields never pass a 9-of-16 ring test at the default threshold),
so the marker is always the corner-richest salient component.

Environment palettes are engineered with controlled collisions: consecutive
environments share either the background or the surface tone, never both.
A matched pair can then only be told apart at the scale its twin signal
lives on, which is exactly what distance fusion is supposed to buy.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imgio
from .features import resize_bilinear
from .model import Dataset, EatingOccasionRecord, dump_manifest, load_manifest

SCENE_SIZE = 256
MARKER_CELLS = 6
MARKER_CELL_PX = 7
MARKER_SIDE = MARKER_CELLS * MARKER_CELL_PX  # 42

JITTER = 10  # per-pixel amplitude, 8-bit scale

# surface patch side as a multiple of the marker side; kept just above the
# local-crop expansion so the crop sees surface only, with a small margin
PATCH_SCALE = 2.2

BACKGROUND_KINDS = ("solid", "stripes", "noise")

# minimum per-channel mean separation between distinct textures, 8-bit scale
MIN_TEXTURE_SEPARATION = 40

_MARKER_PALETTE = (
    (15, 15, 15),
    (240, 240, 240),
    (200, 30, 30),
    (240, 210, 40),
)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Rendering parameters of one eating environment."""

    env_id: str
    background: str  # one of BACKGROUND_KINDS
    base_color: tuple[int, int, int]
    accent_color: tuple[int, int, int]
    surface_color: tuple[int, int, int]
    stripe_period: int = 24
    texture_seed: int = 0

    def __post_init__(self):
        if self.background not in BACKGROUND_KINDS:
            raise ValueError(f"unknown background kind {self.background!r}")


@dataclass(frozen=True)
class SynthParticipantSpec:
    participant_id: str
    n_images: int
    environments: tuple[EnvironmentSpec, ...]
    seed: int


@dataclass(frozen=True)
class FiducialTruth:
    """Where the marker really is, inclusive bbox."""

    bbox: tuple[int, int, int, int]
    env_id: str


def render_background(
    env: EnvironmentSpec, size: int = SCENE_SIZE, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Render the background layer as int16 (H, W, 3).

    Without ``rng`` the render is the jitter-free base texture; with it,
    seeded per-pixel jitter in [-JITTER, JITTER] is added.
    """
    base = np.empty((size, size, 3), np.int16)
    if env.background == "solid":
        base[:] = np.asarray(env.base_color, np.int16)
    elif env.background == "stripes":
        rows = (np.arange(size) // env.stripe_period) % 2
        colors = np.array([env.base_color, env.accent_color], np.int16)
        base[:] = colors[rows][:, None, :]
    else:  # smooth seeded noise field around the base color
        field_rng = np.random.default_rng(env.texture_seed)
        coarse = field_rng.uniform(-25.0, 25.0, (17, 17, 3)).astype(np.float32)
        smooth = resize_bilinear(coarse, size, size)
        base[:] = np.asarray(env.base_color, np.int16)[None, None, :]
        base += np.rint(smooth).astype(np.int16)
    if rng is not None:
        base += rng.integers(-JITTER, JITTER + 1, base.shape).astype(np.int16)
    return base


def background_mean_rgb(env: EnvironmentSpec, size: int = SCENE_SIZE) -> np.ndarray:
    """Mean RGB of the jitter-free background render."""
    return render_background(env, size, rng=None).reshape(-1, 3).mean(axis=0)


def environments_distinct(
    a: EnvironmentSpec, b: EnvironmentSpec, size: int = SCENE_SIZE
) -> bool:
    """Whether two environments are measurably different.

    True when the jitter-free background means or the surface tones are at
    least MIN_TEXTURE_SEPARATION apart in some channel.
    """
    bg = np.abs(background_mean_rgb(a, size) - background_mean_rgb(b, size))
    if (bg >= MIN_TEXTURE_SEPARATION).any():
        return True
    surf = np.abs(
        np.asarray(a.surface_color, np.int16) - np.asarray(b.surface_color, np.int16)
    )
    return bool((surf >= MIN_TEXTURE_SEPARATION).any())


def check_environments(envs, size: int = SCENE_SIZE) -> None:
    """Raise when any pair of environments is not measurably different."""
    envs = list(envs)
    ids = [e.env_id for e in envs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate env_id")
    for i in range(len(envs)):
        for j in range(i + 1, len(envs)):
            if not environments_distinct(envs[i], envs[j], size):
                raise ValueError(
                    f"environments {envs[i].env_id!r} and {envs[j].env_id!r}"
                    " are not measurably different"
                )


def _draw_marker(img: np.ndarray, x0: int, y0: int, rng: np.random.Generator) -> None:
    jit = rng.integers(-6, 7, (MARKER_CELLS, MARKER_CELLS, 3)).astype(np.int16)
    for i in range(MARKER_CELLS):
        for j in range(MARKER_CELLS):
            color = np.asarray(_MARKER_PALETTE[(i % 2) * 2 + (j % 2)], np.int16)
            ys = y0 + i * MARKER_CELL_PX
            xs = x0 + j * MARKER_CELL_PX
            img[ys : ys + MARKER_CELL_PX, xs : xs + MARKER_CELL_PX] = color + jit[i, j]


def _place_blobs(
    rng: np.random.Generator,
    size: int,
    keepout: tuple[int, int, int, int],
) -> list[tuple[float, float, float, float, float, np.ndarray]]:
    """Sample 1-3 ellipse parameter tuples whose bboxes avoid ``keepout``."""
    kx0, ky0, kx1, ky1 = keepout
    blobs = []
    for _ in range(int(rng.integers(1, 4))):
        for _attempt in range(50):
            cx = float(rng.uniform(10, size - 10))
            cy = float(rng.uniform(10, size - 10))
            rx = float(rng.uniform(16.0, 30.0))
            ry = float(rng.uniform(max(16.0, rx / 1.8), min(30.0, rx * 1.8)))
            theta = float(rng.uniform(0.0, np.pi))
            color = rng.integers(60, 231, 3).astype(np.int16)
            r = max(rx, ry)
            bx0, by0 = int(np.floor(cx - r)), int(np.floor(cy - r))
            bx1, by1 = int(np.ceil(cx + r)), int(np.ceil(cy + r))
            if bx1 < kx0 or bx0 > kx1 or by1 < ky0 or by0 > ky1:
                blobs.append((cx, cy, rx, ry, theta, color))
                break
    return blobs


def _draw_blob(img, mask, cx, cy, rx, ry, theta, color, size) -> None:
    r = max(rx, ry)
    x0 = max(0, int(np.floor(cx - r)))
    x1 = min(size - 1, int(np.ceil(cx + r)))
    y0 = max(0, int(np.floor(cy - r)))
    y1 = min(size - 1, int(np.ceil(cy + r)))
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    dx = xx - cx
    dy = yy - cy
    ct, st = np.cos(theta), np.sin(theta)
    u = (dx * ct + dy * st) / rx
    v = (-dx * st + dy * ct) / ry
    rr = u * u + v * v
    inside = rr <= 1.0
    # gentle radial shading keeps the blob smooth (no ring-test corners)
    shade = (1.0 - 0.4 * rr[inside]).astype(np.float32)
    img[y0 : y1 + 1, x0 : x1 + 1][inside] = np.rint(
        color[None, :].astype(np.float32) * shade[:, None]
    ).astype(np.int16)
    mask[y0 : y1 + 1, x0 : x1 + 1][inside] = 1


def generate_scene(
    env: EnvironmentSpec, seed: int, size: int = SCENE_SIZE
) -> tuple[np.ndarray, np.ndarray, FiducialTruth]:
    """Render one scene.

    Returns the uint8 (H, W, 3) image, the uint8 (H, W) saliency mask
    (exactly the blob and marker pixels), and the marker's true bbox.
    Everything is a pure function of (env, seed, size).
    """
    if size < MARKER_SIDE * 3:
        raise ValueError(f"size {size} too small for the marker layout")
    rng = np.random.default_rng(seed)

    # marker placement first; the patch must fit around it
    patch_side = int(round(MARKER_SIDE * PATCH_SCALE))
    margin = (patch_side - MARKER_SIDE) // 2 + 1
    fx = int(rng.integers(margin, size - MARKER_SIDE - margin + 1))
    fy = int(rng.integers(margin, size - MARKER_SIDE - margin + 1))
    marker_bbox = (fx, fy, fx + MARKER_SIDE - 1, fy + MARKER_SIDE - 1)

    img = render_background(env, size, rng)

    # surface patch centered on the marker
    from .preprocess import expand_bbox

    px0, py0, px1, py1 = expand_bbox(marker_bbox, PATCH_SCALE, size, size)
    patch = np.asarray(env.surface_color, np.int16)[None, None, :] + rng.integers(
        -JITTER, JITTER + 1, (py1 - py0 + 1, px1 - px0 + 1, 3)
    ).astype(np.int16)
    img[py0 : py1 + 1, px0 : px1 + 1] = patch

    mask = np.zeros((size, size), np.uint8)
    keepout = (px0 - 2, py0 - 2, px1 + 2, py1 + 2)
    for cx, cy, rx, ry, theta, color in _place_blobs(rng, size, keepout):
        _draw_blob(img, mask, cx, cy, rx, ry, theta, color, size)

    _draw_marker(img, fx, fy, rng)
    mask[fy : fy + MARKER_SIDE, fx : fx + MARKER_SIDE] = 1

    out = np.clip(img, 0, 255).astype(np.uint8)
    return out, mask, FiducialTruth(bbox=marker_bbox, env_id=env.env_id)


# ---------------------------------------------------------------------------
# study construction

# channel grid for engineered palettes; any two distinct triples differ by
# at least 70 in some channel
_CHANNEL_GRID = (20, 90, 160, 230)


def _grid_color(index: int) -> tuple[int, int, int]:
    r = _CHANNEL_GRID[(index // 16) % 4]
    g = _CHANNEL_GRID[(index // 4) % 4]
    b = _CHANNEL_GRID[index % 4]
    return (r, g, b)


def make_environments(
    k: int, rng: np.random.Generator, id_prefix: str = "env"
) -> tuple[EnvironmentSpec, ...]:
    """Build k environments with controlled collisions.

    Environment i uses background index i // 2 and surface index
    (i + 1) // 2: consecutive environments alternate between sharing the
    background exactly and sharing the surface tone exactly.  Background
    colors and surface tones are drawn without replacement from a spaced
    color grid, so non-shared pairs differ by at least 70 per some channel.
    """
    if k < 1:
        raise ValueError("need at least one environment")
    n_bg = (k - 1) // 2 + 1
    n_surf = k // 2 + 1
    picks = rng.permutation(64)[: n_bg + n_surf]
    bg_base = [_grid_color(int(picks[i])) for i in range(n_bg)]
    surf = [_grid_color(int(picks[n_bg + i])) for i in range(n_surf)]
    bg_kind = [BACKGROUND_KINDS[i % 3] for i in range(n_bg)]
    bg_seed = [int(rng.integers(0, 2**31)) for _ in range(n_bg)]
    envs = []
    for i in range(k):
        bi = i // 2
        si = (i + 1) // 2
        base = bg_base[bi]
        accent = tuple(max(0, c - 50) for c in base)
        envs.append(
            EnvironmentSpec(
                env_id=f"{id_prefix}{i:02d}",
                background=bg_kind[bi],
                base_color=base,
                accent_color=accent,
                surface_color=surf[si],
                texture_seed=bg_seed[bi],
            )
        )
    return tuple(envs)


def make_study_specs(
    n_participants: int = 12,
    seed: int = 0,
    min_images: int = 10,
    max_images: int = 60,
    min_environments: int = 3,
    max_environments: int = 12,
) -> list[SynthParticipantSpec]:
    """Seeded study layout: per-participant environment sets and image counts."""
    if min_images < 2 or max_images < min_images:
        raise ValueError("bad image count range")
    if min_environments < 1 or max_environments < min_environments:
        raise ValueError("bad environment count range")
    master = np.random.default_rng(seed)
    specs = []
    for p in range(n_participants):
        k = int(master.integers(min_environments, max_environments + 1))
        n_images = int(master.integers(min_images, max_images + 1))
        n_images = max(n_images, k)
        envs = make_environments(k, master)
        specs.append(
            SynthParticipantSpec(
                participant_id=f"p{p:02d}",
                n_images=n_images,
                environments=envs,
                seed=int(master.integers(0, 2**31)),
            )
        )
    return specs


def generate_dataset(
    specs, out_dir, size: int = SCENE_SIZE
) -> tuple[Dataset, dict[str, FiducialTruth]]:
    """Render a full study to disk and return the loaded dataset.

    Writes ``images/``, ``masks/``, and ``manifest.csv`` under ``out_dir``;
    env labels in the manifest are the true environment ids.  Every
    environment of a participant appears at least once.  Also returns the
    true marker bbox per image id.
    """
    out = Path(out_dir)
    records = []
    truths: dict[str, FiducialTruth] = {}
    for spec in specs:
        check_environments(spec.environments, size)
        k = len(spec.environments)
        if spec.n_images < k:
            raise ValueError(
                f"{spec.participant_id}: {spec.n_images} images cannot cover"
                f" {k} environments"
            )
        rng = np.random.default_rng(spec.seed)
        assignment = list(range(k)) + [
            int(v) for v in rng.integers(0, k, spec.n_images - k)
        ]
        perm = rng.permutation(spec.n_images)
        assignment = [assignment[i] for i in perm]
        scene_seeds = rng.integers(0, 2**63, spec.n_images)
        for j, env_idx in enumerate(assignment):
            env = spec.environments[env_idx]
            image_id = f"{spec.participant_id}_{j:04d}"
            img, mask, truth = generate_scene(env, int(scene_seeds[j]), size)
            imgio.save_image_u8(img, out / "images" / f"{image_id}.png")
            imgio.save_mask(mask, out / "masks" / f"{image_id}.png")
            truths[image_id] = truth
            records.append(
                EatingOccasionRecord(
                    participant_id=spec.participant_id,
                    image_id=image_id,
                    image_path=Path("images") / f"{image_id}.png",
                    mask_path=Path("masks") / f"{image_id}.png",
                    env_label=env.env_id,
                )
            )
    manifest_path = out / "manifest.csv"
    out.mkdir(parents=True, exist_ok=True)
    dump_manifest(Dataset(records), manifest_path, base=None)
    return load_manifest(manifest_path), truths
