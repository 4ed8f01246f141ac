"""Procedural desk-scale saliency corpora.

Scenes are textured backgrounds (per-channel base color, a low-frequency
sinusoid, Gaussian pixel noise) with 1–3 flat-colored salient shapes
(ellipses, rectangles, triangles) whose union is the binary ground truth.
One channel is engineered to separate foreground from background intensity,
so the task is learnable but not trivial at 32x32.

Weak annotations are scribbles: width-1 random walks confined to one class,
at least one stroke per class, recorded in a visibility mask O.  The partial
map stores ground truth on stroked pixels and a 0.5 sentinel elsewhere —
consumers must consult O, never the sentinel.

Dataset directories hold images.ten / saliency.ten (plus masks.ten for weak
data) and a key=value meta.txt; see coopsal.persist for the tensor codec.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import persist
from .rng import stream

__all__ = [
    "SceneError", "DatasetError", "SceneConfig", "ScribbleConfig", "Dataset",
    "generate_scene", "generate_scribble", "build_dataset",
    "write_dataset", "read_dataset",
]

DATASET_KINDS = ("full", "weak")
_META_KEYS = ("count", "image_size", "channels", "kind", "seed")


class SceneError(Exception):
    """No admissible scene found within the rejection budget."""


class DatasetError(Exception):
    """Inconsistent dataset directory contents."""


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 32
    channels: int = 3
    min_shapes: int = 1
    max_shapes: int = 3
    kinds: tuple = ("ellipse", "rectangle", "triangle")
    min_separation: float = 0.25   # guaranteed fg/bg contrast in one channel
    noise_std: float = 0.05
    texture_amp: float = 0.06
    area_min: float = 0.05         # admissible foreground fraction
    area_max: float = 0.60
    max_attempts: int = 100


@dataclass(frozen=True)
class ScribbleConfig:
    coverage: float = 0.05         # annotated-pixel fraction of the image
    min_strokes_per_class: int = 1
    stroke_width: int = 1
    max_walk_len: int = 12


def _seed_path(seed) -> tuple:
    return seed if isinstance(seed, tuple) else (seed,)


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------

def _raster_shape(kind: str, rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    margin = 1
    if kind == "ellipse":
        rx = rng.uniform(3, size / 4)
        ry = rng.uniform(3, size / 4)
        cx = rng.uniform(rx + margin, size - 1 - rx - margin)
        cy = rng.uniform(ry + margin, size - 1 - ry - margin)
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    if kind == "rectangle":
        w = rng.uniform(4, size / 2)
        h = rng.uniform(4, size / 2)
        x0 = rng.uniform(margin, size - 1 - w - margin)
        y0 = rng.uniform(margin, size - 1 - h - margin)
        return (xx >= x0) & (xx <= x0 + w) & (yy >= y0) & (yy <= y0 + h)
    if kind == "triangle":
        lo, hi = margin + 1, size - margin - 2
        pts = rng.uniform(lo, hi, size=(3, 2))
        # inclusive half-plane tests; all cross products share a sign inside
        signs = []
        for i in range(3):
            ax, ay = pts[i]
            bx, by = pts[(i + 1) % 3]
            signs.append((bx - ax) * (yy - ay) - (by - ay) * (xx - ax))
        signs = np.stack(signs)
        return np.all(signs >= 0, axis=0) | np.all(signs <= 0, axis=0)
    raise ValueError(f"unknown shape kind {kind!r}")


def generate_scene(seed, config: SceneConfig | None = None):
    """One procedural scene: image [C,H,W] in [0,1] and binary map [1,H,W].

    A pure function of (seed, config); the foreground-fraction constraint is
    enforced by rejection within ``max_attempts``.
    """
    cfg = config or SceneConfig()
    rng = stream("scene", *_seed_path(seed))
    size, channels = cfg.image_size, cfg.channels

    for _ in range(cfg.max_attempts):
        count = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
        union = np.zeros((size, size), dtype=bool)
        for _ in range(count):
            kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
            union |= _raster_shape(kind, rng, size)
        fraction = union.mean()
        if cfg.area_min <= fraction <= cfg.area_max:
            break
    else:
        raise SceneError(
            f"no scene with foreground fraction in [{cfg.area_min}, "
            f"{cfg.area_max}] after {cfg.max_attempts} attempts")

    background = rng.uniform(0.10, 0.35, size=channels)
    foreground = rng.uniform(0.05, 0.60, size=channels)
    pop = int(rng.integers(channels))
    foreground[pop] = background[pop] + rng.uniform(
        cfg.min_separation + 0.15, cfg.min_separation + 0.35)

    fx, fy = rng.uniform(0.5, 2.0, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=channels)
    yy, xx = np.mgrid[0:size, 0:size]
    waves = 2 * np.pi * (fx * xx + fy * yy) / size
    image = background[:, None, None] + cfg.texture_amp * np.sin(
        waves[None] + phase[:, None, None])
    image = np.where(union[None], foreground[:, None, None], image)
    image = image + rng.normal(0, cfg.noise_std, size=(channels, size, size))
    return (np.clip(image, 0.0, 1.0).astype(np.float32),
            union[None].astype(np.float32))


# ---------------------------------------------------------------------------
# scribbles
# ---------------------------------------------------------------------------

_STEPS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _walk_strokes(rng, class_mask, annotated, quota, cfg):
    """Mark ~quota pixels of one class with width-1 four-neighbor walks."""
    height, width = class_mask.shape
    marked = 0
    strokes = 0
    while marked < quota:
        free = np.flatnonzero(class_mask & ~annotated)
        if free.size == 0:
            break
        row, col = divmod(int(free[rng.integers(free.size)]), width)
        annotated[row, col] = True
        marked += 1
        strokes += 1
        # leave room for any further strokes the config still requires
        reserved = max(0, cfg.min_strokes_per_class - strokes)
        budget = min(int(rng.integers(3, cfg.max_walk_len + 1)),
                     quota - marked - reserved)
        for _ in range(budget):
            moved = False
            for k in rng.permutation(4):
                nr, nc = row + _STEPS[k][0], col + _STEPS[k][1]
                if (0 <= nr < height and 0 <= nc < width
                        and class_mask[nr, nc] and not annotated[nr, nc]):
                    row, col = nr, nc
                    annotated[row, col] = True
                    marked += 1
                    moved = True
                    break
            if not moved:
                break
    return strokes


def generate_scribble(y_gt: np.ndarray, seed, config: ScribbleConfig | None = None):
    """Scribble a binary map: returns (partial map, visibility mask).

    The partial map equals ``y_gt`` on annotated pixels and 0.5 elsewhere;
    strokes never cross the class boundary.
    """
    cfg = config or ScribbleConfig()
    if cfg.stroke_width != 1:
        raise ValueError("only width-1 strokes are supported")
    y_gt = np.asarray(y_gt)
    flat = y_gt.reshape(y_gt.shape[-2], y_gt.shape[-1]) if y_gt.ndim == 3 else y_gt
    if flat.ndim != 2:
        raise ValueError(f"expected a [H,W] or [1,H,W] map, got {y_gt.shape}")
    if not np.all((flat == 0) | (flat == 1)):
        raise ValueError("ground truth must be binary")
    fg = flat == 1
    if not fg.any():
        raise ValueError("degenerate ground truth: no foreground to scribble")
    if fg.all():
        raise ValueError("degenerate ground truth: no background to scribble")

    rng = stream("scribble", *_seed_path(seed))
    total = flat.size
    quota = max(int(round(cfg.coverage * total)), 2 * cfg.min_strokes_per_class)
    fg_quota = int(round(quota * fg.mean()))
    fg_quota = min(max(fg_quota, cfg.min_strokes_per_class),
                   quota - cfg.min_strokes_per_class)
    annotated = np.zeros_like(fg)
    _walk_strokes(rng, fg, annotated, fg_quota, cfg)
    _walk_strokes(rng, ~fg, annotated, quota - annotated.sum(), cfg)

    partial = np.where(annotated, flat, 0.5).astype(np.float32)
    observed = annotated.astype(np.float32)
    if y_gt.ndim == 3:
        return partial[None], observed[None]
    return partial, observed


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """In-memory dataset: ground-truth saliency for ``full`` records, partial
    annotations plus visibility masks for ``weak`` ones."""

    kind: str
    seed: int
    images: np.ndarray            # [N, C, H, W] float32 in [0, 1]
    saliency: np.ndarray          # [N, 1, H, W] float32
    masks: np.ndarray | None = None   # [N, 1, H, W] binary, weak only

    @property
    def count(self) -> int:
        return self.images.shape[0]


def build_dataset(count: int, seed: int, kind: str = "full",
                  coverage: float = 0.05,
                  scene_config: SceneConfig | None = None,
                  scribble_config: ScribbleConfig | None = None) -> Dataset:
    """Generate ``count`` scenes; for weak datasets scribble each of them.

    Record i is keyed by (seed, i), so regenerating with the same seed and a
    different kind yields views of the same underlying scenes.
    """
    if kind not in DATASET_KINDS:
        raise ValueError(f"kind must be one of {DATASET_KINDS}, got {kind!r}")
    scene_cfg = scene_config or SceneConfig()
    pairs = [generate_scene((seed, i), scene_cfg) for i in range(count)]
    images = np.stack([x for x, _ in pairs])
    gt = np.stack([y for _, y in pairs])
    if kind == "full":
        return Dataset(kind="full", seed=seed, images=images, saliency=gt)
    scribble_cfg = scribble_config or ScribbleConfig(coverage=coverage)
    scribbled = [generate_scribble(gt[i], (seed, i), scribble_cfg)
                 for i in range(count)]
    return Dataset(kind="weak", seed=seed, images=images,
                   saliency=np.stack([p for p, _ in scribbled]),
                   masks=np.stack([o for _, o in scribbled]))


def _check_consistent(ds: Dataset) -> None:
    if ds.kind not in DATASET_KINDS:
        raise DatasetError(f"unknown dataset kind {ds.kind!r}")
    if ds.images.ndim != 4 or ds.saliency.ndim != 4:
        raise DatasetError("images and saliency must be [N,C,H,W] / [N,1,H,W]")
    n, _, h, w = ds.images.shape
    if ds.saliency.shape != (n, 1, h, w):
        raise DatasetError(f"saliency shape {ds.saliency.shape} does not match "
                           f"images {ds.images.shape}")
    if (ds.masks is not None) != (ds.kind == "weak"):
        raise DatasetError("masks are required for weak datasets and "
                           "forbidden for full ones")
    if ds.masks is not None and ds.masks.shape != ds.saliency.shape:
        raise DatasetError(f"masks shape {ds.masks.shape} does not match "
                           f"saliency {ds.saliency.shape}")


def write_dataset(ds: Dataset, directory) -> None:
    _check_consistent(ds)
    os.makedirs(directory, exist_ok=True)
    join = lambda name: os.path.join(os.fspath(directory), name)
    persist.write_ten(ds.images, join("images.ten"))
    persist.write_ten(ds.saliency, join("saliency.ten"))
    if ds.masks is not None:
        persist.write_ten(ds.masks, join("masks.ten"))
    meta = (f"count={ds.count}\nimage_size={ds.images.shape[2]}\n"
            f"channels={ds.images.shape[1]}\nkind={ds.kind}\nseed={ds.seed}\n")
    persist.atomic_write(join("meta.txt"), meta.encode("utf-8"))


def read_dataset(directory) -> Dataset:
    join = lambda name: os.path.join(os.fspath(directory), name)
    try:
        with open(join("meta.txt"), encoding="utf-8") as f:
            lines = f.read().splitlines()
    except FileNotFoundError:
        raise DatasetError(f"{os.fspath(directory)}: missing meta.txt") from None
    meta = {}
    for line in lines:
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetError(f"malformed meta.txt line {line!r}")
        meta[key] = value
    missing = [k for k in _META_KEYS if k not in meta]
    if missing:
        raise DatasetError(f"meta.txt missing keys: {', '.join(missing)}")
    if meta["kind"] not in DATASET_KINDS:
        raise DatasetError(f"unknown dataset kind {meta['kind']!r}")

    images = persist.read_ten(join("images.ten"))
    saliency = persist.read_ten(join("saliency.ten"))
    masks = None
    if meta["kind"] == "weak":
        try:
            masks = persist.read_ten(join("masks.ten"))
        except FileNotFoundError:
            raise DatasetError(f"{os.fspath(directory)}: weak dataset is "
                               "missing masks.ten") from None

    try:
        expected = (int(meta["count"]), int(meta["channels"]),
                    int(meta["image_size"]), int(meta["image_size"]))
        seed = int(meta["seed"])
    except ValueError:
        raise DatasetError("non-integer numeric field in meta.txt") from None
    if images.shape != expected:
        raise DatasetError(f"images shape {images.shape} does not match "
                           f"meta.txt declaration {expected}")
    ds = Dataset(kind=meta["kind"], seed=seed, images=images,
                 saliency=saliency, masks=masks)
    _check_consistent(ds)
    return ds
