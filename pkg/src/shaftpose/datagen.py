"""Synthetic dataset generation with automatic annotation.

Each record draws one or two shaft poses, a light intensity, and a
procedural tissue-like background, renders the scene, and derives
bounding boxes from the silhouette masks. A configurable fraction of
records is emitted pose-stripped (bounding boxes kept, pose and mask
omitted) to stand in for manually-annotated real images.

Determinism: record ``i`` of a dataset with global seed ``s`` is drawn
from ``SeedSequence((s, i, 0))`` and can be regenerated alone, bit
exactly. The pose-stripped coin comes from a separate stream
``SeedSequence((s, i, 1))`` so changing the stripped fraction never
changes image content.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError, DatasetError, GenerationError
from .geometry import CameraModel, PoseRanges, ShaftPose
from .rendering import RenderedSample, ShaftGeometry, compose_scene

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


# ----------------------------------------------------------------------
# configs

@dataclass
class AugmentationConfig:
    """Photometric jitter half-widths plus uniform pixel noise."""

    hue_jitter: float = 0.05
    saturation_jitter: float = 0.2
    brightness_jitter: float = 0.2
    contrast_jitter: float = 0.2
    noise_amplitude: float = 10.0
    noise_prob: float = 0.5

    def __post_init__(self) -> None:
        for name in ("hue_jitter", "saturation_jitter", "brightness_jitter",
                     "contrast_jitter", "noise_amplitude"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ConfigError("noise_prob must be in [0, 1]")


@dataclass
class GenerationConfig:
    camera: CameraModel = field(default_factory=CameraModel)
    geometry: ShaftGeometry = field(default_factory=ShaftGeometry)
    ranges: PoseRanges = field(default_factory=PoseRanges)
    two_shaft_prob: float = 0.5
    light_range: tuple[float, float] = (0.6, 1.4)
    pose_stripped_fraction: float = 0.0
    background_hue_jitter: float = 0.05
    background_saturation_jitter: float = 0.15
    background_brightness_jitter: float = 0.15
    max_retries: int = 32

    def __post_init__(self) -> None:
        if not 0.0 <= self.two_shaft_prob <= 1.0:
            raise ConfigError("two_shaft_prob must be in [0, 1]")
        if not 0.0 <= self.pose_stripped_fraction <= 1.0:
            raise ConfigError("pose_stripped_fraction must be in [0, 1]")
        if self.max_retries < 1:
            raise ConfigError("max_retries must be >= 1")


# ----------------------------------------------------------------------
# pose sampling

def sample_pose(rng: np.random.Generator, ranges: PoseRanges) -> ShaftPose:
    """Independent uniform draw per pose dimension."""
    return ShaftPose(
        x=rng.uniform(*ranges.x),
        y=rng.uniform(*ranges.y),
        z=rng.uniform(*ranges.z),
        pitch=rng.uniform(*ranges.pitch),
        yaw=rng.uniform(*ranges.yaw),
    )


# ----------------------------------------------------------------------
# color helpers (float images in [0, 1], hue in [0, 1))

def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    s = np.where(maxc > 1e-12, delta / np.maximum(maxc, 1e-12), 0.0)
    dd = np.where(delta > 1e-12, delta, 1.0)
    rc = (maxc - r) / dd
    gc = (maxc - g) / dd
    bc = (maxc - b) / dd
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 1e-12, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


# ----------------------------------------------------------------------
# backgrounds

_PALETTE = np.array(
    [
        [0.30, 0.05, 0.08],   # deep tissue red
        [0.55, 0.16, 0.18],
        [0.80, 0.45, 0.48],   # pale pink
    ]
)


def _bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    gh, gw = grid.shape
    ys = np.clip((np.arange(height) + 0.5) / height * gh - 0.5, 0, gh - 1)
    xs = np.clip((np.arange(width) + 0.5) / width * gw - 0.5, 0, gw - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def generate_background(
    rng: np.random.Generator,
    camera: CameraModel,
    hue_jitter: float = 0.05,
    saturation_jitter: float = 0.15,
    brightness_jitter: float = 0.15,
) -> np.ndarray:
    """Smooth value-noise field through a tissue palette, HSV-jittered."""
    h, w = camera.height, camera.width
    field = np.zeros((h, w))
    for cells, amp in ((4, 1.0), (8, 0.5), (16, 0.25)):
        field += amp * _bilinear_upsample(rng.random((cells, cells)), h, w)
    lo, hi = field.min(), field.max()
    field = (field - lo) / max(hi - lo, 1e-12)

    seg = np.clip(field * (_PALETTE.shape[0] - 1), 0, _PALETTE.shape[0] - 1 - 1e-9)
    idx = np.floor(seg).astype(np.int64)
    frac = (seg - idx)[..., None]
    rgb = _PALETTE[idx] * (1 - frac) + _PALETTE[idx + 1] * frac

    # Jitter draws always happen so rng consumption is fixed.
    dh = rng.uniform(-hue_jitter, hue_jitter)
    ds = rng.uniform(-saturation_jitter, saturation_jitter)
    dv = rng.uniform(-brightness_jitter, brightness_jitter)
    if dh != 0.0 or ds != 0.0 or dv != 0.0:
        hsv = rgb_to_hsv(rgb)
        hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + ds), 0.0, 1.0)
        hsv[..., 2] = np.clip(hsv[..., 2] * (1.0 + dv), 0.0, 1.0)
        rgb = hsv_to_rgb(hsv)
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


# ----------------------------------------------------------------------
# augmentation

def augment(image: np.ndarray, rng: np.random.Generator, config: AugmentationConfig) -> np.ndarray:
    """Photometric-only augmentation of an 8-bit RGB image.

    HSV and contrast jitter, then with probability ``noise_prob`` i.i.d.
    uniform noise in [-amplitude, amplitude] per pixel per channel.
    Annotations are untouched by construction (no geometric changes).
    """
    dh = rng.uniform(-config.hue_jitter, config.hue_jitter)
    ds = rng.uniform(-config.saturation_jitter, config.saturation_jitter)
    dv = rng.uniform(-config.brightness_jitter, config.brightness_jitter)
    dc = rng.uniform(-config.contrast_jitter, config.contrast_jitter)

    x = image.astype(np.float32) / np.float32(255.0)
    if dh != 0.0 or ds != 0.0 or dv != 0.0:
        hsv = rgb_to_hsv(x)
        hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + ds), 0.0, 1.0)
        hsv[..., 2] = np.clip(hsv[..., 2] * (1.0 + dv), 0.0, 1.0)
        x = hsv_to_rgb(hsv)
    if dc != 0.0:
        mean = x.mean()
        x = np.clip((x - mean) * (1.0 + dc) + mean, 0.0, 1.0)

    x = x * 255.0
    if rng.random() < config.noise_prob:
        x = x + rng.uniform(-config.noise_amplitude, config.noise_amplitude, size=x.shape)
    return np.rint(np.clip(x, 0.0, 255.0)).astype(np.uint8)


def augment_batch(images: np.ndarray, rng: np.random.Generator,
                  config: AugmentationConfig) -> np.ndarray:
    """Vectorized equivalent of calling :func:`augment` image by image.

    Draws per-image parameters in the exact same rng order, then applies
    the color math across the whole batch; results are bit-identical to
    the sequential path.
    """
    b = images.shape[0]
    dh = np.empty(b)
    ds = np.empty(b)
    dv = np.empty(b)
    dc = np.empty(b)
    noise = np.zeros(images.shape)
    for i in range(b):
        dh[i] = rng.uniform(-config.hue_jitter, config.hue_jitter)
        ds[i] = rng.uniform(-config.saturation_jitter, config.saturation_jitter)
        dv[i] = rng.uniform(-config.brightness_jitter, config.brightness_jitter)
        dc[i] = rng.uniform(-config.contrast_jitter, config.contrast_jitter)
        if rng.random() < config.noise_prob:
            noise[i] = rng.uniform(
                -config.noise_amplitude, config.noise_amplitude, size=images.shape[1:]
            )

    x = images.astype(np.float32) / np.float32(255.0)
    if config.hue_jitter or config.saturation_jitter or config.brightness_jitter:
        hsv = rgb_to_hsv(x)
        hsv[..., 0] = (hsv[..., 0] + dh[:, None, None]) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + ds[:, None, None]), 0.0, 1.0)
        hsv[..., 2] = np.clip(hsv[..., 2] * (1.0 + dv[:, None, None]), 0.0, 1.0)
        x = hsv_to_rgb(hsv)
    if config.contrast_jitter:
        mean = x.mean(axis=(1, 2, 3), keepdims=True)
        x = np.clip((x - mean) * (1.0 + dc[:, None, None, None]) + mean, 0.0, 1.0)
    x = x * 255.0 + noise
    return np.rint(np.clip(x, 0.0, 255.0)).astype(np.uint8)


# ----------------------------------------------------------------------
# records

@dataclass
class ShaftAnnotation:
    bbox: tuple[float, float, float, float]
    pose: ShaftPose | None = None
    mask_path: str | None = None


@dataclass
class DatasetRecord:
    index: int
    seed: int
    image_path: str
    annotations: list[ShaftAnnotation] = field(default_factory=list)

    @property
    def pose_labeled(self) -> bool:
        return all(a.pose is not None for a in self.annotations)


@dataclass
class GeneratedSample:
    """In-memory record content before it is written to disk."""

    index: int
    seed: int
    image: np.ndarray
    poses: list[ShaftPose]
    masks: list[np.ndarray]
    bboxes: list[tuple[float, float, float, float]]
    pose_stripped: bool
    rendered: RenderedSample


def _record_rng(global_seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((global_seed, index, stream))))


def generate_record(global_seed: int, index: int, cfg: GenerationConfig) -> GeneratedSample:
    """Render one annotated record, resampling degenerate scenes.

    A scene is degenerate when any shaft has an empty silhouette or is
    fully hidden; after ``max_retries`` redraws a GenerationError is
    raised (that means the configured ranges barely ever produce a
    visible shaft).
    """
    rng = _record_rng(global_seed, index, 0)
    stripped = _record_rng(global_seed, index, 1).random() < cfg.pose_stripped_fraction
    seed = int(np.random.SeedSequence((global_seed, index)).generate_state(1, np.uint64)[0])

    for _ in range(cfg.max_retries):
        n_shafts = 2 if rng.random() < cfg.two_shaft_prob else 1
        poses = [sample_pose(rng, cfg.ranges) for _ in range(n_shafts)]
        light = rng.uniform(*cfg.light_range)
        background = generate_background(
            rng,
            cfg.camera,
            cfg.background_hue_jitter,
            cfg.background_saturation_jitter,
            cfg.background_brightness_jitter,
        )
        sample = compose_scene(cfg.camera, poses, cfg.geometry, light, background)
        degenerate = any(b is None for b in sample.bboxes) or any(
            not m.any() for m in sample.visible_masks
        )
        if not degenerate:
            return GeneratedSample(
                index=index,
                seed=seed,
                image=sample.image,
                poses=poses,
                masks=sample.masks,
                bboxes=list(sample.bboxes),
                pose_stripped=stripped,
                rendered=sample,
            )
    raise GenerationError(
        f"record {index}: no visible scene after {cfg.max_retries} retries; "
        "check pose ranges and camera configuration"
    )


# ----------------------------------------------------------------------
# dataset on disk

@dataclass
class Dataset:
    root: str
    schema_version: int
    global_seed: int
    pose_stripped_fraction: float
    camera: CameraModel
    geometry: ShaftGeometry
    ranges: PoseRanges
    records: list[DatasetRecord] = field(default_factory=list)

    def load_image(self, record: DatasetRecord) -> np.ndarray:
        return _read_png_rgb(os.path.join(self.root, record.image_path))

    def load_mask(self, annotation: ShaftAnnotation) -> np.ndarray:
        if annotation.mask_path is None:
            raise DatasetError("annotation has no mask")
        path = os.path.join(self.root, annotation.mask_path)
        with Image.open(path) as im:
            return np.asarray(im.convert("L")) >= 128


def _read_png_rgb(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise DatasetError(f"missing image file: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _save_png(arr: np.ndarray, path: str, mode: str) -> None:
    Image.fromarray(arr, mode).save(path, format="PNG")


def write_dataset(
    samples,
    out_dir: str,
    global_seed: int,
    cfg: GenerationConfig,
) -> list[DatasetRecord]:
    """Write samples as manifest.jsonl + images/ + masks/.

    Annotations round-trip losslessly: floats are serialized at full
    precision and PNGs are bit-identical on re-read.
    """
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    records = []
    lines = []
    for s in samples:
        image_rel = f"images/{s.index:06d}.png"
        _save_png(s.image, os.path.join(out_dir, image_rel), "RGB")
        annotations = []
        for k, (pose, mask, bbox) in enumerate(zip(s.poses, s.masks, s.bboxes)):
            if s.pose_stripped:
                annotations.append(ShaftAnnotation(bbox=bbox, pose=None, mask_path=None))
            else:
                mask_rel = f"masks/{s.index:06d}_{k}.png"
                _save_png((mask.astype(np.uint8) * 255), os.path.join(out_dir, mask_rel), "L")
                annotations.append(ShaftAnnotation(bbox=bbox, pose=pose, mask_path=mask_rel))
        record = DatasetRecord(
            index=s.index, seed=s.seed, image_path=image_rel, annotations=annotations
        )
        records.append(record)
        lines.append(_record_to_json(record))

    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": "shaftpose-dataset",
        "global_seed": int(global_seed),
        "count": len(records),
        "pose_stripped_fraction": cfg.pose_stripped_fraction,
        "camera": {
            "width": cfg.camera.width,
            "height": cfg.camera.height,
            "horizontal_fov_deg": cfg.camera.horizontal_fov_deg,
        },
        "geometry": {
            "radius": cfg.geometry.radius,
            "length": cfg.geometry.length,
            "tip_style": cfg.geometry.tip_style,
        },
        "ranges": {k: list(getattr(cfg.ranges, k)) for k in ("x", "y", "z", "pitch", "yaw")},
    }
    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w") as f:
        f.write(json.dumps(header) + "\n")
        for line in lines:
            f.write(line + "\n")
    return records


def _record_to_json(record: DatasetRecord) -> str:
    return json.dumps(
        {
            "index": record.index,
            "seed": record.seed,
            "image": record.image_path,
            "shafts": [
                {
                    "bbox": list(a.bbox),
                    "pose": a.pose.to_dict() if a.pose is not None else None,
                    "mask": a.mask_path,
                }
                for a in record.annotations
            ],
        }
    )


def read_dataset(root: str, validate_files: bool = True) -> Dataset:
    """Parse a dataset directory, checking schema and file presence."""
    manifest = os.path.join(root, "manifest.jsonl")
    if not os.path.exists(manifest):
        raise DatasetError(f"missing manifest: {manifest}")
    with open(manifest) as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise DatasetError(f"empty manifest: {manifest}")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetError(f"corrupt manifest header: {e}") from e
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatasetError(
            f"unsupported dataset schema_version {version!r} (expected {SCHEMA_VERSION})"
        )

    cam = header.get("camera", {})
    geo = header.get("geometry", {})
    rng_spec = header.get("ranges", {})
    dataset = Dataset(
        root=root,
        schema_version=version,
        global_seed=int(header.get("global_seed", 0)),
        pose_stripped_fraction=float(header.get("pose_stripped_fraction", 0.0)),
        camera=CameraModel(
            width=int(cam.get("width", 64)),
            height=int(cam.get("height", 64)),
            horizontal_fov_deg=float(cam.get("horizontal_fov_deg", 95.0)),
        ),
        geometry=ShaftGeometry(
            radius=float(geo.get("radius", 1.75)),
            length=float(geo.get("length", 100.0)),
            tip_style=geo.get("tip_style", "hemisphere"),
        ),
        ranges=PoseRanges(**{k: tuple(v) for k, v in rng_spec.items()}) if rng_spec else PoseRanges(),
    )
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetError(f"corrupt manifest line {line_no}: {e}") from e
        annotations = []
        for shaft in obj["shafts"]:
            annotations.append(
                ShaftAnnotation(
                    bbox=tuple(shaft["bbox"]),
                    pose=ShaftPose.from_dict(shaft["pose"]) if shaft["pose"] else None,
                    mask_path=shaft["mask"],
                )
            )
        record = DatasetRecord(
            index=int(obj["index"]),
            seed=int(obj["seed"]),
            image_path=obj["image"],
            annotations=annotations,
        )
        if validate_files:
            img = os.path.join(root, record.image_path)
            if not os.path.exists(img):
                raise DatasetError(f"record {record.index}: missing image file {img}")
            for a in record.annotations:
                if a.mask_path is not None:
                    mp = os.path.join(root, a.mask_path)
                    if not os.path.exists(mp):
                        raise DatasetError(f"record {record.index}: missing mask file {mp}")
        dataset.records.append(record)
    return dataset


def generate_dataset(out_dir: str, count: int, global_seed: int, cfg: GenerationConfig) -> dict:
    """Generate ``count`` records and write them under ``out_dir``."""
    if count < 1:
        raise ConfigError(f"dataset count must be >= 1, got {count}")
    samples = (generate_record(global_seed, i, cfg) for i in range(count))
    records = write_dataset(samples, out_dir, global_seed, cfg)
    stripped = sum(1 for r in records if not r.pose_labeled)
    summary = {
        "count": len(records),
        "pose_stripped": stripped,
        "pose_stripped_fraction_configured": cfg.pose_stripped_fraction,
        "pose_stripped_fraction_actual": stripped / len(records),
        "two_shaft_records": sum(1 for r in records if len(r.annotations) == 2),
        "global_seed": int(global_seed),
    }
    logger.info("generated %d records at %s (%d pose-stripped)", len(records), out_dir, stripped)
    return summary
