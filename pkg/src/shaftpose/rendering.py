"""Ray-cast rendering of cylindrical shafts over background images.

Each shaft is a finite cylinder whose axis runs from the tip backward
along the negative axis direction, closed by a hemispherical (default)
or flat tip and a flat base disc. Rays are cast from the camera origin
through every pixel center; hits are shaded with a Lambertian + Phong
specular headlight at the origin. Everything is a pure function of its
arguments, so renders are bit-reproducible.

Mask semantics: the per-shaft mask stored in a ``RenderedSample`` is the
full individual silhouette of that shaft (what ``render_silhouette``
produces for its pose). When shafts overlap, the composited image gives
each pixel to the nearest shaft; that visibility partition is kept
separately in ``visible_masks``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import CameraModel, ShaftPose, direction_from_angles

logger = logging.getLogger(__name__)

_T_EPS = 1e-9
_NO_HIT = np.inf

# Headlight shading constants (albedo chosen for a metallic gray shaft).
_ALBEDO = np.array([0.72, 0.73, 0.76])
_AMBIENT = 0.12
_DIFFUSE = 0.62
_SPECULAR = 0.45
_PHONG_EXP = 32.0


@dataclass
class ShaftGeometry:
    """Parametric stand-in for the instrument CAD model."""

    radius: float = 1.75
    length: float = 100.0
    tip_style: str = "hemisphere"

    def __post_init__(self) -> None:
        if self.radius <= 0 or self.length <= 0:
            raise ConfigError("shaft radius and length must be positive")
        if self.tip_style not in ("hemisphere", "flat"):
            raise ConfigError(f"unknown tip_style {self.tip_style!r}")


@dataclass
class RenderedSample:
    """Composited image plus per-shaft silhouette masks and tight boxes."""

    image: np.ndarray                 # H x W x 3 uint8
    masks: list[np.ndarray]           # per shaft, full silhouette, bool
    visible_masks: list[np.ndarray]   # per shaft, nearest-hit partition, bool
    bboxes: list[tuple[float, float, float, float] | None]


def _pixel_rays(camera: CameraModel) -> np.ndarray:
    """Unnormalized ray directions through all pixel centers, (H*W, 3)."""
    cx, cy = camera.principal_point
    f = camera.focal
    u = (np.arange(camera.width) + 0.5 - cx) / f
    v = (np.arange(camera.height) + 0.5 - cy) / f
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)


def _shaft_hits(camera: CameraModel, pose: ShaftPose, geom: ShaftGeometry):
    """Nearest intersection of every pixel ray with one shaft.

    Returns (t, component) where t is inf for misses and component
    encodes which surface was hit: 0 side, 1 tip cap, 2 base disc.
    """
    rays = _pixel_rays(camera)
    d = direction_from_angles(pose.pitch, pose.yaw)
    tip = np.array([pose.x, pose.y, pose.z])
    base = tip - geom.length * d
    r2 = geom.radius * geom.radius

    vd = rays @ d
    t_all = np.full((rays.shape[0], 3), _NO_HIT)

    # Cylinder side: |perp(t * ray - base)|^2 = r^2. Only exterior
    # (front-facing) wall hits count: a shaft whose body continues past
    # the camera would otherwise paint its interior over the whole
    # frame. For any pose with the camera outside the cylinder the
    # first hit is front-facing anyway, so this only affects
    # through-camera degenerate poses.
    vp = rays - vd[:, None] * d
    u0 = (base @ d) * d - base
    a = np.einsum("ij,ij->i", vp, vp)
    b = 2.0 * (vp @ u0)
    c = u0 @ u0 - r2
    disc = b * b - 4.0 * a * c
    solvable = (disc >= 0.0) & (a > 1e-14)
    sq = np.sqrt(np.where(solvable, disc, 0.0))
    a_safe = np.where(solvable, a, 1.0)
    for sign in (-1.0, 1.0):
        t = (-b + sign * sq) / (2.0 * a_safe)
        m = t * vd - base @ d
        front_facing = t * np.einsum("ij,ij->i", vp, rays) + rays @ u0 < 0.0
        ok = solvable & (t > _T_EPS) & (m >= 0.0) & (m <= geom.length) & front_facing
        t_all[:, 0] = np.where(ok & (t < t_all[:, 0]), t, t_all[:, 0])

    # Tip cap.
    if geom.tip_style == "hemisphere":
        a2 = np.einsum("ij,ij->i", rays, rays)
        b2 = -2.0 * (rays @ tip)
        c2 = tip @ tip - r2
        disc2 = b2 * b2 - 4.0 * a2 * c2
        ok2 = disc2 >= 0.0
        sq2 = np.sqrt(np.where(ok2, disc2, 0.0))
        for sign in (-1.0, 1.0):
            t = (-b2 + sign * sq2) / (2.0 * a2)
            beyond_tip = t * vd - tip @ d >= 0.0
            ok = ok2 & (t > _T_EPS) & beyond_tip
            t_all[:, 1] = np.where(ok & (t < t_all[:, 1]), t, t_all[:, 1])
    else:
        t_all[:, 1] = _disc_hits(rays, vd, tip, d, r2)

    t_all[:, 2] = _disc_hits(rays, vd, base, d, r2)

    comp = np.argmin(t_all, axis=1)
    t = t_all[np.arange(t_all.shape[0]), comp]
    return t, comp


def _disc_hits(rays, vd, center, normal, r2) -> np.ndarray:
    """Ray-disc intersection parameters; inf where missed."""
    denom_ok = np.abs(vd) > 1e-14
    t = np.where(denom_ok, (center @ normal) / np.where(denom_ok, vd, 1.0), _NO_HIT)
    p = t[:, None] * rays
    radial2 = np.einsum("ij,ij->i", p - center, p - center)
    ok = denom_ok & (t > _T_EPS) & (radial2 <= r2)
    return np.where(ok, t, _NO_HIT)


def _surface_normals(rays, t, comp, pose, geom) -> np.ndarray:
    """Unit normals at hit points, flipped to face the incoming rays."""
    d = direction_from_angles(pose.pitch, pose.yaw)
    tip = np.array([pose.x, pose.y, pose.z])
    base = tip - geom.length * d
    p = t[:, None] * rays

    m = (p - base) @ d
    n_side = (p - base - m[:, None] * d) / geom.radius
    if geom.tip_style == "hemisphere":
        n_tip = (p - tip) / geom.radius
    else:
        n_tip = np.broadcast_to(d, p.shape)
    n_base = np.broadcast_to(-d, p.shape)

    n = np.where(comp[:, None] == 0, n_side, np.where(comp[:, None] == 1, n_tip, n_base))
    # Caps are two-sided (their inside is visible for through-camera
    # poses); shade with the side that faces the ray.
    facing = np.einsum("ij,ij->i", n, rays)
    return np.where(facing[:, None] > 0.0, -n, n)


def render_silhouette(camera: CameraModel, pose: ShaftPose, geom: ShaftGeometry) -> np.ndarray:
    """Binary silhouette of a single shaft, no shading or background."""
    t, _ = _shaft_hits(camera, pose, geom)
    return np.isfinite(t).reshape(camera.height, camera.width)


def compose_scene(
    camera: CameraModel,
    poses: list[ShaftPose],
    geom: ShaftGeometry,
    light_intensity: float,
    background: np.ndarray,
) -> RenderedSample:
    """Render one or more shafts over a background with occlusion.

    Per pixel the nearest shaft wins. Stored per-shaft masks are full
    individual silhouettes; the nearest-hit partition is returned in
    ``visible_masks``.
    """
    if background.shape != (camera.height, camera.width, 3):
        raise ConfigError(
            f"background shape {background.shape} does not match camera "
            f"({camera.height}, {camera.width}, 3)"
        )
    for pose in poses:
        if pose.z <= 0.0:
            raise ConfigError(f"shaft tip must be in front of the camera (z={pose.z})")

    rays = _pixel_rays(camera)
    n_px = rays.shape[0]
    depth = np.full((len(poses), n_px), _NO_HIT)
    comps = np.zeros((len(poses), n_px), dtype=np.int64)
    for i, pose in enumerate(poses):
        depth[i], comps[i] = _shaft_hits(camera, pose, geom)

    nearest = np.argmin(depth, axis=0)
    t_near = depth[nearest, np.arange(n_px)]
    any_hit = np.isfinite(t_near)

    image = background.astype(np.float64) / 255.0
    image = image.reshape(n_px, 3)
    for i, pose in enumerate(poses):
        vis_idx = np.flatnonzero(any_hit & (nearest == i) & np.isfinite(depth[i]))
        if vis_idx.size == 0:
            continue
        rays_v = rays[vis_idx]
        normals = _surface_normals(rays_v, depth[i][vis_idx], comps[i][vis_idx], pose, geom)
        p = depth[i][vis_idx, None] * rays_v
        to_light = -p / np.maximum(np.linalg.norm(p, axis=1, keepdims=True), 1e-12)
        ndl = np.clip(np.einsum("ij,ij->i", normals, to_light), 0.0, None)
        shade = _ALBEDO[None, :] * (_AMBIENT + _DIFFUSE * light_intensity * ndl[:, None])
        shade = shade + _SPECULAR * light_intensity * (ndl ** _PHONG_EXP)[:, None]
        image[vis_idx] = np.clip(shade, 0.0, 1.0)

    shape = (camera.height, camera.width)
    masks = [np.isfinite(depth[i]).reshape(shape) for i in range(len(poses))]
    visible_masks = [
        (any_hit & (nearest == i) & np.isfinite(depth[i])).reshape(shape)
        for i in range(len(poses))
    ]
    image = np.rint(image.reshape(shape + (3,)) * 255.0).astype(np.uint8)
    return RenderedSample(
        image=image,
        masks=masks,
        visible_masks=visible_masks,
        bboxes=[mask_to_bbox(m) for m in masks],
    )


def rasterize_shaft(
    camera: CameraModel,
    pose: ShaftPose,
    geom: ShaftGeometry,
    light_intensity: float,
    background: np.ndarray,
) -> RenderedSample:
    """Single-shaft convenience wrapper around :func:`compose_scene`."""
    return compose_scene(camera, [pose], geom, light_intensity, background)


def mask_to_bbox(mask: np.ndarray) -> tuple[float, float, float, float] | None:
    """Tight half-open pixel box around the set pixels, None if empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return (float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Pixel-count intersection over union of two binary masks."""
    if a.shape != b.shape:
        raise ConfigError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        logger.debug("mask_iou of two empty masks, returning 1.0 by convention")
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
