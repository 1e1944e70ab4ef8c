"""Equirectangular <-> perspective (gnomonic) resampling, roll augmentation, PNG I/O.

Conventions
-----------
* Canvas ``[C, H, W]`` with ``W = 2H``.  Column ``u`` has its centre at longitude
  ``(u + 0.5) / W * 360 - 180`` degrees, row ``v`` at latitude
  ``90 - (v + 0.5) / H * 180``.  Longitude grows to the right.
* World axes: x right (longitude +90), y up, z forward (longitude 0).
* A camera looks along +z of its own frame.  Its frame is the world frame
  pitched up by ``pitch`` about x, then yawed by ``yaw`` about the vertical.
  At pitch +-90 the same formula applies, so yaw turns into an in-image roll.

All geometry runs in float64 regardless of the tensor precision setting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .tensor import Tensor

EVAL_ELEVATIONS = (90, 45, 0, -45, -90)
EVAL_YAWS = tuple(range(0, 360, 36))


@dataclass(frozen=True)
class CameraPose:
    yaw: float = 0.0
    pitch: float = 0.0
    fov_h: float = 90.0
    fov_v: float = 90.0

    def __post_init__(self):
        for name in ("fov_h", "fov_v"):
            fov = getattr(self, name)
            if not 0.0 < fov < 180.0:
                raise ConfigError(f"{name} must lie strictly inside (0, 180) degrees, got {fov}")
        if not -90.0 <= self.pitch <= 90.0:
            raise ConfigError(f"pitch must lie in [-90, 90], got {self.pitch}")
        object.__setattr__(self, "yaw", (self.yaw + 180.0) % 360.0 - 180.0)

    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation matrix."""
        y, p = math.radians(self.yaw), math.radians(self.pitch)
        cy, sy, cp, sp = math.cos(y), math.sin(y), math.cos(p), math.sin(p)
        r_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
        r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
        return r_yaw @ r_pitch


def _as_array(img) -> np.ndarray:
    if isinstance(img, Tensor):
        img = img.data
    return np.asarray(img, dtype=np.float64)


def canvas_lonlat(h: int) -> tuple[np.ndarray, np.ndarray]:
    """Longitude/latitude (radians) of every canvas pixel centre, each ``[H, 2H]``."""
    w = 2 * h
    lon = (np.arange(w) + 0.5) / w * 2.0 * np.pi - np.pi
    lat = np.pi / 2.0 - (np.arange(h) + 0.5) / h * np.pi
    return np.meshgrid(lon, lat)


def _sample_canvas(canvas: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup at fractional pixel coordinates; wraps columns, clamps rows."""
    _, h, w = canvas.shape
    v = np.clip(v, 0.0, h - 1.0)
    v0 = np.floor(v).astype(np.int64)
    v1 = np.minimum(v0 + 1, h - 1)
    fv = v - v0
    u0f = np.floor(u)
    fu = u - u0f
    u0 = np.mod(u0f.astype(np.int64), w)
    u1 = np.mod(u0 + 1, w)
    top = canvas[:, v0, u0] * (1.0 - fu) + canvas[:, v0, u1] * fu
    bottom = canvas[:, v1, u0] * (1.0 - fu) + canvas[:, v1, u1] * fu
    return top * (1.0 - fv) + bottom * fv


def _sample_clamped(img: np.ndarray, col: np.ndarray, row: np.ndarray) -> np.ndarray:
    _, h, w = img.shape
    col = np.clip(col, 0.0, w - 1.0)
    row = np.clip(row, 0.0, h - 1.0)
    c0 = np.floor(col).astype(np.int64)
    r0 = np.floor(row).astype(np.int64)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fc, fr = col - c0, row - r0
    top = img[:, r0, c0] * (1.0 - fc) + img[:, r0, c1] * fc
    bottom = img[:, r1, c0] * (1.0 - fc) + img[:, r1, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def embed_snapshot(img, pose: CameraPose, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Paste a perspective picture ``[3, h, w]`` into an empty ``[3, H, 2H]`` canvas.

    A canvas pixel belongs to the mask when its centre projects inside the
    camera frustum; everything else stays exactly 0.  Returns ``(canvas, mask)``
    with the mask shaped ``[1, H, 2H]``.
    """
    img = _as_array(img)
    if img.ndim != 3:
        raise DataError(f"snapshot must be [C, h, w], got shape {img.shape}")
    _, sh, sw = img.shape
    lon, lat = canvas_lonlat(height)
    d = np.stack([np.cos(lat) * np.sin(lon), np.sin(lat), np.cos(lat) * np.cos(lon)], axis=-1)
    cam = d @ pose.rotation()  # rows are R^T d
    tx, ty = math.tan(math.radians(pose.fov_h) / 2), math.tan(math.radians(pose.fov_v) / 2)
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.where(z > 0, cam[..., 0] / z / tx, np.inf)
        py = np.where(z > 0, cam[..., 1] / z / ty, np.inf)
    inside = (z > 0) & (np.abs(px) <= 1.0) & (np.abs(py) <= 1.0)
    canvas = np.zeros((img.shape[0], height, 2 * height))
    col = (px[inside] + 1.0) * sw / 2.0 - 0.5
    row = (1.0 - py[inside]) * sh / 2.0 - 0.5
    canvas[:, inside] = _sample_clamped(img, col, row)
    return canvas, inside[None].astype(np.float64)


def snapshot_rays(pose: CameraPose, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Longitude/latitude (radians) seen through every pixel of an ``h x w`` picture."""
    tx, ty = math.tan(math.radians(pose.fov_h) / 2), math.tan(math.radians(pose.fov_v) / 2)
    x = tx * (2.0 * (np.arange(w) + 0.5) / w - 1.0)
    y = ty * (1.0 - 2.0 * (np.arange(h) + 0.5) / h)
    xx, yy = np.meshgrid(x, y)
    cam = np.stack([xx, yy, np.ones_like(xx)], axis=-1)
    d = cam @ pose.rotation().T
    lon = np.arctan2(d[..., 0], d[..., 2])
    lat = np.arctan2(d[..., 1], np.hypot(d[..., 0], d[..., 2]))
    return lon, lat


def extract_snapshot(canvas, pose: CameraPose, h: int, w: int) -> np.ndarray:
    """Render the ``[C, h, w]`` perspective view of ``pose`` from an equirect canvas."""
    canvas = _as_array(canvas)
    if abs(pose.pitch) == 90.0 and pose.fov_v >= 180.0 - 1e-6:
        raise ConfigError("a polar view needs fov_v below 180 degrees")
    _, ch, cw = canvas.shape
    if cw != 2 * ch:
        raise DataError(f"canvas must have width 2*height, got {ch}x{cw}")
    lon, lat = snapshot_rays(pose, h, w)
    u = (lon + np.pi) / (2.0 * np.pi) * cw - 0.5
    v = (np.pi / 2.0 - lat) / np.pi * ch - 0.5
    return _sample_canvas(canvas, u, v)


def roll_canvas(canvas, shift_px: int):
    """Horizontal circular shift by ``shift_px`` columns (taken modulo W).

    Accepts arrays or tensors; on tensors the shift is differentiable and
    ``shift_px`` may hold one shift per batch entry.
    """
    if isinstance(canvas, Tensor):
        return T.roll(canvas, shift_px, axis=-1)
    canvas = np.asarray(canvas)
    return np.roll(canvas, int(shift_px) % canvas.shape[-1], axis=-1)


def view_name(pitch: float, yaw: float) -> str:
    return f"e{int(pitch):+03d}_y{int(yaw):03d}"


def eval_poses(fov: float = 90.0) -> list[CameraPose]:
    """Five elevations x ten yaws, elevation-major."""
    return [CameraPose(yaw=y, pitch=p, fov_h=fov, fov_v=fov) for p in EVAL_ELEVATIONS for y in EVAL_YAWS]


def eval_views(canvas, h: int, w: int, fov: float = 90.0) -> list[np.ndarray]:
    return [extract_snapshot(canvas, pose, h, w) for pose in eval_poses(fov)]


def eval_view_names() -> list[str]:
    return [view_name(p, y) for p in EVAL_ELEVATIONS for y in EVAL_YAWS]


# --- PNG I/O ------------------------------------------------------------


def to_uint8(img: np.ndarray) -> np.ndarray:
    """``[C, H, W]`` in [-1, 1] -> ``[H, W, C]`` uint8 via round((v + 1) / 2 * 255)."""
    img = _as_array(img)
    q = np.clip(np.round((img + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(q.transpose(1, 2, 0))


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64).transpose(2, 0, 1) / 255.0 * 2.0 - 1.0


def read_png(path: str | Path, size: tuple[int, int] | None = None) -> np.ndarray:
    """Load an RGB PNG as ``[3, H, W]`` in [-1, 1]; optionally resize to ``(H, W)``."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and (im.height, im.width) != tuple(size):
                im = im.resize((size[1], size[0]), Image.BILINEAR)
            pixels = np.asarray(im)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return from_uint8(pixels)


def write_png(path: str | Path, img) -> None:
    from PIL import Image

    img = _as_array(img)
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG", optimize=False)
