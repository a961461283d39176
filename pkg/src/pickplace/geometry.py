"""SE(2) poses, pixel/world mapping, image warping, and rotated crops.

Conventions used throughout the package:

- Image row index ``u`` runs along world ``+x``, column index ``v`` along
  world ``+y``, so image coordinates and world coordinates share axes and
  rotation sign.
- Rotation bin ``i`` of ``k`` denotes the angle ``theta_i = i * 2*pi / k``.
- ``extract_rotated_crops`` resamples the feature map on a grid rotated by
  ``-theta_i`` about the crop center, which rotates the *content* by
  ``+theta_i``.  Correlating slice ``i`` against a key map therefore scores
  placing the cropped content rotated by ``+theta_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class GeometryError(ValueError):
    """Domain error for out-of-bounds poses or invalid crop requests."""


@dataclass(frozen=True)
class WorkspaceFrame:
    """Axis-aligned workspace bounds plus the pixel grid they map onto."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    pixel_size: float

    def __post_init__(self):
        if self.pixel_size <= 0:
            raise GeometryError(f"pixel_size must be positive, got {self.pixel_size}")
        for lo, hi, name in ((self.x_min, self.x_max, "x"), (self.y_min, self.y_max, "y"),
                             (self.z_min, self.z_max, "z")):
            if hi <= lo:
                raise GeometryError(f"{name} span must be positive ({lo}, {hi})")

    @property
    def height(self) -> int:
        return int(round((self.x_max - self.x_min) / self.pixel_size))

    @property
    def width(self) -> int:
        return int(round((self.y_max - self.y_min) / self.pixel_size))

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min, "x_max": self.x_max,
            "y_min": self.y_min, "y_max": self.y_max,
            "z_min": self.z_min, "z_max": self.z_max,
            "pixel_size": self.pixel_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkspaceFrame":
        return cls(**{k: float(d[k]) for k in
                      ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max", "pixel_size")})


DEFAULT_FRAME = WorkspaceFrame(
    x_min=0.0, x_max=0.5, y_min=0.0, y_max=0.5, z_min=0.0, z_max=0.3,
    pixel_size=0.5 / 128,
)


@dataclass(frozen=True)
class PixelPose:
    """A pixel location plus a discrete rotation bin out of ``k``."""

    u: int
    v: int
    rot: int = 0
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise GeometryError(f"k must be >= 1, got {self.k}")
        if not 0 <= self.rot < self.k:
            raise GeometryError(f"rot {self.rot} outside [0, {self.k})")

    @property
    def angle(self) -> float:
        return self.rot * 2.0 * math.pi / self.k

    def to_dict(self) -> dict:
        return {"u": int(self.u), "v": int(self.v), "rot": int(self.rot), "k": int(self.k)}

    @classmethod
    def from_dict(cls, d: dict) -> "PixelPose":
        return cls(u=int(d["u"]), v=int(d["v"]), rot=int(d["rot"]), k=int(d["k"]))


@dataclass(frozen=True)
class PixelAction:
    """One pick-and-place primitive: two pixel poses."""

    pick: PixelPose
    place: PixelPose

    def to_dict(self) -> dict:
        return {"pick": self.pick.to_dict(), "place": self.place.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "PixelAction":
        return cls(pick=PixelPose.from_dict(d["pick"]), place=PixelPose.from_dict(d["place"]))


@dataclass
class Observation:
    """Orthographic color + height map of the workspace."""

    color: np.ndarray   # (H, W, 3) float32 in [0, 1]
    height: np.ndarray  # (H, W) float32, meters above frame.z_min
    frame: WorkspaceFrame

    def __post_init__(self):
        h, w = self.frame.height, self.frame.width
        if self.color.shape != (h, w, 3):
            raise GeometryError(f"color shape {self.color.shape} != ({h}, {w}, 3)")
        if self.height.shape != (h, w):
            raise GeometryError(f"height shape {self.height.shape} != ({h}, {w})")
        if not (np.isfinite(self.color).all() and np.isfinite(self.height).all()):
            raise GeometryError("observation contains non-finite values")
        if (self.height < 0).any():
            raise GeometryError("height map contains negative values")

    def copy(self) -> "Observation":
        return Observation(self.color.copy(), self.height.copy(), self.frame)


def bin_angle(rot: int, k: int) -> float:
    return rot * 2.0 * math.pi / k


def nearest_bin(angle: float, k: int) -> int:
    """Snap an angle in radians to the nearest of k bins over [0, 2*pi)."""
    width = 2.0 * math.pi / k
    return int(round((angle % (2.0 * math.pi)) / width)) % k


def pixel_to_world(p: PixelPose, obs: Observation) -> tuple[float, float, float, float]:
    """Map a pixel pose to (x, y, z, yaw); z reads the height map surface."""
    f = obs.frame
    if not (0 <= p.u < f.height and 0 <= p.v < f.width):
        raise GeometryError(f"pixel ({p.u}, {p.v}) outside {f.height}x{f.width} frame")
    x = f.x_min + (p.u + 0.5) * f.pixel_size
    y = f.y_min + (p.v + 0.5) * f.pixel_size
    z = f.z_min + float(obs.height[p.u, p.v])
    return x, y, z, p.angle


def world_to_pixel(frame: WorkspaceFrame, x: float, y: float,
                   yaw: float = 0.0, k: int = 1) -> PixelPose:
    """Inverse of pixel_to_world: floor to containing pixel, snap yaw to bin."""
    u = int(math.floor((x - frame.x_min) / frame.pixel_size))
    v = int(math.floor((y - frame.y_min) / frame.pixel_size))
    if not (0 <= u < frame.height and 0 <= v < frame.width):
        raise GeometryError(f"world point ({x:.4f}, {y:.4f}) outside workspace")
    return PixelPose(u=u, v=v, rot=nearest_bin(yaw, k), k=k)


def clamp_pixel(frame: WorkspaceFrame, u: int, v: int) -> tuple[int, int]:
    return (min(max(int(u), 0), frame.height - 1), min(max(int(v), 0), frame.width - 1))


def transform_pixel(u: float, v: float, dx: float, dy: float, dtheta: float,
                    center: tuple[float, float]) -> tuple[float, float]:
    """Apply the SE(2) map used by warp_se2 to a pixel coordinate.

    Rotates by dtheta about center, then translates by (dx, dy).  Returns
    float coordinates; callers round and bounds-check.
    """
    cu, cv = center
    cos_t, sin_t = math.cos(dtheta), math.sin(dtheta)
    du, dv = u - cu, v - cv
    return (cos_t * du - sin_t * dv + cu + dx,
            sin_t * du + cos_t * dv + cv + dy)


def _sample_grid(h: int, w: int, dx: float, dy: float, dtheta: float,
                 center: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    """Source coordinates implementing the inverse of transform_pixel."""
    cu, cv = center
    gu, gv = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    cos_t, sin_t = math.cos(dtheta), math.sin(dtheta)
    du, dv = gu - cu - dx, gv - cv - dy
    su = cos_t * du + sin_t * dv + cu
    sv = -sin_t * du + cos_t * dv + cv
    return su, sv


def _nearest_sample(img: np.ndarray, su: np.ndarray, sv: np.ndarray,
                    fill: float = 0.0) -> np.ndarray:
    h, w = img.shape[:2]
    iu = np.floor(su + 0.5).astype(np.int64)
    iv = np.floor(sv + 0.5).astype(np.int64)
    valid = (iu >= 0) & (iu < h) & (iv >= 0) & (iv < w)
    out_shape = su.shape + img.shape[2:]
    out = np.full(out_shape, fill, dtype=img.dtype)
    out[valid] = img[iu[valid], iv[valid]]
    return out


def _bilinear_sample(img: np.ndarray, su: np.ndarray, sv: np.ndarray) -> np.ndarray:
    """Bilinear gather with zero fill outside the image support."""
    h, w = img.shape[:2]
    chan = img.shape[2:]
    u0 = np.floor(su).astype(np.int64)
    v0 = np.floor(sv).astype(np.int64)
    fu = (su - u0).astype(img.dtype if img.dtype.kind == "f" else np.float64)
    fv = (sv - v0).astype(fu.dtype)
    out = np.zeros(su.shape + chan, dtype=fu.dtype)
    for du_off, dv_off, wgt in (
        (0, 0, (1 - fu) * (1 - fv)),
        (0, 1, (1 - fu) * fv),
        (1, 0, fu * (1 - fv)),
        (1, 1, fu * fv),
    ):
        uu, vv = u0 + du_off, v0 + dv_off
        valid = (uu >= 0) & (uu < h) & (vv >= 0) & (vv < w)
        if not valid.any():
            continue
        vals = np.zeros_like(out)
        vals[valid] = img[uu[valid], vv[valid]]
        if chan:
            out += vals * wgt[..., None]
        else:
            out += vals * wgt
    return out


def warp_se2(obs: Observation, dx: float, dy: float, dtheta: float,
             center: tuple[float, float] | None = None,
             color_interp: str = "bilinear") -> Observation:
    """Resample an observation under a rigid transform of the image plane.

    Content rotates by +dtheta about ``center`` then shifts by (dx, dy)
    pixels.  Out-of-support pixels get background color and height 0.
    Height always resamples nearest-neighbor so values stay physical;
    color defaults to bilinear (pass ``color_interp="nearest"`` for an
    exactly invertible warp).
    """
    h, w = obs.frame.height, obs.frame.width
    if center is None:
        center = ((h - 1) / 2.0, (w - 1) / 2.0)
    if dx == 0 and dy == 0 and dtheta == 0.0:
        return obs.copy()
    su, sv = _sample_grid(h, w, dx, dy, dtheta, center)
    if color_interp == "nearest":
        color = _nearest_sample(obs.color, su, sv)
    elif color_interp == "bilinear":
        color = _bilinear_sample(obs.color, su, sv).astype(obs.color.dtype)
    else:
        raise GeometryError(f"unknown color_interp {color_interp!r}")
    height = _nearest_sample(obs.height, su, sv)
    return Observation(color=color, height=height, frame=obs.frame)


def extract_rotated_crops(features: np.ndarray, center: tuple[int, int],
                          c: int, k: int) -> np.ndarray:
    """Stack of k rotated c-by-c crops of a feature map about ``center``.

    Slice ``i`` resamples the map on a grid rotated by ``-theta_i`` about
    ``center`` (content rotates by ``+theta_i``), then takes the c x c
    window whose index (c//2, c//2) lands on ``center``.  Regions outside
    the map are zero-filled.  Slice 0 is the plain, unrotated crop.
    """
    if features.ndim == 2:
        features = features[:, :, None]
        squeeze = True
    else:
        squeeze = False
    h, w, ch = features.shape
    if c % 2 != 0:
        raise GeometryError(f"crop size must be even, got {c}")
    if c > min(h, w):
        raise GeometryError(f"crop size {c} exceeds map {h}x{w}")
    cu, cv = float(center[0]), float(center[1])
    c2 = c // 2
    wu, wv = np.meshgrid(np.arange(c, dtype=np.float64) - c2,
                         np.arange(c, dtype=np.float64) - c2, indexing="ij")
    thetas = -np.arange(k, dtype=np.float64) * 2.0 * math.pi / k
    cos_t = np.cos(thetas)[:, None, None]
    sin_t = np.sin(thetas)[:, None, None]
    cos_t[0], sin_t[0] = 1.0, 0.0  # slice 0 samples the exact integer grid
    su = cos_t * wu - sin_t * wv + cu
    sv = sin_t * wu + cos_t * wv + cv
    # Pad once so every sample lands in-bounds; padding doubles as zero fill.
    pad = c
    padded = np.zeros((h + 2 * pad, w + 2 * pad, ch), dtype=features.dtype)
    padded[pad:pad + h, pad:pad + w] = features
    u0 = np.floor(su).astype(np.int64)
    v0 = np.floor(sv).astype(np.int64)
    fu = (su - u0).astype(np.float32)[..., None]
    fv = (sv - v0).astype(np.float32)[..., None]
    u0 += pad
    v0 += pad
    g00 = padded[u0, v0]
    g01 = padded[u0, v0 + 1]
    g10 = padded[u0 + 1, v0]
    g11 = padded[u0 + 1, v0 + 1]
    out = ((1 - fu) * (1 - fv) * g00 + (1 - fu) * fv * g01
           + fu * (1 - fv) * g10 + fu * fv * g11).astype(features.dtype)
    if squeeze:
        out = out[:, :, :, 0]
    return out


def rotate_map(features: np.ndarray, angle: float,
               center: tuple[float, float] | None = None) -> np.ndarray:
    """Rotate feature-map content by +angle about center (zero fill)."""
    h, w = features.shape[:2]
    if center is None:
        center = ((h - 1) / 2.0, (w - 1) / 2.0)
    su, sv = _sample_grid(h, w, 0.0, 0.0, angle, center)
    return _bilinear_sample(features, su, sv).astype(features.dtype)
