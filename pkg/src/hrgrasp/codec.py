"""Grasp rectangles <-> per-pixel grasp maps, and quality-map entropy.

A grasp is (x, y, theta, w, z): center pixel, gripper rotation, jaw opening
and approach height. theta is the direction of the jaw plates, normalized
into [-pi/2, pi/2) since an antipodal grasp is symmetric under a half turn;
the opening w spans the normal direction. Maps store the angle as the
(sin 2theta, cos 2theta) pair so the wrap point is continuous, and the
width normalized by the 150 px representable jaw range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

WIDTH_RANGE_PX = 150.0
# geometric jaw-travel extent used for painting and IoU, as a fraction of w
JAW_EXTENT_RATIO = 0.5


def normalize_angle(theta: float) -> float:
    """Fold an angle into [-pi/2, pi/2) modulo pi."""
    return (theta + math.pi / 2.0) % math.pi - math.pi / 2.0


@dataclass
class GraspRectangle:
    x: float
    y: float
    theta: float
    width: float
    z: float = 0.0
    quality: float = 0.0

    def __post_init__(self):
        self.theta = normalize_angle(float(self.theta))
        self.width = float(min(max(self.width, 0.0), WIDTH_RANGE_PX))

    @property
    def extent(self) -> float:
        """Jaw-travel extent of the rectangle geometry."""
        return self.width * JAW_EXTENT_RATIO

    def corners(self) -> np.ndarray:
        """Counterclockwise corners of the oriented w x (w/2) rectangle."""
        u = np.array([math.cos(self.theta), math.sin(self.theta)])
        nv = np.array([-u[1], u[0]])
        c = np.array([self.x, self.y])
        he = u * (self.extent / 2.0)
        hw = nv * (self.width / 2.0)
        return np.array([c + he + hw, c - he + hw, c - he - hw, c + he - hw])

    def translated(self, dx: float, dy: float) -> "GraspRectangle":
        return GraspRectangle(self.x + dx, self.y + dy, self.theta,
                              self.width, self.z, self.quality)


@dataclass
class GraspMaps:
    """Per-pixel grasp annotation: quality, sin/cos of 2*theta, width/150."""

    quality: np.ndarray
    sin2: np.ndarray
    cos2: np.ndarray
    width: np.ndarray

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "GraspMaps":
        return cls(*(np.zeros(shape, dtype=np.float32) for _ in range(4)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.quality.shape

    def stacked(self) -> np.ndarray:
        return np.stack([self.quality, self.sin2, self.cos2, self.width])


def angle_encode(theta: float) -> tuple[float, float]:
    return math.sin(2.0 * theta), math.cos(2.0 * theta)


def angle_decode(s: float, c: float) -> tuple[float, bool]:
    """Recover theta from (sin 2t, cos 2t); flags the (0, 0) degenerate input."""
    if s * s + c * c < 1e-12:
        return 0.0, True
    return normalize_angle(0.5 * math.atan2(s, c)), False


def encode_labels(rects: list[GraspRectangle], shape: tuple[int, int]) -> GraspMaps:
    """Rasterize grasp rectangles into training maps.

    Each rectangle paints its inner region: full width across the jaws,
    center third of the jaw-travel extent. Quality is 1 inside; angle and
    width are overwritten by later rectangles where regions overlap.
    """
    maps = GraspMaps.zeros(shape)
    h, w = shape
    for r in rects:
        half_u = r.extent / 6.0  # center third of the travel extent
        half_v = r.width / 2.0
        reach = math.hypot(half_u, half_v) + 1.0
        x0 = max(int(math.floor(r.x - reach)), 0)
        x1 = min(int(math.ceil(r.x + reach)) + 1, w)
        y0 = max(int(math.floor(r.y - reach)), 0)
        y1 = min(int(math.ceil(r.y + reach)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1, dtype=np.float64) - r.x
        ys = np.arange(y0, y1, dtype=np.float64) - r.y
        gx, gy = np.meshgrid(xs, ys)
        cu, su = math.cos(r.theta), math.sin(r.theta)
        u = gx * cu + gy * su
        v = -gx * su + gy * cu
        mask = (np.abs(u) <= half_u) & (np.abs(v) <= half_v)
        if not mask.any():
            continue
        s2, c2 = angle_encode(r.theta)
        region = (slice(y0, y1), slice(x0, x1))
        maps.quality[region][mask] = 1.0
        maps.sin2[region][mask] = s2
        maps.cos2[region][mask] = c2
        maps.width[region][mask] = min(r.width / WIDTH_RANGE_PX, 1.0)
    return maps


def decode_grasps(
    maps: GraspMaps,
    k: int = 1,
    sigma: float = 2.0,
    q_min: float = 0.2,
    nms_radius: float = 10.0,
) -> list[GraspRectangle]:
    """Peak-pick up to k grasps from the quality map.

    The quality map is Gaussian-smoothed, then peaks above q_min are taken
    in descending order with a non-maximum-suppression disc of nms_radius
    pixels; ties break toward the lowest row-major index. Angle and width
    are read off the auxiliary maps at each peak pixel. The reported center
    is refined to the intensity centroid of the peak's connected half-peak
    region: a painted label ribbon is flat along its long axis after
    smoothing, so the bare argmax lands anywhere on the ridge while the
    centroid recovers the rectangle center.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = ndimage.gaussian_filter(maps.quality.astype(np.float32), sigma)
    h, w = q.shape
    yy, xx = np.mgrid[0:h, 0:w]
    out: list[GraspRectangle] = []
    suppressed = np.zeros_like(q, dtype=bool)
    for _ in range(k):
        masked = np.where(suppressed, -np.inf, q)
        idx = int(np.argmax(masked))  # first occurrence = lowest row-major index
        peak = masked.reshape(-1)[idx]
        if not np.isfinite(peak) or peak <= q_min:
            break
        py, px = divmod(idx, w)
        labels, _ = ndimage.label(q >= 0.5 * peak)
        comp = labels == labels[py, px]
        mass = np.where(comp & ~suppressed, q, 0.0)
        total = mass.sum()
        cy = float((yy * mass).sum() / total)
        cx = float((xx * mass).sum() / total)
        theta, _ = angle_decode(float(maps.sin2[py, px]), float(maps.cos2[py, px]))
        out.append(
            GraspRectangle(
                x=cx,
                y=cy,
                theta=theta,
                width=float(maps.width[py, px]) * WIDTH_RANGE_PX,
                z=0.0,
                quality=float(peak),
            )
        )
        suppressed |= (yy - py) ** 2 + (xx - px) ** 2 <= nms_radius ** 2
        suppressed |= comp
    return out


def q_entropy(q: np.ndarray) -> float:
    """Shannon entropy (nats) of the normalized quality mass.

    An all-zero map is defined to carry maximal entropy log(H*W).
    """
    if np.any(q < 0):
        raise ValueError("quality map must be non-negative")
    total = float(q.sum())
    if total <= 0.0:
        return float(np.log(q.size))
    p = q.astype(np.float64).reshape(-1) / total
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def format_grasp_lines(grasps: list[GraspRectangle]) -> str:
    """One grasp per line: 'x y theta w z q', space-separated floats."""
    return "".join(
        f"{g.x:.3f} {g.y:.3f} {g.theta:.6f} {g.width:.3f} {g.z:.3f} {g.quality:.6f}\n"
        for g in grasps
    )


def parse_grasp_lines(text: str) -> list[GraspRectangle]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        x, y, theta, w, z, q = (float(v) for v in line.split())
        out.append(GraspRectangle(x, y, theta, w, z, q))
    return out
