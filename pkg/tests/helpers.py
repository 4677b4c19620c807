"""Independent oracles shared by the test modules.

These deliberately avoid the library's own compute paths: convolution is
five nested Python loops, bilinear sampling is the closed-form two-axis
lerp, IoU is a supersampled point-in-rectangle count. Slow and obviously
correct is the point.
"""

from __future__ import annotations

import numpy as np


def conv2d_naive(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                 stride: int, padding: int) -> np.ndarray:
    """Direct cross-correlation, one multiply at a time."""
    n, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    hp = (h + 2 * padding - kh) // stride + 1
    wp = (wid + 2 * padding - kw) // stride + 1
    xp = np.zeros((n, cin, h + 2 * padding, wid + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wid] = x
    out = np.zeros((n, cout, hp, wp), dtype=np.float64)
    for ni in range(n):
        for co in range(cout):
            for oy in range(hp):
                for ox in range(wp):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (w[co, ci, ky, kx]
                                        * xp[ni, ci, oy * stride + ky, ox * stride + kx])
                    out[ni, co, oy, ox] = acc
            if b is not None:
                out[ni, co] += b[co]
    return out


def bilinear_closed_form(img: np.ndarray, scale: int) -> np.ndarray:
    """Align-corners bilinear upsample evaluated point by point."""
    h, w = img.shape
    sh, sw = h * scale, w * scale
    out = np.zeros((sh, sw), dtype=np.float64)
    for oy in range(sh):
        for ox in range(sw):
            fy = 0.0 if sh == 1 or h == 1 else oy * (h - 1) / (sh - 1)
            fx = 0.0 if sw == 1 or w == 1 else ox * (w - 1) / (sw - 1)
            y0 = min(int(fy), h - 2) if h > 1 else 0
            x0 = min(int(fx), w - 2) if w > 1 else 0
            ty, tx = fy - y0, fx - x0
            y1 = min(y0 + 1, h - 1)
            x1 = min(x0 + 1, w - 1)
            out[oy, ox] = ((1 - ty) * (1 - tx) * img[y0, x0]
                           + (1 - ty) * tx * img[y0, x1]
                           + ty * (1 - tx) * img[y1, x0]
                           + ty * tx * img[y1, x1])
    return out


def rect_corners(x: float, y: float, theta: float, w: float, h: float) -> np.ndarray:
    """Corner coordinates of an oriented w-by-h rectangle centered at (x, y).

    The h extent runs along the theta direction, the w extent along its
    normal (the jaw-opening axis).
    """
    ux, uy = np.cos(theta), np.sin(theta)
    nx, ny = -uy, ux
    c = np.array([x, y], dtype=np.float64)
    u = np.array([ux, uy]) * (h / 2.0)
    nv = np.array([nx, ny]) * (w / 2.0)
    return np.array([c + u + nv, c - u + nv, c - u - nv, c + u - nv])


def iou_supersampled(a, b, samples_per_unit: float = 32.0) -> float:
    """Monte-Carlo-free IoU: dense grid point-in-rectangle counting."""
    ca = rect_corners(a.x, a.y, a.theta, a.width, a.width / 2.0)
    cb = rect_corners(b.x, b.y, b.theta, b.width, b.width / 2.0)
    allc = np.vstack([ca, cb])
    x0, y0 = allc.min(axis=0) - 1
    x1, y1 = allc.max(axis=0) + 1
    nx = max(2, int((x1 - x0) * samples_per_unit ** 0.5 * 2))
    ny = max(2, int((y1 - y0) * samples_per_unit ** 0.5 * 2))
    nx, ny = min(nx, 1200), min(ny, 1200)
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)

    def inside(corners):
        # corners are counterclockwise, so interior points sit left of every edge
        mask = np.ones(len(pts), dtype=bool)
        for i in range(4):
            p, q = corners[i], corners[(i + 1) % 4]
            edge = q - p
            rel = pts - p
            mask &= (edge[0] * rel[:, 1] - edge[1] * rel[:, 0]) >= -1e-12
        return mask

    in_a = inside(ca)
    in_b = inside(cb)
    inter = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    return inter / union if union else 0.0
