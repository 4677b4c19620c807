"""Rectangle-metric evaluation: oriented IoU, match rule, fold accuracy.

A predicted grasp counts as correct when its oriented rectangle overlaps
some ground-truth rectangle with IoU above 0.25 and the grasp angles agree
within 30 degrees modulo pi. The rectangle geometry is w across the jaws by
w/2 along them, centered on the grasp point.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .codec import GraspRectangle, decode_grasps
from .data import Sample, preprocess
from .tensor import Tensor

log = logging.getLogger(__name__)

IOU_THRESHOLD = 0.25
ANGLE_THRESHOLD = math.radians(30.0)


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon by a convex counterclockwise one."""
    output = list(subject)
    for i in range(len(clip)):
        if not output:
            return np.zeros((0, 2))
        p, q = clip[i], clip[(i + 1) % len(clip)]
        edge = q - p
        input_pts = output
        output = []
        s = input_pts[-1]
        s_in = edge[0] * (s[1] - p[1]) - edge[1] * (s[0] - p[0]) >= 0
        for e in input_pts:
            e_in = edge[0] * (e[1] - p[1]) - edge[1] * (e[0] - p[0]) >= 0
            if e_in != s_in:
                d = e - s
                denom = edge[0] * d[1] - edge[1] * d[0]
                t = (edge[1] * (s[0] - p[0]) - edge[0] * (s[1] - p[1])) / denom
                output.append(s + t * d)
            if e_in:
                output.append(e)
            s, s_in = e, e_in
    return np.array(output) if output else np.zeros((0, 2))


def _shoelace_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def rect_iou(a: GraspRectangle, b: GraspRectangle) -> float:
    """Intersection-over-union of two oriented grasp rectangles.

    Zero-area rectangles have IoU 0 by definition.
    """
    if a.width <= 0 or b.width <= 0:
        return 0.0
    ca, cb = a.corners(), b.corners()
    inter = _shoelace_area(_clip_polygon(ca, cb))
    area_a = _shoelace_area(ca)
    area_b = _shoelace_area(cb)
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def angular_distance(t1: float, t2: float) -> float:
    """|t1 - t2| modulo pi, folded into [0, pi/2]."""
    d = abs(t1 - t2) % math.pi
    return min(d, math.pi - d)


def is_match(pred: GraspRectangle, gts: list[GraspRectangle],
             iou_threshold: float = IOU_THRESHOLD,
             angle_threshold: float = ANGLE_THRESHOLD) -> bool:
    if not gts:
        raise ValueError("is_match needs a non-empty ground-truth list")
    for gt in gts:
        if angular_distance(pred.theta, gt.theta) < angle_threshold \
                and rect_iou(pred, gt) > iou_threshold:
            return True
    return False


@dataclass
class Metrics:
    accuracy: float
    matched: int
    total: int
    mean_inference_ms: float

    def __post_init__(self):
        expected = self.matched / self.total if self.total else 0.0
        assert abs(self.accuracy - expected) < 1e-12


def evaluate(model, samples: list[Sample], channels: str = "rgbd",
             decode_kwargs: dict | None = None) -> Metrics:
    """Top-1 rectangle-metric accuracy of a model over a fold.

    Samples without positive ground truth are excluded from the denominator
    with a warning. Per-image time covers forward plus decode, measured warm
    (one untimed warmup forward runs first).
    """
    decode_kwargs = decode_kwargs or {}
    matched = 0
    total = 0
    times = []
    warm = False
    for sample in samples:
        if not sample.rects:
            log.warning("%s: no ground-truth rectangles, excluded", sample.source)
            continue
        prepared = preprocess(sample, channels=channels, augment=None, seed=0)
        x = Tensor(prepared.x[None])
        if not warm:
            model.forward(x, training=False)
            warm = True
        t0 = time.perf_counter()
        out = model.forward(x, training=False)
        grasps = decode_grasps(_maps_of(out, 0), k=1, **decode_kwargs)
        times.append((time.perf_counter() - t0) * 1000.0)
        total += 1
        if grasps and is_match(grasps[0], prepared.rects):
            matched += 1
    accuracy = matched / total if total else 0.0
    mean_ms = float(np.mean(times)) if times else 0.0
    return Metrics(accuracy=accuracy, matched=matched, total=total,
                   mean_inference_ms=mean_ms)


def _maps_of(out, i: int):
    from .codec import GraspMaps

    q, s, c, w = out.numpy_maps(i)
    return GraspMaps(quality=q, sin2=s, cos2=c, width=w)


def inference_time_ms(model, x: Tensor, repeats: int = 5) -> float:
    """Median single-image forward+decode time, warm caches."""
    model.forward(x, training=False)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = model.forward(x, training=False)
        decode_grasps(_maps_of(out, 0), k=1)
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))


def format_results_table(rows: list[dict]) -> str:
    """Text table mirroring the accuracy-table layout: method, input, IW, OW, ms."""
    header = f"{'Method':<24} {'Input':<6} {'IW (%)':>8} {'OW (%)':>8} {'Time (ms)':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        iw = f"{r['iw']*100:.2f}" if r.get("iw") is not None else "-"
        ow = f"{r['ow']*100:.2f}" if r.get("ow") is not None else "-"
        ms = f"{r['ms']:.1f}" if r.get("ms") is not None else "-"
        lines.append(f"{r['method']:<24} {r['input']:<6} {iw:>8} {ow:>8} {ms:>10}")
    return "\n".join(lines) + "\n"
