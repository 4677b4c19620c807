"""Dataset parsing, cross-validation folds and training preprocessing.

Supports the public Cornell layout (per-sample RGB png, ASCII point cloud,
cpos/cneg rectangle vertex files) and the Jacquard layout (per-scene grasp
list with RGB and perfect-depth images). Both parse into the same Sample
shape; preprocessing crops/augments to the network input size and
rasterizes the rectangle labels into grasp maps.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .codec import GraspMaps, GraspRectangle, encode_labels, normalize_angle
from .tensor import resize_bilinear

log = logging.getLogger(__name__)

CROP_SIZE = 224


class DataError(RuntimeError):
    """A dataset directory or file could not be read; message names the path."""


@dataclass
class Sample:
    rgb: np.ndarray | None  # H x W x 3 uint8
    depth: np.ndarray | None  # H x W float32
    rects: list[GraspRectangle]
    object_id: str
    source: str

    @property
    def shape(self) -> tuple[int, int]:
        img = self.depth if self.depth is not None else self.rgb
        return img.shape[:2]


@dataclass
class GraspDataset:
    samples: list[Sample]
    provenance: str

    def __len__(self) -> int:
        return len(self.samples)

    def trainable_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.samples) if s.rects]


# ---------------------------------------------------------------------------
# Cornell layout
# ---------------------------------------------------------------------------


def _parse_pcd_depth(path: Path) -> np.ndarray:
    """Rebuild the 480x640 depth image from an ASCII point cloud.

    Rows are "x y z rgb index"; index linearizes (row, col) at width 640.
    Missing points stay 0 and are inpainted later.
    """
    width, height = 640, 480
    depth = np.zeros((height, width), dtype=np.float32)
    try:
        with open(path) as f:
            data_started = False
            for line in f:
                if not data_started:
                    if line.startswith("WIDTH"):
                        width = int(line.split()[1])
                    elif line.startswith("HEIGHT"):
                        height = int(line.split()[1])
                        depth = np.zeros((height, width), dtype=np.float32)
                    elif line.startswith("DATA"):
                        if "ascii" not in line:
                            raise DataError(f"{path}: only ascii point clouds are supported")
                        data_started = True
                    continue
                parts = line.split()
                if len(parts) != 5:
                    continue
                z = float(parts[2])
                idx = int(float(parts[4]))
                r, c = divmod(idx, width)
                if 0 <= r < height and 0 <= c < width:
                    depth[r, c] = z
    except OSError as e:
        raise DataError(f"cannot read point cloud {path}: {e}") from e
    return depth


def _parse_cornell_rects(path: Path) -> list[GraspRectangle]:
    """Four 'x y' vertex lines per rectangle; jaw plates are edges 1-2 / 3-4."""
    try:
        raw = path.read_text().split()
    except OSError as e:
        raise DataError(f"cannot read rectangle file {path}: {e}") from e
    vals = np.array([float(v) for v in raw], dtype=np.float64)
    if vals.size % 8:
        log.warning("%s: trailing vertex data ignored", path)
        vals = vals[: vals.size - vals.size % 8]
    rects = []
    for quad in vals.reshape(-1, 4, 2):
        if not np.all(np.isfinite(quad)):
            log.warning("%s: rectangle with NaN vertex dropped", path)
            continue
        center = quad.mean(axis=0)
        edge = quad[1] - quad[0]  # jaw-travel direction
        theta = normalize_angle(math.atan2(edge[1], edge[0]))
        width = float(np.linalg.norm(quad[2] - quad[1]))  # opening between plates
        rects.append(GraspRectangle(center[0], center[1], theta, width))
    return rects


def _load_cornell_object_ids(root: Path) -> dict[str, str]:
    """Optional z.txt maps image stems to object identities for OW splits."""
    mapping: dict[str, str] = {}
    z_file = root / "z.txt"
    if not z_file.exists():
        return mapping
    for line in z_file.read_text().splitlines():
        parts = line.split()
        if len(parts) >= 2:
            m = re.search(r"(pcd\d+)", parts[0])
            if m:
                mapping[m.group(1)] = parts[1]
    return mapping

def parse_cornell(root) -> GraspDataset:
    """One Sample per pcdNNNNr.png image with its point cloud and positives."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"cornell root {root} is not a directory")
    images = sorted(root.rglob("pcd*r.png"))
    if not images:
        raise DataError(f"no pcd*r.png images under {root}")
    object_ids = _load_cornell_object_ids(root)
    samples = []
    for img_path in images:
        stem = img_path.name[: -len("r.png")]  # pcdNNNN
        rect_path = img_path.with_name(f"{stem}cpos.txt")
        if not rect_path.exists():
            log.warning("%s: missing %s, sample skipped", img_path, rect_path.name)
            continue
        try:
            rgb = np.asarray(Image.open(img_path).convert("RGB"))
        except OSError as e:
            raise DataError(f"cannot read image {img_path}: {e}") from e
        pcd_path = img_path.with_name(f"{stem}.txt")
        depth = _parse_pcd_depth(pcd_path) if pcd_path.exists() else None
        rects = _parse_cornell_rects(rect_path)
        samples.append(
            Sample(
                rgb=rgb,
                depth=depth,
                rects=rects,
                object_id=object_ids.get(stem, stem),
                source=str(img_path),
            )
        )
    return GraspDataset(samples, "cornell")


# ---------------------------------------------------------------------------
# Jacquard layout
# ---------------------------------------------------------------------------


def parse_jacquard(root) -> GraspDataset:
    """One Sample per *_grasps.txt scene; grasp lines are x;y;theta;opening;jaw."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"jacquard root {root} is not a directory")
    grasp_files = sorted(root.rglob("*_grasps.txt"))
    if not grasp_files:
        raise DataError(f"no *_grasps.txt files under {root}")
    samples = []
    for gpath in grasp_files:
        stem = gpath.name[: -len("_grasps.txt")]
        rects = []
        try:
            lines = gpath.read_text().splitlines()
        except OSError as e:
            raise DataError(f"cannot read grasp file {gpath}: {e}") from e
        for line in lines:
            line = line.strip()
            if not line:
                continue
            parts = line.split(";")
            try:
                x, y, theta_deg, opening = (float(v) for v in parts[:4])
            except (ValueError, IndexError):
                log.warning("%s: malformed grasp line %r dropped", gpath, line)
                continue
            rects.append(
                GraspRectangle(x, y, normalize_angle(math.radians(theta_deg)), opening)
            )
        rgb = depth = None
        rgb_path = gpath.with_name(f"{stem}_RGB.png")
        if rgb_path.exists():
            rgb = np.asarray(Image.open(rgb_path).convert("RGB"))
        depth_path = gpath.with_name(f"{stem}_perfect_depth.tiff")
        if depth_path.exists():
            depth = np.asarray(Image.open(depth_path), dtype=np.float32)
        if rgb is None and depth is None:
            log.warning("%s: no RGB or depth image, sample skipped", gpath)
            continue
        if not rects:
            log.warning("%s: empty grasp list, sample unusable for training", gpath)
        parent = gpath.parent
        object_id = parent.name if parent != root else stem.split("_", 1)[-1]
        samples.append(
            Sample(rgb=rgb, depth=depth, rects=rects, object_id=object_id,
                   source=str(gpath))
        )
    return GraspDataset(samples, "jacquard")


# ---------------------------------------------------------------------------
# Cross-validation folds
# ---------------------------------------------------------------------------


def split(dataset: GraspDataset, mode: str = "iw", folds: int = 5,
          seed: int = 0) -> list[tuple[list[int], list[int]]]:
    """Seeded k-fold partitions, image-wise or object-wise.

    IW shuffles samples into near-equal folds. OW partitions object ids so
    no object appears on both sides of any fold.
    """
    n = len(dataset.samples)
    if n < folds:
        raise ValueError(f"{n} samples cannot make {folds} folds")
    rng = np.random.Generator(np.random.PCG64(seed))
    mode = mode.lower()
    out = []
    if mode == "iw":
        order = rng.permutation(n)
        parts = np.array_split(order, folds)
        for i in range(folds):
            test = sorted(int(j) for j in parts[i])
            train = sorted(int(j) for p in parts[:i] + parts[i + 1:] for j in p)
            out.append((train, test))
    elif mode == "ow":
        ids = sorted({s.object_id for s in dataset.samples})
        if len(ids) < folds:
            raise ValueError(f"{len(ids)} object ids cannot make {folds} folds")
        order = rng.permutation(len(ids))
        fold_of = {ids[int(j)]: i % folds for i, j in enumerate(order)}
        for i in range(folds):
            test = [k for k, s in enumerate(dataset.samples) if fold_of[s.object_id] == i]
            train = [k for k, s in enumerate(dataset.samples) if fold_of[s.object_id] != i]
            out.append((train, test))
    else:
        raise ValueError(f"split mode must be 'iw' or 'ow', got {mode!r}")
    return out


def write_manifest(dataset: GraspDataset, folds, path) -> None:
    """Reproducibility record: provenance, sample count, per-fold indices."""
    with open(path, "w") as f:
        f.write(f"provenance\t{dataset.provenance}\n")
        f.write(f"samples\t{len(dataset.samples)}\n")
        for i, (train, test) in enumerate(folds):
            f.write(f"fold{i}.train\t{','.join(map(str, train))}\n")
            f.write(f"fold{i}.test\t{','.join(map(str, test))}\n")


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

CHANNEL_COUNTS = {"d": 1, "rgb": 3, "rgbd": 4}


@dataclass
class AugmentSpec:
    rotations: tuple[int, ...] = (0, 1, 2, 3)  # quarter turns
    zoom_range: tuple[float, float] = (0.8, 1.0)
    random_crop: bool = True


@dataclass
class Prepared:
    x: np.ndarray  # (C, 224, 224) float32
    maps: GraspMaps
    rects: list[GraspRectangle]


def inpaint_depth(depth: np.ndarray) -> np.ndarray:
    """Fill invalid (<= 0) pixels from their nearest valid neighbor."""
    invalid = depth <= 0
    if not invalid.any() or invalid.all():
        return depth.astype(np.float32, copy=True)
    idx = ndimage.distance_transform_edt(invalid, return_distances=False,
                                         return_indices=True)
    return depth[tuple(idx)].astype(np.float32)


def _transform_rects(rects, origin_xy, scale, rot_quarters, size):
    """Crop-shift, zoom-scale, then quarter-turn rotate rectangle centers."""
    out = []
    for r in rects:
        x = (r.x - origin_xy[0]) * scale
        y = (r.y - origin_xy[1]) * scale
        w = r.width * scale
        theta = r.theta
        for _ in range(rot_quarters % 4):
            x, y = y, size - 1 - x  # matches np.rot90 pixel motion
            theta = normalize_angle(theta - math.pi / 2.0)
        out.append(GraspRectangle(x, y, theta, w, r.z, r.quality))
    return out


def _rects_in_frame(rects, size) -> bool:
    return any(0 <= r.x < size and 0 <= r.y < size for r in rects)


def preprocess(sample: Sample, channels: str = "rgbd",
               augment: AugmentSpec | None = None, seed: int = 0,
               out_size: int = CROP_SIZE) -> Prepared:
    """Crop (optionally augmented) to the network input and rasterize labels.

    Augmented crops that leave no rectangle center in frame are redrawn up
    to 10 times before falling back to the plain center crop.
    """
    channels = channels.lower()
    if channels not in CHANNEL_COUNTS:
        raise ValueError(f"channels must be one of {sorted(CHANNEL_COUNTS)}, got {channels!r}")
    if channels != "d" and sample.rgb is None:
        raise ValueError(f"sample {sample.source} has no RGB data")
    if channels != "rgb" and sample.depth is None:
        raise ValueError(f"sample {sample.source} has no depth data")

    h, w = sample.shape
    if h < out_size or w < out_size:
        raise ValueError(f"sample {sample.source} smaller than {out_size} px")
    rng = np.random.Generator(np.random.PCG64(seed))

    def draw_params(use_augment):
        if not use_augment:
            side = out_size
            return ((h - side) // 2, (w - side) // 2), side, 0
        zmin, zmax = augment.zoom_range
        zmin = max(zmin, out_size / min(h, w))
        zoom = rng.uniform(zmin, min(zmax, 1.0)) if zmin < zmax else zmin
        side = min(int(round(out_size / zoom)), min(h, w))
        if augment.random_crop:
            oy = int(rng.integers(0, h - side + 1))
            ox = int(rng.integers(0, w - side + 1))
        else:
            oy, ox = (h - side) // 2, (w - side) // 2
        rot = int(rng.choice(augment.rotations)) if augment.rotations else 0
        return (oy, ox), side, rot

    tries = 10 if augment is not None else 1
    chosen = None
    for attempt in range(tries):
        (oy, ox), side, rot = draw_params(augment is not None)
        scale = out_size / side
        rects = _transform_rects(sample.rects, (ox, oy), scale, rot, out_size)
        if not sample.rects or _rects_in_frame(rects, out_size):
            chosen = ((oy, ox), side, rot, rects)
            break
    if chosen is None:
        (oy, ox), side, rot = draw_params(False)
        rects = _transform_rects(sample.rects, (ox, oy), out_size / side, rot, out_size)
        chosen = ((oy, ox), side, rot, rects)
    (oy, ox), side, rot, rects = chosen

    def crop_resize(plane):
        win = plane[oy:oy + side, ox:ox + side].astype(np.float32)
        if side != out_size:
            win = resize_bilinear(win, (out_size, out_size))
        return win

    planes = []
    if channels in ("rgb", "rgbd"):
        for c in range(3):
            chan = np.rot90(crop_resize(sample.rgb[:, :, c]), rot)
            planes.append(chan / 127.5 - 1.0)
    if channels in ("d", "rgbd"):
        # inpaint inside the crop before resizing so holes do not smear
        depth = inpaint_depth(sample.depth[oy:oy + side, ox:ox + side])
        if side != out_size:
            depth = resize_bilinear(depth, (out_size, out_size))
        depth = np.rot90(depth, rot)
        std = float(depth.std())
        depth = (depth - float(depth.mean())) / max(std, 1e-6)
        planes.append(depth)
    x = np.ascontiguousarray(np.stack(planes)).astype(np.float32)
    maps = encode_labels(rects, (out_size, out_size))
    return Prepared(x=x, maps=maps, rects=rects)
