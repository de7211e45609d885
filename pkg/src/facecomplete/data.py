"""Dataset ingestion, face cropping, augmentation and supervision targets.

Conventions used throughout the package:
  - images are H x W x 3 float32 in [-1, 1] (8-bit intensity v maps to v/127.5 - 1)
  - landmarks are 5 (x, y) pixel-coordinate pairs ordered
    (left eye, right eye, nose, left mouth corner, right mouth corner)
  - label maps are H x W integer class ids, 0 = background

Loading and augmentation are stateless given an explicit numpy Generator,
so samples can be produced from parallel workers.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .exceptions import ConfigurationError, DataError

log = logging.getLogger(__name__)

LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "left_mouth", "right_mouth")
# landmark slots that exchange identity under a horizontal flip
FLIP_LANDMARK_SWAPS = ((0, 1), (3, 4))

N_CLASSES = 10
LABEL_NAMES = (
    "background",
    "face",
    "left_eyebrow",
    "right_eyebrow",
    "left_eye",
    "right_eye",
    "nose",
    "upper_lip",
    "teeth",
    "lower_lip",
)
# label ids that exchange identity under a horizontal flip
FLIP_LABEL_SWAPS = ((2, 3), (4, 5))

SPLITS = ("train", "val", "test")
# numeric split codes as used by the CelebA official partition file
_SPLIT_CODES = {"0": "train", "1": "val", "2": "test"}


class CropError(DataError):
    """No crop window can contain all landmarks with the required margin."""


@dataclass
class FaceSample:
    """One training example at sample resolution."""

    image: np.ndarray      # S x S x 3 float32 in [-1, 1]
    landmarks: np.ndarray  # 5 x 2 float (x, y)
    label_map: np.ndarray  # S x S int

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
        self.label_map = np.asarray(self.label_map)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be H x W x 3, got {self.image.shape}")
        h, w = self.image.shape[:2]
        if self.label_map.shape != (h, w):
            raise ValueError(
                f"label map {self.label_map.shape} does not match image {(h, w)}"
            )
        if self.landmarks.shape != (5, 2):
            raise ValueError(f"expected 5 (x, y) landmarks, got {self.landmarks.shape}")
        if self.image.min() < -1.0 or self.image.max() > 1.0:
            raise ValueError("image values must lie in [-1, 1]")
        x, y = self.landmarks[:, 0], self.landmarks[:, 1]
        if (x < 0).any() or (x >= w).any() or (y < 0).any() or (y >= h).any():
            raise ValueError(f"landmarks out of bounds for {w}x{h} image: {self.landmarks}")
        if (self.label_map < 0).any():
            raise ValueError("label map contains negative class ids")

    @property
    def resolution(self):
        return self.image.shape[0]


@dataclass
class TaskTargets:
    """Per-task supervision tensors rendered from one sample."""

    y_i: np.ndarray  # S x S x 3 in [-1, 1]
    y_s: np.ndarray  # C_s x S x S in {-1, +1}
    y_d: np.ndarray  # 5 x S x S in [-1, 1]


@dataclass
class ManifestRecord:
    name: str
    image_path: Path
    landmarks: np.ndarray  # 5 x 2 raw-image pixel coordinates
    label_path: Path


@dataclass
class DatasetManifest:
    records: list
    split: str
    resolution: int = 128


def _read_csv_rows(path):
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]
    return rows


def _parse_landmarks_csv(path):
    """landmarks.csv rows: filename, x1, y1, ..., x5, y5 (raw-image pixels)."""
    table = {}
    for row in _read_csv_rows(path):
        if len(row) != 11:
            continue
        try:
            coords = [float(v) for v in row[1:]]
        except ValueError:
            continue  # header row
        table[row[0].strip()] = np.array(coords, dtype=np.float64).reshape(5, 2)
    return table


def _parse_splits_csv(path):
    """splits.csv rows: filename, split (train/val/test or CelebA codes 0/1/2)."""
    table = {}
    for row in _read_csv_rows(path):
        if len(row) < 2:
            continue
        name, split = row[0].strip(), row[1].strip().lower()
        split = _SPLIT_CODES.get(split, split)
        if split in SPLITS:
            table[name] = split
    return table


def load_manifest(root, split, resolution=128, on_error="raise"):
    """Build the dataset manifest for one split.

    Expects the layout `<root>/images/*`, `<root>/landmarks.csv`,
    `<root>/labels/*.png`, `<root>/splits.csv`. Records missing any
    annotation raise a DataError naming the offending path; with
    on_error="skip" the issues are returned alongside the (possibly
    smaller) manifest instead.
    """
    if split not in SPLITS:
        raise ConfigurationError(f"split must be one of {SPLITS}, got {split!r}")
    if on_error not in ("raise", "skip"):
        raise ConfigurationError(f"on_error must be 'raise' or 'skip', got {on_error!r}")
    root = Path(root)
    splits_path = root / "splits.csv"
    landmarks_path = root / "landmarks.csv"
    for p in (splits_path, landmarks_path):
        if not p.is_file():
            raise DataError(f"missing annotation file: {p}")

    split_table = _parse_splits_csv(splits_path)
    lm_table = _parse_landmarks_csv(landmarks_path)
    names = sorted(n for n, s in split_table.items() if s == split)

    records, issues = [], []
    for name in names:
        image_path = root / "images" / name
        label_path = root / "labels" / (Path(name).stem + ".png")
        if not image_path.is_file():
            issues.append(f"{name}: missing image {image_path}")
            continue
        if name not in lm_table:
            issues.append(f"{name}: no landmark row in {landmarks_path}")
            continue
        if not label_path.is_file():
            issues.append(f"{name}: missing label map {label_path}")
            continue
        records.append(ManifestRecord(name, image_path, lm_table[name], label_path))

    if issues and on_error == "raise":
        raise DataError(
            f"{len(issues)} record(s) with missing annotations: " + "; ".join(issues),
            issues=issues,
        )
    manifest = DatasetManifest(records=records, split=split, resolution=resolution)
    if not records and on_error == "raise":
        raise DataError(f"split {split!r} is empty under {root}")
    if on_error == "skip":
        return manifest, issues
    return manifest


def load_raw(record):
    """Load one manifest record: (uint8 RGB image, landmarks copy, int label map)."""
    image = np.array(Image.open(record.image_path).convert("RGB"))
    label_map = np.array(Image.open(record.label_path))
    if label_map.ndim != 2:
        raise DataError(f"label map {record.label_path} is not a palette-index image")
    return image, record.landmarks.copy(), label_map.astype(np.int64)


def normalize_image(image_u8):
    return image_u8.astype(np.float32) / 127.5 - 1.0


def denormalize_image(image):
    """Back to continuous 8-bit scale [0, 255]."""
    return (np.asarray(image, dtype=np.float64) + 1.0) * 127.5


def to_uint8(image):
    return np.clip(np.round(denormalize_image(image)), 0, 255).astype(np.uint8)


def select_crop_window(landmarks, raw_shape, rng, resolution=128,
                       margin_frac=0.08, max_attempts=20):
    """Pick a (side, ox, oy) square window holding all landmarks with margin.

    The side is drawn uniformly between the smallest side that can hold the
    landmark span with margin_frac clearance (but no smaller than the target
    resolution) and the raw image's short side; the origin is drawn
    uniformly over positions keeping every landmark at least
    margin_frac * side from the window edge.
    """
    h, w = raw_shape[:2]
    landmarks = np.asarray(landmarks, dtype=np.float64)
    x, y = landmarks[:, 0], landmarks[:, 1]
    span = max(x.max() - x.min(), y.max() - y.min())
    side_lo = max(int(math.ceil(span / (1.0 - 2.0 * margin_frac))) + 1, resolution)
    side_hi = min(h, w)

    def origin_range(side, lo_coord, hi_coord, limit):
        m = margin_frac * side
        lo = max(0, int(math.ceil(hi_coord + m - (side - 1))))
        hi = min(int(math.floor(lo_coord - m)), limit - side)
        return lo, hi

    if side_lo <= side_hi:
        for _ in range(max_attempts):
            side = int(rng.integers(side_lo, side_hi + 1))
            ox_lo, ox_hi = origin_range(side, x.min(), x.max(), w)
            oy_lo, oy_hi = origin_range(side, y.min(), y.max(), h)
            if ox_lo > ox_hi or oy_lo > oy_hi:
                continue
            return (side, int(rng.integers(ox_lo, ox_hi + 1)),
                    int(rng.integers(oy_lo, oy_hi + 1)))
        # deterministic fallback: smallest window centered on the landmarks
        side = side_lo
        ox_lo, ox_hi = origin_range(side, x.min(), x.max(), w)
        oy_lo, oy_hi = origin_range(side, y.min(), y.max(), h)
        if ox_lo <= ox_hi and oy_lo <= oy_hi:
            cx = int(round((x.min() + x.max()) / 2 - side / 2))
            cy = int(round((y.min() + y.max()) / 2 - side / 2))
            return (side, min(max(cx, ox_lo), ox_hi), min(max(cy, oy_lo), oy_hi))
    raise CropError(
        f"landmarks spanning {span:.0f}px cannot fit any window of "
        f"{side_lo}..{side_hi}px with margin {margin_frac:.0%}"
    )


def crop_window(raw_image, landmarks, label_map, window, resolution=128):
    """Extract one window, resize to target resolution and normalize.

    Landmarks map as (p - origin) * (resolution / side); image resampled
    bilinearly, label map nearest-neighbor.
    """
    raw_image = np.asarray(raw_image)
    landmarks = np.asarray(landmarks, dtype=np.float64)
    side, ox, oy = window
    crop = raw_image[oy : oy + side, ox : ox + side]
    crop_label = np.asarray(label_map)[oy : oy + side, ox : ox + side]
    scale = resolution / side
    if side != resolution:
        crop = cv2.resize(
            crop.astype(np.float32), (resolution, resolution), interpolation=cv2.INTER_LINEAR
        )
        crop_label = cv2.resize(
            crop_label.astype(np.int32), (resolution, resolution),
            interpolation=cv2.INTER_NEAREST,
        )
    if np.issubdtype(raw_image.dtype, np.integer):
        image = normalize_image(crop)
    else:
        image = np.clip(crop.astype(np.float32), -1.0, 1.0)
    new_landmarks = (landmarks - np.array([ox, oy], dtype=np.float64)) * scale
    return FaceSample(image=image, landmarks=new_landmarks,
                      label_map=crop_label.astype(np.int64))


def crop_face(raw_image, landmarks, label_map, rng, resolution=128,
              margin_frac=0.08, max_attempts=20):
    """Random square crop containing all 5 landmarks with a relative margin,
    resized to resolution x resolution. No rotation or eye alignment applied.
    """
    raw_image = np.asarray(raw_image)
    h, w = raw_image.shape[:2]
    if min(h, w) < resolution:
        raise CropError(f"raw image {w}x{h} smaller than target crop {resolution}")
    window = select_crop_window(
        landmarks, (h, w), rng, resolution=resolution,
        margin_frac=margin_frac, max_attempts=max_attempts,
    )
    return crop_window(raw_image, landmarks, label_map, window, resolution=resolution)


@dataclass
class AugmentParams:
    """One draw of the geometric augmentation."""

    shift: tuple = (0.0, 0.0)  # pixels, (dx, dy)
    scale: float = 1.0
    rot_deg: float = 0.0
    flip: bool = False

    @property
    def is_identity_affine(self):
        return self.shift == (0.0, 0.0) and self.scale == 1.0 and self.rot_deg == 0.0


def sample_augment_params(rng, resolution,
                          max_shift_frac=0.05, scale_range=(0.95, 1.05),
                          max_rot_deg=10.0, flip_prob=0.5):
    s = max_shift_frac * resolution
    return AugmentParams(
        shift=(float(rng.uniform(-s, s)), float(rng.uniform(-s, s))),
        scale=float(rng.uniform(*scale_range)),
        rot_deg=float(rng.uniform(-max_rot_deg, max_rot_deg)),
        flip=bool(rng.random() < flip_prob),
    )


def affine_matrix(params, resolution):
    """Forward 2x3 matrix: p' = scale * R(rot) @ (p - c) + c + shift, c the image center."""
    c = (resolution - 1) / 2.0
    th = math.radians(params.rot_deg)
    a = params.scale * math.cos(th)
    b = params.scale * math.sin(th)
    # R = [[cos, -sin], [sin, cos]] scaled
    m = np.array(
        [
            [a, -b, c + params.shift[0] - a * c + b * c],
            [b, a, c + params.shift[1] - b * c - a * c],
        ],
        dtype=np.float64,
    )
    return m


def transform_landmarks(landmarks, params, resolution):
    """Apply the augmentation (flip, then affine) to landmarks alone."""
    lms = np.asarray(landmarks, dtype=np.float64).copy()
    if params.flip:
        lms[:, 0] = (resolution - 1) - lms[:, 0]
        for a, b in FLIP_LANDMARK_SWAPS:
            lms[[a, b]] = lms[[b, a]]
    if not params.is_identity_affine:
        m = affine_matrix(params, resolution)
        lms = lms @ m[:, :2].T + m[:, 2]
    return lms


def hflip_sample(sample):
    """Exact horizontal flip: mirrors arrays and swaps left/right identities."""
    image = sample.image[:, ::-1].copy()
    label = sample.label_map[:, ::-1].copy()
    relabeled = label.copy()
    for a, b in FLIP_LABEL_SWAPS:
        relabeled[label == a] = b
        relabeled[label == b] = a
    s = sample.resolution
    lms = sample.landmarks.copy()
    lms[:, 0] = (s - 1) - lms[:, 0]
    for a, b in FLIP_LANDMARK_SWAPS:
        lms[[a, b]] = lms[[b, a]]
    return FaceSample(image=image, landmarks=lms, label_map=relabeled)


def apply_augment(sample, params):
    """Apply one augmentation draw; image bilinear, label map nearest-neighbor."""
    s = sample.resolution
    out = hflip_sample(sample) if params.flip else sample
    if params.is_identity_affine:
        if not params.flip:
            out = FaceSample(out.image.copy(), out.landmarks.copy(), out.label_map.copy())
        return out
    m = affine_matrix(params, s)
    image = cv2.warpAffine(
        out.image, m, (s, s), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101
    )
    label = cv2.warpAffine(
        out.label_map.astype(np.int32), m, (s, s),
        flags=cv2.INTER_NEAREST, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )
    lms = out.landmarks @ m[:, :2].T + m[:, 2]
    return FaceSample(
        image=np.clip(image, -1.0, 1.0),
        landmarks=lms,
        label_map=label.astype(np.int64),
    )


def augment(sample, rng, max_attempts=10, **kwargs):
    """Random shift/scale/rotation/flip with consistent landmark and label transform.

    Draws that push any landmark out of frame are resampled; after
    max_attempts the sample is returned un-augmented.
    """
    s = sample.resolution
    for _ in range(max_attempts):
        params = sample_augment_params(rng, s, **kwargs)
        lms = transform_landmarks(sample.landmarks, params, s)
        if (lms >= 0).all() and (lms <= s - 1).all():
            return apply_augment(sample, params)
    log.warning("augmentation failed %d draws, returning sample unchanged", max_attempts)
    return sample


def render_heatmaps(landmarks, sigma=2.0, resolution=128):
    """Per-landmark Gaussian heatmaps, encoded into [-1, 1].

    Channel k holds exp(-|p - l_k|^2 / (2 sigma^2)) mapped by v -> 2v - 1,
    so the peak value is +1 when the landmark sits on a grid point.
    """
    if sigma <= 0:
        raise ConfigurationError(f"heatmap sigma must be > 0, got {sigma}")
    landmarks = np.asarray(landmarks, dtype=np.float64)
    xs = np.arange(resolution, dtype=np.float64)
    gx, gy = np.meshgrid(xs, xs)  # gx varies along columns, gy along rows
    out = np.empty((len(landmarks), resolution, resolution), dtype=np.float32)
    for k, (lx, ly) in enumerate(landmarks):
        d2 = (gx - lx) ** 2 + (gy - ly) ** 2
        out[k] = 2.0 * np.exp(-d2 / (2.0 * sigma * sigma)) - 1.0
    return out


def labelmap_to_channels(label_map, n_classes=N_CLASSES):
    """Encode an integer label map as per-class {-1, +1} channel maps."""
    label_map = np.asarray(label_map)
    bad = (label_map < 0) | (label_map >= n_classes)
    if bad.any():
        yy, xx = np.argwhere(bad)[0]
        raise DataError(
            f"label {int(label_map[yy, xx])} out of range [0, {n_classes}) "
            f"at pixel (y={yy}, x={xx})"
        )
    channels = np.full((n_classes,) + label_map.shape, -1.0, dtype=np.float32)
    for c in range(n_classes):
        channels[c][label_map == c] = 1.0
    return channels


def channels_to_labelmap(channels):
    """Per-pixel argmax decoder, inverse of labelmap_to_channels."""
    return np.argmax(np.asarray(channels), axis=0).astype(np.int64)


def make_targets(sample, n_classes=N_CLASSES, sigma=None):
    """Bundle the three task targets for one sample.

    sigma defaults to 2 px at resolution 128, scaling linearly with
    resolution.
    """
    s = sample.resolution
    if sigma is None:
        sigma = 2.0 * s / 128.0
    return TaskTargets(
        y_i=sample.image,
        y_s=labelmap_to_channels(sample.label_map, n_classes),
        y_d=render_heatmaps(sample.landmarks, sigma=sigma, resolution=s),
    )
