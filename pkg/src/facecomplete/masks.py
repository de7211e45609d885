"""Occlusion mask generation and application.

Masks follow the convention: 0 = occluded, 1 = visible. Three random
training mask families (block, pattern, noise) plus six fixed evaluation
rectangles O1..O6 covering canonical face regions. All generators are pure
functions of an explicit numpy Generator, so they are reproducible and
trivially parallel.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .exceptions import ConfigurationError

EVAL_SITES = ("O1", "O2", "O3", "O4", "O5", "O6")

# Fractional (cx, cy) centers of the six evaluation rectangles; the
# rectangle footprint is 40x48 (w x h) at S=128 and scales with S.
_EVAL_CENTERS = {
    "O1": (0.35, 0.40),  # left eye
    "O2": (0.65, 0.40),  # right eye
    "O3": (0.50, 0.30),  # upper face
    "O4": (0.35, 0.55),  # left face
    "O5": (0.65, 0.55),  # right face
    "O6": (0.50, 0.72),  # lower face
}
_EVAL_W, _EVAL_H = 40, 48  # at S=128


@dataclass
class BinaryMask:
    """S x S occlusion indicator; 0 = occluded, 1 = visible.

    Masks loaded from files may be uniform; every generator in this module
    additionally guarantees at least one occluded and one visible pixel.
    """

    grid: np.ndarray
    kind: str

    def __post_init__(self):
        grid = np.asarray(self.grid)
        vals = np.unique(grid)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError(f"mask values must be binary 0/1, got {vals[:8]}")
        if grid.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {grid.shape}")
        self.grid = grid.astype(np.uint8)

    @property
    def occluded_fraction(self):
        return float((self.grid == 0).mean())


def _check_nonuniform(grid, kind):
    if not (grid == 0).any() or not (grid == 1).any():
        raise ValueError(f"generated {kind} mask must occlude some but not all pixels")


def gen_block_mask(rng, S=128, block=64):
    """Single axis-aligned block x block occlusion placed uniformly inside the image."""
    if block >= S:
        raise ConfigurationError(f"block size {block} must be < image side {S}")
    if block < 1:
        raise ConfigurationError(f"block size {block} must be >= 1")
    grid = np.ones((S, S), dtype=np.uint8)
    x0 = int(rng.integers(0, S - block + 1))
    y0 = int(rng.integers(0, S - block + 1))
    grid[y0 : y0 + block, x0 : x0 + block] = 0
    _check_nonuniform(grid, "block")
    return BinaryMask(grid, "block")


def gen_pattern_mask(rng, S=128, target_fraction=0.25, tol=0.03, smooth_sigma=None):
    """Free-form blob occlusion from thresholded low-pass-filtered noise.

    The threshold is the target_fraction quantile of the smoothed field, so
    the occluded fraction lands in [target - tol, target + tol] by
    construction (exact up to quantile ties, which are measure-zero for
    continuous noise).
    """
    if not 0.0 < target_fraction < 1.0:
        raise ConfigurationError(f"target_fraction must be in (0, 1), got {target_fraction}")
    if smooth_sigma is None:
        smooth_sigma = S / 32.0
    field = gaussian_filter(rng.standard_normal((S, S)), sigma=smooth_sigma)
    thresh = np.quantile(field, target_fraction)
    grid = (field > thresh).astype(np.uint8)  # occluded where field <= quantile
    frac = float((grid == 0).mean())
    if not target_fraction - tol <= frac <= target_fraction + tol:
        # only reachable through pathological ties in the smoothed field
        raise RuntimeError(f"pattern mask fraction {frac:.4f} outside tolerance")
    _check_nonuniform(grid, "pattern")
    return BinaryMask(grid, "pattern")


def gen_noise_mask(rng, S=128, fraction=0.80):
    """I.i.d. per-pixel occlusion with the given probability."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"fraction must be in (0, 1), got {fraction}")
    grid = (rng.random((S, S)) >= fraction).astype(np.uint8)
    _check_nonuniform(grid, "noise")
    return BinaryMask(grid, "noise")


def _eval_rect(S, cx_frac, cy_frac, w, h):
    x0 = int(np.round(cx_frac * S - w / 2.0))
    y0 = int(np.round(cy_frac * S - h / 2.0))
    x0 = min(max(x0, 0), S - w)
    y0 = min(max(y0, 0), S - h)
    return x0, y0


def eval_masks(S=128, eye_landmarks=None):
    """The six fixed evaluation masks O1..O6 as a dict keyed by site name.

    Rectangles are 40x48 (w x h) at S=128, scaling proportionally for other
    S, centered on fixed fractional face-part locations and clamped inside
    the image. `eye_landmarks`, when given as ((x, y), (x, y)), recenters
    O1/O2 on the ground-truth eyes instead of the canonical positions.
    """
    w = max(1, int(np.round(_EVAL_W * S / 128.0)))
    h = max(1, int(np.round(_EVAL_H * S / 128.0)))
    if w >= S or h >= S:
        raise ConfigurationError(f"image side {S} too small for {w}x{h} evaluation masks")
    out = {}
    for site, (cx, cy) in _EVAL_CENTERS.items():
        if eye_landmarks is not None and site in ("O1", "O2"):
            ex, ey = eye_landmarks[0 if site == "O1" else 1]
            cx, cy = ex / S, ey / S
        x0, y0 = _eval_rect(S, cx, cy, w, h)
        grid = np.ones((S, S), dtype=np.uint8)
        grid[y0 : y0 + h, x0 : x0 + w] = 0
        _check_nonuniform(grid, "eval_site")
        out[site] = BinaryMask(grid, "eval_site")
    return out


def apply_mask(image, mask, fill="noise", rng=None):
    """Return the occluded input x: image where mask=1, fill value where mask=0.

    fill="noise" draws per-pixel uniform values in [-1, 1]; fill="zeros"
    writes -1, the normalized encoding of zero 8-bit intensity. Pixels under
    mask=1 are passed through bit-exactly.
    """
    image = np.asarray(image)
    grid = mask.grid if isinstance(mask, BinaryMask) else np.asarray(mask)
    if image.shape[:2] != grid.shape:
        raise ValueError(f"image {image.shape} and mask {grid.shape} spatial sizes differ")
    m = grid.astype(bool)
    if image.ndim == 3:
        m = m[:, :, None]
    m = np.broadcast_to(m, image.shape)
    if fill == "noise":
        if rng is None:
            raise ValueError("fill='noise' requires an rng")
        filler = rng.uniform(-1.0, 1.0, size=image.shape)
    elif fill == "zeros":
        filler = np.full(image.shape, -1.0)
    else:
        raise ConfigurationError(f"unknown fill mode {fill!r}")
    return np.where(m, image, filler)


def save_mask_png(mask, path):
    """Serialize to a 1-bit PNG (white = visible, black = occluded)."""
    from PIL import Image

    Image.fromarray((mask.grid * 255).astype(np.uint8)).convert("1").save(path)


def load_mask_png(path, kind="eval_site"):
    from PIL import Image

    grid = (np.array(Image.open(path).convert("L")) > 127).astype(np.uint8)
    return BinaryMask(grid, kind)
