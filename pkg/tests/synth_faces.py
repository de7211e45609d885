"""Procedural face-like fixtures: images, landmarks and label maps.

Faces are simple cartoon compositions (skin ellipse, eyes, eyebrows, nose,
lips, teeth) with per-sample jitter, enough structure for the generator to
overfit and for the landmark/segmentation heads to have a learnable
signal. Class ids follow the package convention:
0 background, 1 face, 2/3 left/right eyebrow, 4/5 left/right eye,
6 nose, 7 upper lip, 8 teeth, 9 lower lip.
"""

import csv
from pathlib import Path

import cv2
import numpy as np
from PIL import Image


def make_face(rng, size=96):
    """One synthetic face: (uint8 RGB image, 5x2 landmarks, int label map)."""
    img = np.zeros((size, size, 3), dtype=np.uint8)
    img[:] = rng.integers(10, 60, size=3, dtype=np.uint8)  # dark backdrop
    labels = np.zeros((size, size), dtype=np.int64)

    cx = size / 2 + rng.uniform(-0.04, 0.04) * size
    cy = size / 2 + rng.uniform(-0.04, 0.04) * size
    fw = size * rng.uniform(0.30, 0.36)  # face half-width
    fh = size * rng.uniform(0.40, 0.46)  # face half-height
    skin = tuple(int(v) for v in rng.integers(150, 230, size=3))

    def ellipse(center, axes, color, cls, thickness=-1):
        c = (int(round(center[0])), int(round(center[1])))
        a = (max(1, int(round(axes[0]))), max(1, int(round(axes[1]))))
        cv2.ellipse(img, c, a, 0, 0, 360, color, thickness)
        m = np.zeros((size, size), dtype=np.uint8)
        cv2.ellipse(m, c, a, 0, 0, 360, 1, thickness)
        labels[m == 1] = cls

    ellipse((cx, cy), (fw, fh), skin, 1)

    eye_dx = fw * rng.uniform(0.42, 0.50)
    eye_y = cy - fh * rng.uniform(0.18, 0.26)
    eye_r = size * rng.uniform(0.035, 0.05)
    eye_color = tuple(int(v) for v in rng.integers(0, 80, size=3))
    lx, rx = cx - eye_dx, cx + eye_dx
    ellipse((lx, eye_y), (eye_r, eye_r * 0.7), eye_color, 4)
    ellipse((rx, eye_y), (eye_r, eye_r * 0.7), eye_color, 5)

    brow_y = eye_y - eye_r * 2.2
    brow_color = tuple(int(v) for v in rng.integers(30, 90, size=3))
    ellipse((lx, brow_y), (eye_r * 1.3, eye_r * 0.35), brow_color, 2)
    ellipse((rx, brow_y), (eye_r * 1.3, eye_r * 0.35), brow_color, 3)

    nose_y = cy + fh * rng.uniform(0.02, 0.10)
    nose_color = tuple(min(255, int(v * 0.85)) for v in skin)
    ellipse((cx, nose_y), (eye_r * 0.8, eye_r * 1.2), nose_color, 6)

    mouth_y = cy + fh * rng.uniform(0.42, 0.52)
    mouth_w = fw * rng.uniform(0.40, 0.52)
    lip_color = tuple(int(v) for v in rng.integers(120, 200, size=3))
    lip_color = (lip_color[0], lip_color[1] // 3, lip_color[2] // 3)
    ellipse((cx, mouth_y - eye_r * 0.5), (mouth_w, eye_r * 0.5), lip_color, 7)
    ellipse((cx, mouth_y + eye_r * 0.6), (mouth_w * 0.9, eye_r * 0.6), lip_color, 9)
    ellipse((cx, mouth_y), (mouth_w * 0.7, eye_r * 0.3), (240, 240, 240), 8)

    noise = rng.integers(-8, 9, size=img.shape, dtype=np.int16)
    img = np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)

    landmarks = np.array(
        [
            [lx, eye_y],
            [rx, eye_y],
            [cx, nose_y],
            [cx - mouth_w, mouth_y],
            [cx + mouth_w, mouth_y],
        ],
        dtype=np.float64,
    )
    return img, landmarks, labels


def write_dataset(root, rng, n_train=8, n_val=2, n_test=2, size=96):
    """Materialize a dataset root with the expected on-disk layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    split_rows, lm_rows = [], []
    counts = (("train", n_train), ("val", n_val), ("test", n_test))
    k = 0
    for split, n in counts:
        for _ in range(n):
            name = f"face_{k:04d}.png"
            img, lms, labels = make_face(rng, size=size)
            Image.fromarray(img).save(root / "images" / name)
            Image.fromarray(labels.astype(np.uint8), mode="P").save(
                root / "labels" / f"face_{k:04d}.png"
            )
            lm_rows.append([name] + [f"{v:.2f}" for v in lms.reshape(-1)])
            split_rows.append([name, split])
            k += 1
    with open(root / "landmarks.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(lm_rows)
    with open(root / "splits.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(split_rows)
    return root


def make_sample(rng, resolution=64, raw_size=96):
    """One cropped FaceSample at the requested resolution."""
    from facecomplete import data

    img, lms, labels = make_face(rng, size=raw_size)
    return data.crop_face(img, lms, labels, rng, resolution=resolution)
