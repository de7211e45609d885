"""Completion quality metrics (PSNR, SSIM, Dice, landmark localization
error) and the table-style evaluation driver over the six fixed occlusion
sites.

PSNR and SSIM operate on the continuous 8-bit intensity scale (peak 255);
callers de-normalize [-1, 1] images first (evaluate() does this
internally). SSIM uses the canonical parameterization: 11x11 Gaussian
window with sigma 1.5, K1 = 0.01, K2 = 0.03, statistics averaged over
valid window positions, channels averaged.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from . import data as data_mod
from .exceptions import ConfigurationError
from .masks import EVAL_SITES, apply_mask, eval_masks, gen_block_mask, gen_noise_mask, gen_pattern_mask

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 255.0


def psnr(a, b):
    """Peak signal-to-noise ratio in dB on the 8-bit scale; inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(DYNAMIC_RANGE ** 2 / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_single(a, b):
    win = _gaussian_window()
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    var_a = convolve2d(a * a, win, mode="valid") - mu_a ** 2
    var_b = convolve2d(b * b, win, mode="valid") - mu_b ** 2
    cov = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b):
    """Structural similarity in [0, 1], channel-averaged, 8-bit scale inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    if a.ndim == 2:
        return _ssim_single(a, b)
    return float(np.mean([_ssim_single(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def dice(pred_label_map, gt_label_map, label, n_classes=None):
    """Dice overlap 2|P & G| / (|P| + |G|) of one class; 1.0 when both empty."""
    pred = np.asarray(pred_label_map)
    gt = np.asarray(gt_label_map)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if label < 0 or int(label) != label:
        raise ValueError(f"unknown label id {label!r}")
    if n_classes is not None and label >= n_classes:
        raise ValueError(f"unknown label id {label} for {n_classes} classes")
    p = pred == label
    g = gt == label
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def heatmap_peaks(heatmaps):
    """Per-channel (x, y) argmax locations, first occurrence in row-major order."""
    maps = np.asarray(heatmaps)
    peaks = np.empty((maps.shape[0], 2), dtype=np.float64)
    for k in range(maps.shape[0]):
        idx = int(np.argmax(maps[k]))
        y, x = divmod(idx, maps.shape[2])
        peaks[k] = (x, y)
    return peaks


def landmark_error(g_d, gt_landmarks):
    """Euclidean distance in pixels between heatmap argmax and ground truth, per landmark."""
    peaks = heatmap_peaks(g_d)
    gt = np.asarray(gt_landmarks, dtype=np.float64)
    return np.sqrt(((peaks - gt) ** 2).sum(axis=1))


def _mean(values):
    return math.inf if any(math.isinf(v) for v in values) else float(np.mean(values))


@dataclass
class MetricsReport:
    per_site: dict                 # site -> {"ssim_percent":, "psnr_db":}
    dice: dict = field(default_factory=dict)            # class name -> percent
    landmark_error: dict = field(default_factory=dict)  # landmark name -> pixels
    config: dict = field(default_factory=dict)
    version: int = 1

    def to_dict(self):
        def enc(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            return v

        return {
            "version": self.version,
            "config": self.config,
            "per_site": {
                site: {k: enc(v) for k, v in vals.items()}
                for site, vals in self.per_site.items()
            },
            "dice": {k: enc(v) for k, v in self.dice.items()},
            "landmark_error": {k: enc(v) for k, v in self.landmark_error.items()},
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def site_csv(self):
        """One row per site mirroring the SSIM/PSNR results-table layout."""
        lines = ["site,ssim_percent,psnr_db"]
        for site, vals in self.per_site.items():
            lines.append(f"{site},{vals['ssim_percent']},{vals['psnr_db']}")
        return "\n".join(lines) + "\n"


def _mask_for(source, S, rng):
    if source in EVAL_SITES:
        return eval_masks(S)[source]
    if source == "block":
        return gen_block_mask(rng, S, block=max(2, S // 2))
    if source == "pattern":
        return gen_pattern_mask(rng, S)
    if source == "noise":
        return gen_noise_mask(rng, S)
    raise ConfigurationError(f"unknown mask source {source!r}")


def evaluate(generator, samples, sites=EVAL_SITES, task_set=("i", "s", "d"),
             n_classes=data_mod.N_CLASSES, seed=0, occluded_only=False,
             config_echo=None):
    """Run the full metric protocol over samples and occlusion sites.

    generator: callable mapping a 1 x 3 x S x S torch tensor in [-1, 1] to a
    GeneratorOutput. Samples are FaceSample instances, visited in order with
    sites in the given order per sample (one forward per pair). For every
    pair the input is masked (noise fill), the inpainting output is composed
    with the ground-truth context, and PSNR/SSIM are computed on the
    composed image against the original on the 8-bit scale. Dice (per class)
    and landmark errors come from the segmentation/heatmap heads when their
    tasks are active. occluded_only restricts Dice and PSNR to mask-0 pixels.
    """
    import torch

    task_set = tuple(task_set)
    want_dice = "s" in task_set
    want_landmarks = "d" in task_set
    rng = np.random.default_rng(seed)

    per_site = {site: {"psnr": [], "ssim": []} for site in sites}
    dice_acc = {c: [] for c in range(1, n_classes)}
    lm_acc = {k: [] for k in range(5)}

    for sample in samples:
        S = sample.resolution
        gt255 = data_mod.denormalize_image(sample.image)
        for site in sites:
            mask = _mask_for(site, S, rng)
            x_np = apply_mask(sample.image, mask, fill="noise", rng=rng)
            x = torch.from_numpy(
                np.ascontiguousarray(x_np.transpose(2, 0, 1))[None]
            ).float()
            with torch.no_grad():
                out = generator(x)
            g_i = out.g_i[0].numpy().transpose(1, 2, 0)
            hole = mask.grid[:, :, None] == 0
            composed = np.where(hole, g_i, sample.image)
            comp255 = data_mod.denormalize_image(composed)
            if occluded_only:
                sel = hole[:, :, 0]
                per_site[site]["psnr"].append(psnr(comp255[sel], gt255[sel]))
            else:
                per_site[site]["psnr"].append(psnr(comp255, gt255))
            per_site[site]["ssim"].append(ssim(comp255, gt255))

            if want_dice:
                pred_labels = data_mod.channels_to_labelmap(out.g_s[0].numpy())
                gt_labels = sample.label_map
                if occluded_only:
                    sel = hole[:, :, 0]
                    pred_labels, gt_labels = pred_labels[sel], gt_labels[sel]
                for c in range(1, n_classes):
                    dice_acc[c].append(dice(pred_labels, gt_labels, c, n_classes))
            if want_landmarks:
                errs = landmark_error(out.g_d[0].numpy(), sample.landmarks)
                for k in range(5):
                    lm_acc[k].append(float(errs[k]))

    report = MetricsReport(
        per_site={
            site: {
                "ssim_percent": 100.0 * _mean(vals["ssim"]),
                "psnr_db": _mean(vals["psnr"]),
            }
            for site, vals in per_site.items()
        },
        config=dict(config_echo or {}, sites=list(sites), seed=seed,
                    occluded_only=occluded_only, n_samples=len(samples)),
    )
    if want_dice:
        names = data_mod.LABEL_NAMES if n_classes == data_mod.N_CLASSES else tuple(
            f"class_{c}" for c in range(n_classes)
        )
        report.dice = {names[c]: 100.0 * _mean(v) for c, v in dice_acc.items() if v}
        report.dice["average"] = _mean(list(report.dice.values()))
    if want_landmarks:
        report.landmark_error = {
            data_mod.LANDMARK_NAMES[k]: _mean(v) for k, v in lm_acc.items() if v
        }
        report.landmark_error["average"] = _mean(list(report.landmark_error.values()))
    return report


def require_tasks(requested_metrics, task_set):
    """Explicit unsupported-metric guard, e.g. Dice from a model without task s."""
    needs = {"dice": "s", "landmark_error": "d", "psnr": "i", "ssim": "i"}
    for metric in requested_metrics:
        task = needs.get(metric)
        if task is None:
            raise ConfigurationError(f"unknown metric {metric!r}")
        if task not in task_set:
            raise ConfigurationError(
                f"metric {metric!r} requires task {task!r}, model has {tuple(task_set)}"
            )
