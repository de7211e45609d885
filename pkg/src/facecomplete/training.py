"""Alternating discriminator/generator optimization over a task set.

One step = one discriminator update per active task (on detached generator
outputs), then one generator update on the summed objective. Tasks with a
zero adversarial weight skip their discriminator entirely (nothing to
play). Masks are drawn fresh per sample per step; block and noise masks
are filled with uniform noise, pattern masks with the zero-intensity
encoding. Everything is reproducible from (seed, thread count): dataset
cropping, augmentation, mask draws and parameter init all derive from the
config seed, and checkpoints carry optimizer and RNG state so a resumed
run continues the exact step sequence.
"""

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import evaluation
from .exceptions import ConfigurationError
from .losses import (
    LossWeights,
    adv_loss_discriminator,
    canonical_task_set,
    fake_for_task,
    generator_loss_terms,
)
from .masks import apply_mask, gen_block_mask, gen_noise_mask, gen_pattern_mask
from .model import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    discriminator_config_for,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MASK_KINDS = ("block", "pattern", "noise")
# paper protocol: noise fill for block/noise masks, zero fill for pattern
FILL_BY_KIND = {"block": "noise", "noise": "noise", "pattern": "zeros"}


def default_weights(task_set):
    """Per-task loss weights by task-set size (1, 2 or 3 active tasks)."""
    ts = canonical_task_set(task_set)
    n = len(ts)
    adv = {
        1: {"i": 1.0, "s": 1.0, "d": 1.0},
        2: {"i": 0.8, "s": 0.2, "d": 0.2},
        3: {"i": 0.8, "s": 0.1, "d": 0.1},
    }[n]
    rec = {
        1: {"i": 100.0, "s": 1000.0, "d": 1000.0},
        2: {"i": 100.0, "s": 200.0, "d": 200.0},
        3: {"i": 100.0, "s": 200.0, "d": 200.0},
    }[n]
    return LossWeights(
        lambda_adv={t: adv[t] for t in ts},
        lambda_rec={t: rec[t] for t in ts},
    )


@dataclass
class TrainConfig:
    task_set: tuple = ("i", "s", "d")
    concentrated: bool = False
    epochs: int = 20
    learning_rate: float = 0.01
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 16
    mask_kind: str = "block"
    seed: int = 0
    resolution: int = 128
    n_classes: int = data_mod.N_CLASSES
    block_size: int = 0          # 0 -> resolution // 2
    noise_fraction: float = 0.80
    pattern_fraction: float = 0.25
    heatmap_sigma: float = 0.0   # 0 -> 2 px scaled by resolution / 128
    augment: bool = True
    enc_channels: tuple = (64, 128, 256, 512, 512, 512, 512)
    disc_widths: tuple = (64, 128, 256, 512, 512)
    skip: bool = True
    eval_every: int = 1          # epochs between validation metric logs
    checkpoint_every: int = 1    # epochs between rolling checkpoint writes
    lambda_adv: dict = field(default_factory=dict)  # overrides, task -> weight
    lambda_rec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.task_set = canonical_task_set(self.task_set)
        self.enc_channels = tuple(int(c) for c in self.enc_channels)
        self.disc_widths = tuple(int(c) for c in self.disc_widths)
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.mask_kind not in MASK_KINDS:
            raise ConfigurationError(f"mask_kind must be one of {MASK_KINDS}, got {self.mask_kind!r}")

    @property
    def effective_block(self):
        return self.block_size or self.resolution // 2

    @property
    def effective_sigma(self):
        return self.heatmap_sigma or 2.0 * self.resolution / 128.0

    def build_weights(self):
        w = default_weights(self.task_set)
        w.lambda_adv.update({t: float(v) for t, v in self.lambda_adv.items()})
        w.lambda_rec.update({t: float(v) for t, v in self.lambda_rec.items()})
        return w

    def generator_config(self):
        return GeneratorConfig(
            resolution=self.resolution,
            enc_channels=self.enc_channels,
            out_channels=(3, self.n_classes, 5),
            skip=self.skip,
        )

    def to_dict(self):
        d = asdict(self)
        d["task_set"] = list(self.task_set)
        d["enc_channels"] = list(self.enc_channels)
        d["disc_widths"] = list(self.disc_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Batch:
    x: torch.Tensor        # B x 3 x S x S masked input
    mask: torch.Tensor     # B x 1 x S x S binary
    targets: dict          # task -> supervision tensor


class TrainState:
    """Owns the networks, optimizers, step counter and data RNG."""

    def __init__(self, config, device="cpu"):
        self.config = config
        self.device = torch.device(device)
        self.weights = config.build_weights()
        torch.manual_seed(config.seed)
        self.generator = Generator(config.generator_config()).to(self.device)
        self.discriminators = {}
        self.opt_d = {}
        betas = (config.beta1, config.beta2)
        for t in config.task_set:
            d = Discriminator(
                discriminator_config_for(t, config.n_classes, config.disc_widths)
            ).to(self.device)
            self.discriminators[t] = d
            self.opt_d[t] = torch.optim.Adam(d.parameters(), lr=config.learning_rate, betas=betas)
        self.opt_g = torch.optim.Adam(
            self.generator.parameters(), lr=config.learning_rate, betas=betas
        )
        self.data_rng = np.random.default_rng([config.seed, 0x7261696E])
        self.step = 0
        self.epoch = 0


def draw_mask(rng, config):
    kind = config.mask_kind
    if kind == "block":
        return gen_block_mask(rng, config.resolution, config.effective_block)
    if kind == "pattern":
        return gen_pattern_mask(rng, config.resolution, config.pattern_fraction)
    return gen_noise_mask(rng, config.resolution, config.noise_fraction)


def build_dataset(manifest, config, crop_rng=None):
    """Load, crop and cache all samples of a manifest in memory."""
    rng = crop_rng or np.random.default_rng([config.seed, 0x63726F70])
    samples = []
    for record in manifest.records:
        raw, lms, labels = data_mod.load_raw(record)
        try:
            samples.append(
                data_mod.crop_face(raw, lms, labels, rng, resolution=config.resolution)
            )
        except data_mod.CropError as exc:
            log.warning("skipping %s: %s", record.name, exc)
    if not samples:
        raise ConfigurationError("no usable samples after cropping")
    return samples


def make_batch(samples, config, rng, device="cpu"):
    """Augment, render targets and mask one list of samples into tensors."""
    xs, ms, tgt = [], [], {t: [] for t in config.task_set}
    fill = FILL_BY_KIND[config.mask_kind]
    for sample in samples:
        if config.augment:
            sample = data_mod.augment(sample, rng)
        mask = draw_mask(rng, config)
        x = apply_mask(sample.image, mask, fill=fill, rng=rng)
        xs.append(x.transpose(2, 0, 1))
        ms.append(mask.grid[None].astype(np.float32))
        if "i" in tgt:
            tgt["i"].append(sample.image.transpose(2, 0, 1))
        if "s" in tgt:
            tgt["s"].append(data_mod.labelmap_to_channels(sample.label_map, config.n_classes))
        if "d" in tgt:
            tgt["d"].append(
                data_mod.render_heatmaps(
                    sample.landmarks, sigma=config.effective_sigma, resolution=sample.resolution
                )
            )
    dev = torch.device(device)
    return Batch(
        x=torch.from_numpy(np.stack(xs).astype(np.float32)).to(dev),
        mask=torch.from_numpy(np.stack(ms)).to(dev),
        targets={t: torch.from_numpy(np.stack(v).astype(np.float32)).to(dev) for t, v in tgt.items()},
    )


def _check_finite(value, name, record):
    if not torch.isfinite(value):
        raise RuntimeError(
            f"non-finite loss in term {name}: {float(value)}; step record so far: {record}"
        )


def train_step(batch, state):
    """One alternating optimization step; returns the per-term loss record."""
    cfg = state.config
    record = {}
    outputs = state.generator(batch.x)

    for t in cfg.task_set:
        if state.weights.lambda_adv.get(t, 0.0) == 0.0:
            continue
        d = state.discriminators[t]
        fake = fake_for_task(t, outputs, batch.x, batch.mask, cfg.concentrated).detach()
        real_map = d(batch.x, batch.targets[t])
        fake_map = d(batch.x, fake)
        loss_d = adv_loss_discriminator(real_map, fake_map)
        _check_finite(loss_d, f"d_{t}", record)
        state.opt_d[t].zero_grad()
        loss_d.backward()
        state.opt_d[t].step()
        record[("d", t, "bce")] = float(loss_d.detach())

    fake_maps = {}
    for t in cfg.task_set:
        if state.weights.lambda_adv.get(t, 0.0) == 0.0:
            continue
        fake = fake_for_task(t, outputs, batch.x, batch.mask, cfg.concentrated)
        fake_maps[t] = state.discriminators[t](batch.x, fake)
    terms = generator_loss_terms(
        outputs, batch.targets, batch.x, batch.mask,
        state.weights, cfg.task_set, cfg.concentrated, fake_maps,
    )
    total = None
    for (t, term), value in terms.items():
        _check_finite(value, f"g_{t}/{term}", record)
        record[("g", t, term)] = float(value.detach())
        total = value if total is None else total + value
    if total is not None and total.requires_grad:
        state.opt_g.zero_grad()
        total.backward()
        state.opt_g.step()
    record[("g", "all", "total")] = float(total.detach()) if total is not None else 0.0

    state.step += 1
    return record


def masked_l1(g_i, y_i, mask):
    """Mean absolute error over occluded pixels only (numpy, [-1, 1] scale)."""
    hole = np.asarray(mask) == 0
    if not hole.any():
        return 0.0
    diff = np.abs(np.asarray(g_i) - np.asarray(y_i))
    return float(diff[np.broadcast_to(hole[:, :, None], diff.shape)].mean())


def validate(state, samples, seed=0x76616C):
    """Fixed-mask validation metrics: composed PSNR/SSIM, masked L1, Dice, landmark error."""
    cfg = state.config
    rng = np.random.default_rng(seed)
    fill = FILL_BY_KIND[cfg.mask_kind]
    psnrs, ssims, l1s, dices, lmerrs = [], [], [], [], []
    was_training = state.generator.training
    state.generator.eval()
    with torch.no_grad():
        for sample in samples:
            mask = draw_mask(rng, cfg)
            x_np = apply_mask(sample.image, mask, fill=fill, rng=rng)
            x = torch.from_numpy(x_np.transpose(2, 0, 1).astype(np.float32))[None].to(state.device)
            out = state.generator(x)
            if "i" in cfg.task_set:
                g_i = out.g_i[0].cpu().numpy().transpose(1, 2, 0)
                hole = mask.grid[:, :, None] == 0
                composed = np.where(hole, g_i, sample.image)
                psnrs.append(
                    evaluation.psnr(
                        data_mod.denormalize_image(composed),
                        data_mod.denormalize_image(sample.image),
                    )
                )
                ssims.append(
                    evaluation.ssim(
                        data_mod.denormalize_image(composed),
                        data_mod.denormalize_image(sample.image),
                    )
                )
                l1s.append(masked_l1(g_i, sample.image, mask.grid))
            if "s" in cfg.task_set:
                pred = data_mod.channels_to_labelmap(out.g_s[0].cpu().numpy())
                vals = [
                    evaluation.dice(pred, sample.label_map, c, cfg.n_classes)
                    for c in range(1, cfg.n_classes)
                ]
                dices.append(float(np.mean(vals)))
            if "d" in cfg.task_set:
                errs = evaluation.landmark_error(out.g_d[0].cpu().numpy(), sample.landmarks)
                lmerrs.append(float(np.mean(errs)))
    if was_training:
        state.generator.train()
    out = {}
    if psnrs:
        finite = [p for p in psnrs if math.isfinite(p)]
        out["psnr"] = float(np.mean(psnrs)) if len(finite) == len(psnrs) else math.inf
        out["ssim"] = float(np.mean(ssims))
        out["masked_l1"] = float(np.mean(l1s))
    if dices:
        out["dice"] = float(np.mean(dices))
    if lmerrs:
        out["landmark_error"] = float(np.mean(lmerrs))
    return out


class JsonlLogger:
    """Append-only JSONL writer, one flush per record."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a")

    def write(self, record):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def log_step_record(logger, step, record):
    for key, value in record.items():
        net, task, term = key
        logger.write({"step": step, "task": f"{net}_{task}", "term": term, "value": value})


def save_checkpoint(state, path):
    payload = {
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "epoch": state.epoch,
        "config": state.config.to_dict(),
        "weights": {"lambda_adv": state.weights.lambda_adv, "lambda_rec": state.weights.lambda_rec},
        "generator": state.generator.state_dict(),
        "discriminators": {t: d.state_dict() for t, d in state.discriminators.items()},
        "optimizers": {
            "g": state.opt_g.state_dict(),
            "d": {t: opt.state_dict() for t, opt in state.opt_d.items()},
        },
        "rng": {
            "torch": torch.get_rng_state(),
            "data": state.data_rng.bit_generator.state,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path, device="cpu"):
    payload = torch.load(path, map_location=device, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"checkpoint version {payload.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    config = TrainConfig.from_dict(payload["config"])
    state = TrainState(config, device=device)
    state.generator.load_state_dict(payload["generator"])
    for t, sd in payload["discriminators"].items():
        state.discriminators[t].load_state_dict(sd)
    state.opt_g.load_state_dict(payload["optimizers"]["g"])
    for t, sd in payload["optimizers"]["d"].items():
        state.opt_d[t].load_state_dict(sd)
    state.weights = LossWeights(**payload["weights"])
    state.step = payload["step"]
    state.epoch = payload["epoch"]
    torch.set_rng_state(payload["rng"]["torch"])
    state.data_rng = np.random.default_rng()
    state.data_rng.bit_generator.state = payload["rng"]["data"]
    return state


def train(config, train_manifest, val_manifest=None, out_dir="runs/default",
          device="cpu", resume_from=None):
    """Full training loop; returns (state, checkpoint path).

    Writes train_log.jsonl (per-step loss terms) and val_log.jsonl
    (per-epoch validation metrics) under out_dir, and keeps a rolling
    checkpoint.pt updated every epoch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from:
        state = load_checkpoint(resume_from, device=device)
        config = state.config
    else:
        state = TrainState(config, device=device)

    train_samples = build_dataset(train_manifest, config)
    val_samples = (
        build_dataset(val_manifest, config,
                      crop_rng=np.random.default_rng([config.seed, 0x76616C63]))
        if val_manifest is not None
        else train_samples
    )

    step_log = JsonlLogger(out_dir / "train_log.jsonl")
    val_log = JsonlLogger(out_dir / "val_log.jsonl")
    ckpt_path = out_dir / "checkpoint.pt"

    if state.epoch == 0:
        baseline = validate(state, val_samples)
        val_log.write({"epoch": 0, "step": state.step, **baseline})

    n = len(train_samples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    state.generator.train()
    for d in state.discriminators.values():
        d.train()

    try:
        for epoch in range(state.epoch + 1, config.epochs + 1):
            order = state.data_rng.permutation(n)
            for b in range(steps_per_epoch):
                idx = order[b * config.batch_size : (b + 1) * config.batch_size]
                batch = make_batch([train_samples[i] for i in idx], config,
                                   state.data_rng, device=device)
                record = train_step(batch, state)
                log_step_record(step_log, state.step, record)
            state.epoch = epoch
            if epoch % config.eval_every == 0 or epoch == config.epochs:
                metrics = validate(state, val_samples)
                val_log.write({"epoch": epoch, "step": state.step, **metrics})
            if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                save_checkpoint(state, ckpt_path)
    finally:
        step_log.close()
        val_log.close()
    return state, ckpt_path
