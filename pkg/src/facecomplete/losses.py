"""Adversarial and reconstruction losses for the collaborative multi-task
objective, including the inpainting-concentrated variants.

Task keys: "i" inpainting, "s" segmentation, "d" landmark detection.

The discriminator plays standard binary cross-entropy; the generator uses
the non-saturating -log D(fake) form scaled by its per-task adversarial
weight. All reductions are means, except the masked inpainting L1 which
normalizes by the occluded-pixel count so weights stay comparable across
mask sizes. In concentrated mode the inpainting branch judges and
penalizes only the occluded region: the discriminator sees the composed
image (generator output with the visible region replaced by ground truth)
and the L1 is restricted to mask-0 pixels.
"""

from dataclasses import dataclass

import torch

from .exceptions import ConfigurationError

EPS = 1e-7
TASK_ORDER = ("i", "s", "d")


def canonical_task_set(tasks):
    """Normalize a task iterable or comma string to an ordered tuple."""
    if isinstance(tasks, str):
        tasks = [t.strip() for t in tasks.replace(",", " ").split()] if (
            "," in tasks or " " in tasks
        ) else list(tasks)
    tasks = set(tasks)
    unknown = tasks - set(TASK_ORDER)
    if unknown:
        raise ConfigurationError(f"unknown task(s) {sorted(unknown)}; valid: {TASK_ORDER}")
    if not tasks:
        raise ConfigurationError("task set must be nonempty")
    return tuple(t for t in TASK_ORDER if t in tasks)


@dataclass
class LossWeights:
    """Adversarial and reconstruction weights keyed by active task."""

    lambda_adv: dict
    lambda_rec: dict

    def __post_init__(self):
        for name, table in (("lambda_adv", self.lambda_adv), ("lambda_rec", self.lambda_rec)):
            for task, value in table.items():
                if task not in TASK_ORDER:
                    raise ConfigurationError(f"{name} has unknown task {task!r}")
                if value < 0:
                    raise ConfigurationError(f"{name}[{task}] = {value} must be >= 0")

    def require(self, task):
        if task not in self.lambda_adv or task not in self.lambda_rec:
            raise ConfigurationError(f"no loss weights configured for active task {task!r}")
        return self.lambda_adv[task], self.lambda_rec[task]


def _broadcast_mask(mask, like):
    m = mask if torch.is_tensor(mask) else torch.as_tensor(mask)
    m = m.to(dtype=like.dtype, device=like.device)
    while m.dim() < like.dim():
        m = m.unsqueeze(0)
    return m.expand_as(like)


def compose_inpaint(g_i, x, mask):
    """Composed image: generator output in the hole, ground-truth context outside.

    y_hat = g_i * (1 - M) + x * M with M broadcast over channels; pixels
    where M = 1 equal x bit-exactly.
    """
    m = _broadcast_mask(mask, g_i)
    if not torch.all((m == 0) | (m == 1)):
        raise ValueError("composition mask must be binary 0/1")
    return g_i * (1.0 - m) + x * m


def adv_loss_discriminator(real_map, fake_map):
    """Binary cross-entropy over realness maps: real toward 1, fake toward 0."""
    real = real_map.clamp(EPS, 1.0 - EPS)
    fake = fake_map.clamp(EPS, 1.0 - EPS)
    return -(torch.log(real).mean() + torch.log(1.0 - fake).mean())


def adv_loss_generator(fake_map, lambda_adv_t):
    """Non-saturating generator loss, scaled by the task's adversarial weight."""
    fake = fake_map.clamp(EPS, 1.0 - EPS)
    return lambda_adv_t * (-torch.log(fake).mean())


def rec_loss_inpaint_full(g_i, y_i, lam):
    return lam * (g_i - y_i).abs().mean()


def rec_loss_inpaint_masked(g_i, y_i, mask, lam):
    """L1 restricted to the occluded region, normalized by its size.

    Returns 0 for an all-visible mask (nothing occluded to penalize).
    """
    m = _broadcast_mask(mask, g_i)
    if not torch.all((m == 0) | (m == 1)):
        raise ValueError("mask must be binary 0/1")
    hole = 1.0 - m
    denom = hole.sum()
    if denom == 0:
        return g_i.new_zeros(())
    return lam * ((g_i - y_i).abs() * hole).sum() / denom


def rec_loss_l2(pred, target, lam):
    return lam * (pred - target).pow(2).mean()


def inpaint_fake(outputs, x, mask, concentrated):
    """The inpainting tensor shown to D_i: composed in concentrated mode, raw otherwise."""
    return compose_inpaint(outputs.g_i, x, mask) if concentrated else outputs.g_i


def fake_for_task(task, outputs, x, mask, concentrated):
    if task == "i":
        return inpaint_fake(outputs, x, mask, concentrated)
    return outputs.for_task(task)


def generator_loss_terms(outputs, targets, x, mask, weights, task_set,
                         concentrated, fake_maps):
    """Per-term generator losses as {(task, term): tensor}.

    targets maps task key to its supervision tensor. fake_maps must hold a
    realness map for every active task with a positive adversarial weight;
    tasks with lambda_adv = 0 contribute no adversarial term.
    """
    task_set = canonical_task_set(task_set)
    terms = {}
    for t in task_set:
        lam_adv, lam_rec = weights.require(t)
        if lam_adv > 0:
            if t not in fake_maps:
                raise ConfigurationError(f"missing discriminator map for active task {t!r}")
            terms[(t, "adv")] = adv_loss_generator(fake_maps[t], lam_adv)
        if t == "i":
            if concentrated:
                terms[(t, "rec")] = rec_loss_inpaint_masked(outputs.g_i, targets["i"], mask, lam_rec)
            else:
                terms[(t, "rec")] = rec_loss_inpaint_full(outputs.g_i, targets["i"], lam_rec)
        else:
            terms[(t, "rec")] = rec_loss_l2(outputs.for_task(t), targets[t], lam_rec)
    return terms


def total_generator_loss(outputs, targets, x, mask, weights, task_set,
                         concentrated, fake_maps):
    """Sum of adversarial and reconstruction terms over the active tasks."""
    terms = generator_loss_terms(
        outputs, targets, x, mask, weights, task_set, concentrated, fake_maps
    )
    total = None
    for value in terms.values():
        total = value if total is None else total + value
    return total
