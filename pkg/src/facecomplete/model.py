"""Shared encoder-decoder generator with three task heads, and the
per-task conditional discriminators.

The generator follows stable deep-convolutional GAN conventions: every
layer is a 4x4 stride-2 (transposed) convolution, batch norm everywhere
except the first encoder / discriminator layer and the output layer,
LeakyReLU(0.2) down and ReLU up, tanh output. Skip connections concatenate
each encoder activation onto the decoder input at the mirrored depth. All
task outputs come from a single shared tanh layer and are split by channel
(3 inpainting + C_s segmentation + 5 heatmap channels), so every parameter
up to the output layer is shared across tasks.
"""

from dataclasses import dataclass, field

import torch
from torch import nn

from .exceptions import ConfigurationError

TASKS = ("i", "s", "d")


@dataclass
class GeneratorConfig:
    resolution: int = 128
    enc_channels: tuple = (64, 128, 256, 512, 512, 512, 512)
    out_channels: tuple = (3, 10, 5)  # (inpainting, segmentation C_s, heatmaps)
    skip: bool = True

    def __post_init__(self):
        self.enc_channels = tuple(self.enc_channels)
        self.out_channels = tuple(self.out_channels)
        depth = len(self.enc_channels)
        if depth < 1:
            raise ConfigurationError("enc_channels must be nonempty")
        if self.resolution % (2 ** depth) != 0 or self.resolution < 2 ** depth:
            raise ConfigurationError(
                f"resolution {self.resolution} must be divisible by 2^{depth}"
            )
        if len(self.out_channels) != 3:
            raise ConfigurationError("out_channels must be (inpaint, seg, heatmap)")

    @property
    def depth(self):
        return len(self.enc_channels)

    @property
    def total_out_channels(self):
        return sum(self.out_channels)


@dataclass
class DiscriminatorConfig:
    in_channels: int = 6  # condition image channels + task output channels
    widths: tuple = (64, 128, 256, 512, 512)

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if self.in_channels < 4:
            raise ConfigurationError("conditional discriminator needs >= 4 input channels")
        if len(self.widths) < 1:
            raise ConfigurationError("widths must be nonempty")


@dataclass
class GeneratorOutput:
    """Channel split of the shared tanh output; g_i / g_s / g_d per task."""

    g_i: torch.Tensor
    g_s: torch.Tensor
    g_d: torch.Tensor

    def for_task(self, task):
        return {"i": self.g_i, "s": self.g_s, "d": self.g_d}[task]


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.enc_channels
        downs = []
        c_in = 3
        for k, c_out in enumerate(enc):
            block = [nn.Conv2d(c_in, c_out, 4, stride=2, padding=1)]
            if k > 0:
                block.append(nn.BatchNorm2d(c_out))
            block.append(nn.LeakyReLU(0.2, inplace=True))
            downs.append(nn.Sequential(*block))
            c_in = c_out
        self.downs = nn.ModuleList(downs)

        ups = []
        dec_out = tuple(reversed(enc[:-1]))  # mirrored widths, bottleneck excluded
        c_in = enc[-1]
        for c_out in dec_out:
            ups.append(
                nn.Sequential(
                    nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1),
                    nn.BatchNorm2d(c_out),
                    nn.ReLU(inplace=True),
                )
            )
            c_in = c_out * 2 if cfg.skip else c_out
        self.ups = nn.ModuleList(ups)
        self.out_layer = nn.ConvTranspose2d(c_in, cfg.total_out_channels, 4, stride=2, padding=1)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != self.cfg.resolution:
            raise ValueError(
                f"expected B x 3 x {self.cfg.resolution} x {self.cfg.resolution} input, "
                f"got {tuple(x.shape)}"
            )
        skips = []
        h = x
        for down in self.downs:
            h = down(h)
            skips.append(h)
        for k, up in enumerate(self.ups):
            h = up(h)
            if self.cfg.skip:
                h = torch.cat([h, skips[-(k + 2)]], dim=1)
        out = torch.tanh(self.out_layer(h))
        c_i, c_s, c_d = self.cfg.out_channels
        return GeneratorOutput(
            g_i=out[:, :c_i],
            g_s=out[:, c_i : c_i + c_s],
            g_d=out[:, c_i + c_s :],
        )


class Discriminator(nn.Module):
    """Conditional patch discriminator over channel-concatenated (x, y) pairs."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        c_in = cfg.in_channels
        for k, c_out in enumerate(cfg.widths):
            layers.append(nn.Conv2d(c_in, c_out, 4, stride=2, padding=1))
            if k > 0:
                layers.append(nn.BatchNorm2d(c_out))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            c_in = c_out
        layers.append(nn.Conv2d(c_in, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x, y):
        if x.shape[0] != y.shape[0] or x.shape[2:] != y.shape[2:]:
            raise ValueError(f"condition {tuple(x.shape)} and candidate {tuple(y.shape)} disagree")
        h = torch.cat([x, y], dim=1)
        if h.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"pair has {h.shape[1]} channels, discriminator expects {self.cfg.in_channels}"
            )
        return torch.sigmoid(self.net(h))


def build_generator(cfg=None):
    return Generator(cfg or GeneratorConfig())


def build_discriminator(cfg):
    return Discriminator(cfg)


def task_channels(task, n_classes=10):
    """Output channel count of each task head."""
    return {"i": 3, "s": n_classes, "d": 5}[task]


def discriminator_config_for(task, n_classes=10, widths=(64, 128, 256, 512, 512)):
    """D_t sees the 3-channel condition image plus the task's output channels."""
    return DiscriminatorConfig(in_channels=3 + task_channels(task, n_classes), widths=widths)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())
