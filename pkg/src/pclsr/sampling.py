"""Positive/negative sample generation and paired geometric augmentation.

Images here are torch tensors in channel-first layout (C x H x W, values in
[0, 1]). Randomness always comes from an explicit ``numpy.random.Generator``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, ParameterError

KERNEL_SIZES = (3, 5, 7, 9, 11)
SIGMA_RANGE = (0.3, 1.5)
STRENGTH_RANGE = (0.2, 1.0)


@dataclass(frozen=True)
class KernelSpec:
    kind: str  # "gaussian_blur" | "unsharp"
    size: int
    sigma: float
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian_blur", "unsharp"):
            raise ParameterError(f"unknown kernel kind {self.kind!r}")
        if self.size not in KERNEL_SIZES:
            raise ParameterError(f"kernel size must be one of {KERNEL_SIZES}, got {self.size}")
        if not SIGMA_RANGE[0] <= self.sigma <= SIGMA_RANGE[1]:
            raise ParameterError(f"sigma {self.sigma} outside {SIGMA_RANGE}")
        if self.strength < 0:
            raise ParameterError("strength must be >= 0")

    def gaussian(self, dtype=torch.float64) -> torch.Tensor:
        """Normalised size x size Gaussian kernel."""
        c = (self.size - 1) / 2
        r = torch.arange(self.size, dtype=torch.float64) - c
        g = torch.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * self.sigma**2))
        return (g / g.sum()).to(dtype)

    def to_dict(self):
        return asdict(self)


@dataclass
class ContrastiveSampleSet:
    anchor_hr: torch.Tensor
    positives: list
    negatives: list
    positive_specs: list = field(default_factory=list)
    negative_specs: list = field(default_factory=list)


def sample_blur_kernel(rng: np.random.Generator) -> KernelSpec:
    size = int(rng.choice(KERNEL_SIZES))
    sigma = float(rng.uniform(*SIGMA_RANGE))
    return KernelSpec("gaussian_blur", size, sigma)


def gaussian_blur(img: torch.Tensor, spec: KernelSpec) -> torch.Tensor:
    """Depthwise Gaussian filtering with reflect padding. ``img`` is CxHxW or NxCxHxW."""
    squeeze = img.dim() == 3
    x = img[None] if squeeze else img
    if x.dim() != 4:
        raise DimensionError(f"expected CxHxW or NxCxHxW, got {tuple(img.shape)}")
    c = x.shape[1]
    k = spec.gaussian(x.dtype).to(x.device)
    weight = k.expand(c, 1, spec.size, spec.size)
    pad = spec.size // 2
    out = F.conv2d(F.pad(x, (pad, pad, pad, pad), mode="reflect"), weight, groups=c)
    return out[0] if squeeze else out


def unsharp(img: torch.Tensor, spec: KernelSpec, clamp: bool = True) -> torch.Tensor:
    out = img + spec.strength * (img - gaussian_blur(img, spec))
    return out.clamp(0, 1) if clamp else out


def _check_image(hr):
    if hr.dim() != 3:
        raise DimensionError(f"expected a CxHxW image, got {tuple(hr.shape)}")


def draw_negatives(hr, k, rng):
    _check_image(hr)
    if k < 1:
        raise ConfigError("at least one negative is required by the contrastive denominator")
    specs = [sample_blur_kernel(rng) for _ in range(k)]
    return [gaussian_blur(hr, s).clamp(0, 1) for s in specs], specs


def draw_positives(hr, k, rng):
    _check_image(hr)
    if k < 0:
        raise ConfigError("k must be >= 0")
    specs = []
    for _ in range(k):
        base = sample_blur_kernel(rng)
        strength = float(rng.uniform(*STRENGTH_RANGE))
        specs.append(KernelSpec("unsharp", base.size, base.sigma, strength))
    return [hr] + [unsharp(hr, s) for s in specs], specs


def make_negatives(hr: torch.Tensor, k: int, rng: np.random.Generator) -> list:
    """``k`` slightly blurred copies of ``hr`` (hard negatives)."""
    return draw_negatives(hr, k, rng)[0]


def make_positives(hr: torch.Tensor, k: int, rng: np.random.Generator) -> list:
    """``[hr]`` followed by ``k`` unsharp-masked copies; ``k=0`` gives ``[hr]``."""
    return draw_positives(hr, k, rng)[0]


def make_sample_set(hr, k_pos, k_neg, rng) -> ContrastiveSampleSet:
    positives, pspecs = draw_positives(hr, k_pos, rng)
    negatives, nspecs = draw_negatives(hr, k_neg, rng)
    return ContrastiveSampleSet(hr, positives, negatives, pspecs, nspecs)


def apply_transform(img: torch.Tensor, hflip: bool, rot: int) -> torch.Tensor:
    """Horizontal flip (optional) followed by ``rot`` quarter turns in the H-W plane."""
    if hflip:
        img = img.flip(-1)
    return torch.rot90(img, rot % 4, dims=(-2, -1)) if rot % 4 else img


def geometric_augment(lr: torch.Tensor, hr: torch.Tensor, rng: np.random.Generator):
    lh, lw = lr.shape[-2:]
    hh, hw = hr.shape[-2:]
    if lr.shape[:-2] != hr.shape[:-2] or hh % lh or hw % lw or hh // lh != hw // lw:
        raise DimensionError(f"LR {tuple(lr.shape)} and HR {tuple(hr.shape)} are not scale-aligned")
    hflip = bool(rng.random() < 0.5)
    rot = int(rng.integers(4))
    return apply_transform(lr, hflip, rot), apply_transform(hr, hflip, rot)
