"""SR generator and the embedding/discriminator network."""

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class SRBackboneConfig:
    n_resblocks: int = 4
    n_channels: int = 32
    scale: int = 4

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.n_channels < 8:
            raise ConfigError("n_channels must be >= 8")
        if self.n_resblocks < 1:
            raise ConfigError("n_resblocks must be >= 1")


@dataclass(frozen=True)
class EmbedNetConfig:
    in_channels: int = 9
    base_channels: int = 64
    n_layers: int = 5
    spectral_norm: bool = False

    def __post_init__(self):
        if self.in_channels < 1 or self.base_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")

    def stage_channels(self):
        return [self.base_channels * min(2**i, 8) for i in range(self.n_layers)]


def conv3x3(cin, cout):
    return nn.Conv2d(cin, cout, 3, padding=1)


class ResBlock(nn.Module):
    def __init__(self, channels, res_scale=1.0):
        super().__init__()
        self.body = nn.Sequential(conv3x3(channels, channels), nn.ReLU(inplace=True), conv3x3(channels, channels))
        self.res_scale = res_scale

    def forward(self, x):
        return x + self.body(x) * self.res_scale


class Upsampler(nn.Sequential):
    def __init__(self, scale, channels):
        layers = []
        if scale in (2, 4):
            for _ in range(scale // 2):
                layers += [conv3x3(channels, 4 * channels), nn.PixelShuffle(2)]
        elif scale == 3:
            layers += [conv3x3(channels, 9 * channels), nn.PixelShuffle(3)]
        else:
            raise ConfigError(f"unsupported scale {scale}")
        super().__init__(*layers)


class SRNet(nn.Module):
    """EDSR-style generator: head, plain residual blocks, global skip, pixel shuffle, tail.

    Output is unclamped; callers clamp at evaluation time.
    """

    def __init__(self, config: SRBackboneConfig = SRBackboneConfig()):
        super().__init__()
        self.config = config
        c = config.n_channels
        self.head = conv3x3(3, c)
        self.body = nn.Sequential(*[ResBlock(c) for _ in range(config.n_resblocks)])
        self.upsample = Upsampler(config.scale, c)
        self.tail = conv3x3(c, 3)

    def forward(self, lr):
        if lr.dim() != 4 or lr.shape[1] != 3:
            raise DimensionError(f"SRNet expects N x 3 x h x w input, got {tuple(lr.shape)}")
        x = self.head(lr)
        x = x + self.body(x)
        return self.tail(self.upsample(x))


class EmbedNet(nn.Module):
    """Strided 4x4 conv stack (LeakyReLU 0.2) with tappable stage outputs and a scalar head.

    Each stage halves the spatial size: a 96x96 input gives 48, 24, 12, 6, 3.
    The score head (global average pool + affine) sits after the last stage,
    so the tapped features are pre-head.
    """

    def __init__(self, config: EmbedNetConfig = EmbedNetConfig()):
        super().__init__()
        self.config = config
        chans = [config.in_channels] + config.stage_channels()
        stages = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            conv = nn.Conv2d(cin, cout, 4, stride=2, padding=1)
            if config.spectral_norm:
                conv = nn.utils.parametrizations.spectral_norm(conv)
            stages.append(nn.Sequential(conv, nn.LeakyReLU(0.2, inplace=True)))
        self.stages = nn.ModuleList(stages)
        self.head = nn.Linear(chans[-1], 1)

    def forward(self, x, taps: int = 4):
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"EmbedNet configured for {self.config.in_channels} input channels, got {tuple(x.shape)}"
            )
        if taps > len(self.stages):
            raise ConfigError(f"taps={taps} exceeds the {len(self.stages)} available stages")
        pyramid = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < taps:
                pyramid.append(x)
        scores = self.head(x.mean(dim=(-2, -1))).squeeze(1)
        return pyramid, scores

    def features(self, x, taps: int = 4):
        """Only the first ``taps`` stage outputs; skips the unused deeper stages."""
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"EmbedNet configured for {self.config.in_channels} input channels, got {tuple(x.shape)}"
            )
        if taps > len(self.stages):
            raise ConfigError(f"taps={taps} exceeds the {len(self.stages)} available stages")
        pyramid = []
        for stage in self.stages[:taps]:
            x = stage(x)
            pyramid.append(x)
        return pyramid


def init_parameters(module: nn.Module, seed: int) -> nn.Module:
    """Kaiming-uniform (fan-in) conv/linear weights and zero biases, seeded.

    The generator uses negative slope sqrt(5) (bound 1/sqrt(fan_in)), the
    PyTorch conv default; ReLU gain over-amplifies through the residual trunk.
    The embedding network uses its LeakyReLU slope of 0.2.
    """
    gen = torch.Generator().manual_seed(int(seed))
    leaky = isinstance(module, EmbedNet)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                weight = m.parametrizations.weight.original if hasattr(m, "parametrizations") else m.weight
                if leaky:
                    nn.init.kaiming_uniform_(weight, a=0.2, mode="fan_in", nonlinearity="leaky_relu", generator=gen)
                else:
                    nn.init.kaiming_uniform_(weight, a=math.sqrt(5), mode="fan_in", nonlinearity="leaky_relu", generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
    return module


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def build_sr(config: SRBackboneConfig, seed: int, dtype=torch.float32) -> SRNet:
    return init_parameters(SRNet(config), seed).to(dtype)


def build_embed(config: EmbedNetConfig, seed: int, dtype=torch.float32) -> EmbedNet:
    # spectral norm draws its power-iteration vectors from the global generator
    with torch.random.fork_rng():
        torch.manual_seed(int(seed))
        net = EmbedNet(config)
    return init_parameters(net, seed).to(dtype)


def config_dict(cfg):
    return asdict(cfg)
