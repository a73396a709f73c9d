"""Single-level orthonormal Haar analysis/synthesis and frequency maps.

For every non-overlapping 2x2 block ``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2
    LH = (a + b - c - d) / 2
    HL = (a - b + c - d) / 2
    HH = (a - b - c + d) / 2

The stacked high-frequency map fed to the embedding network is
``cat([LH, HL, HH], dim=1)``; checkpoints depend on that channel order.
"""

from typing import NamedTuple

import torch

from .errors import DimensionError, ParameterError


class SubbandSet(NamedTuple):
    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor


def _check_even(x: torch.Tensor):
    if x.dim() != 4:
        raise DimensionError(f"expected a NxCxHxW tensor, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"Haar transform needs even spatial size, got {h}x{w}")


def haar_forward(x: torch.Tensor) -> SubbandSet:
    _check_even(x)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return SubbandSet(
        ll=(a + b + c + d) / 2,
        lh=(a + b - c - d) / 2,
        hl=(a - b + c - d) / 2,
        hh=(a - b - c + d) / 2,
    )


def haar_inverse(s: SubbandSet) -> torch.Tensor:
    ll, lh, hl, hh = s
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise DimensionError(
            "subband shapes disagree: "
            + ", ".join(str(tuple(t.shape)) for t in (ll, lh, hl, hh))
        )
    n, c, h, w = ll.shape
    out = ll.new_empty((n, c, 2 * h, 2 * w))
    # the analysis matrix is symmetric and orthonormal, so it is its own inverse
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[..., 0::2, 1::2] = (ll + lh - hl - hh) / 2
    out[..., 1::2, 0::2] = (ll - lh + hl - hh) / 2
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def hw_stack(x: torch.Tensor) -> torch.Tensor:
    """Return LH, HL, HH stacked on the channel axis (N x 3C x H/2 x W/2)."""
    s = haar_forward(x)
    return torch.cat([s.lh, s.hl, s.hh], dim=1)


def fft_highfreq(x: torch.Tensor) -> torch.Tensor:
    """Centred log-magnitude spectrum ``log(1 + |FFT2(x)|)`` per channel."""
    if x.dim() != 4:
        raise DimensionError(f"expected a NxCxHxW tensor, got shape {tuple(x.shape)}")
    if min(x.shape[-2:]) < 8:
        raise DimensionError(f"FFT map needs H, W >= 8, got {tuple(x.shape[-2:])}")
    if not torch.isfinite(x).all():
        raise ParameterError("non-finite values in FFT input")
    spec = torch.fft.fftshift(torch.fft.fft2(x), dim=(-2, -1))
    return torch.log1p(spec.abs())


TRANSFORMS = {
    "haar": hw_stack,
    "fft": fft_highfreq,
    "none": lambda x: x,
}


def get_transform(name: str):
    try:
        return TRANSFORMS[name]
    except KeyError:
        raise ParameterError(f"unknown transform {name!r}; choose from {sorted(TRANSFORMS)}") from None


def transform_channels(name: str, in_channels: int = 3) -> int:
    return 3 * in_channels if name == "haar" else in_channels
