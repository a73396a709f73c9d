"""Contrastive, discriminator and reconstruction losses.

Every softmax-form loss is written as ``-(z_pos - logsumexp(z_pos, z_neg...))``
so large logits (small temperatures) never overflow.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, DimensionError, ParameterError

COSINE_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    tau: float = 0.5

    def __post_init__(self):
        if not (self.alpha >= 0 and self.alpha < float("inf")):
            raise ParameterError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not (self.tau > 0 and self.tau < float("inf")):
            raise ParameterError(f"tau must be finite and > 0, got {self.tau}")


def _check_tau(tau):
    if not tau > 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")


def _softmax_nll(pos_logit, neg_logits):
    """``-log(e^p / (e^p + sum e^n))`` with ``neg_logits`` stacked on dim 0."""
    logits = torch.cat([pos_logit.unsqueeze(0), neg_logits], dim=0)
    return torch.logsumexp(logits, dim=0) - pos_logit


def info_nce(anchor, positive, negatives, tau):
    return sup_con(anchor, [positive], negatives, tau)


def sup_con(anchor, positives, negatives, tau):
    """Mean over positives of the InfoNCE term; each positive sits in its own denominator."""
    _check_tau(tau)
    if len(negatives) == 0:
        raise ConfigError("contrastive loss needs at least one negative")
    if len(positives) == 0:
        raise ConfigError("contrastive loss needs at least one positive")
    anchor = torch.as_tensor(anchor)
    pos = torch.stack([torch.as_tensor(p) for p in positives])
    neg = torch.stack([torch.as_tensor(n) for n in negatives])
    if pos.shape[1:] != anchor.shape or neg.shape[1:] != anchor.shape:
        raise DimensionError("anchor, positive and negative vectors must share a dimension")
    neg_logits = neg @ anchor / tau
    terms = [_softmax_nll(p @ anchor / tau, neg_logits) for p in pos]
    return torch.stack(terms).mean()


def pixel_cosine(fx: torch.Tensor, fy: torch.Tensor, eps: float = COSINE_EPS) -> torch.Tensor:
    """Mean over pixels of the cosine between channel vectors.

    Works on C x H x W maps (scalar result) or N x C x H x W batches (length-N
    result). ``eps`` keeps zero vectors finite and biases their similarity to 0.
    """
    if fx.shape != fy.shape:
        raise DimensionError(f"feature shapes differ: {tuple(fx.shape)} vs {tuple(fy.shape)}")
    if fx.dim() not in (3, 4):
        raise DimensionError(f"expected CxHxW or NxCxHxW, got {tuple(fx.shape)}")
    dot = (fx * fy).sum(dim=-3)
    # sum-of-squares + sqrt has an undefined gradient at zero; clamp the square before the root
    tiny = torch.finfo(fx.dtype).tiny
    nx = fx.pow(2).sum(dim=-3).clamp_min(tiny).sqrt()
    ny = fy.pow(2).sum(dim=-3).clamp_min(tiny).sqrt()
    return (dot / (nx * ny + eps)).mean(dim=(-2, -1))


def _similarity_loss(s_pos, s_neg, tau):
    """s_pos: P x ..., s_neg: K x ...; returns the per-sample mean over positives."""
    _check_tau(tau)
    if s_neg.shape[0] == 0:
        raise ConfigError("contrastive loss needs at least one negative")
    if s_pos.shape[0] == 0:
        raise ConfigError("contrastive loss needs at least one positive")
    neg_logits = s_neg / tau
    terms = torch.stack([_softmax_nll(s / tau, neg_logits) for s in s_pos])
    return terms.mean(dim=0)


def pcl_layer_loss(f_l, pos_l, neg_l, tau):
    """Per-layer contrastive loss on feature maps.

    ``f_l`` is C x H x W (returns a scalar) or N x C x H x W (returns N values);
    ``pos_l`` / ``neg_l`` are sequences of maps shaped like ``f_l``.
    """
    if len(neg_l) == 0:
        raise ConfigError("contrastive loss needs at least one negative")
    s_pos = torch.stack([pixel_cosine(f_l, p) for p in pos_l]) if len(pos_l) else f_l.new_empty(0)
    s_neg = torch.stack([pixel_cosine(f_l, n) for n in neg_l])
    return _similarity_loss(s_pos, s_neg, tau)


def pcl_total_loss(anchors, positives, negatives, tau):
    """Mean of the per-layer loss over batch samples and layers.

    ``anchors`` is a list of L tensors (N x C_l x H_l x W_l). ``positives`` and
    ``negatives`` are lists of pyramids congruent with ``anchors``. Those two
    are detached: gradients flow through the anchor only.
    """
    n_layers = len(anchors)
    if n_layers == 0:
        raise DimensionError("empty feature pyramid")
    for pyr in list(positives) + list(negatives):
        if len(pyr) != n_layers or any(a.shape != b.shape for a, b in zip(anchors, pyr)):
            raise DimensionError("feature pyramids disagree in layer count or shape")
    total = 0.0
    for l, f in enumerate(anchors):
        per_sample = pcl_layer_loss(
            f,
            [p[l].detach() for p in positives],
            [n[l].detach() for n in negatives],
            tau,
        )
        total = total + per_sample.mean()
    return total / n_layers


def contrad_loss(scores_real, scores_fake):
    """One-against-a-batch discriminator loss (to minimise).

    Each real score competes against every fake score in a softmax, and each
    negated fake score against every negated real score.
    """
    real = torch.as_tensor(scores_real).reshape(-1)
    fake = torch.as_tensor(scores_fake).reshape(-1)
    if real.numel() == 0 or fake.numel() == 0:
        raise ConfigError("discriminator loss needs at least one real and one fake score")
    fake_rows = fake.expand(real.numel(), -1)  # R x F
    real_term = torch.logsumexp(torch.cat([real[:, None], fake_rows], dim=1), dim=1) - real
    real_rows = (-real).expand(fake.numel(), -1)  # F x R
    fake_term = torch.logsumexp(torch.cat([-fake[:, None], real_rows], dim=1), dim=1) + fake
    return real_term.mean() + fake_term.mean()


# keep the conventional spelling available too
contraD_loss = contrad_loss


def l1_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    if sr.shape != hr.shape:
        raise DimensionError(f"SR {tuple(sr.shape)} and HR {tuple(hr.shape)} differ in shape")
    return F.l1_loss(sr, hr)


def sr_total_loss(l1, lcl, weights: LossWeights = LossWeights()):
    return l1 + weights.alpha * lcl
