"""Alternating optimisation of the embedding network and the SR network.

Each outer step runs ``d_steps_per_g`` discriminator updates (SR frozen) and
then one SR update (embedding frozen) on L1 + alpha * contrastive loss.
"""

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import __version__
from .checkpoint import SCHEMA_VERSION, load_checkpoint, save_checkpoint
from .datapipe import PatchBatcher
from .errors import ConfigError, DimensionError, NumericAbort
from .losses import contrad_loss, l1_loss, pcl_total_loss
from .networks import EmbedNetConfig, SRBackboneConfig, build_embed, build_sr
from .sampling import make_negatives, make_positives
from .spectral import get_transform, transform_channels

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}
LOG_COLUMNS = ["step", "l1", "lcl", "lcld", "total"]


@dataclass
class TrainConfig:
    scale: int = 4
    lr_patch: int = 48
    batch_size: int = 16
    k_pos: int = 4
    k_neg: int = 4
    tau: float = 0.5
    alpha: float = 0.1
    loss_layers: int = 4
    transform: str = "haar"
    embedding_mode: str = "learned"
    use_pos_aug: bool = True
    use_neg_aug: bool = True
    steps: int = 1000
    learning_rate: float = 1e-4
    lr_decay_every: int = 200_000
    lr_decay_gamma: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    d_steps_per_g: int = 1
    grad_clip: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    n_resblocks: int = 4
    n_channels: int = 32
    embed_base_channels: int = 64
    embed_layers: int = 5
    spectral_norm: bool = False
    dtype: str = "float32"
    workers: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def embedding_kind(self):
        return self.embedding_mode.split(":", 1)[0]

    @property
    def frozen_path(self):
        kind, _, path = self.embedding_mode.partition(":")
        return path if kind == "frozen" else None

    @property
    def torch_dtype(self):
        return DTYPES[self.dtype]

    @property
    def contrastive_active(self):
        return (
            self.embedding_kind != "off"
            and self.alpha > 0
            and (self.use_pos_aug or self.use_neg_aug)
        )

    def validate(self):
        if self.embedding_kind not in ("learned", "frozen", "off"):
            raise ConfigError(f"embedding_mode must be learned, frozen:<path> or off, got {self.embedding_mode!r}")
        if self.embedding_kind == "frozen" and not self.frozen_path:
            raise ConfigError("embedding_mode=frozen needs a checkpoint path: frozen:<path>")
        if self.embedding_kind == "learned" and self.batch_size < 2:
            raise ConfigError("learned embedding needs batch_size >= 2 (real and fake batches must oppose)")
        if self.batch_size < 1 or self.lr_patch < 1 or self.steps < 0:
            raise ConfigError("batch_size, lr_patch must be positive and steps non-negative")
        if (self.lr_patch * self.scale) % 2:
            raise ConfigError("HR patch size must be even for the Haar transform")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigError(f"tau must be finite and > 0, got {self.tau}")
        if self.transform not in ("haar", "fft", "none"):
            raise ConfigError(f"transform must be haar, fft or none, got {self.transform!r}")
        if self.loss_layers < 1 or self.loss_layers > self.embed_layers:
            raise ConfigError("need 1 <= loss_layers <= embed_layers")
        embed_in = self.lr_patch * self.scale // (2 if self.transform == "haar" else 1)
        if self.embedding_kind != "off" and embed_in < 2**self.embed_layers:
            raise ConfigError(
                f"embedding input of {embed_in}px is too small for {self.embed_layers} stride-2 stages "
                f"(need >= {2**self.embed_layers}); raise lr_patch or lower embed_layers"
            )
        if self.k_pos < 0 or self.k_neg < 1:
            raise ConfigError("need k_pos >= 0 and k_neg >= 1")
        if self.d_steps_per_g < 0:
            raise ConfigError("d_steps_per_g must be >= 0")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        # constructing these validates scale/channels/depth
        self.sr_config()
        self.embed_config()

    def sr_config(self):
        return SRBackboneConfig(self.n_resblocks, self.n_channels, self.scale)

    def embed_config(self):
        return EmbedNetConfig(
            in_channels=transform_channels(self.transform),
            base_channels=self.embed_base_channels,
            n_layers=self.embed_layers,
            spectral_norm=self.spectral_norm,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(fields))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        clean = {}
        for k, v in d.items():
            clean[k] = _coerce(k, v, fields[k].type)
        try:
            return cls(**clean)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, overrides: dict):
        return TrainConfig.from_dict({**self.to_dict(), **overrides})


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _coerce(key, value, type_name):
    typ = _TYPES.get(type_name if isinstance(type_name, str) else type_name.__name__)
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if typ is int:
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, str) and value.lstrip("-").isdigit())):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if typ is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def parse_override(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    value = value.strip()
    try:
        value = json.loads(value)
    except json.JSONDecodeError:
        pass
    return key.strip(), value


@dataclass
class StepRecord:
    step: int
    l1: float
    lcl: float
    lcld: float
    total: float
    wall_ms: float = 0.0

    def row(self):
        return [self.step, repr(self.l1), repr(self.lcl), repr(self.lcld), repr(self.total)]


@dataclass
class TrainState:
    config: TrainConfig
    sr: torch.nn.Module
    embed: torch.nn.Module = None
    opt_g: torch.optim.Optimizer = None
    opt_d: torch.optim.Optimizer = None
    sample_rng: np.random.Generator = None
    step: int = 0
    d_updates: int = 0
    records: list = field(default_factory=list)

    @property
    def transform(self):
        return get_transform(self.config.transform)


def _adam(params, cfg):
    return torch.optim.Adam(
        params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=cfg.weight_decay
    )


def sample_rng_for(seed):
    # distinct from the data lanes, which use default_rng(seed ^ lane)
    return np.random.default_rng([int(seed), 0x5C1])


def init_state(cfg: TrainConfig) -> TrainState:
    dtype = cfg.torch_dtype
    sr = build_sr(cfg.sr_config(), cfg.seed, dtype)
    embed = None
    if cfg.embedding_kind == "learned":
        embed = build_embed(cfg.embed_config(), cfg.seed + 1, dtype)
    elif cfg.embedding_kind == "frozen":
        embed = load_embedding(cfg.frozen_path, dtype)
        if embed.config.in_channels != cfg.embed_config().in_channels:
            raise ConfigError(
                f"frozen embedding expects {embed.config.in_channels} input channels; "
                f"transform={cfg.transform} gives {cfg.embed_config().in_channels}"
            )
        if cfg.loss_layers > embed.config.n_layers:
            raise ConfigError("loss_layers exceeds the frozen embedding's stage count")
    state = TrainState(cfg, sr, embed, sample_rng=sample_rng_for(cfg.seed))
    state.opt_g = _adam(sr.parameters(), cfg)
    if cfg.embedding_kind == "learned":
        state.opt_d = _adam(embed.parameters(), cfg)
    if embed is not None and cfg.embedding_kind == "frozen":
        embed.requires_grad_(False)
    return state


def load_embedding(path, dtype=torch.float32):
    ckpt = load_checkpoint(path)
    if ckpt.get("embed_state") is None:
        raise ConfigError(f"{path} holds no embedding network")
    econf = EmbedNetConfig(**ckpt["embed_config"])
    net = build_embed(econf, 0, dtype)
    net.load_state_dict(ckpt["embed_state"])
    return net.to(dtype)


def current_lr(cfg, step):
    return cfg.learning_rate * cfg.lr_decay_gamma ** (step // cfg.lr_decay_every)


def _set_lr(opt, lr):
    if opt is not None:
        for g in opt.param_groups:
            g["lr"] = lr


def _check_finite(value, name, step, indices):
    if not torch.isfinite(value).all():
        raise NumericAbort(f"non-finite {name} at step {step}", step=step, batch_indices=indices)


def _clip(params, cfg):
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)


def d_step(state: TrainState, batch):
    """One update of the embedding network on the contrastive discriminator loss."""
    cfg = state.config
    if cfg.embedding_kind != "learned":
        raise ConfigError("d_step requires embedding_mode=learned")
    lr, hr = batch[0], batch[1]
    if lr.shape[0] < 2:
        raise ConfigError("discriminator step needs a batch of at least 2")
    indices = batch[2] if len(batch) > 2 else []
    with torch.no_grad():
        sr = state.sr(lr)
    t = state.transform
    state.embed.requires_grad_(True)
    _, scores = state.embed(torch.cat([t(hr), t(sr)]), taps=0)
    n = hr.shape[0]
    loss = contrad_loss(scores[:n], scores[n:])
    _check_finite(loss, "lcld", state.step, indices)
    state.opt_d.zero_grad(set_to_none=True)
    loss.backward()
    _clip(state.embed.parameters(), cfg)
    state.opt_d.step()
    state.opt_d.zero_grad(set_to_none=True)
    state.d_updates += 1
    return state, float(loss.detach())


def build_samples(state, lr, hr):
    """Positive and negative image batches: lists of N x C x H x W tensors."""
    cfg = state.config
    rng = state.sample_rng
    k_pos = cfg.k_pos if cfg.use_pos_aug else 0
    pos_sets, neg_sets = [], []
    fallback = None
    if not cfg.use_neg_aug:
        # conventional negative: the upsampled degraded input
        fallback = F.interpolate(lr, size=hr.shape[-2:], mode="bicubic", align_corners=False).clamp(0, 1)
    for i in range(hr.shape[0]):
        pos_sets.append(make_positives(hr[i], k_pos, rng))
        neg_sets.append(make_negatives(hr[i], cfg.k_neg, rng) if cfg.use_neg_aug else [fallback[i]])
    positives = [torch.stack(s) for s in zip(*pos_sets)]
    negatives = [torch.stack(s) for s in zip(*neg_sets)]
    return positives, negatives


def contrastive_term(state, sr, positives, negatives):
    cfg = state.config
    t = state.transform
    taps = cfg.loss_layers
    anchors = state.embed.features(t(sr), taps)
    n = sr.shape[0]
    with torch.no_grad():
        feats = state.embed.features(t(torch.cat(positives + negatives)), taps)
    chunks = [f.split(n) for f in feats]  # per layer: tuple over samples
    pos_pyr = [[chunks[l][j] for l in range(taps)] for j in range(len(positives))]
    neg_pyr = [[chunks[l][len(positives) + j] for l in range(taps)] for j in range(len(negatives))]
    return pcl_total_loss(anchors, pos_pyr, neg_pyr, cfg.tau)


def g_step(state: TrainState, batch):
    """One update of the SR network on L1 + alpha * contrastive loss."""
    cfg = state.config
    lr, hr = batch[0], batch[1]
    indices = batch[2] if len(batch) > 2 else []
    sr = state.sr(lr)
    if sr.shape != hr.shape:
        raise DimensionError(f"SR output {tuple(sr.shape)} does not match HR {tuple(hr.shape)}")
    l1 = l1_loss(sr, hr)
    lcl = torch.zeros((), dtype=sr.dtype)
    if cfg.contrastive_active:
        state.embed.requires_grad_(False)
        positives, negatives = build_samples(state, lr, hr)
        lcl = contrastive_term(state, sr, positives, negatives)
    total = l1 + cfg.alpha * lcl
    for name, v in (("l1", l1), ("lcl", lcl), ("total", total)):
        _check_finite(v, name, state.step, indices)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    _clip(state.sr.parameters(), cfg)
    state.opt_g.step()
    state.opt_g.zero_grad(set_to_none=True)
    record = StepRecord(state.step, float(l1.detach()), float(lcl.detach()), 0.0, float(total.detach()))
    return state, record


def train_step(state: TrainState, batch) -> StepRecord:
    cfg = state.config
    t0 = time.perf_counter()
    lr_now = current_lr(cfg, state.step)
    _set_lr(state.opt_g, lr_now)
    _set_lr(state.opt_d, lr_now)
    lcld = 0.0
    if cfg.embedding_kind == "learned":
        for _ in range(cfg.d_steps_per_g):
            state, lcld = d_step(state, batch)
    state, record = g_step(state, batch)
    record.lcld = lcld
    record.wall_ms = (time.perf_counter() - t0) * 1000
    state.records.append(record)
    state.step += 1
    return record


def checkpoint_payload(state: TrainState, batcher=None):
    cfg = state.config
    return {
        "config": cfg.to_dict(),
        "sr_config": dataclasses.asdict(state.sr.config),
        "sr_state": state.sr.state_dict(),
        "embed_config": dataclasses.asdict(state.embed.config) if state.embed is not None else None,
        "embed_state": state.embed.state_dict() if state.embed is not None else None,
        "opt_g": state.opt_g.state_dict() if state.opt_g is not None else None,
        "opt_d": state.opt_d.state_dict() if state.opt_d is not None else None,
        "step": state.step,
        "d_updates": state.d_updates,
        "sample_rng": state.sample_rng.bit_generator.state,
        "lane_rngs": batcher.lane_states() if batcher is not None else None,
        "version": __version__,
    }


def restore_state(ckpt, cfg=None) -> TrainState:
    cfg = cfg or TrainConfig.from_dict(ckpt["config"])
    state = init_state(cfg)
    state.sr.load_state_dict(ckpt["sr_state"])
    if state.embed is not None and ckpt.get("embed_state") is not None and cfg.embedding_kind == "learned":
        state.embed.load_state_dict(ckpt["embed_state"])
    if ckpt.get("opt_g") is not None:
        state.opt_g.load_state_dict(ckpt["opt_g"])
    if state.opt_d is not None and ckpt.get("opt_d") is not None:
        state.opt_d.load_state_dict(ckpt["opt_d"])
    state.step = int(ckpt["step"])
    state.d_updates = int(ckpt.get("d_updates", 0))
    state.sample_rng.bit_generator.state = ckpt["sample_rng"]
    return state


def load_sr(path, dtype=None):
    ckpt = load_checkpoint(path)
    cfg = SRBackboneConfig(**ckpt["sr_config"])
    dtype = dtype or DTYPES[ckpt["config"].get("dtype", "float32")]
    net = build_sr(cfg, 0, dtype)
    net.load_state_dict(ckpt["sr_state"])
    return net.eval()


def run_manifest(cfg, dataset=None):
    return {
        "config": cfg.to_dict(),
        "tool_version": __version__,
        "seed": cfg.seed,
        "schema_version": SCHEMA_VERSION,
        "dataset": getattr(dataset, "name", None),
        "dataset_checksums": _checksums(dataset),
        "notes": {
            "tau": "not given by the method description; pinned default 0.5",
            "learning_rate": "EDSR default 1e-4, halved every lr_decay_every steps",
        },
    }


def _checksums(dataset):
    try:
        return dataset.checksums()
    except (AttributeError, OSError):
        return {}


def prepare_run_dir(out_dir, force=False):
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    for stale in list(out.glob("ckpt_*.bin")) + [out / "final.bin", out / "log.csv", out / "timing.csv"]:
        if stale.exists():
            stale.unlink()
    return out


def train(cfg: TrainConfig, dataset, out_dir, resume=None, force=False, progress=None) -> TrainState:
    """Run the full loop, writing the run directory; returns the final state.

    Layout: ``config.snapshot.json``, ``log.csv`` (step, l1, lcl, lcld, total),
    ``timing.csv`` (wall-clock per step), ``ckpt_<step>.bin``, ``final.bin``.
    """
    out = Path(out_dir)
    if resume is None:
        out = prepare_run_dir(out, force)
    else:
        out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot.json").write_text(json.dumps(run_manifest(cfg, dataset), indent=2, sort_keys=True))

    batcher = PatchBatcher(
        dataset, cfg.lr_patch, cfg.batch_size, cfg.seed, workers=cfg.workers, dtype=cfg.torch_dtype
    )
    if resume is not None:
        ckpt = load_checkpoint(resume)
        state = restore_state(ckpt, cfg)
        if ckpt.get("lane_rngs") is not None:
            batcher.set_lane_states(ckpt["lane_rngs"])
    else:
        state = init_state(cfg)

    fresh = resume is None or not (out / "log.csv").exists()
    mode = "w" if fresh else "a"
    with open(out / "log.csv", mode, newline="") as log_fh, open(out / "timing.csv", mode, newline="") as t_fh:
        log_w, t_w = csv.writer(log_fh), csv.writer(t_fh)
        if fresh:
            log_w.writerow(LOG_COLUMNS)
            t_w.writerow(["step", "wall_ms"])
        try:
            while state.step < cfg.steps:
                lr, hr, idx = batcher.next_batch()
                record = train_step(state, (lr, hr, idx))
                log_w.writerow(record.row())
                t_w.writerow([record.step, f"{record.wall_ms:.3f}"])
                if progress is not None:
                    progress(record)
                if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0 and state.step < cfg.steps:
                    save_checkpoint(out / f"ckpt_{state.step}.bin", checkpoint_payload(state, batcher))
        except NumericAbort as exc:
            dump = {"step": exc.step, "batch_indices": exc.batch_indices, "message": str(exc)}
            (out / "abort.json").write_text(json.dumps(dump, indent=2))
            log.error("aborting: %s (batch indices %s)", exc, exc.batch_indices)
            raise
        finally:
            batcher.close()
    save_checkpoint(out / "final.bin", checkpoint_payload(state, batcher))
    return state


@torch.no_grad()
def contrastive_loss_value(sr_net, embed_net, cfg: TrainConfig, lr, hr, seed=0):
    """L_CL of ``sr_net`` outputs under a fixed embedding and fixed sample draws."""
    state = TrainState(cfg, sr_net, embed_net, sample_rng=sample_rng_for(seed))
    sr = sr_net(lr)
    positives, negatives = build_samples(state, lr, hr)
    return float(contrastive_term(state, sr, positives, negatives))


def sr_upscaler(net, dtype=None):
    """Wrap a network as ``numpy HxWx3 -> numpy HxWx3`` with the output clamped."""
    dtype = dtype or next(net.parameters()).dtype

    @torch.no_grad()
    def run(lr):
        x = torch.from_numpy(np.ascontiguousarray(lr.transpose(2, 0, 1)))[None].to(dtype)
        y = net(x).clamp(0, 1)[0]
        return y.to(torch.float64).numpy().transpose(1, 2, 0)

    return run
