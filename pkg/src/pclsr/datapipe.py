"""Image I/O, bicubic degradation, patch extraction and benchmark loading.

Images are float64 ``H x W x 3`` numpy arrays in [0, 1] (RGB). Training
batches leave this module as ``N x 3 x h x w`` torch tensors.
"""

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DimensionError, IntegrityError, ParameterError
from .sampling import geometric_augment

log = logging.getLogger(__name__)

DATA_ROOT_ENV = "PCLSR_DATA_ROOT"

BENCHMARKS = {
    "set5": ("Set5", 5),
    "set14": ("Set14", 14),
    "b100": ("B100", 100),
    "urban100": ("Urban100", 100),
    "manga109": ("Manga109", 109),
}

# canonical image names, used to point at missing files in integrity errors
KNOWN_STEMS = {
    "set5": ["baby", "bird", "butterfly", "head", "woman"],
    "set14": [
        "baboon", "barbara", "bridge", "coastguard", "comic", "face", "flowers",
        "foreman", "lenna", "man", "monarch", "pepper", "ppt3", "zebra",
    ],
}


# --- I/O -------------------------------------------------------------------

def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid, as if the image had been stored as PNG."""
    return to_uint8(img).astype(np.float64) / 255.0


def write_png(path, img: np.ndarray):
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)


def mod_crop(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]


# --- bicubic ---------------------------------------------------------------

def cubic(x, a=-0.5):
    ax = np.abs(x)
    ax2, ax3 = ax**2, ax**3
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense ``out_len x in_len`` interpolation matrix for one axis.

    Pixel-centre aligned sampling; when shrinking, the kernel is stretched by
    the inverse scale. Out-of-range taps are clamped to the edge pixel.
    """
    scale = out_len / in_len
    width = 4.0
    if scale < 1 and antialias:
        kernel = lambda t: scale * cubic(scale * t)  # noqa: E731
        width = width / scale
    else:
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 1, in_len).astype(np.int64) - 1
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, idx.ravel()), weights.ravel())
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Separable cubic-convolution resize (a = -0.5) of an H x W [x C] image."""
    if out_h <= 0 or out_w <= 0:
        raise ParameterError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.astype(np.float64, copy=True)
    rh = resize_matrix(h, out_h, antialias)
    rw = resize_matrix(w, out_w, antialias)
    out = np.tensordot(rh, img.astype(np.float64), axes=(1, 0))
    out = np.tensordot(rw, out, axes=(1, 1)).swapaxes(0, 1)
    return np.ascontiguousarray(out)


def synthesize_lr(hr: np.ndarray, scale: int, quantized: bool = True) -> np.ndarray:
    h, w = hr.shape[:2]
    if h % scale or w % scale:
        raise DimensionError(f"HR size {h}x{w} is not a multiple of scale {scale}")
    lr = bicubic_resize(hr, h // scale, w // scale)
    return quantize(lr) if quantized else np.clip(lr, 0, 1)


def bicubic_upscale(lr: np.ndarray, scale: int, quantized: bool = True) -> np.ndarray:
    h, w = lr.shape[:2]
    sr = np.clip(bicubic_resize(lr, h * scale, w * scale), 0, 1)
    return quantize(sr) if quantized else sr


# --- paired datasets -------------------------------------------------------

class PatchTooSmall(ValueError):
    pass


@dataclass
class PatchPair:
    lr_patch: np.ndarray
    hr_patch: np.ndarray
    source_index: int
    top: int
    left: int


class PairedDataset:
    """HR images with optional parallel LR files; LR is synthesised when absent."""

    def __init__(self, hr_paths, lr_paths=None, scale=4, name="custom", cache=True):
        self.hr_paths = [Path(p) for p in hr_paths]
        self.lr_paths = None if lr_paths is None else [Path(p) for p in lr_paths]
        if self.lr_paths is not None and len(self.lr_paths) != len(self.hr_paths):
            raise IntegrityError("HR and LR path lists differ in length")
        self.scale = scale
        self.name = name
        self._cache = {} if cache else None

    def __len__(self):
        return len(self.hr_paths)

    def stem(self, i):
        return self.hr_paths[i].stem

    def load_pair(self, i):
        """``(lr, hr)`` for image ``i``; HR mod-cropped to a multiple of the scale."""
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        hr = mod_crop(read_png(self.hr_paths[i]), self.scale)
        if self.lr_paths is not None:
            lr = read_png(self.lr_paths[i])
            want = (hr.shape[0] // self.scale, hr.shape[1] // self.scale)
            if lr.shape[:2] != want:
                raise IntegrityError(
                    f"{self.lr_paths[i]}: LR size {lr.shape[:2]} does not match HR/scale {want}"
                )
        else:
            lr = synthesize_lr(hr, self.scale)
        if self._cache is not None:
            self._cache[i] = (lr, hr)
        return lr, hr

    def __getitem__(self, i):
        return self.load_pair(i)

    def checksums(self):
        import hashlib

        out = {}
        for p in self.hr_paths:
            out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        return out

    @classmethod
    def from_arrays(cls, hr_images, scale=4, name="memory"):
        """In-memory dataset, mostly for tests and toy runs."""
        ds = cls([Path(f"{name}_{i:04d}.png") for i in range(len(hr_images))], scale=scale, name=name)
        for i, hr in enumerate(hr_images):
            hr = mod_crop(np.asarray(hr, dtype=np.float64), scale)
            ds._cache[i] = (synthesize_lr(hr, scale), hr)
        return ds


def extract_patch_pair(lr, hr, scale, p, rng, source_index=0) -> PatchPair:
    lh, lw = lr.shape[:2]
    if hr.shape[0] != lh * scale or hr.shape[1] != lw * scale:
        raise DimensionError(f"HR {hr.shape[:2]} is not scale x LR {lr.shape[:2]}")
    if lh < p or lw < p:
        raise PatchTooSmall(f"image {source_index} ({lh}x{lw} LR) is smaller than patch {p}")
    y = int(rng.integers(lh - p + 1))
    x = int(rng.integers(lw - p + 1))
    return PatchPair(
        lr_patch=lr[y : y + p, x : x + p],
        hr_patch=hr[scale * y : scale * (y + p), scale * x : scale * (x + p)],
        source_index=source_index,
        top=y,
        left=x,
    )


def _to_chw(img, dtype):
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).to(dtype)


class PatchBatcher:
    """Random paired patches with flips/rotations, grouped into batches.

    Item ``k`` of each batch is produced by lane ``k % workers``; lane ``j``
    owns ``default_rng(seed ^ j)`` so the stream depends only on
    ``(seed, workers)``.
    """

    max_retries = 100

    def __init__(self, dataset, patch_size, batch_size, seed, workers=1, augment=True, dtype=torch.float32):
        if len(dataset) == 0:
            raise IntegrityError("empty training dataset")
        self.dataset = dataset
        self.patch_size = patch_size
        self.batch_size = batch_size
        self.workers = max(1, int(workers))
        self.augment = augment
        self.dtype = dtype
        self.lane_rngs = [np.random.default_rng(seed ^ j) for j in range(self.workers)]
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def _one(self, rng):
        for _ in range(self.max_retries):
            i = int(rng.integers(len(self.dataset)))
            lr, hr = self.dataset.load_pair(i)
            try:
                pair = extract_patch_pair(lr, hr, self.dataset.scale, self.patch_size, rng, i)
            except PatchTooSmall as exc:
                warnings.warn(f"{exc}; sampling another image", stacklevel=2)
                continue
            lr_t, hr_t = _to_chw(pair.lr_patch, self.dtype), _to_chw(pair.hr_patch, self.dtype)
            if self.augment:
                lr_t, hr_t = geometric_augment(lr_t, hr_t, rng)
            return lr_t, hr_t, i
        raise IntegrityError(f"no image large enough for {self.patch_size}px LR patches")

    def _lane(self, j, count):
        return [self._one(self.lane_rngs[j]) for _ in range(count)]

    def next_batch(self):
        counts = [len(range(j, self.batch_size, self.workers)) for j in range(self.workers)]
        if self._pool is None:
            per_lane = [self._lane(j, c) for j, c in enumerate(counts)]
        else:
            per_lane = list(self._pool.map(self._lane, range(self.workers), counts))
        items = [per_lane[k % self.workers][k // self.workers] for k in range(self.batch_size)]
        lr = torch.stack([it[0] for it in items])
        hr = torch.stack([it[1] for it in items])
        return lr, hr, [it[2] for it in items]

    def lane_states(self):
        return [r.bit_generator.state for r in self.lane_rngs]

    def set_lane_states(self, states):
        if len(states) != self.workers:
            raise IntegrityError("checkpoint lane count differs from --workers")
        for r, s in zip(self.lane_rngs, states):
            r.bit_generator.state = s

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


# --- benchmarks ------------------------------------------------------------

def data_root(root=None) -> Path:
    root = root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise IntegrityError(f"no dataset root given and ${DATA_ROOT_ENV} is not set")
    return Path(root)


def _pngs(d: Path):
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")


def resolve_dataset_dir(name, root=None) -> Path:
    key = str(name).lower()
    if key in BENCHMARKS:
        return data_root(root) / BENCHMARKS[key][0]
    return Path(name)


def load_benchmark(name, scale=4, root=None) -> PairedDataset:
    """Load ``<root>/<Name>/HR/*.png`` (plus ``LR_x<scale>`` if present).

    ``name`` is a benchmark key (set5, set14, b100, urban100, manga109) or a
    directory path. A custom directory may hold PNGs directly or under ``HR/``.
    """
    key = str(name).lower()
    base = resolve_dataset_dir(name, root)
    hr_dir = base / "HR"
    if not hr_dir.is_dir():
        if key in BENCHMARKS or not base.is_dir():
            raise IntegrityError(f"missing HR directory {hr_dir}")
        hr_dir = base
    hr_paths = _pngs(hr_dir)
    if not hr_paths:
        raise IntegrityError(f"no PNG images in {hr_dir}")
    if key in BENCHMARKS:
        expected = BENCHMARKS[key][1]
        if len(hr_paths) != expected:
            found = [p.stem.lower() for p in hr_paths]
            missing = [s for s in KNOWN_STEMS.get(key, []) if not any(s in f for f in found)]
            detail = f"; missing: {', '.join(missing)}" if missing else ""
            raise IntegrityError(
                f"{BENCHMARKS[key][0]}: expected {expected} HR images, found {len(hr_paths)}{detail}"
            )
    lr_dir = base / f"LR_x{scale}"
    lr_paths = None
    if lr_dir.is_dir():
        by_stem = {p.stem: p for p in _pngs(lr_dir)}
        missing = [p.name for p in hr_paths if p.stem not in by_stem]
        if missing:
            raise IntegrityError(f"{lr_dir}: no LR file for {', '.join(missing)}")
        lr_paths = [by_stem[p.stem] for p in hr_paths]
    ds_name = BENCHMARKS[key][0] if key in BENCHMARKS else base.name
    return PairedDataset(hr_paths, lr_paths, scale=scale, name=ds_name)


def degrade_directory(base, scale, force=False) -> Path:
    """Write ``LR_x<scale>`` next to ``HR`` with bicubic-synthesised LR images."""
    base = Path(base)
    hr_dir = base / "HR" if (base / "HR").is_dir() else base
    out = base / f"LR_x{scale}"
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} exists; pass force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    paths = _pngs(hr_dir)
    if not paths:
        raise IntegrityError(f"no PNG images in {hr_dir}")
    for p in paths:
        hr = mod_crop(read_png(p), scale)
        write_png(out / f"{p.stem}.png", synthesize_lr(hr, scale))
    log.info("wrote %d LR images to %s", len(paths), out)
    return out
