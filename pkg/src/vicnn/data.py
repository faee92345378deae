"""Corpus ingestion and the corruption operators behind the three tasks.

Images are float32 ``(3, H, W)`` arrays in [0, 1]. Every random operator takes
an explicit seed; nothing reads global RNG state.
"""

from __future__ import annotations

import hashlib
import importlib.util
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vicnn.errors import DataError, ShapeError, ValidationError

log = logging.getLogger(__name__)

TASKS = ("denoise", "deblur", "cc")
NOISE_SIGMA = 25 / 255
BLUR_SIGMA = 2.0
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm", ".npy"}


@dataclass
class CorpusEntry:
    path: str
    image: np.ndarray
    illuminant: tuple | None = None

    def __post_init__(self):
        if self.illuminant is not None and min(self.illuminant) <= 0:
            raise ValidationError(f"{self.path}: illuminant components must be > 0")


@dataclass(frozen=True)
class SplitConfig:
    fractions: tuple = (0.7, 0.2, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or min(self.fractions) < 0 or not math.isclose(sum(self.fractions), 1.0):
            raise ValidationError(f"split fractions must be 3 non-negative values summing to 1: {self.fractions}")


@dataclass
class SamplePair:
    input: np.ndarray
    target: np.ndarray
    task: str
    source: str = ""
    seed: int | None = None


@dataclass
class Dataset:
    """Train/val/test sample pairs plus the manifest that reproduces them."""

    train: list
    val: list
    test: list
    manifest: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return manifest_digest(self.manifest)


# ---------------------------------------------------------------- decoding


def resize_bilinear(image, size) -> np.ndarray:
    """Bilinear resampling with pixel-centre alignment and edge clamping.

    ``size`` is an int (square) or ``(height, width)``. No antialiasing; a 2x
    reduction therefore averages each 2x2 block exactly.
    """
    image = np.asarray(image, dtype=np.float64)
    oh, ow = (size, size) if isinstance(size, int) else size
    _, h, w = image.shape
    if (h, w) == (oh, ow):
        return image.astype(np.float32)

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h, oh)
    x0, x1, fx = axis(w, ow)
    rows = image[:, y0, :] * (1 - fy)[None, :, None] + image[:, y1, :] * fy[None, :, None]
    out = rows[:, :, x0] * (1 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]
    return out.astype(np.float32)


def read_image(path) -> np.ndarray:
    """Decode an image file to float32 ``(3, H, W)`` in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        arr = np.load(path)
        if arr.ndim == 2:
            arr = np.stack([arr] * 3)
        elif arr.ndim == 3 and arr.shape[-1] in (1, 3) and arr.shape[0] not in (1, 3):
            arr = arr.transpose(2, 0, 1)
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise DataError(f"{path}: unsupported array shape {arr.shape}")
        if arr.shape[0] == 1:
            arr = np.repeat(arr, 3, axis=0)
        arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{path}: non-finite values")
        return np.clip(arr, 0, 1)
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                arr = np.stack([arr] * 3)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot decode ({exc})") from exc
    return arr.astype(np.float32)


def read_illuminant(path) -> tuple:
    try:
        values = tuple(float(v) for v in Path(path).read_text(encoding="utf-8").split())
    except ValueError as exc:
        raise DataError(f"{path}: illuminant must be three numbers") from exc
    if len(values) != 3:
        raise DataError(f"{path}: illuminant must be three numbers, got {len(values)}")
    if min(values) <= 0:
        raise ValidationError(f"{path}: illuminant components must be > 0")
    return values


def write_illuminant(path, rgb) -> None:
    Path(path).write_text(" ".join(repr(float(v)) for v in rgb) + "\n", encoding="utf-8")


def list_corpus(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"corpus directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def load_corpus(directory, canvas: int = 128, quads: bool = False) -> list[CorpusEntry]:
    """Decode every image in ``directory`` and resize it to ``canvas``.

    With ``quads`` each image is first cut into four quadrants (an odd trailing
    row or column is dropped). Undecodable files are skipped with a warning.
    """
    entries = []
    for path in list_corpus(directory):
        try:
            image = read_image(path)
        except DataError as exc:
            log.warning("skipping %s", exc)
            continue
        illum_path = path.with_suffix(".illum")
        illum = read_illuminant(illum_path) if illum_path.exists() else None
        if quads:
            _, h, w = image.shape
            image = image[:, : h - h % 2, : w - w % 2]
            for q, sub in enumerate(quad_split(image, canvas)):
                entries.append(CorpusEntry(f"{path.name}#q{q}", sub, illum))
        else:
            entries.append(CorpusEntry(path.name, resize_bilinear(image, canvas), illum))
    if not entries:
        raise DataError(f"corpus {directory} contains no decodable images")
    return entries


# ---------------------------------------------------------------- corruption


def add_gaussian_noise(image, sigma: float = NOISE_SIGMA, seed: int = 0) -> np.ndarray:
    """Additive i.i.d. Gaussian noise, clamped to [0, 1]."""
    image = np.asarray(image, dtype=np.float32)
    if sigma == 0:
        return image.copy()
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=image.shape)
    return np.clip(image + noise, 0, 1).astype(np.float32)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def gaussian_blur(image, sigma: float = BLUR_SIGMA) -> np.ndarray:
    """Separable Gaussian blur, kernel truncated at 3 sigma, replicate edges."""
    image = np.asarray(image, dtype=np.float64)
    if sigma <= 0:
        return image.astype(np.float32)
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    _, h, w = image.shape
    padded = np.pad(image, ((0, 0), (r, r), (0, 0)), mode="edge")
    tmp = sum(k[i] * padded[:, i:i + h, :] for i in range(len(k)))
    padded = np.pad(tmp, ((0, 0), (0, 0), (r, r)), mode="edge")
    out = sum(k[i] * padded[:, :, i:i + w] for i in range(len(k)))
    return out.astype(np.float32)


def cc_ground_truth(image, illuminant) -> np.ndarray:
    """Undo an illuminant cast: divide each channel by its gain.

    The result is multiplied by ``max(illuminant)`` so that the brightest
    channel keeps its level, then clamped to [0, 1].
    """
    illum = np.asarray(illuminant, dtype=np.float64)
    if illum.shape != (3,) or np.any(illum <= 0):
        raise ValidationError(f"illuminant must be three positive gains, got {illuminant}")
    image = np.asarray(image, dtype=np.float64)
    out = image / illum[:, None, None] * illum.max()
    return np.clip(out, 0, 1).astype(np.float32)


def apply_illuminant(image, illuminant) -> np.ndarray:
    """Inverse of :func:`cc_ground_truth` (up to clamping)."""
    illum = np.asarray(illuminant, dtype=np.float64)
    if illum.shape != (3,) or np.any(illum <= 0):
        raise ValidationError(f"illuminant must be three positive gains, got {illuminant}")
    out = np.asarray(image, dtype=np.float64) * illum[:, None, None] / illum.max()
    return np.clip(out, 0, 1).astype(np.float32)


def synthetic_illuminant(seed: int) -> tuple:
    """Random chromatic gains: R and B uniform in [0.6, 1.4], G fixed at 1."""
    r, b = np.random.default_rng(seed).uniform(0.6, 1.4, size=2)
    return (float(r), 1.0, float(b))


def quad_split(image, canvas: int | None = 128) -> list[np.ndarray]:
    """Four quadrants (TL, TR, BL, BR), each resized to ``canvas`` if given."""
    image = np.asarray(image)
    _, h, w = image.shape
    if h % 2 or w % 2:
        raise ShapeError(f"quad_split needs even dimensions, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    quads = [image[:, :h2, :w2], image[:, :h2, w2:], image[:, h2:, :w2], image[:, h2:, w2:]]
    if canvas is None:
        return [q.copy() for q in quads]
    return [resize_bilinear(q, canvas) for q in quads]


# ---------------------------------------------------------------- splitting


def split_dataset(entries, cfg: SplitConfig = SplitConfig()):
    """Seeded partition into (train, val, test).

    Entries are sorted by path first, so the split does not depend on listing
    order. Val and test sizes are rounded down; the remainder goes to train.
    """
    ordered = sorted(entries, key=lambda e: e.path)
    n = len(ordered)
    n_val = int(math.floor(cfg.fractions[1] * n + 1e-9))
    n_test = int(math.floor(cfg.fractions[2] * n + 1e-9))
    perm = np.random.default_rng(cfg.seed).permutation(n)
    val = [ordered[i] for i in perm[:n_val]]
    test = [ordered[i] for i in perm[n_val:n_val + n_test]]
    train = [ordered[i] for i in perm[n_val + n_test:]]
    return train, val, test


def sample_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def make_pair(entry: CorpusEntry, task: str, seed: int, sigma: float = NOISE_SIGMA,
              blur_sigma: float = BLUR_SIGMA) -> SamplePair:
    clean = entry.image
    if task == "denoise":
        return SamplePair(add_gaussian_noise(clean, sigma, seed), clean, task, entry.path, seed)
    if task == "deblur":
        return SamplePair(gaussian_blur(clean, blur_sigma), clean, task, entry.path, seed)
    if task == "cc":
        illum = entry.illuminant
        if illum is None:
            # no sidecar: cast the image with a synthetic illuminant
            illum = synthetic_illuminant(seed)
            observed = apply_illuminant(clean, illum)
        else:
            observed = clean
        return SamplePair(observed, cc_ground_truth(observed, illum), task, entry.path, seed)
    raise ValidationError(f"unknown task {task!r}; choose from {TASKS}")


def manifest_digest(manifest: dict) -> str:
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def prepare(directory, task: str, seed: int = 0, canvas: int = 128, cfg: SplitConfig | None = None,
            sigma: float = NOISE_SIGMA, blur_sigma: float = BLUR_SIGMA) -> Dataset:
    """Load a corpus, split it and build sample pairs for ``task``."""
    if task not in TASKS:
        raise ValidationError(f"unknown task {task!r}; choose from {TASKS}")
    cfg = cfg or SplitConfig(seed=seed)
    entries = load_corpus(directory, canvas, quads=(task == "cc"))
    index = {e.path: i for i, e in enumerate(sorted(entries, key=lambda e: e.path))}
    parts = split_dataset(entries, cfg)
    pairs = [[make_pair(e, task, sample_seed(seed, index[e.path]), sigma, blur_sigma) for e in part]
             for part in parts]
    files = {p.name: file_digest(p) for p in list_corpus(directory)}
    manifest = {
        "task": task,
        "seed": seed,
        "canvas": canvas,
        "fractions": list(cfg.fractions),
        "split_seed": cfg.seed,
        "noise_sigma": sigma,
        "blur_sigma": blur_sigma,
        "clamped": True,
        "files": files,
        "samples": {
            name: [{"source": p.source, "seed": p.seed} for p in part]
            for name, part in zip(("train", "val", "test"), pairs)
        },
    }
    return Dataset(*pairs, manifest=manifest)


def stack(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Batch arrays ``(inputs, targets)`` from a list of sample pairs."""
    if not pairs:
        raise DataError("empty sample set")
    return np.stack([p.input for p in pairs]), np.stack([p.target for p in pairs])


# ---------------------------------------------------------------- desk corpus

_SKIMAGE_NATURAL = ("astronaut.png", "chelsea.png", "coffee.png", "hubble_deep_field.jpg", "ihc.png",
                    "retina.jpg", "rocket.jpg", "motorcycle_left.png", "camera.png", "moon.png",
                    "coins.png", "brick.png", "grass.png", "gravel.png")
_SKLEARN_NATURAL = ("china.jpg", "flower.jpg")


def bundled_natural_images() -> list[Path]:
    """Photographs shipped inside scikit-image and scikit-learn, if installed."""
    found = []
    for package, sub, names in (("skimage", "data", _SKIMAGE_NATURAL),
                                ("sklearn", "datasets/images", _SKLEARN_NATURAL)):
        spec = importlib.util.find_spec(package)
        if spec is None or not spec.submodule_search_locations:
            continue
        base = Path(list(spec.submodule_search_locations)[0]) / sub
        found += [base / n for n in names if (base / n).exists()]
    return found


def make_desk_corpus(out_dir, n: int = 200, seed: int = 0, sources=None, crop_sizes=(128, 256)) -> list[Path]:
    """Write ``n`` random square crops of natural photographs as PNG files.

    Crops are 128 or 256 px so the later resize to 128 is either a no-op or
    an exact 2x2 average. Randomly mirrored horizontally.
    """
    from PIL import Image

    sources = [Path(p) for p in (sources or bundled_natural_images())]
    if not sources:
        raise DataError("no source photographs available for the desk corpus")
    images = [np.asarray(Image.open(p).convert("RGB")) for p in sorted(sources)]
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(n):
        img = images[rng.integers(len(images))]
        h, w = img.shape[:2]
        sizes = [c for c in crop_sizes if c <= min(h, w)] or [min(h, w)]
        size = sizes[rng.integers(len(sizes))]
        y = rng.integers(h - size + 1)
        x = rng.integers(w - size + 1)
        crop = img[y:y + size, x:x + size]
        if rng.random() < 0.5:
            crop = crop[:, ::-1]
        path = out / f"desk_{i:04d}.png"
        Image.fromarray(np.ascontiguousarray(crop)).save(path, format="PNG")
        written.append(path)
    return written
