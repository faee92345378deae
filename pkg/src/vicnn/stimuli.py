"""Parametric renderers for five brightness/color illusions.

Each generator returns a :class:`Stimulus`: a ``(3, H, W)`` float32 image with
values in [0, 1], boolean target masks, horizontal probe segments crossing the
targets, and the sign that a human-like observer would report for
``mean(target A) - mean(target B)`` in each of R, G, B and luminance Y.

Geometry is expressed in multiples of ``scale`` so that rendering a doubled
canvas at doubled scale reproduces a nearest-neighbour 2x upscale for the
rectilinear illusions (Dungeon, White, Chevreul).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vicnn.errors import ShapeError, ValidationError

KINDS = ("dungeon", "hong_shevell", "white", "luminance_gradient", "chevreul")
BASELINE_SCALES = {"dungeon": 4, "hong_shevell": 1, "white": 4, "luminance_gradient": 5, "chevreul": 10}
CHANNELS = ("R", "G", "B", "Y")
LUMA = np.array([0.2989, 0.5870, 0.1140])

DARK, LIGHT, TARGET = 0.1, 0.9, 0.5
PALETTE = {
    "red": (0.8, 0.2, 0.2),
    "green": (0.2, 0.8, 0.2),
    "yellow": (0.8, 0.8, 0.2),
}
HS_RINGS = 7          # ring indices 0..6; index 3 is the test ring
HS_TEST_RING = 3
CHEVREUL_BANDS = 5
CHEVREUL_FLOOR = 0.2  # G and B level of the colored staircase
GRADIENT_CIRCLES = 3  # circles per column


class StimulusRejected(ValidationError):
    """The requested scale does not fit the canvas."""


@dataclass(frozen=True)
class StimulusSpec:
    kind: str
    scale: int | None = None
    colored: bool = False
    canvas: tuple = (128, 128)
    palette: dict | None = field(default=None, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown illusion {self.kind!r}; choose from {KINDS}")
        if self.scale is None:
            object.__setattr__(self, "scale", BASELINE_SCALES[self.kind])
        if int(self.scale) < 1:
            raise ValidationError(f"scale must be >= 1, got {self.scale}")
        h, w = self.canvas
        if h < 2 or w < 2 or h % 2 or w % 2:
            raise ValidationError(f"canvas must have even, positive dimensions, got {self.canvas}")

    def color(self, name: str) -> np.ndarray:
        table = dict(PALETTE)
        if self.palette:
            table.update(self.palette)
        return np.asarray(table[name], dtype=np.float64)

    @property
    def id(self) -> str:
        mode = "color" if self.colored else "gray"
        return f"{self.kind}-{mode}-s{self.scale}-{self.canvas[0]}x{self.canvas[1]}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "colored": self.colored,
                "canvas": list(self.canvas), "palette": self.palette}


@dataclass(frozen=True)
class Probe:
    row: int
    x0: int
    x1: int  # exclusive

    def __len__(self):
        return self.x1 - self.x0


@dataclass
class Stimulus:
    spec: StimulusSpec
    image: np.ndarray
    masks: list
    probes: list
    expected: dict
    family: str

    @property
    def id(self) -> str:
        return self.spec.id

    def mask_boxes(self) -> list:
        boxes = []
        for m in self.masks:
            ys, xs = np.nonzero(m)
            boxes.append([int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1])
        return boxes


def to_grayscale(image, keepdims: bool = True):
    """Luminance ``0.2989 R + 0.5870 G + 0.1140 B`` along the channel axis.

    The channel axis is 1 for 4-D batches and 0 otherwise.
    """
    image = np.asarray(image)
    axis = 1 if image.ndim == 4 else 0
    if image.shape[axis] != 3:
        raise ShapeError(f"to_grayscale needs 3 channels, got shape {image.shape}")
    shape = [1] * image.ndim
    shape[axis] = 3
    weights = LUMA.reshape(shape).astype(image.dtype if image.dtype.kind == "f" else np.float64)
    return (image * weights).sum(axis=axis, keepdims=keepdims)


def _signs(delta_rgb) -> dict:
    delta = np.asarray(delta_rgb, dtype=np.float64)
    vals = list(delta) + [float(LUMA @ delta)]
    return {ch: int(np.sign(round(v, 12))) for ch, v in zip(CHANNELS, vals)}


def _rgb(spec: StimulusSpec, gray: float, color_name: str) -> np.ndarray:
    return spec.color(color_name) if spec.colored else np.full(3, gray)


def _align(extra: int, s: int) -> int:
    # centring offset rounded to the lowest power of two dividing s, so that it
    # doubles exactly when s does
    g = s & -s
    return g * (extra // (2 * g))


def _canvas(h, w, rgb) -> np.ndarray:
    return np.broadcast_to(np.asarray(rgb, dtype=np.float64)[:, None, None], (3, h, w)).copy()


def _finish(spec, image, masks, probes, expected, family) -> Stimulus:
    return Stimulus(spec, image.astype(np.float32), masks, probes, expected, family)


def gen_dungeon(spec: StimulusSpec) -> Stimulus:
    """Lattice of inducer squares on dark (left) and light (right) halves.

    The four central lattice cells of each half are replaced by gray targets;
    each target is surrounded by background on all sides.
    """
    _expect_kind(spec, "dungeon")
    h, w = spec.canvas
    s, half = spec.scale, w // 2
    pitch = 2 * s
    nx = ((half // s) + 1) // 2 // 2 * 2
    ny = ((h // s) + 1) // 2 // 2 * 2
    if nx < 2 or ny < 2:
        raise StimulusRejected(f"dungeon scale {s} too large for canvas {spec.canvas}")
    mx = _align(half - (2 * nx - 1) * s, s)
    my = _align(h - (2 * ny - 1) * s, s)
    bg_a, ind_a = _rgb(spec, DARK, "red"), _rgb(spec, LIGHT, "green")
    bg_b, ind_b = _rgb(spec, LIGHT, "green"), _rgb(spec, DARK, "red")

    image = np.empty((3, h, w))
    image[:, :, :half] = bg_a[:, None, None]
    image[:, :, half:] = bg_b[:, None, None]
    masks = [np.zeros((h, w), bool), np.zeros((h, w), bool)]
    targets = {nx // 2 - 1, nx // 2}
    target_rows = {ny // 2 - 1, ny // 2}
    for side, (x_origin, inducer) in enumerate(((0, ind_a), (half, ind_b))):
        for r in range(ny):
            for c in range(nx):
                y0 = my + r * pitch
                x0 = x_origin + mx + c * pitch
                if r in target_rows and c in targets:
                    image[:, y0:y0 + s, x0:x0 + s] = TARGET
                    masks[side][y0:y0 + s, x0:x0 + s] = True
                else:
                    image[:, y0:y0 + s, x0:x0 + s] = inducer[:, None, None]
    row = my + (ny // 2 - 1) * pitch + s // 2
    probes = [Probe(row, 0, half), Probe(row, half, w)]
    return _finish(spec, image, masks, probes, _signs(bg_a - bg_b), "assimilation")


def gen_hong_shevell(spec: StimulusSpec) -> Stimulus:
    """Two concentric-ring patterns with mirrored phase and a gray test ring."""
    _expect_kind(spec, "hong_shevell")
    h, w = spec.canvas
    s, half = spec.scale, w // 2
    radius = HS_RINGS * s
    if 2 * radius > half or 2 * radius > h:
        raise StimulusRejected(f"hong_shevell ring width {s} too large for canvas {spec.canvas}")
    even_a, odd_a = _rgb(spec, DARK, "red"), _rgb(spec, LIGHT, "green")
    even_b, odd_b = odd_a, even_a
    image = _canvas(h, w, np.full(3, TARGET))
    masks = []
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    cy = h // 2
    for x_origin, even, odd in ((0, even_a, odd_a), (half, even_b, odd_b)):
        cx = x_origin + half // 2
        ring = np.floor(np.hypot(yy - cy, xx - cx) / s).astype(int)
        in_half = (xx >= x_origin) & (xx < x_origin + half)
        for k in range(HS_RINGS):
            m = (ring == k) & in_half
            if k == HS_TEST_RING:
                image[:, m] = TARGET
            else:
                image[:, m] = (even if k % 2 == 0 else odd)[:, None]
        masks.append((ring == HS_TEST_RING) & in_half)
    probes = [Probe(cy, 0, half), Probe(cy, half, w)]
    # the test ring is flanked by even rings
    return _finish(spec, image, masks, probes, _signs(even_a - even_b), "assimilation")


def gen_white(spec: StimulusSpec) -> Stimulus:
    """Square-wave grating with one target on a dark bar and one on a light bar.

    Targets are one bar wide and two bar-widths tall, so the flanking bars of
    opposite polarity make up most of their border.
    """
    _expect_kind(spec, "white")
    h, w = spec.canvas
    s, half = spec.scale, w // 2
    bar_a = 2 * ((w // 4) // (2 * s))                 # even bar, left half
    bar_b = bar_a + 2 * (half // (2 * s)) + 1          # odd bar, right half
    if bar_b * s < half or (bar_b + 1) * s > w or 2 * s > h:
        raise StimulusRejected(f"white bar width {s} too large for canvas {spec.canvas}")
    even, odd = _rgb(spec, DARK, "red"), _rgb(spec, LIGHT, "yellow")
    bars = (np.arange(w) // s) % 2
    image = np.where(bars[None, None, :] == 0, even[:, None, None], odd[:, None, None])
    image = np.broadcast_to(image, (3, h, w)).copy()
    y0 = (h - 2 * s) // 2
    masks = []
    for bar in (bar_a, bar_b):
        m = np.zeros((h, w), bool)
        m[y0:y0 + 2 * s, bar * s:(bar + 1) * s] = True
        image[:, m] = TARGET
        masks.append(m)
    row = y0 + s
    probes = [Probe(row, 0, half), Probe(row, half, w)]
    # each target assimilates towards its flanking bars
    return _finish(spec, image, masks, probes, _signs(odd - even), "assimilation")


def gen_luminance_gradient(spec: StimulusSpec) -> Stimulus:
    """Horizontal ramp with a column of gray discs over its dark and light ends."""
    _expect_kind(spec, "luminance_gradient")
    h, w = spec.canvas
    s = spec.scale
    if (GRADIENT_CIRCLES + 1) * s > h or 4 * s > w:
        raise StimulusRejected(f"luminance_gradient diameter {s} too large for canvas {spec.canvas}")
    lo, hi = _rgb(spec, DARK, "green"), _rgb(spec, LIGHT, "red")
    t = (np.arange(w) + 0.5) / w
    ramp = lo[:, None] + (hi - lo)[:, None] * t[None, :]
    image = np.broadcast_to(ramp[:, None, :], (3, h, w)).copy()
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    offset = 0.5 if s % 2 else 0.0
    rows = [h * (i + 1) // (GRADIENT_CIRCLES + 1) for i in range(GRADIENT_CIRCLES)]
    centres_x = (w // 4, w - w // 4)
    masks = []
    for cx in centres_x:
        m = np.zeros((h, w), bool)
        for cy in rows:
            m |= (yy - cy - offset) ** 2 + (xx - cx - offset) ** 2 <= (s / 2) ** 2
        image[:, m] = TARGET
        masks.append(m)
    surround_a = lo + (hi - lo) * (centres_x[0] + offset) / w
    surround_b = lo + (hi - lo) * (centres_x[1] + offset) / w
    probes = [Probe(rows[len(rows) // 2], 0, w)]
    # contrast: each target moves away from its surround
    return _finish(spec, image, masks, probes, _signs(surround_b - surround_a), "contrast")


def gen_chevreul(spec: StimulusSpec) -> Stimulus:
    """Staircase of vertical bands rising linearly from 0.1 to 0.9."""
    _expect_kind(spec, "chevreul")
    h, w = spec.canvas
    s = spec.scale
    n = min(CHEVREUL_BANDS, w // s)
    if n < 3:
        raise StimulusRejected(f"chevreul step {s} leaves fewer than 3 bands on canvas {spec.canvas}")
    levels = DARK + (LIGHT - DARK) * np.arange(n) / (n - 1)
    x0 = _align(w - n * s, s)
    band = np.clip((np.arange(w) - x0) // s, 0, n - 1)
    v = levels[band]
    if spec.colored:
        image = np.stack([v, np.full(w, CHEVREUL_FLOOR), np.full(w, CHEVREUL_FLOOR)])
        expected = {"R": 1, "G": 0, "B": 0, "Y": 1}
    else:
        image = np.stack([v, v, v])
        expected = {ch: 1 for ch in CHANNELS}
    image = np.broadcast_to(image[:, None, :], (3, h, w)).copy()
    masks = []
    for i in range(n):
        m = np.zeros((h, w), bool)
        m[:, x0 + i * s:x0 + (i + 1) * s] = True
        masks.append(m)
    probes = [Probe(h // 2, 0, w)]
    return _finish(spec, image, masks, probes, expected, "band-edge")


GENERATORS = {
    "dungeon": gen_dungeon,
    "hong_shevell": gen_hong_shevell,
    "white": gen_white,
    "luminance_gradient": gen_luminance_gradient,
    "chevreul": gen_chevreul,
}


def generate(spec: StimulusSpec | str, **kw) -> Stimulus:
    if isinstance(spec, str):
        spec = StimulusSpec(spec, **kw)
    return GENERATORS[spec.kind](spec)


def _expect_kind(spec, kind):
    if spec.kind != kind:
        raise ValidationError(f"spec kind {spec.kind!r} passed to the {kind} generator")


def validate_stimulus(stim: Stimulus) -> dict:
    """Check every stimulus invariant; return mask areas and target means.

    Raises :class:`ValidationError` naming the first offending pixel.
    """
    img = stim.image
    h, w = stim.spec.canvas
    if img.shape != (3, h, w):
        raise ValidationError(f"{stim.id}: image shape {img.shape} != {(3, h, w)}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValidationError(f"{stim.id}: image values outside [0, 1]")
    if len(stim.masks) < 2:
        raise ValidationError(f"{stim.id}: needs at least two masks")
    union = np.zeros((h, w), int)
    for i, m in enumerate(stim.masks):
        if m.shape != (h, w) or not m.any():
            raise ValidationError(f"{stim.id}: mask {i} is empty or misshapen")
        union += m
    if union.max() > 1:
        y, x = np.argwhere(union > 1)[0]
        raise ValidationError(f"{stim.id}: masks overlap at pixel (row={y}, col={x})")
    if set(stim.expected) != set(CHANNELS):
        raise ValidationError(f"{stim.id}: expected-direction table must cover {CHANNELS}")

    if stim.family == "band-edge":
        means = []
        for i, m in enumerate(stim.masks):
            vals = img[:, m]
            bad = np.nonzero(np.any(vals != vals[:, :1], axis=0))[0]
            if bad.size:
                y, x = np.argwhere(m)[bad[0]]
                raise ValidationError(f"{stim.id}: band {i} not constant at pixel (row={y}, col={x})")
            means.append(float(to_grayscale(vals[:, :1])[0, 0]))
        if any(b <= a for a, b in zip(means, means[1:])):
            raise ValidationError(f"{stim.id}: band means not strictly increasing: {means}")
    else:
        a, b = stim.masks[:2]
        if a.sum() != b.sum():
            raise ValidationError(f"{stim.id}: target masks differ in area ({a.sum()} vs {b.sum()})")
        for m in (a, b):
            coords = np.argwhere(np.any(img[:, m] != np.float32(TARGET), axis=0))
            if coords.size:
                y, x = np.argwhere(m)[coords[0, 0]]
                raise ValidationError(
                    f"{stim.id}: target pixel (row={y}, col={x}) = {img[:, y, x].tolist()}, expected {TARGET}"
                )
        if not np.array_equal(img[:, a], img[:, b]):
            raise ValidationError(f"{stim.id}: target regions differ")

    return {
        "id": stim.id,
        "mask_areas": [int(m.sum()) for m in stim.masks],
        "target_means": [[float(img[c][m].mean()) for c in range(3)] for m in stim.masks],
    }


def sweep_validate(kinds=KINDS, scales=range(1, 17), colored=(False, True), canvas=(128, 128)) -> list[dict]:
    """Generate and validate every combination; rejections are recorded, not raised."""
    rows = []
    for kind in kinds:
        for scale in scales:
            for col in colored:
                spec = StimulusSpec(kind, scale, col, canvas)
                try:
                    diag = validate_stimulus(generate(spec))
                    rows.append({"id": spec.id, "status": "pass", **diag})
                except StimulusRejected as exc:
                    rows.append({"id": spec.id, "status": "rejected", "reason": str(exc)})
    return rows


def _png(arr, path):
    from PIL import Image

    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def to_uint8(image) -> np.ndarray:
    """``round(v * 255)`` clamped, channels last."""
    return np.clip(np.round(np.asarray(image, np.float64) * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def save_stimulus(stim: Stimulus, out_dir) -> dict:
    """Write the image PNG, one PNG per mask and a JSON sidecar. Returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"image": out / f"{stim.id}.png", "masks": [], "meta": out / f"{stim.id}.json"}
    _png(to_uint8(stim.image), paths["image"])
    for i, m in enumerate(stim.masks):
        p = out / f"{stim.id}.mask{i}.png"
        _png(m.astype(np.uint8) * 255, p)
        paths["masks"].append(p)
    meta = {
        "spec": stim.spec.to_dict(),
        "id": stim.id,
        "family": stim.family,
        "mask_boxes": stim.mask_boxes(),
        "mask_files": [p.name for p in paths["masks"]],
        "probes": [{"row": p.row, "x0": p.x0, "x1": p.x1} for p in stim.probes],
        "expected": stim.expected,
    }
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
