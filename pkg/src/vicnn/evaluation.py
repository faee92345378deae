"""Run models on illusion stimuli and turn their outputs into verdicts.

The effect on a paired-target stimulus is ``E = mean(out[A]) - mean(out[B])``
per channel and on luminance. The input image has ``E == 0`` by construction,
so any nonzero value is a shift induced by the model. A verdict compares the
sign of ``E`` with the sign a human observer reports, using a dead zone ``tau``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from vicnn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from vicnn.engine import predict
from vicnn.errors import ShapeError, ValidationError
from vicnn.stimuli import CHANNELS, Probe, Stimulus, StimulusRejected, StimulusSpec, generate, to_grayscale

log = logging.getLogger(__name__)

TAU = 0.005
REPLICATED, NULL, INVERTED, REJECTED = "replicated", "null", "inverted", "rejected"


@dataclass
class Model:
    """A frozen network: spec, parameters and a display id."""

    spec: object
    params: list
    model_id: str

    @classmethod
    def of(cls, obj) -> "Model":
        if isinstance(obj, Model):
            return obj
        if isinstance(obj, Checkpoint):
            return cls(obj.spec, obj.params, obj.model_id)
        if isinstance(obj, (str, Path)):
            return cls.of(load_checkpoint(obj))
        spec, params = obj
        return cls(spec, params, spec.name)

    @property
    def kernel(self) -> int:
        return self.spec.conv_layers[0].kernel


@dataclass
class ProfileRecord:
    stimulus_id: str
    probe: Probe
    input: np.ndarray     # (3, L)
    output: np.ndarray    # (3, L)
    input_y: np.ndarray   # (L,)
    output_y: np.ndarray  # (L,)
    target_spans: list    # [(x0, x1), ...] along the probe, absolute columns


@dataclass
class EffectReport:
    model_id: str
    stimulus: StimulusSpec
    family: str
    effects: dict          # channel -> E
    expected: dict         # channel -> sign
    verdicts: dict         # channel -> verdict
    tau: float = TAU
    kernel: int | None = None
    bands: dict = field(default_factory=dict)  # chevreul: channel -> per-band records

    @property
    def primary_channel(self) -> str:
        return "Y" if not self.stimulus.colored else max(
            ("R", "G", "B"), key=lambda c: (self.expected[c] != 0, c == "R"))


@dataclass
class SweepReport:
    axis: str                 # "scale" | "kernel" | "architecture"
    kind: str
    values: list
    cells: list               # EffectReport or {"value": v, "status": "rejected", "reason": ...}

    def magnitudes(self, channel: str = "Y") -> list:
        """``(value, |E|)`` for every non-rejected cell."""
        out = []
        for v, cell in zip(self.values, self.cells):
            if isinstance(cell, EffectReport):
                out.append((v, abs(cell.effects[channel])))
        return out

    @property
    def reports(self) -> list:
        return [c for c in self.cells if isinstance(c, EffectReport)]


# ----------------------------------------------------------- reference filters


def box_blur(image, size: int = 3) -> np.ndarray:
    """Per-channel box mean with replicated edges."""
    image = np.asarray(image, dtype=np.float64)
    return np.stack([uniform_filter(c, size, mode="nearest") for c in image])


def center_surround(image, inner: int = 3, outer: int = 9) -> np.ndarray:
    """Image plus a difference-of-boxes band-pass (inner mean minus outer mean)."""
    image = np.asarray(image, dtype=np.float64)
    return image + box_blur(image, inner) - box_blur(image, outer)


# ----------------------------------------------------------- measuring


def run_on_stimulus(model, stimulus: Stimulus):
    """Forward the stimulus through the model; returns ``(output, profiles)``."""
    m = Model.of(model)
    if tuple(m.spec.input_shape) != stimulus.image.shape:
        raise ShapeError(f"model {m.model_id} expects {m.spec.input_shape}, stimulus is {stimulus.image.shape}")
    x = stimulus.image.astype(m.params[0].dtype)
    out = predict(m.spec, m.params, x)
    return out, profiles(stimulus, out)


def profiles(stimulus: Stimulus, output) -> list[ProfileRecord]:
    img, out = stimulus.image, np.asarray(output)
    y_in, y_out = to_grayscale(img)[0], to_grayscale(out)[0]
    union = np.any(stimulus.masks, axis=0) if stimulus.family != "band-edge" else np.zeros(img.shape[1:], bool)
    records = []
    for p in stimulus.probes:
        sl = slice(p.x0, p.x1)
        records.append(ProfileRecord(
            stimulus.id, p, img[:, p.row, sl].copy(), out[:, p.row, sl].copy(),
            y_in[p.row, sl].copy(), y_out[p.row, sl].copy(), _spans(union[p.row, sl], p.x0),
        ))
    return records


def _spans(flags, offset):
    spans, start = [], None
    for i, f in enumerate(list(flags) + [False]):
        if f and start is None:
            start = i
        elif not f and start is not None:
            spans.append((offset + start, offset + i))
            start = None
    return spans


def effect_magnitude(output, stimulus: Stimulus) -> dict:
    """``mean(out[A]) - mean(out[B])`` for R, G, B and luminance Y (float64)."""
    out = np.asarray(output, dtype=np.float64)
    if out.shape != stimulus.image.shape:
        raise ShapeError(f"output shape {out.shape} != stimulus shape {stimulus.image.shape}")
    a, b = stimulus.masks[:2]
    if not a.any() or not b.any():
        raise ValidationError(f"{stimulus.id}: empty target mask")
    planes = list(out) + [to_grayscale(out)[0]]
    return {ch: float(p[a].mean() - p[b].mean()) for ch, p in zip(CHANNELS, planes)}


def verdict(effect: float, expected: int, tau: float = TAU) -> str:
    """replicated / inverted when ``|E| > tau`` with matching / opposite sign."""
    if abs(effect) <= tau or expected == 0:
        return NULL
    return REPLICATED if np.sign(effect) == np.sign(expected) else INVERTED


def chevreul_statistic(output, stimulus: Stimulus, tau: float = TAU) -> dict:
    """Edge overshoot inside every interior band, per channel.

    Each band's column profile (mean over rows) yields ``overshoot = max - min``.
    The band counts as replicating when the overshoot exceeds ``tau``, the
    maximum sits in the band's left quarter and the minimum in its right
    quarter (bright after each rising edge, dark before the next one); the
    mirrored arrangement counts as inverted. The signed band statistic is
    ``+overshoot``, ``-overshoot`` or 0 accordingly and the channel's ``E``
    is its mean over interior bands.
    """
    out = np.asarray(output, dtype=np.float64)
    planes = dict(zip(CHANNELS, list(out) + [to_grayscale(out)[0]]))
    result = {}
    interior = stimulus.masks[1:-1]
    for ch, plane in planes.items():
        bands = []
        for m in interior:
            cols = np.nonzero(m.any(axis=0))[0]
            prof = np.array([plane[m[:, c], c].mean() for c in cols])
            width = len(prof)
            hi, lo = int(np.argmax(prof)), int(np.argmin(prof))
            over = float(prof[hi] - prof[lo])
            edge = (width - 1) / 4
            if over > tau and hi <= edge and (width - 1 - lo) <= edge:
                signed = over
            elif over > tau and lo <= edge and (width - 1 - hi) <= edge:
                signed = -over
            else:
                signed = 0.0
            bands.append({"x0": int(cols[0]), "x1": int(cols[-1]) + 1, "overshoot": over,
                          "argmax": hi, "argmin": lo, "signed": signed})
        result[ch] = {"E": float(np.mean([b["signed"] for b in bands])) if bands else 0.0, "bands": bands}
    return result


def assess(output, stimulus: Stimulus, model_id: str = "", tau: float = TAU, kernel=None) -> EffectReport:
    """Effect values and verdicts of one output image."""
    bands = {}
    if stimulus.family == "band-edge":
        stats = chevreul_statistic(output, stimulus, tau)
        effects = {ch: stats[ch]["E"] for ch in CHANNELS}
        bands = {ch: stats[ch]["bands"] for ch in CHANNELS}
    else:
        effects = effect_magnitude(output, stimulus)
    verdicts = {ch: verdict(effects[ch], stimulus.expected[ch], tau) for ch in CHANNELS}
    return EffectReport(model_id, stimulus.spec, stimulus.family, effects, dict(stimulus.expected),
                        verdicts, tau, kernel, bands)


def evaluate(model, stimulus: Stimulus, tau: float = TAU):
    """Run and assess; returns ``(report, output, profiles)``."""
    m = Model.of(model)
    out, profs = run_on_stimulus(m, stimulus)
    return assess(out, stimulus, m.model_id, tau, m.kernel), out, profs


# ----------------------------------------------------------- sweeps


def sweep_scales(model, kind: str, scales, colored: bool = False, tau: float = TAU) -> SweepReport:
    """One effect report per target scale; oversize scales are recorded as rejected."""
    m = Model.of(model)
    canvas = tuple(m.spec.input_shape[1:])
    cells = []
    for s in scales:
        try:
            stim = generate(StimulusSpec(kind, int(s), colored, canvas))
        except StimulusRejected as exc:
            cells.append({"value": int(s), "status": REJECTED, "reason": str(exc)})
            continue
        cells.append(evaluate(m, stim, tau)[0])
    return SweepReport("scale", kind, [int(s) for s in scales], cells)


def sweep_models(models, kind: str, scale: int | None = None, colored: bool = False, tau: float = TAU,
                 axis: str = "architecture", values=None) -> SweepReport:
    """Evaluate several models on one stimulus."""
    models = [Model.of(m) for m in models]
    values = list(values) if values is not None else [m.model_id for m in models]
    cells = []
    for m in models:
        canvas = tuple(m.spec.input_shape[1:])
        try:
            stim = generate(StimulusSpec(kind, scale, colored, canvas))
        except StimulusRejected as exc:
            cells.append({"value": m.model_id, "status": REJECTED, "reason": str(exc)})
            continue
        cells.append(evaluate(m, stim, tau)[0])
    return SweepReport(axis, kind, values, cells)


def sweep_kernels(task: str, kind: str, dataset, cfg, kernels=(3, 5, 7, 11, 15), scale: int | None = None,
                  colored: bool = False, tau: float = TAU, cache_dir=None, size: int | None = None) -> SweepReport:
    """Train (or load from ``cache_dir``) one base net per kernel size and evaluate each."""
    from vicnn.trainer import train
    from vicnn.zoo import build_base_net

    size = size or dataset.train[0].input.shape[-1]
    models = []
    for k in kernels:
        spec = build_base_net(k, size)
        path = Path(cache_dir) / f"{spec.name}-{task}-seed{cfg.seed}.ckpt" if cache_dir else None
        ckpt = None
        if path is not None and path.exists():
            ckpt = load_checkpoint(path)
            if ckpt.manifest_digest != dataset.digest or ckpt.config != cfg.to_dict():
                log.info("cache %s is stale; retraining", path)
                ckpt = None
        if ckpt is None:
            ckpt = train(spec, dataset, cfg)
            if path is not None:
                save_checkpoint(ckpt, path)
        models.append(ckpt)
    return sweep_models(models, kind, scale, colored, tau, axis="kernel", values=list(kernels))


# ----------------------------------------------------------- reports

CSV_HEADER = ("model", "stimulus", "kind", "colored", "scale", "kernel", "family", "channel",
              "E", "expected", "verdict", "tau")


def report_rows(reports) -> list[dict]:
    rows = []
    for r in reports:
        for ch in CHANNELS:
            rows.append({
                "model": r.model_id, "stimulus": r.stimulus.id, "kind": r.stimulus.kind,
                "colored": int(r.stimulus.colored), "scale": r.stimulus.scale,
                "kernel": "" if r.kernel is None else r.kernel, "family": r.family, "channel": ch,
                "E": repr(float(r.effects[ch])), "expected": r.expected[ch], "verdict": r.verdicts[ch],
                "tau": repr(float(r.tau)),
            })
    return rows


def write_csv(path, rows, header=CSV_HEADER) -> Path:
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def read_csv(path) -> list[dict]:
    import csv

    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def render_report(reports, out_dir, profile_sets=None, name: str = "effects") -> dict:
    """Write ``<name>.csv`` and one SVG per probe.

    ``profile_sets`` is an optional list (parallel to ``reports``) of
    :class:`ProfileRecord` lists; without it no profile plots are drawn.
    """
    from vicnn import svg

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"csv": write_csv(out / f"{name}.csv", report_rows(reports)), "svg": []}
    for r, profs in zip(reports, profile_sets or []):
        for i, prof in enumerate(profs):
            path = out / f"{_slug(r.model_id)}__{r.stimulus.id}__probe{i}.svg"
            path.write_text(svg.profile_plot(prof, colored=r.stimulus.colored,
                                             title=f"{r.model_id} | {r.stimulus.id} | row {prof.probe.row}"),
                            encoding="utf-8")
            written["svg"].append(path)
    return written


SWEEP_HEADER = ("axis", "value", "kind", "model", "channel", "E", "abs_E", "expected", "verdict", "status")


def render_sweep(sweep: SweepReport, out_dir, name: str | None = None) -> dict:
    """CSV of ``|E|`` against the swept value, plus an SVG line plot per channel group."""
    from vicnn import svg

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or f"sweep_{sweep.axis}_{sweep.kind}"
    rows = []
    for v, cell in zip(sweep.values, sweep.cells):
        if isinstance(cell, EffectReport):
            for ch in CHANNELS:
                rows.append({"axis": sweep.axis, "value": v, "kind": sweep.kind, "model": cell.model_id,
                             "channel": ch, "E": repr(cell.effects[ch]), "abs_E": repr(abs(cell.effects[ch])),
                             "expected": cell.expected[ch], "verdict": cell.verdicts[ch], "status": "ok"})
        else:
            rows.append({"axis": sweep.axis, "value": v, "kind": sweep.kind, "model": "", "channel": "",
                         "E": "", "abs_E": "", "expected": "", "verdict": REJECTED, "status": cell["reason"]})
    csv_path = write_csv(out / f"{name}.csv", rows, SWEEP_HEADER)
    svg_path = out / f"{name}.svg"
    series = {ch: sweep.magnitudes(ch) for ch in CHANNELS}
    xlabel = sweep.axis
    if not all(isinstance(v, (int, float)) for v in sweep.values):
        pos = {v: i for i, v in enumerate(sweep.values)}
        series = {ch: [(pos[v], e) for v, e in s] for ch, s in series.items()}
        xlabel = f"{sweep.axis} index"
    svg_path.write_text(svg.line_plot(series, xlabel=xlabel, ylabel="|E|",
                                      title=f"{sweep.kind}: |E| vs {sweep.axis}"), encoding="utf-8")
    return {"csv": csv_path, "svg": svg_path}


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in text)
