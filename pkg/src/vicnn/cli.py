"""``vicnn`` command line entry point.

Every subcommand accepts ``--config FILE`` (a JSON object keyed by option
name, e.g. ``{"batch_size": 8}``); options given on the command line win.
Each run writes a JSON run manifest next to its artifacts.

Exit codes: 0 ok, 2 usage, 3 data, 4 validation, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from vicnn import __version__
from vicnn.errors import DataError, NumericError, ValidationError, VicnnError

log = logging.getLogger("vicnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4, 5


class UsageError(VicnnError):
    exit_code = EXIT_USAGE


# ----------------------------------------------------------------- helpers


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, [], "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command}: missing required option(s) {flags}")


def _digest(path) -> str:
    from vicnn.data import file_digest

    return file_digest(path)


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    return v


class RunManifest:
    """What was run, with which resolved options, on which inputs, producing what."""

    def __init__(self, args):
        self.command = args.command
        skip = {"func", "config", "command"}
        self.config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip}
        self.seeds = {k: v for k, v in self.config.items() if k == "seed" or k.endswith("_seed")}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.extra: dict = {}
        self._t0 = time.time()

    def add_input(self, path):
        p = Path(path)
        if p.is_file():
            self.inputs[str(p)] = _digest(p)

    def add_output(self, path):
        self.outputs.append(str(path))

    def to_dict(self) -> dict:
        return {
            "format": "vicnn-run",
            "version": __version__,
            "subcommand": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings": {"started": self._t0, "seconds": round(time.time() - self._t0, 3)},
            "platform": {"python": platform.python_version(), "numpy": np.__version__},
            **self.extra,
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


# ----------------------------------------------------------------- subcommands


def cmd_stimuli(args) -> int:
    from vicnn.stimuli import KINDS, StimulusSpec, generate, save_stimulus, validate_stimulus

    _require(args, "out")
    kinds = KINDS if args.kind == "all" else (args.kind,)
    scales = args.scales or [None]
    modes = (False, True) if args.both_modes else (args.colored,)
    run = RunManifest(args)
    out = Path(args.out)
    summary = []
    for kind in kinds:
        for s in scales:
            for colored in modes:
                stim = generate(StimulusSpec(kind, s, colored, (args.size, args.size)))
                info = validate_stimulus(stim)
                paths = save_stimulus(stim, out)
                run.add_output(paths["image"])
                run.add_output(paths["meta"])
                run.outputs += [str(p) for p in paths["masks"]]
                summary.append(info)
                print(f"{stim.id}: ok  areas={info['mask_areas']}")
    run.extra["stimuli"] = summary
    run.write(out / "run.json")
    return EXIT_OK


def cmd_corpus(args) -> int:
    from vicnn.data import make_desk_corpus

    _require(args, "out")
    run = RunManifest(args)
    paths = make_desk_corpus(args.out, n=args.n, seed=args.seed)
    run.outputs += [str(p) for p in paths]
    run.write(Path(args.out) / "run.json")
    print(f"wrote {len(paths)} images to {args.out}")
    return EXIT_OK


def _dataset(args):
    from vicnn.data import SplitConfig, prepare

    cfg = SplitConfig(tuple(args.fractions), args.split_seed if args.split_seed is not None else args.seed)
    return prepare(args.corpus, args.task, seed=args.seed, canvas=args.size, cfg=cfg)


def cmd_prepare(args) -> int:
    from vicnn.stimuli import to_uint8

    _require(args, "corpus", "out")
    from PIL import Image

    run = RunManifest(args)
    ds = _dataset(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(ds.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    run.add_output(mpath)
    for i, pair in enumerate(ds.train[: args.preview]):
        p = out / f"preview_{i:02d}.png"
        Image.fromarray(np.concatenate([to_uint8(pair.input), to_uint8(pair.target)], axis=1)).save(p)
        run.add_output(p)
    run.extra["manifest_digest"] = ds.digest
    run.extra["sizes"] = {"train": len(ds.train), "val": len(ds.val), "test": len(ds.test)}
    run.write(out / "run.json")
    print(f"{args.task}: train {len(ds.train)}  val {len(ds.val)}  test {len(ds.test)}  digest {ds.digest[:12]}")
    return EXIT_OK


def cmd_zoo(args) -> int:
    from vicnn.zoo import BUILDERS, build, save_spec

    if args.action == "list":
        print(f"{'name':<20} {'params':>9}  layers")
        for name in BUILDERS:
            spec = build(name, size=args.size, depth=args.depth)
            print(f"{name:<20} {spec.param_count():>9}  {len(spec.layers)}")
        return EXIT_OK
    _require(args, "arch", "out")
    spec = build(args.arch, kernel=args.kernel, size=args.size, depth=args.depth)
    save_spec(spec, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _train_config(args):
    from vicnn.trainer import TrainConfig

    return TrainConfig(max_epochs=args.epochs, batch_size=args.batch_size, patience=args.patience,
                       eval_every=args.eval_every, lr=args.lr, seed=args.seed, task=args.task)


def cmd_train(args) -> int:
    from vicnn.checkpoint import save_checkpoint
    from vicnn.trainer import train
    from vicnn.zoo import build, load_spec

    _require(args, "task", "corpus", "out")
    run = RunManifest(args)
    spec = load_spec(args.spec) if args.spec else build(args.arch, kernel=args.kernel, size=args.size, depth=args.depth)
    if args.spec:
        run.add_input(args.spec)
    ds = _dataset(args)
    for f in sorted(ds.manifest["files"]):
        run.inputs[str(Path(args.corpus) / f)] = ds.manifest["files"][f]
    cfg = _train_config(args)
    out = Path(args.out)

    def report(h):
        print(f"epoch {h['epoch']:3d}  train {h['train_loss']:.6f}  val {h['val_loss']:.6f}", flush=True)

    try:
        ckpt = train(spec, ds, cfg, on_epoch=report)
    except NumericError as exc:
        if exc.checkpoint is not None:
            bad = out.with_name(out.stem + ".diverged" + out.suffix)
            save_checkpoint(exc.checkpoint, bad)
            run.add_output(bad)
        run.extra["status"] = "diverged"
        run.write(out.with_suffix(".run.json"))
        raise
    save_checkpoint(ckpt, out)
    run.add_output(out)
    run.extra.update(status="ok", manifest_digest=ds.digest, best_epoch=ckpt.best_epoch,
                     best_val_loss=min(h["val_loss"] for h in ckpt.history))
    run.write(out.with_suffix(".run.json"))
    print(f"saved {out} (best epoch {ckpt.best_epoch})")
    return EXIT_OK


def _load_models(paths):
    from vicnn.checkpoint import load_checkpoint
    from vicnn.evaluation import Model

    models = []
    for p in paths:
        if not Path(p).is_file():
            raise DataError(f"checkpoint not found: {p}")
        models.append(Model.of(load_checkpoint(p)))
    return models


def _print_reports(reports):
    for r in reports:
        cells = "  ".join(f"{c}={r.effects[c]:+.4f}/{r.verdicts[c]}" for c in ("R", "G", "B", "Y"))
        print(f"{r.model_id:<28} {r.stimulus.id:<34} {cells}")


def cmd_eval(args) -> int:
    from vicnn import evaluation as ev
    from vicnn.stimuli import KINDS, StimulusSpec, generate

    _require(args, "ckpt", "out")
    run = RunManifest(args)
    for p in args.ckpt:
        run.add_input(p)
    models = _load_models(args.ckpt)
    kinds = KINDS if args.illusion == "all" else (args.illusion,)
    modes = (False, True) if args.both_modes else (args.colored,)
    reports, profs = [], []
    for m in models:
        canvas = tuple(m.spec.input_shape[1:])
        for kind in kinds:
            for s in args.scales or [None]:
                for colored in modes:
                    stim = generate(StimulusSpec(kind, s, colored, canvas))
                    r, _, pr = ev.evaluate(m, stim, args.tau)
                    reports.append(r)
                    profs.append(pr)
    written = ev.render_report(reports, args.out, profs)
    run.add_output(written["csv"])
    run.outputs += [str(p) for p in written["svg"]]
    run.write(Path(args.out) / "run.json")
    _print_reports(reports)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from vicnn import evaluation as ev

    _require(args, "out")
    run = RunManifest(args)
    kinds = _kinds(args.illusion)
    sweeps = []
    if args.axis == "scale":
        _require(args, "ckpt")
        for p in args.ckpt:
            run.add_input(p)
        for m in _load_models(args.ckpt):
            for kind in kinds:
                sweeps.append((m.model_id, ev.sweep_scales(m, kind, args.scales or [3, 4, 8, 12], args.colored,
                                                           args.tau)))
    elif args.axis == "architecture":
        _require(args, "ckpt")
        for p in args.ckpt:
            run.add_input(p)
        models = _load_models(args.ckpt)
        for kind in kinds:
            for s in args.scales or [None]:
                sweeps.append(("", ev.sweep_models(models, kind, s, args.colored, args.tau)))
    else:
        _require(args, "corpus", "task")
        ds = _dataset(args)
        cfg = _train_config(args)
        for kind in kinds:
            for s in args.scales or [None]:
                sweeps.append(("", ev.sweep_kernels(args.task, kind, ds, cfg, args.kernels, s, args.colored, args.tau,
                                                    cache_dir=args.cache, size=args.size)))
    for prefix, sw in sweeps:
        scale = {c.stimulus.scale for c in sw.reports}
        name = "_".join(x for x in ("sweep", sw.axis, sw.kind, prefix,
                                    f"s{scale.pop()}" if sw.axis != "scale" and len(scale) == 1 else "") if x)
        written = ev.render_sweep(sw, args.out, name=name)
        run.add_output(written["csv"])
        run.add_output(written["svg"])
        print(f"{name}: " + "  ".join(f"{v}:{e:.4f}" for v, e in sw.magnitudes("Y")))
    run.write(Path(args.out) / "run.json")
    return EXIT_OK


def _kinds(name):
    from vicnn.stimuli import KINDS

    return KINDS if name == "all" else (name,)


def cmd_gradcheck(args) -> int:
    from vicnn.engine.gradcheck import format_table, run_all

    run = RunManifest(args)
    results = []
    for seed in range(args.seed, args.seed + args.repeats):
        results += run_all(seed)
    table = format_table(results)
    print(table)
    worst = max(r.max_rel_error for r in results)
    failed = [r for r in results if not r.ok]
    print(f"{len(results)} checks, max relative error {worst:.3e}, {len(failed)} failed")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text(table + "\n", encoding="utf-8")
        run.add_output(out / "gradcheck.txt")
        run.extra.update(max_rel_error=worst, failed=len(failed))
        run.write(out / "run.json")
    if failed:
        raise NumericError(f"{len(failed)} gradient checks exceed tolerance")
    return EXIT_OK


# ----------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--config", metavar="FILE", help="JSON file of option values; command-line flags win")
    p.add_argument("--threads", type=int, metavar="N", help="cap on BLAS worker threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _data_opts(p, task_required=True):
    from vicnn.data import TASKS

    p.add_argument("--task", choices=TASKS, help="restoration task" + (" (required)" if task_required else ""))
    p.add_argument("--corpus", metavar="DIR", help="directory of training images")
    p.add_argument("--seed", type=int, default=0, help="master seed for corruption, init and shuffling")
    p.add_argument("--split-seed", type=int, help="seed of the train/val/test split (default: --seed)")
    p.add_argument("--fractions", type=float, nargs=3, default=[0.7, 0.2, 0.1], metavar=("TRAIN", "VAL", "TEST"),
                   help="split fractions")
    p.add_argument("--size", type=int, default=128, help="square canvas size in pixels")


def _train_opts(p):
    p.add_argument("--arch", default="base", help="architecture name (see `vicnn zoo list`)")
    p.add_argument("--spec", metavar="FILE", help="model spec JSON; overrides --arch")
    p.add_argument("--kernel", type=int, help="override every conv kernel size")
    p.add_argument("--depth", type=int, default=8, help="depth of deep_residual")
    p.add_argument("--epochs", type=int, default=100, help="maximum epochs")
    p.add_argument("--batch-size", type=int, default=32, help="mini-batch size")
    p.add_argument("--patience", type=int, default=2, help="evaluations without improvement before stopping")
    p.add_argument("--eval-every", type=int, default=1, help="epochs between validation evaluations")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")


def _eval_opts(p):
    from vicnn.evaluation import TAU
    from vicnn.stimuli import KINDS

    p.add_argument("--illusion", choices=KINDS + ("all",), default="all", help="stimulus kind")
    p.add_argument("--scales", type=_int_list, help="comma-separated target scales (default: baseline)")
    p.add_argument("--colored", action="store_true", help="use the colored variant")
    p.add_argument("--tau", type=float, default=TAU, help="verdict dead zone")


def build_parser() -> argparse.ArgumentParser:
    from vicnn.stimuli import KINDS

    parser = argparse.ArgumentParser(prog="vicnn", description="Visual-illusion experiments on small CNNs.")
    parser.add_argument("--version", action="version", version=f"vicnn {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("stimuli", help="generate and validate illusion stimuli")
    _common(p)
    p.add_argument("--kind", choices=KINDS + ("all",), default="all", help="stimulus kind")
    p.add_argument("--scale", dest="scales", type=_int_list, help="comma-separated target scales (default: baseline)")
    p.add_argument("--colored", action="store_true", help="colored variant")
    p.add_argument("--both-modes", action="store_true", help="write grayscale and colored variants")
    p.add_argument("--size", type=int, default=128, help="square canvas size")
    p.add_argument("--out", metavar="DIR", help="output directory (required)")
    p.set_defaults(func=cmd_stimuli)

    p = sub.add_parser("corpus", help="build a desk-scale corpus from photographs bundled with installed packages")
    _common(p)
    p.add_argument("--n", type=int, default=200, help="number of images")
    p.add_argument("--seed", type=int, default=0, help="crop seed")
    p.add_argument("--out", metavar="DIR", help="output directory (required)")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("prepare", help="ingest and split a corpus; write its manifest and corruption previews")
    _common(p)
    _data_opts(p)
    p.add_argument("--preview", type=int, default=4, help="number of input/target preview images")
    p.add_argument("--out", metavar="DIR", help="output directory (required)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("zoo", help="list architectures or export a model spec")
    _common(p)
    p.add_argument("action", choices=("list", "export"), help="list builders or export one spec")
    p.add_argument("--arch", help="architecture to export")
    p.add_argument("--kernel", type=int, help="override every conv kernel size")
    p.add_argument("--depth", type=int, default=8, help="depth of deep_residual")
    p.add_argument("--size", type=int, default=128, help="square input size")
    p.add_argument("--out", metavar="FILE", help="spec JSON path for export")
    p.set_defaults(func=cmd_zoo)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p)
    _data_opts(p)
    _train_opts(p)
    p.add_argument("--out", metavar="CKPT", help="checkpoint path (required)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run checkpoints on stimuli; write effect CSV and profile plots")
    _common(p)
    p.add_argument("--ckpt", nargs="+", metavar="CKPT", help="checkpoint file(s) (required)")
    _eval_opts(p)
    p.add_argument("--both-modes", action="store_true", help="evaluate grayscale and colored variants")
    p.add_argument("--out", metavar="DIR", help="output directory (required)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="|E| across target scales, kernel sizes or architectures")
    _common(p)
    p.add_argument("--axis", choices=("scale", "kernel", "architecture"), default="scale", help="swept variable")
    p.add_argument("--ckpt", nargs="+", metavar="CKPT", help="checkpoint(s) for the scale and architecture axes")
    _eval_opts(p)
    _data_opts(p, task_required=False)
    _train_opts(p)
    p.add_argument("--kernels", type=_int_list, default=[3, 5, 7, 11, 15], help="kernel sizes for the kernel axis")
    p.add_argument("--cache", metavar="DIR", help="checkpoint cache for the kernel axis")
    p.add_argument("--out", metavar="DIR", help="output directory (required)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every engine op")
    _common(p)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--repeats", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--out", metavar="DIR", help="optional directory for the table and run manifest")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _apply_config(parser, argv):
    """Parse twice: once to find ``--config``, then with its values as defaults."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    path = Path(args.config)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    known = set(vars(args)) - {"func", "command", "config"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {unknown}")
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    sub.choices[args.command].set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except VicnnError as exc:
        print(f"vicnn: error: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("vicnn: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except VicnnError as exc:
        print(f"vicnn: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"vicnn: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError) as exc:
        print(f"vicnn: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FloatingPointError as exc:
        print(f"vicnn: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _thread_limit(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    os.environ["OMP_NUM_THREADS"] = str(n)
    return threadpool_limits(limits=n)


if __name__ == "__main__":
    sys.exit(main())
