"""Command-line entry point: ``predvision {train,classify,track,analyze,inspect}``.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import kernels
from .config import ConfigError, dump_config, load_config
from .hierarchy import TileError, build, load_checkpoint, save_checkpoint, train_on_stream
from .ingest import EmptyStreamError, FrameReadError, load_frame_sequence, load_frames, read_groundtruth
from .readout import (
    ReadoutError, accuracy, collect_all_layers, layer_names, train_classifier, untrained_classifier,
    write_report,
)
from .sparse_coding import NumericError

log = logging.getLogger("predvision")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------

def _config(args):
    overrides = list(args.set or [])
    cfg = load_config(args.config, overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    kernels.set_threads(cfg.threads)
    return cfg


def _frame_source(path, model):
    """A re-iterable frame stream for training."""
    cfg = model.stream_config
    next(iter(load_frame_sequence(path, cfg)))  # fail early on missing or empty sources
    return lambda: load_frame_sequence(path, cfg)


def _stimuli(cfg, field_size, kind, n_per_class, seed):
    from .stimuli import solid_color_dataset, sprite_dataset

    c = cfg.classify
    if kind == "colors":
        return solid_color_dataset(field_size, n_per_class, seed=seed)
    return sprite_dataset(field_size, n_per_class, k=c.classes, seed=seed,
                          scale=(c.scale_min, c.scale_max))


def _plot_bars(path, rows):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(max(4, len(rows) * 0.6), 3))
    ax.bar([r[0] for r in rows], [r[1] for r in rows])
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


# -- commands ------------------------------------------------------------------

def cmd_train(args):
    cfg = _config(args)
    if args.init:
        model = load_checkpoint(args.init)
    else:
        model = build(cfg.hierarchy_spec(), seed=cfg.seed)
    passes = cfg.train.passes if args.passes is None else args.passes
    if passes < 0:
        raise UsageError("--passes must be >= 0")
    source = _frame_source(args.data, model) if passes else None
    out = Path(args.out)
    metrics_path = args.metrics or str(out.with_suffix(".metrics.csv"))
    abort_path = str(out) + ".abort"
    start = time.perf_counter()
    steps_before = model.step_count
    if passes:
        model, _ = train_on_stream(model, source, passes=passes, log_every=args.log_every
                                   or cfg.train.log_every, metrics_path=metrics_path,
                                   abort_checkpoint=abort_path)
    elapsed = time.perf_counter() - start
    save_checkpoint(model, out)
    if args.dump_config:
        dump_config(cfg, args.dump_config)
    steps = model.step_count - steps_before
    rate = steps / elapsed if elapsed > 0 else float("inf")
    print(f"trained {steps} steps in {elapsed:.2f}s ({rate:.1f} steps/s); checkpoint {out}")
    return EXIT_OK


def cmd_classify(args):
    cfg = _config(args)
    if args.classes is not None:
        cfg.classify.classes = args.classes
    model = load_checkpoint(args.checkpoint)
    before = model.weight_checksum()
    F = model.spec.field_size
    c = cfg.classify
    per_class = args.per_class or c.per_class
    test_per_class = args.test_per_class or c.test_per_class
    train_imgs, train_y = _stimuli(cfg, F, args.stimuli, per_class, cfg.seed)
    test_imgs, test_y = _stimuli(cfg, F, args.stimuli, test_per_class, cfg.seed + 1)
    k = int(max(train_y.max(), test_y.max())) + 1
    train_sets = collect_all_layers(model, train_imgs, train_y, settle=c.settle)
    test_sets = collect_all_layers(model, test_imgs, test_y, settle=c.settle)
    rows = []
    for name in layer_names(len(model.levels)):
        if args.untrained_classifier:
            clf = untrained_classifier(train_sets[name], seed=cfg.seed, n_classes=k)
        else:
            clf = train_classifier(train_sets[name], epochs=c.epochs, rate=c.rate,
                                   seed=cfg.seed, n_classes=k)
        rows.append((name, accuracy(clf, test_sets[name]), len(test_sets[name].y)))
        print(f"{name}: accuracy {rows[-1][1]:.4f} on {rows[-1][2]} examples")
    if model.weight_checksum() != before:
        raise RuntimeError("classification modified model weights")
    write_report(args.report, rows)
    _plot_bars(args.plot or str(Path(args.report).with_suffix(".png")), rows)
    return EXIT_OK


def cmd_track(args):
    from .tracker import TrackRun, metrics_dict, plot_curves, run_tracker, write_boxes, write_metrics

    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    video = Path(args.video)
    frames = load_frames(video, resize=False)
    gt_path = Path(args.groundtruth) if args.groundtruth else video / "groundtruth.txt"
    gt = read_groundtruth(gt_path) if gt_path.exists() else None
    if args.box:
        first = [float(v) for v in args.box.split(",")]
    elif gt is not None:
        first = gt[0]
    else:
        raise UsageError("need --box or a ground-truth file for the priming frame")
    if gt is not None and len(gt) != len(frames):
        raise ValueError(f"{len(gt)} ground-truth rows for {len(frames)} frames")
    os.makedirs(args.out, exist_ok=True)
    out = Path(args.out)
    boxes = run_tracker(model, frames, first, cfg.tracker_config())
    write_boxes(out / "boxes.csv", boxes)
    if gt is None:
        log.warning("no ground truth at %s; wrote boxes only", gt_path)
        print(f"tracked {len(frames)} frames; boxes in {out / 'boxes.csv'} (no ground truth)")
        return EXIT_OK
    metrics = metrics_dict(TrackRun(boxes, gt))
    write_metrics(out / "metrics.json", metrics)
    plot_curves(metrics, str(out / "track"))
    print(f"tracked {len(frames)} frames; success AUC {metrics['success_auc']:.3f}")
    return EXIT_OK


ANALYSES = ("dict-grid", "contributors", "v2-composite", "stc", "selectivity", "optimize",
            "stability", "phase")


def cmd_analyze(args):
    from . import analysis as an

    cfg = _config(args)
    a = cfg.analysis
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    os.makedirs(out, exist_ok=True)
    level, cell = args.level, args.cell
    ts, fr = model.spec.tile_size, model.spec.frames_per_input
    name = args.analysis
    written = []
    if name == "dict-grid":
        if level != 1:
            raise UsageError("dict-grid renders pixel-level dictionaries (--level 1)")
        path = out / f"dict-grid_{level}_all.png"
        an.save_png(path, an.render_dictionary_grid(model.levels[0].dictionary.D, ts, fr),
                    upscale=args.upscale)
        written.append(path)
    elif name == "contributors":
        path = out / f"contributors_{level}_{cell}.png"
        an.save_png(path, an.render_complex_contributors(model, cell, level, a.top_n),
                    upscale=args.upscale)
        written.append(path)
    elif name == "v2-composite":
        path = out / f"v2-composite_2_{cell}.png"
        an.save_png(path, an.render_v2_composite(model, cell), upscale=args.upscale)
        written.append(path)
    elif name == "stc":
        frames = args.frames or a.stc_frames
        dim = model.levels[0].spec.input_dim
        res = an.stc_analysis(an.tile_response(model, cell, level, args.tile), dim,
                              num_frames=frames, seed=cfg.seed)
        spec_path = out / f"stc_{level}_{cell}.csv"
        an.write_spectrum(spec_path, res)
        img_path = out / f"stc_{level}_{cell}.png"
        an.save_png(img_path, an.render_stc(res, ts, fr), upscale=args.upscale)
        written += [spec_path, img_path]
    elif name in ("selectivity", "optimize"):
        if not args.data:
            raise UsageError(f"{name} needs --data")
        frames = load_frames(args.data, model.stream_config)
        if name == "selectivity":
            hits, n_eval = an.selectivity_search(model, frames, cell, level, args.tile,
                                                 stride=args.stride or a.stride, top=a.top)
            path = out / f"selectivity_{level}_{cell}.json"
            an.write_json(path, {"evaluated": n_eval,
                                 "hits": [{"frame": h.frame_index, "s": h.s} for h in hits]})
            written.append(path)
            if hits:
                img = out / f"selectivity_{level}_{cell}.png"
                an.save_png(img, an.tile_patches([h.frame for h in hits], 3, 1))
                written.append(img)
        else:
            res = an.optimize_stimulus(model, frames, cell, level, args.tile,
                                       basis_dim=args.basis_dim or a.basis_dim,
                                       max_iter=a.max_iter, seed=cfg.seed)
            img = out / f"optimize_{level}_{cell}.png"
            an.save_png(img, res.image, upscale=args.upscale)
            path = out / f"optimize_{level}_{cell}.json"
            an.write_json(path, {"s": res.s, "s_initial": res.s_initial,
                                 "iterations": res.iterations})
            written += [img, path]
    elif name == "stability":
        probe = None
        if args.data:
            probe = load_frames(args.data, model.stream_config)[: a.probe_frames]
        report = an.stability_report(model, probe)
        path = out / "stability_all_all.json"
        an.write_json(path, report)
        written.append(path)
        for lv in report["levels"]:
            print(f"level {lv['level']}: max real part {lv['max_real']:.4f}")
    elif name == "phase":
        s_med, c_med, details = an.phase_modulation(model, level)
        path = out / f"phase_{level}_all.json"
        an.write_json(path, {"simple_median": s_med, "complex_median": c_med, **details})
        written.append(path)
    else:
        raise UsageError(f"unknown analysis {name!r}; choose from {', '.join(ANALYSES)}")
    for p in written:
        print(p)
    return EXIT_OK


def cmd_inspect(args):
    chunks = ckpt.read_container(args.checkpoint)
    summary = {"chunks": {k: len(v) for k, v in chunks.items()}}
    if "spec" in chunks:
        model = load_checkpoint(args.checkpoint)
        summary["spec"] = model.spec.to_dict()
        summary["step_count"] = model.step_count
        summary["tiles"] = model.spec.n_tiles
        summary["neurons"] = model.spec.neuron_count()
        summary["levels"] = [{
            "level": lvl.spec.index, "tiles": lvl.spec.n_tiles, "K": lvl.spec.K,
            "dictionary_updates": lvl.dictionary.update_count, "s": lvl.dictionary.s,
            "complex_steps": lvl.weights.t,
            "column_norm_range": [float(np.linalg.norm(lvl.dictionary.D, axis=0).min()),
                                  float(np.linalg.norm(lvl.dictionary.D, axis=0).max())],
        } for lvl in model.levels]
        summary["weight_checksum"] = model.weight_checksum()
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config file (section.key = value lines)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key, e.g. model.K=64 (repeatable)")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--threads", type=int, help="worker threads for tile encoding")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="predvision", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="learn a model from a frame stream")
    t.add_argument("--data", required=True, help="frame directory or raw planar RGB blob")
    t.add_argument("--passes", type=int)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="metrics CSV (default: next to the checkpoint)")
    t.add_argument("--log-every", type=int)
    t.add_argument("--init", help="continue training from this checkpoint")
    t.add_argument("--dump-config", help="write the effective config here")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("classify", parents=[common], help="per-layer sprite classification")
    c.add_argument("checkpoint")
    c.add_argument("--report", required=True, help="CSV report path")
    c.add_argument("--plot", help="bar plot PNG (default: next to the report)")
    c.add_argument("--classes", type=int)
    c.add_argument("--per-class", type=int)
    c.add_argument("--test-per-class", type=int)
    c.add_argument("--stimuli", choices=("sprites", "colors"), default="sprites")
    c.add_argument("--untrained-classifier", action="store_true",
                   help="score randomly initialized classifiers (chance calibration)")
    c.set_defaults(func=cmd_classify)

    k = sub.add_parser("track", parents=[common], help="windowed heatmap tracking")
    k.add_argument("checkpoint")
    k.add_argument("--video", required=True, help="directory of frames")
    k.add_argument("--groundtruth", help="x,y,w,h per line (default: VIDEO/groundtruth.txt)")
    k.add_argument("--box", help="priming box x,y,w,h when there is no ground truth")
    k.add_argument("--out", required=True, help="output directory")
    k.set_defaults(func=cmd_track)

    a = sub.add_parser("analyze", parents=[common], help="receptive-field analyses")
    a.add_argument("checkpoint")
    a.add_argument("analysis", help="one of: " + ", ".join(ANALYSES))
    a.add_argument("--level", type=int, default=1)
    a.add_argument("--cell", type=int, default=0)
    a.add_argument("--tile", type=int, default=0)
    a.add_argument("--frames", type=int, help="white-noise frames for stc")
    a.add_argument("--stride", type=int)
    a.add_argument("--basis-dim", type=int)
    a.add_argument("--data", help="frames for selectivity/optimize/stability probes")
    a.add_argument("--upscale", type=int, default=1)
    a.add_argument("--out", default=".", help="output directory")
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("inspect", parents=[common], help="summarize a checkpoint")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:       # usage errors and --help
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"predvision: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, TileError, FloatingPointError) as exc:
        print(f"predvision: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, EmptyStreamError, FrameReadError, ckpt.CheckpointError,
            ReadoutError, ValueError, OSError) as exc:
        print(f"predvision: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
