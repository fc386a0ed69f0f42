"""Command line entry point wiring all modules into reproducible runs.

A JSON config file is the source of truth for every experiment knob;
command line flags override individual keys for one invocation. The
resolved config (file + overrides) is embedded in each run summary, so
any artifact can be regenerated from its summary alone.

Exit codes: 0 ok, 2 usage or config, 3 file IO, 4 protocol or backend,
5 data validation.
"""

import argparse
import copy
import json
import os
import shlex
import sys

from .backends import (
    make_edge_degraded,
    make_external_backend,
    make_linear_backend,
    make_oracle_backend,
)
from .errors import (
    BackendError,
    ConfigError,
    LandtileError,
    ProtocolError,
    RasterIOError,
    ValidationError,
)
from .evaluate import (
    ConfusionMatrix,
    boundary_accuracy,
    confusion_streamed,
    overall_accuracy,
    report,
)
from .model import TrainConfig, load_model, save_model, train_linear
from .pipeline import InferenceJob, infer_map
from .raster import (
    DEFAULT_SCHEME,
    ClassScheme,
    RasterGrid,
    RasterReader,
    export_class_png,
    read_class_map,
    translate_geotransform,
    write_raster,
)
from .spectral import MODES
from .synth import SceneSpec, generate_corpus, load_manifest
from .tiling import TileSpec, extract_tile, keep_tile, plan_tiles, read_tile_array

DEFAULT_CONFIG = {
    "seed": 0,
    "out_dir": "landtile_run",
    "mode": "LU6",
    "workers": 1,
    "scene": {
        "width": 512,
        "height": 512,
        "rectangles": 5,
        "blobs": 10,
        "lines": 4,
        "buildings": 4,
    },
    "corpus": {
        "scenes": 20,
        "dir": "corpus",
    },
    "tiles": {
        "tile": 640,
        "stride": 320,
        "pad_mode": "mirror",
    },
    # Desk-scale recipe for the built-in per-pixel model: it converges in
    # minutes on synthetic corpora. A deep backend would use its own.
    "train": {
        "learning_rate": 1e-2,
        "weight_decay": 5e-4,
        "beta1": 0.99,
        "beta2": 0.999,
        "batch_size": 12,
        "epochs": 40,
        "augment": True,
        "tile": 128,
        "stride": 128,
        "min_labeled_frac": 0.0,
    },
    "backend": {
        "kind": "linear",  # linear | oracle | external
        "model": None,
        "truth": None,
        "command": None,
        "timeout": 60.0,
    },
    "degrade": {
        "band": 0,
        "flip_prob": 0.0,
        "seed": 0,
    },
    "eval": {
        "band": None,
    },
}


def _merge_config(base, update, path=""):
    out = {}
    for key, default in base.items():
        if key not in update:
            out[key] = copy.deepcopy(default)
        elif isinstance(default, dict):
            if not isinstance(update[key], dict):
                raise ConfigError(
                    f"config key {path}{key} must be an object")
            out[key] = _merge_config(default, update[key], f"{path}{key}.")
        else:
            out[key] = update[key]
    unknown = sorted(set(update) - set(base))
    if unknown:
        raise ConfigError(
            f"unknown config key '{path}{unknown[0]}'")
    return out


def load_config(path=None) -> dict:
    """Defaults, overlaid with the file at `path` when given."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return _merge_config(DEFAULT_CONFIG, doc)


def _apply_overrides(cfg, args):
    """Copy provided flag values over their config keys."""
    direct = {
        "seed": "seed", "out_dir": "out_dir", "mode": "mode",
        "workers": "workers",
    }
    nested = {
        "scenes": ("corpus", "scenes"),
        "width": ("scene", "width"),
        "height": ("scene", "height"),
        "tile": ("tiles", "tile"),
        "stride": ("tiles", "stride"),
        "pad_mode": ("tiles", "pad_mode"),
        "lr": ("train", "learning_rate"),
        "epochs": ("train", "epochs"),
        "batch_size": ("train", "batch_size"),
        "model": ("backend", "model"),
        "truth": ("backend", "truth"),
        "backend_cmd": ("backend", "command"),
        "band": ("eval", "band"),
        "degrade_band": ("degrade", "band"),
        "degrade_flip": ("degrade", "flip_prob"),
    }
    for flag, key in direct.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    for flag, (section, key) in nested.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[section][key] = value
    return cfg


def _as_config_error(fn, *args, **kwargs):
    """Constructor failures over config values are config mistakes."""
    try:
        return fn(*args, **kwargs)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _tile_spec(cfg, no_overlap=False):
    t = cfg["tiles"]
    stride = t["tile"] if no_overlap else t["stride"]
    return _as_config_error(TileSpec, tile=t["tile"], stride=stride,
                            pad_mode=t["pad_mode"])


def _train_config(cfg):
    t = cfg["train"]
    return _as_config_error(
        TrainConfig, learning_rate=t["learning_rate"],
        weight_decay=t["weight_decay"], beta1=t["beta1"], beta2=t["beta2"],
        batch_size=t["batch_size"], epochs=t["epochs"], seed=cfg["seed"],
        augment=t["augment"])


def _train_tile_spec(cfg):
    t = cfg["train"]
    return _as_config_error(TileSpec, tile=t["tile"], stride=t["stride"])


def _out_dir(cfg):
    os.makedirs(cfg["out_dir"], exist_ok=True)
    return cfg["out_dir"]


def _write_json(doc, path):
    try:
        with open(path, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
    except OSError as e:
        raise RasterIOError(f"cannot write {path}: {e}") from e


def cmd_synth(cfg, args):
    spec = _as_config_error(
        SceneSpec,
        width=cfg["scene"]["width"], height=cfg["scene"]["height"],
        rectangles=cfg["scene"]["rectangles"], blobs=cfg["scene"]["blobs"],
        lines=cfg["scene"]["lines"], buildings=cfg["scene"]["buildings"])
    corpus_dir = os.path.join(cfg["out_dir"], cfg["corpus"]["dir"])
    manifest = generate_corpus(corpus_dir, cfg["corpus"]["scenes"],
                               cfg["seed"], spec)
    n = len(manifest["scenes"])
    n_val = sum(1 for s in manifest["scenes"] if s["split"] == "val")
    print(f"wrote {n} scenes ({n - n_val} train, {n_val} val) to "
          f"{os.path.join(corpus_dir, 'manifest.json')}")
    return 0


def cmd_slice(cfg, args):
    spec = _tile_spec(cfg)
    out = _out_dir(cfg)
    truth = read_class_map(args.labels) if args.labels else None
    written = 0
    with RasterReader(args.image) as reader:
        plan = plan_tiles(reader.width, reader.height, spec)
        with open(os.path.join(out, "plan.json"), "w") as f:
            f.write(plan.to_json())
            f.write("\n")
        for k in range(plan.n_tiles):
            label_tile = extract_tile(truth, plan, k) if truth else None
            if label_tile is not None and not keep_tile(
                    label_tile.labels, args.keep_frac):
                continue
            i, j = plan.tile_ij(k)
            win = plan.source_window(k)
            arr = read_tile_array(reader, plan, k)
            grid = RasterGrid(
                width=win.w, height=win.h, bands=reader.bands,
                dtype=reader.dtype, data=arr, nodata=reader.nodata,
                geotransform=translate_geotransform(
                    reader.geotransform, win.x0, win.y0),
                band_names=list(reader.band_names))
            write_raster(grid, os.path.join(out, f"tile_{i:03d}_{j:03d}.rstr"))
            if label_tile is not None:
                tile_grid = RasterGrid(
                    width=win.w, height=win.h, bands=1, dtype="u8",
                    data=label_tile.labels[None], nodata=255,
                    geotransform=label_tile.geotransform,
                    band_names=["labels"])
                write_raster(tile_grid, os.path.join(
                    out, f"tile_{i:03d}_{j:03d}_labels.rstr"))
            written += 1
    print(f"wrote {written} of {plan.n_tiles} tiles to {out}")
    return 0


def cmd_train(cfg, args):
    manifest = load_manifest(args.manifest)
    mode = cfg["mode"]
    model, log = train_linear(
        manifest, mode, _train_config(cfg), _train_tile_spec(cfg),
        cfg["train"]["min_labeled_frac"])
    out = _out_dir(cfg)
    model_path = args.model_out or os.path.join(
        out, f"model_{mode.lower()}.lt")
    save_model(model, model_path)
    _write_json({
        "mode": mode,
        "tiles": log["tiles"],
        "steps": log["steps"],
        "epoch_loss": log["epoch_loss"],
        "config": cfg,
    }, model_path + ".log.json")
    print(f"trained {mode} on {log['tiles']} tiles, "
          f"final loss {log['epoch_loss'][-1]:.4f}, wrote {model_path}")
    return 0


def _resolve_backend(cfg, spec):
    """Returns (factory, k or None, norm or None) from the backend config."""
    b = cfg["backend"]
    kind = b["kind"]
    if b["command"]:
        kind = "external"
    elif b["truth"] and kind != "external":
        kind = "oracle"
    if kind == "linear":
        if not b["model"]:
            raise ConfigError("linear backend needs a model path")
        model = load_model(b["model"])
        if model.mode and model.mode != cfg["mode"]:
            raise ConfigError(
                f"model was trained for {model.mode}, run asks for "
                f"{cfg['mode']}")
        return lambda: make_linear_backend(model), model.k, model.norm
    if kind == "oracle":
        if not b["truth"]:
            raise ConfigError("oracle backend needs a truth map path")
        truth = read_class_map(b["truth"])
        k = DEFAULT_SCHEME.k
        return (lambda: make_oracle_backend(truth, spec.pad_mode)), k, None
    if kind == "external":
        if not b["command"]:
            raise ConfigError("external backend needs a command line")
        command = shlex.split(b["command"]) if isinstance(b["command"], str) \
            else list(b["command"])
        channels = len(MODES[cfg["mode"]])
        timeout = b["timeout"]
        return (lambda: make_external_backend(
            command, channels, tile=spec.tile, timeout=timeout),
            DEFAULT_SCHEME.k, None)
    raise ConfigError(f"unknown backend kind {kind!r}")


def _render_scheme(k):
    """Color scheme for a k-class map; names are generic off the default."""
    if k == DEFAULT_SCHEME.k:
        return DEFAULT_SCHEME
    return ClassScheme(tuple(
        (i, f"class_{i}", ((53 * i + 60) % 256, (97 * i + 120) % 256,
                           (173 * i + 30) % 256))
        for i in range(k)))


def cmd_infer(cfg, args):
    if cfg["mode"] not in MODES:
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    spec = _tile_spec(cfg, no_overlap=args.no_overlap)
    factory, k, norm = _resolve_backend(cfg, spec)
    d = cfg["degrade"]
    if d["band"] and d["flip_prob"]:
        inner = factory
        factory = (lambda: make_edge_degraded(
            inner(), d["band"], d["flip_prob"], d["seed"], k))
    out = _out_dir(cfg)
    map_path = args.output or os.path.join(out, "map.rstr")
    job = InferenceJob(
        image=args.image, output=map_path, mode=cfg["mode"],
        backend_factory=factory, spec=spec, workers=cfg["workers"],
        norm=norm, progress=not args.quiet, config=cfg)
    cmap, summary = infer_map(job)
    outputs = map_path
    if not args.no_png:
        png_path = args.png or (map_path[:-5] if map_path.endswith(".rstr")
                                else map_path) + ".png"
        export_class_png(cmap, _render_scheme(k), png_path)
        outputs += f" and {png_path}"
    summary_path = args.summary or map_path + ".summary.json"
    _write_json(summary, summary_path)
    print(f"wrote {outputs} ({summary['tiles']} tiles, "
          f"{summary['seconds']}s)")
    return 0


def cmd_eval(cfg, args):
    k = DEFAULT_SCHEME.k
    names = DEFAULT_SCHEME.names
    cm = confusion_streamed(args.pred, args.truth, k)
    meta = {"pred": args.pred, "truth": args.truth, "config": cfg}
    band = cfg["eval"]["band"]
    if band is not None:
        pred = read_class_map(args.pred)
        truth = read_class_map(args.truth)
        plan = plan_tiles(pred.width, pred.height, _tile_spec(cfg))
        meta["band"] = band
        meta["boundary_accuracy"] = boundary_accuracy(
            pred, truth, plan, band, k)
    out = _out_dir(cfg)
    report_path = args.report or os.path.join(out, "report.json")
    doc = report(cm, names, report_path, meta)
    line = f"overall accuracy {doc['overall_accuracy']:.4f}"
    if "boundary_accuracy" in meta:
        line += f", boundary accuracy {meta['boundary_accuracy']:.4f}"
    print(f"{line}, wrote {report_path}")
    return 0


def cmd_ablation(cfg, args):
    manifest = load_manifest(args.manifest)
    scheme = ClassScheme.from_json(manifest["class_scheme"])
    val = [s for s in manifest["scenes"] if s["split"] == "val"]
    if not val:
        raise ValidationError("manifest has no validation scenes")
    out = _out_dir(cfg)
    rows = []
    for mode in ("LU3", "LU6"):
        run_cfg = copy.deepcopy(cfg)
        run_cfg["mode"] = mode
        model, log = train_linear(
            manifest, mode, _train_config(cfg), _train_tile_spec(cfg),
            cfg["train"]["min_labeled_frac"])
        model_path = os.path.join(out, f"ablation_model_{mode.lower()}.lt")
        save_model(model, model_path)
        for tiling, spec in (("overlap", _tile_spec(cfg)),
                             ("none", _tile_spec(cfg, no_overlap=True))):
            cm = ConfusionMatrix(scheme.k)
            for n, scene in enumerate(val):
                map_path = os.path.join(
                    out, f"ablation_{mode.lower()}_{tiling}_{n:03d}.rstr")
                job = InferenceJob(
                    image=scene["image"], output=map_path, mode=mode,
                    backend_factory=lambda: make_linear_backend(model),
                    spec=spec, workers=cfg["workers"], norm=model.norm,
                    config=run_cfg)
                cmap, _ = infer_map(job)
                truth = read_class_map(scene["labels"])
                cm.accumulate(truth.labels, cmap.labels)
            rows.append({"mode": mode, "tiling": tiling,
                         "overall_accuracy": overall_accuracy(cm)})
    _write_json({"rows": rows, "config": cfg},
                os.path.join(out, "ablation.json"))
    print(f"{'mode':<6} {'tiling':<8} overall_accuracy")
    for row in rows:
        print(f"{row['mode']:<6} {row['tiling']:<8} "
              f"{row['overall_accuracy']:.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="landtile",
        description="Overlap-tiled semantic mapping for multi-band rasters.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--out-dir", help="artifact directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", type=str.upper, choices=sorted(MODES))
    common.add_argument("--workers", type=int)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic labeled corpus")
    p.add_argument("--scenes", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("slice", parents=[common],
                       help="dump the tiles of one image for inspection")
    p.add_argument("--image", required=True)
    p.add_argument("--labels")
    p.add_argument("--tile", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--pad-mode", choices=("mirror", "zero", "replicate"))
    p.add_argument("--keep-frac", type=float, default=0.0)
    p.set_defaults(fn=cmd_slice)

    p = sub.add_parser("train", parents=[common],
                       help="fit the built-in per-pixel model on a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--model-out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", parents=[common],
                       help="tile, classify, and stitch one image")
    p.add_argument("--image", required=True)
    p.add_argument("--model", help="model file (linear backend)")
    p.add_argument("--truth", help="truth map (oracle backend)")
    p.add_argument("--backend-cmd", help="child command (external backend)")
    p.add_argument("--no-overlap", action="store_true",
                   help="ablation: stride = tile")
    p.add_argument("--degrade-band", type=int)
    p.add_argument("--degrade-flip", type=float)
    p.add_argument("--output", help="output map path (.rstr)")
    p.add_argument("--png", help="color rendering path")
    p.add_argument("--no-png", action="store_true",
                   help="skip the color rendering (large maps)")
    p.add_argument("--summary", help="run summary JSON path")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-tile progress on stderr")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", parents=[common],
                       help="score a predicted map against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--band", type=int,
                   help="also report accuracy near stitch seams")
    p.add_argument("--report", help="report JSON path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablation", parents=[common],
                       help="LU3/LU6 x overlap/no-overlap comparison table")
    p.add_argument("--manifest", required=True)
    p.set_defaults(fn=cmd_ablation)
    return parser


def run_cli(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = _apply_overrides(load_config(args.config), args)
    return args.fn(cfg, args)


def main(argv=None) -> int:
    try:
        return run_cli(sys.argv[1:] if argv is None else argv)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except RasterIOError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3
    except (ProtocolError, BackendError) as e:
        print(f"backend error: {e}", file=sys.stderr)
        return 4
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 5
    except LandtileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
