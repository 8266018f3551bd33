"""Command-line entry point: mcvd-locate <subcommand> [options].

Every subcommand writes into a run directory holding one manifest.json.
Settings come from defaults, then the JSON file given by --config, then
command-line flags (last wins).

Exit codes: 0 success, 1 scientific or assertion failure, 2 usage, config or I/O error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

warnings.filterwarnings("ignore", message="The TBB threading layer")

from . import LAYOUT_VERSION, __version__, evalkit, pipeline  # noqa: E402
from .config import ConfigError, SceneConfig, validate_config  # noqa: E402
from .dataset import (DESK_SCALE_SAMPLES, FULL_SCALE_SAMPLES, DatasetError, SplitSpec,  # noqa: E402
                      generate_dataset, load_dataset, save_dataset)
from .features import IDX_PILOT_TOTAL, TOKEN_DIM_FLAT, build_features  # noqa: E402
from .learn.loss import LossWeights  # noqa: E402
from .learn.train import ModelFormatError, TrainConfig, TrainedModel, TrainingDivergence, write_history_csv  # noqa: E402
from .simulator import LogFormatError, read_log_csv  # noqa: E402
from .validation import QUICK_MOLECULES, CHECK_MOLECULES, run_channel_check  # noqa: E402

log = logging.getLogger("mcvd_locate")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
QUICK_SAMPLES = 40
QUICK_SCENE = {"N": 300, "T_pilot": 1.0}
QUICK_EPOCHS = 15
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class ScientificFailure(Exception):
    pass


# -- settings -------------------------------------------------------------------------

def load_settings(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    if not isinstance(d, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return d


def pick(args, settings: dict, name: str, default=None):
    """CLI value if given, else the config-file value, else the default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return settings.get(name, default)


def scene_from(args, settings: dict) -> SceneConfig:
    scene = dict(settings.get("scene", {}))
    if getattr(args, "quick", False) and args.command == "gen-dataset":
        scene = QUICK_SCENE | scene
    try:
        return validate_config(SceneConfig.from_dict(scene))
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError([str(e)]) from None


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_manifest(run_dir: Path, stage: str, config: dict, seeds: dict, outputs: list, started: str) -> None:
    """Record one stage in the run directory's single manifest (re-running replaces the entry)."""
    path = run_dir / MANIFEST
    manifest = {"tool": "mcvd-locate", "version": __version__, "layout_version": LAYOUT_VERSION, "stages": {}}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            raise UsageError(f"{path}: existing manifest is not valid JSON") from None
    manifest["stages"][stage] = {
        "version": __version__,
        "config": config,
        "config_hash": config_hash(config),
        "seeds": seeds,
        "started": started,
        "finished": _now(),
        "outputs": sorted(str(Path(o).relative_to(run_dir)) for o in outputs),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def set_workers(n) -> None:
    if n is None:
        return
    import numba

    if n < 1:
        raise UsageError("--workers must be >= 1")
    numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


def run_dir_of(args, settings) -> Path:
    out = pick(args, settings, "out")
    if out is None:
        raise UsageError("--out is required")
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- subcommands ----------------------------------------------------------------------

def cmd_validate_channel(args, settings) -> int:
    cfg = scene_from(args, settings)
    quick = bool(pick(args, settings, "quick", False))
    n = QUICK_MOLECULES if quick else CHECK_MOLECULES
    seed = pick(args, settings, "seed", cfg.seed)
    started = _now()
    check = run_channel_check(cfg, n, sigmas=5.0 if quick else 3.0, seed=seed)
    for line in check.lines():
        print(line)
    print(f"simulation time {check.seconds:.1f} s")
    if pick(args, settings, "out") is not None:
        run_dir = run_dir_of(args, settings)
        out = run_dir / "channel_check.json"
        evalkit.write_json(check.to_dict(), out)
        write_manifest(run_dir, "validate-channel", {"scene": cfg.to_dict(), "quick": quick},
                       {"seed": seed}, [out], started)
    return EXIT_OK if check.passed else EXIT_FAIL


def cmd_gen_dataset(args, settings) -> int:
    cfg = scene_from(args, settings)
    quick = bool(pick(args, settings, "quick", False))
    n = pick(args, settings, "n", QUICK_SAMPLES if quick else DESK_SCALE_SAMPLES)
    seed = pick(args, settings, "seed", cfg.seed)
    name = pick(args, settings, "name", "dataset")
    if n < 1:
        raise UsageError("--n must be >= 1")
    run_dir = run_dir_of(args, settings)
    started = _now()
    step = max(1, n // 20)

    def progress(i, total):
        if i % step == 0 or i == total:
            log.info("generated %d/%d samples", i, total)

    try:
        records = generate_dataset(cfg, n, seed, progress=progress)
    except DatasetError as e:
        raise ScientificFailure(str(e)) from None
    meta_path, data_path = save_dataset(records, run_dir / name, cfg, seed)
    write_manifest(run_dir, "gen-dataset", {"scene": cfg.to_dict(), "n": n, "name": name},
                   {"seed": seed}, [meta_path, data_path], started)
    print(f"wrote {n} samples to {data_path}")
    return EXIT_OK


def train_settings(args, settings) -> tuple[TrainConfig, LossWeights, SplitSpec]:
    tc = dict(settings.get("train", {}))
    path = pick(args, settings, "train_config")
    if path is not None:
        extra = load_settings(path)
        tc |= extra.get("train", {k: v for k, v in extra.items() if k not in ("loss", "split")})
        settings = settings | {k: extra[k] for k in ("loss", "split") if k in extra}
    if getattr(args, "epochs", None) is not None:
        tc["max_epochs"] = args.epochs
    elif pick(args, settings, "quick", False):
        tc.setdefault("max_epochs", QUICK_EPOCHS)
    if getattr(args, "seed", None) is not None:
        tc["init_seed"] = args.seed
    try:
        tcfg = TrainConfig.from_dict(tc)
        weights = LossWeights(**settings.get("loss", {}))
        spec = SplitSpec(**settings.get("split", {}))
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad training settings: {e}") from None
    return tcfg, weights, spec


def _load_dataset(path):
    try:
        return load_dataset(path)
    except (OSError, DatasetError, ConfigError) as e:
        raise UsageError(f"cannot load dataset {path}: {e}") from None


def _load_model(path) -> TrainedModel:
    try:
        return TrainedModel.load(path)
    except (OSError, KeyError, TypeError, ModelFormatError) as e:
        raise UsageError(f"cannot load model {path}: {e}") from None


def cmd_train(args, settings) -> int:
    ds_path = pick(args, settings, "dataset")
    if ds_path is None:
        raise UsageError("--dataset is required")
    tcfg, weights, spec = train_settings(args, settings)
    records, cfg, meta = _load_dataset(ds_path)
    run_dir = run_dir_of(args, settings)
    started = _now()
    splits = pipeline.make_splits(records, spec)

    def progress(row):
        log.info("epoch %d train %.4f val %.4f", row["epoch"], row["train_total"], row["val_total"])

    model, history = pipeline.train_model(splits, cfg, tcfg, weights, progress=progress)
    model.meta |= {"dataset_sha256": meta.get("data_sha256"), "split": asdict(spec)}
    model_path, hist_path = run_dir / "model.json", run_dir / "history.csv"
    model.save(model_path)
    write_history_csv(history, hist_path)
    write_manifest(run_dir, "train", {"dataset": str(ds_path), "train": asdict(tcfg), "loss": asdict(weights),
                                      "split": asdict(spec)},
                   {"init_seed": tcfg.init_seed, "split_seed": spec.split_seed}, [model_path, hist_path],
                   started)
    print(f"trained for {len(history)} epochs; model written to {model_path}")
    return EXIT_OK


def _check_compatible(model: TrainedModel, cfg: SceneConfig, what: str) -> None:
    if model.scene != cfg:
        raise UsageError(f"{what} scene config does not match the model's scene config")


def _eval_inputs(args, settings):
    ds_path, model_path = pick(args, settings, "dataset"), pick(args, settings, "model")
    if ds_path is None or model_path is None:
        raise UsageError("--dataset and --model are required")
    records, cfg, _ = _load_dataset(ds_path)
    model = _load_model(model_path)
    _check_compatible(model, cfg, "dataset")
    spec = SplitSpec(**model.meta.get("split", {}))
    return records, cfg, model, pipeline.make_splits(records, spec), ds_path, model_path


def cmd_eval(args, settings) -> int:
    records, cfg, model, splits, ds_path, model_path = _eval_inputs(args, settings)
    run_dir = run_dir_of(args, settings)
    started = _now()
    res = pipeline.evaluate_model(model, splits)
    report = {"model": res["model"].to_dict(), "ridge": res["ridge"].to_dict(),
              "ridge_alpha": res["ridge_alpha"], "reduction": res["reduction"]}
    test = splits.test
    outs = [run_dir / "metrics.json", run_dir / "scatter_model.csv", run_dir / "scatter_ridge.csv"]
    evalkit.write_json(report, outs[0])
    evalkit.export_scatter(test["pos"], res["pred"]["pos"], outs[1])
    evalkit.export_scatter(test["pos"], res["ridge_pred"]["pos"], outs[2])
    write_manifest(run_dir, "eval", {"dataset": str(ds_path), "model": str(model_path)}, {}, outs, started)
    m, b = res["model"], res["ridge"]
    print(f"model: mean R2 {m.r2_mean:.4f}  MAE {m.mae:.4f}  RMSE {m.rmse:.4f}  (n = {m.n})")
    print(f"ridge: mean R2 {b.r2_mean:.4f}  MAE {b.mae:.4f}  RMSE {b.rmse:.4f}  (alpha = {res['ridge_alpha']:g})")
    print(evalkit.format_reduction(res["reduction"]))
    return EXIT_OK


def cmd_plot_export(args, settings) -> int:
    records, cfg, model, splits, ds_path, model_path = _eval_inputs(args, settings)
    run_dir = run_dir_of(args, settings)
    started = _now()
    test = splits.test
    pred = model.predict(test["X"])
    seed = pick(args, settings, "seed", 0)
    outs = [run_dir / "scatter_model.csv", run_dir / "examples_3d.csv"]
    evalkit.export_scatter(test["pos"], pred["pos"], outs[0])
    chosen = evalkit.export_3d(test["ids"], test["pos"], pred["pos"], test["tx"], pred["tx"], outs[1], seed=seed)
    hist = pick(args, settings, "history")
    if hist is not None:
        src = Path(hist)
        if not src.exists():
            raise UsageError(f"history file {src} not found")
        dst = run_dir / "curves.csv"
        if src.resolve() != dst.resolve():
            dst.write_bytes(src.read_bytes())
        outs.append(dst)
    write_manifest(run_dir, "plot-export", {"dataset": str(ds_path), "model": str(model_path)},
                   {"pick_seed": seed}, outs, started)
    print(f"exported scatter and 3D examples for samples {chosen.tolist()}")
    return EXIT_OK


def cmd_predict(args, settings) -> int:
    model_path, log_path = pick(args, settings, "model"), pick(args, settings, "log")
    if model_path is None or log_path is None:
        raise UsageError("--model and --log are required")
    model = _load_model(model_path)
    try:
        header, pilots = read_log_csv(log_path)
    except (OSError, LogFormatError) as e:
        raise UsageError(f"{log_path}: {e}") from None
    if header is not None and "scene" in header:
        try:
            scene = SceneConfig.from_dict(header["scene"])
        except (TypeError, ValueError) as e:
            raise UsageError(f"{log_path}: bad scene in header: {e}") from None
        _check_compatible(model, scene, "log")
    X = build_features(pilots, model.scene).flatten()[None]
    pred = model.predict(X)
    totals = X.reshape(-1, TOKEN_DIM_FLAT)[:, IDX_PILOT_TOTAL]
    out = {
        "position": pred["pos"][0].tolist(),
        "orientation": pred["quat"][0].tolist(),
        "tx_positions": pred["tx"][0].reshape(-1, 3).tolist(),
        "attention": pred["alpha"][0].tolist(),
        "node_b_events": int(totals.sum()),
        "low_confidence": bool(totals.sum() == 0),
    }
    json.dump(out, sys.stdout, indent=2)
    print()
    return EXIT_OK


COMMANDS = {
    "validate-channel": cmd_validate_channel,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "plot-export": cmd_plot_export,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (defaults to the scene config seed)")
    common.add_argument("--workers", type=int, help="simulation threads")
    common.add_argument("--config", help="JSON settings file; command-line flags override it")
    common.add_argument("--quick", action="store_true", default=None, help="small, fast variant")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mcvd-locate",
                                description="Simulate diffusion pilot signals and learn to locate the emitting node.",
                                epilog="Exit codes: 0 success, 1 scientific failure, 2 usage, config or I/O error.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate-channel", parents=[common],
                       help="check the simulator against the closed-form hitting-time law")
    s.add_argument("--out", help="optional run directory for a JSON result")

    s = sub.add_parser("gen-dataset", parents=[common], help="simulate a labelled dataset")
    s.add_argument("--n", type=int,
                   help=f"number of samples (desk scale {DESK_SCALE_SAMPLES}; {FULL_SCALE_SAMPLES} is full scale)")
    s.add_argument("--out", help="run directory")
    s.add_argument("--name", help="dataset file stem (default 'dataset')")

    s = sub.add_parser("train", parents=[common], help="fit the attention MLP")
    s.add_argument("--dataset", help="dataset stem or .meta.json/.data.csv path")
    s.add_argument("--train-config", dest="train_config", help="JSON with train/loss/split settings")
    s.add_argument("--epochs", type=int, help="override max epochs")
    s.add_argument("--out", help="run directory")

    for name, text in (("eval", "test-split metrics against the ridge baseline"),
                       ("plot-export", "CSV data for scatter plots, 3D examples and training curves")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--dataset")
        s.add_argument("--model")
        s.add_argument("--out", help="run directory")
        if name == "plot-export":
            s.add_argument("--history", help="history.csv written by train")

    s = sub.add_parser("predict", parents=[common], help="estimate one pose from an absorption log CSV")
    s.add_argument("--model")
    s.add_argument("--log", help="absorption log CSV")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = load_settings(args.config)
        set_workers(pick(args, settings, "workers"))
        return COMMANDS[args.command](args, settings)
    except (UsageError, ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ScientificFailure, TrainingDivergence, pipeline.LeakageError) as e:
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
