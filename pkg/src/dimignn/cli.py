"""Command-line entry point: ``dimignn {train,evaluate,predict,ablate,select-neighbors}``.

Settings resolve as command-line flags over a flat ``key=value`` config
file over built-in defaults. Exit codes: 0 success, 1 runtime failure
(including divergence), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import DataError, default_coupling, denormalize, load_csv, make_windows, normalize, split_chronological, synth_coupled
from .experiment import ABLATIONS, prepare, run, run_ablation
from .model import ConfigError, ModelConfig, mse_mae
from .tip import DnsmConfig, dnsm_select
from .train import (
    TrainingDivergence,
    evaluate,
    load_checkpoint,
    persistence_forecast,
    predict,
    save_checkpoint,
    write_alpha_csv,
    write_history,
)

log = logging.getLogger("dimignn")


class UsageError(Exception):
    pass


# run-level settings on top of the model configuration
RUN_DEFAULTS = {
    "data": "",
    "synthetic": False,
    "synth_n": 8,
    "synth_c": 3,
    "synth_t": 4000,
    "stride": 1,
    "denorm": False,
}
MODEL_DEFAULTS = ModelConfig().to_dict()
DEFAULTS = {**MODEL_DEFAULTS, **RUN_DEFAULTS}
ALIASES = {"lambda": "lam"}


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return raw  # already typed by argparse
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {type(default).__name__}") from None
    return text


def read_config_file(path) -> dict:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in DEFAULTS:
            raise ConfigError(key, f"{path}:{lineno}: unknown setting")
        out[key] = _coerce(key, value)
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicitly given flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = _coerce(key, value)
    return settings


def model_config(settings: dict) -> ModelConfig:
    return ModelConfig(**{k: settings[k] for k in MODEL_DEFAULTS})


def write_config_echo(settings: dict, path) -> None:
    lines = [f"{k}={str(v).lower() if isinstance(v, bool) else v}" for k, v in sorted(settings.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def _series(settings: dict, seed: int):
    if settings["synthetic"]:
        n = settings["synth_n"]
        return synth_coupled(n, settings["synth_c"], settings["synth_t"], seed=seed, coupling_graph=default_coupling(n))
    if not settings["data"]:
        raise ConfigError("data", "no data path given and --synthetic not set")
    return load_csv(settings["data"])


def _metrics(pred, target, stats, denorm: bool) -> dict:
    if denorm:
        pred, target = denormalize(pred, stats, 0), denormalize(target, stats, 0)
    mse, mae = mse_mae(pred, target)
    return {"mse": mse, "mae": mae, "units": "original" if denorm else "normalized"}


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    settings = resolve(args)
    cfg = model_config(settings)
    series = _series(settings, cfg.seed)
    cfg.validate(series.shape[1])
    data = prepare(series, cfg, settings["stride"])
    out = _outdir(args.out)
    write_config_echo(settings, out / "config.txt")
    res = run(data, cfg, on_epoch=lambda r: log.info("epoch %(epoch)d train_mse=%(train_mse).6f val_mse=%(val_mse).6f", r))
    pred, _ = predict(data.test.inputs, res.store, cfg)
    metrics = {
        "test": _metrics(pred, data.test.targets, data.stats, settings["denorm"]),
        "persistence": _metrics(
            persistence_forecast(data.test.inputs, cfg.tau), data.test.targets, data.stats, settings["denorm"]
        ),
        "per_horizon_mse": res.test.per_horizon_mse,
        "alpha_mean": res.test.alpha_stats,
        "epochs_run": len(res.history),
        "n_test": res.test.n_samples,
        "seed": cfg.seed,
    }
    meta = {"N": data.N, "C": data.C, "variables": list(series.variable_names), "attributes": list(series.attribute_names)}
    save_checkpoint(out / "checkpoint.json", cfg, res.store, data.stats, meta)
    write_history(res.history, out / "history.csv")
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(f"test mse={metrics['test']['mse']:.6f} mae={metrics['test']['mae']:.6f} "
          f"(persistence mse={metrics['persistence']['mse']:.6f}) -> {out}")
    return 0


def _load_ck(path):
    try:
        return load_checkpoint(path)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"checkpoint {path}: {exc}") from exc


def _audit(series, meta) -> None:
    _, N, C = series.shape
    if (N, C) != (meta["N"], meta["C"]):
        raise UsageError(f"data has N={N}, C={C} but the checkpoint was trained on N={meta['N']}, C={meta['C']}")


def cmd_evaluate(args) -> int:
    cfg, store, stats, meta = _load_ck(args.checkpoint)
    settings = resolve(args)
    seed = cfg.seed if args.seed is None else args.seed
    series = _series(settings, seed)
    _audit(series, meta)
    # window with the checkpoint's statistics rather than refitted ones
    _, _, te = split_chronological(series, min_length=cfg.T_in + cfg.tau)
    test = make_windows(normalize(te, stats), cfg.T_in, cfg.tau)
    pred, _ = predict(test.inputs, store, cfg)
    report = evaluate(test, store, cfg)
    metrics = {
        "test": _metrics(pred, test.targets, stats, settings["denorm"]),
        "persistence": _metrics(
            persistence_forecast(test.inputs, cfg.tau), test.targets, stats, settings["denorm"]
        ),
        "per_horizon_mse": report.per_horizon_mse,
        "alpha_mean": report.alpha_stats,
        "n_test": report.n_samples,
    }
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if args.out:
        (_outdir(args.out) / "metrics.json").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_predict(args) -> int:
    cfg, store, stats, meta = _load_ck(args.checkpoint)
    series = load_csv(args.data)
    _audit(series, meta)
    if len(series) < cfg.T_in:
        raise UsageError(f"need at least T_in={cfg.T_in} steps, the data has {len(series)}")
    window = normalize(series, stats).values[-cfg.T_in :][None]
    pred, alpha = predict(window, store, cfg)
    forecast = denormalize(pred[0, :, :, 0], stats, 0)  # [tau, N]
    out = _outdir(args.out)
    with (out / "forecast.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(series.variable_names)
        for row in forecast:
            w.writerow([repr(float(v)) for v in row])
    if alpha is None:
        alpha = np.full((1, cfg.B), np.nan)
    write_alpha_csv(alpha, out / "alpha.csv")
    print(f"forecast {forecast.shape[0]} steps x {forecast.shape[1]} variables -> {out}")
    return 0


def cmd_ablate(args) -> int:
    settings = resolve(args)
    cfg = model_config(settings)
    seeds = [int(s) for s in args.seeds.split(",")] if "," in args.seeds else list(range(int(args.seeds)))
    if not seeds:
        raise ConfigError("seeds", "need at least one seed")
    if settings["synthetic"]:
        make = lambda s: _series(settings, s)  # noqa: E731
    else:
        fixed = _series(settings, cfg.seed)
        make = lambda s: fixed  # noqa: E731
    cfg.validate(make(seeds[0]).shape[1])
    rows = run_ablation(
        make,
        cfg,
        seeds,
        settings["stride"],
        on_run=lambda name, seed, res: log.info("%s seed=%d mse=%.6f", name, seed, res.test.mse),
    )
    out = _outdir(args.out)
    write_config_echo(settings, out / "config.txt")
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "mse", "mae", "finite", "seeds", "mse_per_seed"])
        for r in rows:
            w.writerow([r["config"], repr(r["mse"]), repr(r["mae"]), r["finite"],
                        " ".join(map(str, r["seeds"])), " ".join(repr(v) for v in r["mse_per_seed"])])
    print(f"{'config':<10}{'mse':>12}{'mae':>12}")
    for r in rows:
        print(f"{r['config']:<10}{r['mse']:>12.6f}{r['mae']:>12.6f}")
    if args.assert_order:
        mse = {r["config"]: r["mse"] for r in rows}
        if not (mse["full"] <= mse["wo_dnsm"] and mse["full"] <= mse["wo_dmfm"]):
            print("order check failed: full model is not at least as good as both wo_dnsm and wo_dmfm", file=sys.stderr)
            return 1
    return 0


def _read_profiles(path) -> np.ndarray:
    rows = [r for r in csv.reader(Path(path).open()) if r and any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"{path}: no profile rows")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]  # header
    try:
        prof = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if prof.ndim != 2 or not np.isfinite(prof).all():
        raise UsageError(f"{path}: profiles must be a finite rectangular table")
    return prof


def cmd_select_neighbors(args) -> int:
    prof = _read_profiles(args.profiles)
    N = prof.shape[0]
    if not 1 <= args.k <= N - 1:
        raise ConfigError("k", f"must satisfy 1 <= k <= N-1 = {N - 1}, got {args.k}")
    if not 0.0 <= args.lam <= 1.0:
        raise ConfigError("lambda", f"must lie in [0, 1], got {args.lam}")
    nbrs = dnsm_select(prof, DnsmConfig(lam=args.lam, k=args.k)) + 1
    lines = "".join(",".join(map(str, row)) + "\n" for row in nbrs)
    if args.out:
        Path(args.out).write_text(lines)
    else:
        sys.stdout.write(lines)
    return 0


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value settings file")
    g = p.add_argument_group("data")
    g.add_argument("--data", help="long-format CSV (timestamp, variable_id, attributes...)")
    g.add_argument("--synthetic", action="store_const", const=True, default=None, help="use the coupled synthetic generator")
    g.add_argument("--synth-n", dest="synth_n", type=int)
    g.add_argument("--synth-c", dest="synth_c", type=int)
    g.add_argument("--synth-t", dest="synth_t", type=int)
    g.add_argument("--stride", type=int, help="training-window stride")
    g.add_argument("--denorm", action="store_const", const=True, default=None, help="report metrics in original units")
    m = p.add_argument_group("model")
    for name in ("T_in", "tau", "L_s", "B", "d_hidden", "heads", "k", "d_fuse", "epochs", "batch_size", "patience", "seed"):
        m.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    m.add_argument("--lambda", dest="lam", type=float)
    m.add_argument("--lr", type=float)
    m.add_argument("--norm", dest="norm_kind", choices=("dyt", "layernorm"))
    m.add_argument("--fusion", dest="fusion_kind", choices=("dmfm", "sum", "mean"))
    m.add_argument("--no-dnsm", dest="dnsm_enabled", action="store_const", const=False, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dimignn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a CSV or synthetic series")
    _model_flags(p)
    p.add_argument("--out", default="run", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    _model_flags(p)
    p.add_argument("--out", help="directory for metrics.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="forecast after the last window of a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="forecast")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help=f"train the configurations {', '.join(ABLATIONS)} over several seeds")
    _model_flags(p)
    p.add_argument("--seeds", default="5", help="a count (0..n-1) or a comma-separated list")
    p.add_argument("--assert-order", action="store_true", help="exit 1 unless full <= wo_dnsm and full <= wo_dmfm")
    p.add_argument("--out", default="ablation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("select-neighbors", help="neighbour selection over a CSV of profile vectors")
    p.add_argument("--profiles", required=True, help="CSV with one row per variable")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--lambda", dest="lam", type=float, default=0.7)
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_select_neighbors)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
