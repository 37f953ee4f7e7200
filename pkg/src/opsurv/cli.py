"""Command-line front end.

Settings come from three layers, later ones winning: built-in defaults, an
INI config file (``--config``, section ``[opsurv]``), then command-line
flags. Exit codes: 0 success, 1 verification failure, 2 usage or config
error, 3 data or model error.
"""

import argparse
import configparser
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import generate_synthetic, load_csv, split, split_indices, write_csv
from .errors import ConfigError, OPSurvError
from .metrics import evaluate_predictions
from .model import FittedModel, ModelConfig, atomic_write_text
from .training import TrainConfig, grad_check, loss_log_csv, train

log = logging.getLogger("opsurv")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


@dataclass
class RunConfig:
    data: str = None
    model: str = None
    out: str = None
    loss_log: str = None
    seed: int = 0
    n_events: int = None          # inferred from the data when unset
    max_degree: int = 8
    quad_order: int = 20
    hidden_sizes: tuple = (32, 32)
    epochs: int = 100
    batch_size: int = 200
    learning_rate: float = 1e-3
    ll_weight: float = 1.0
    rank_weight: float = 1.0
    split: str = "all"
    times: tuple = ()
    grid_size: int = 100
    n: int = 1000
    n_features: int = 6
    censor_rate: float = 0.3
    sweep: bool = False
    corrupt: bool = False


def _int_list(text):
    text = str(text).strip()
    return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()


def _float_list(text):
    text = str(text).strip()
    return tuple(float(v) for v in text.split(",") if v.strip()) if text else ()


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_PARSERS = {"seed": int, "n_events": int, "max_degree": int, "quad_order": int,
            "hidden_sizes": _int_list, "epochs": int, "batch_size": int,
            "learning_rate": float, "ll_weight": float, "rank_weight": float,
            "times": _float_list, "grid_size": int, "n": int, "n_features": int,
            "censor_rate": float, "sweep": _bool, "corrupt": _bool}
_KEYS = {f.name for f in fields(RunConfig)}


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    extra = [s for s in parser.sections() if s != "opsurv"]
    if extra:
        raise ConfigError(f"unknown config sections: {', '.join(extra)}")
    if not parser.has_section("opsurv"):
        return {}
    values = {}
    for key, raw in parser.items("opsurv"):
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _PARSERS.get(key, str)(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return values


def resolve_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    cfg = RunConfig(**values)
    if cfg.split not in ("all", "test"):
        raise ConfigError("split must be 'all' or 'test'")
    if cfg.grid_size < 2:
        raise ConfigError("grid_size must be at least 2")
    return cfg


def _require(cfg, *names):
    missing = [n for n in names if getattr(cfg, n) in (None, "")]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join(missing))


def _emit(text: str, out):
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


# -- commands ---------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "data", "out")
    data = load_csv(cfg.data, cfg.n_events)
    n_events = cfg.n_events or max(int(data.event.max(initial=0)), 1)
    model_cfg = ModelConfig(n_features=data.n_features, n_events=n_events,
                            max_degree=cfg.max_degree, quad_order=cfg.quad_order,
                            hidden_sizes=cfg.hidden_sizes)
    train_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                            learning_rate=cfg.learning_rate, ll_weight=cfg.ll_weight,
                            rank_weight=cfg.rank_weight, seed=cfg.seed)
    train_cfg.validate()
    ds = split(data, cfg.seed, cfg.quad_order)
    result = train(ds, model_cfg, train_cfg,
                   progress=lambda h: log.info("epoch %d train %.6g val %.6g",
                                               h.epoch, h.train_total, h.val_total))
    fitted = FittedModel(result.params, ds.scale, ds.standardizer, data.feature_names,
                         meta={"split_seed": cfg.seed, "best_epoch": result.best_epoch})
    loss_log = cfg.loss_log or str(Path(cfg.out).with_suffix(".losses.csv"))
    model_text = fitted.dumps()
    atomic_write_text(loss_log, loss_log_csv(result.history))
    atomic_write_text(cfg.out, model_text)
    log.info("best validation loss at epoch %d; model written to %s", result.best_epoch, cfg.out)
    return EXIT_OK


def _model_and_data(cfg):
    _require(cfg, "model", "data")
    fitted = FittedModel.load(cfg.model)
    data = load_csv(cfg.data, fitted.config.n_events)
    if data.n_features != fitted.config.n_features:
        raise OPSurvError(f"schema mismatch: model expects {fitted.config.n_features} "
                          f"features, {cfg.data} has {data.n_features}")
    return fitted, data


def cmd_evaluate(cfg: RunConfig) -> int:
    fitted, data = _model_and_data(cfg)
    if cfg.split == "test":
        seed = fitted.meta.get("split_seed", cfg.seed)
        data = data.take(split_indices(len(data), seed)[2])
    if len(data) == 0:
        raise OPSurvError(f"{cfg.data}: no records to evaluate")
    report = evaluate_predictions(lambda e, t: fitted.cif(data.x, t, e),
                                  data.time, data.event, fitted.config.n_events)
    print(report.format_table())
    if cfg.out:
        atomic_write_text(cfg.out, report.to_csv())
    return EXIT_OK


def _curve_rows(fitted, data, grid):
    surv, cifs, haz = fitted.curves(data.x, grid)
    n_ev = fitted.config.n_events
    for i in range(len(data)):
        for k, t in enumerate(grid):
            row = [i, repr(float(t)), repr(float(surv[i, k]))]
            row += [repr(float(cifs[e, i, k])) for e in range(n_ev)]
            row.append(repr(float(haz[i, k])))
            yield row


def cmd_predict(cfg: RunConfig) -> int:
    fitted, data = _model_and_data(cfg)
    if not cfg.times:
        raise ConfigError("predict needs --times")
    grid = np.array(cfg.times, dtype=np.float64)
    if np.any(grid < 0):
        raise ConfigError("prediction times must be >= 0")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record_id", "time", "survival",
                *(f"cif_{e}" for e in range(1, fitted.config.n_events + 1))])
    surv, cifs, _ = fitted.curves(data.x, grid)
    for i in range(len(data)):
        for k, t in enumerate(grid):
            w.writerow([i, repr(float(t)), repr(float(surv[i, k])),
                        *(repr(float(cifs[e, i, k])) for e in range(fitted.config.n_events))])
    _emit(buf.getvalue(), cfg.out)
    return EXIT_OK


def cmd_curves(cfg: RunConfig) -> int:
    fitted, data = _model_and_data(cfg)
    grid = np.linspace(0.0, fitted.scale.t_max, cfg.grid_size)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record_id", "time", "survival",
                *(f"cif_{e}" for e in range(1, fitted.config.n_events + 1)), "hazard"])
    w.writerows(_curve_rows(fitted, data, grid))
    _emit(buf.getvalue(), cfg.out)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    seeds = range(cfg.seed, cfg.seed + 10) if cfg.sweep else [cfg.seed]
    ok = True
    for s in seeds:
        r = grad_check(seed=s, corrupt=cfg.corrupt)
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} seed={r.seed} max_rel_error={r.max_rel_error:.3e} "
              f"checked={r.n_checked} worst={r.worst}")
        ok &= r.passed
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_synth(cfg: RunConfig) -> int:
    _require(cfg, "out")
    data, truth = generate_synthetic(cfg.n, cfg.n_features, cfg.n_events or 2, cfg.seed,
                                     cfg.censor_rate)
    sidecar = {"seed": cfg.seed, "n": cfg.n, "n_features": cfg.n_features,
               "n_events": cfg.n_events or 2, "censor_rate": cfg.censor_rate,
               **truth.to_dict()}
    buf = io.StringIO()
    write_csv(buf, data)
    atomic_write_text(cfg.out, buf.getvalue())
    atomic_write_text(f"{cfg.out}.truth.json", json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "predict": cmd_predict,
            "curves": cmd_curves, "gradcheck": cmd_gradcheck, "synth": cmd_synth}


# -- argument parsing -------------------------------------------------------

def _global_flags(p, default):
    p.add_argument("--config", default=default, help="INI config file with an [opsurv] section")
    p.add_argument("--seed", type=int, default=default, help="random seed (u64)")
    p.add_argument("--out", default=default, help="output path")


def build_parser():
    parser = argparse.ArgumentParser(prog="opsurv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_flags(parser, None)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="fit a model on a CSV file")
    p.add_argument("--data")
    p.add_argument("--loss-log", dest="loss_log")
    p.add_argument("--n-events", dest="n_events", type=int)
    p.add_argument("--max-degree", dest="max_degree", type=int)
    p.add_argument("--quad-order", dest="quad_order", type=int)
    p.add_argument("--hidden-sizes", dest="hidden_sizes", type=_int_list)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--ll-weight", dest="ll_weight", type=float)
    p.add_argument("--rank-weight", dest="rank_weight", type=float)

    p = sub.add_parser("evaluate", parents=[common], help="metric report for a model on a CSV file")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--split", choices=("all", "test"))

    p = sub.add_parser("predict", parents=[common], help="per-record CIF and survival at given times")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--times", type=_float_list, help="comma-separated raw times")

    p = sub.add_parser("curves", parents=[common], help="survival, CIF and hazard curves on a grid")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--grid-size", dest="grid_size", type=int)

    p = sub.add_parser("gradcheck", parents=[common], help="verify gradients by central differences")
    p.add_argument("--sweep", action="store_const", const=True, help="check 10 consecutive seeds")
    p.add_argument("--corrupt", action="store_const", const=True,
                   help="perturb the analytic gradient (negative control)")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic competing-risks CSV")
    p.add_argument("--n", type=int)
    p.add_argument("--n-features", dest="n_features", type=int)
    p.add_argument("--n-events", dest="n_events", type=int)
    p.add_argument("--censor-rate", dest="censor_rate", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"opsurv: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OPSurvError as exc:
        print(f"opsurv: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
