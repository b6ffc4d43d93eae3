"""Batch CLI: train, evaluate, predict, report.

All commands are driven by one JSON config file (schema in the README).
Exit codes: 0 success, 1 I/O or data problem, 2 config validation,
3 numeric failure (solver non-convergence or training divergence). Output
files never embed timestamps, so a re-run with the same config and seed is
byte-identical.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as da
from . import lstm as lm
from . import metrics as mx
from . import svm as sv
from .config import REGIMES, ConfigError, RunConfig, load_config
from .imbalance import class_weights, smote_oversample

logger = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    """The temperature record does not cover the requested window."""


def _load_windows(cfg: RunConfig) -> da.Dataset:
    records = da.parse_temperature_csv(cfg.temperature_csv)
    records = da.impute_all(records, on_unimputable="drop")
    events = da.parse_bloom_csv(cfg.bloom_csv)
    return da.build_windows(
        records,
        events,
        window_len=cfg.window_len,
        k=cfg.horizon,
        mode=cfg.feature_mode,
        channels=cfg.channels,
    )


def _train_split(cfg: RunConfig) -> da.Dataset:
    train = _load_windows(cfg).subset_by_years(*cfg.train_years)
    if train.n == 0:
        raise ConfigError(f"train_years {cfg.train_years} produce no samples")
    return train


def _test_split(cfg: RunConfig) -> da.Dataset:
    test = _load_windows(cfg).subset_by_years(*cfg.test_years)
    if test.n == 0:
        raise ConfigError(f"test_years {cfg.test_years} produce no samples")
    return test


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_train(cfg: RunConfig) -> Path:
    """Train the configured model and persist it plus a training log."""
    t0 = time.perf_counter()
    train = _train_split(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = cfg.model_path()
    preprocessing: dict = {"regime": cfg.regime}
    log: dict = {
        "format": "bloomcast-trainlog/1",
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "model_file": model_path.name,
        "train_class_counts": {str(c): n for c, n in train.class_counts.items()},
    }

    if cfg.model == "svm":
        gamma = cfg.svm.gamma
        if gamma is None:
            gamma = sv.gamma_scale(train.feature_matrix())
        preprocessing["gamma"] = gamma
        if cfg.regime == "weighted":
            preprocessing["class_weights"] = {
                str(c): w for c, w in class_weights(train.class_counts).weights.items()
            }
        if cfg.regime == "oversampled":
            target = max(train.class_counts.values())
            preprocessing["oversampled_to"] = target
        model = sv.train_ovo(
            train,
            C=cfg.svm.c,
            kernel=sv.KernelSpec(gamma),
            regime=cfg.regime,
            seed=cfg.seed,
            smote_neighbors=cfg.smote_neighbors,
        )
        sv.save_ovo(model, model_path)
        log["n_pairs"] = len(model.pairs)
    else:
        if cfg.regime == "oversampled":
            train = smote_oversample(train, rng_seed=cfg.seed, n_neighbors=cfg.smote_neighbors)
            preprocessing["post_smote_counts"] = {
                str(c): n for c, n in train.class_counts.items()
            }
        hyper = lm.LstmHyper(
            input_size=cfg.lstm.input_size,
            n_classes=cfg.horizon + 1,
            num_layers=cfg.lstm.num_layers,
            hidden_size=cfg.lstm.hidden_size,
            dropout=cfg.lstm.dropout,
            learning_rate=cfg.lstm.learning_rate,
            epochs=cfg.lstm.epochs,
            batch_size=cfg.lstm.batch_size,
            seed=cfg.seed,
            optimizer=cfg.lstm.optimizer,
        )
        params, losses = lm.train_lstm(train, hyper)
        lm.save_lstm(params, hyper, model_path)
        trace_path = out_dir / "lstm_loss_trace.csv"
        with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,loss\n")
            for epoch, loss in enumerate(losses):
                fh.write(f"{epoch},{loss!r}\n")
        log["epoch_losses"] = losses
        log["loss_trace_file"] = trace_path.name

    log["preprocessing"] = preprocessing
    _write_json(out_dir / "training_log.json", log)
    print(
        f"trained {cfg.model} ({cfg.regime}) on {train.n} samples "
        f"in {time.perf_counter() - t0:.1f}s -> {model_path}"
    )
    return model_path


def cmd_evaluate(
    cfg: RunConfig, model_path: Path | None = None, lstm_pr_curves: bool = False
) -> mx.EvalReport:
    """Evaluate the persisted model on the test split and emit report files."""
    test = _test_split(cfg)
    path = Path(model_path) if model_path is not None else cfg.model_path()
    n_classes = cfg.horizon + 1
    y_true = test.labels()
    X = test.feature_matrix()

    if cfg.model == "svm":
        model = sv.load_ovo(path)
        if model.feature_len != test.feature_len:
            raise ConfigError(
                f"model feature length {model.feature_len} != data feature "
                f"length {test.feature_len} (feature_mode/channels mismatch)"
            )
        y_pred = sv.predict_many(model, X)
        scores = sv.score_matrix(model, X)
    else:
        params, hyper = lm.load_lstm(path)
        if test.feature_len % hyper.input_size != 0:
            raise ConfigError(
                f"data feature length {test.feature_len} is not a multiple of "
                f"the model input_size {hyper.input_size}"
            )
        if hyper.n_classes != n_classes:
            raise ConfigError(
                f"model has {hyper.n_classes} classes, config horizon implies {n_classes}"
            )
        probs = np.stack(
            [
                lm.predict_proba(params, hyper, lm.sequence_view(x, hyper.input_size))
                for x in X
            ]
        )
        y_pred = probs.argmax(axis=1)
        scores = probs if lstm_pr_curves else None

    report = mx.evaluate_predictions(y_true, y_pred, n_classes, scores=scores)
    written = mx.write_report(report, cfg.output_dir, config_hash=cfg.config_hash())
    manifest = {
        "config_hash": cfg.config_hash(),
        "model_file": path.name,
        "files": sorted(p.name for p in written),
    }
    _write_json(Path(cfg.output_dir) / "run_manifest.json", manifest)
    print(
        f"evaluated {cfg.model} on {test.n} samples: "
        f"accuracy {report.accuracy_pct:.2f}%, macro precision {report.precision:.3f}, "
        f"recall {report.recall:.3f}, f1 {report.f1:.3f}"
    )
    return report


def _window_features(cfg: RunConfig, date: dt.date) -> np.ndarray:
    records = da.parse_temperature_csv(cfg.temperature_csv)
    records = da.impute_all(records, on_unimputable="drop")
    days = {r.doy: r for r in records if r.year == date.year}
    anchor = date.timetuple().tm_yday
    need = cfg.channels if cfg.feature_mode == "raw" else ("tavg",)

    missing: list[str] = []
    window: list[da.DailyRecord] = []
    for doy in range(anchor - cfg.window_len + 1, anchor + 1):
        rec = days.get(doy) if doy >= 1 else None
        if doy < 1 or rec is None or any(getattr(rec, ch) is None for ch in need):
            if doy >= 1:
                month, day = da.from_day_of_year(date.year, doy)
                missing.append(f"{date.year}-{month:02d}-{day:02d}")
            else:
                missing.append(f"{cfg.window_len}-day window extends before {date.year}-01-01")
        else:
            window.append(rec)
    if missing:
        raise InsufficientDataError(
            f"window ending {date.isoformat()} is incomplete; missing: "
            + ", ".join(missing)
        )
    if cfg.feature_mode == "raw":
        return np.array(
            [getattr(rec, ch) for rec in window for ch in cfg.channels], dtype=float
        )
    return da.stats_features([rec.tavg for rec in window])


def cmd_predict(cfg: RunConfig, date_str: str, model_path: Path | None = None) -> int:
    """Predict the bloom-offset class for the window ending at a date."""
    try:
        date = dt.date.fromisoformat(date_str)
    except ValueError as exc:
        raise ConfigError(f"bad --date {date_str!r}: {exc}") from exc
    features = _window_features(cfg, date)
    path = Path(model_path) if model_path is not None else cfg.model_path()

    if cfg.model == "svm":
        model = sv.load_ovo(path)
        if model.feature_len != len(features):
            raise ConfigError(
                f"model feature length {model.feature_len} != window feature "
                f"length {len(features)}"
            )
        predicted = sv.predict_ovo(model, features)
    else:
        params, hyper = lm.load_lstm(path)
        predicted = lm.predict_lstm(
            params, hyper, lm.sequence_view(features, hyper.input_size)
        )

    if predicted == 0:
        meaning = f"peak bloom is more than {cfg.horizon} days away"
    else:
        meaning = f"peak bloom expected in {predicted} day(s), on " + (
            date + dt.timedelta(days=predicted)
        ).isoformat()
    print(f"{date.isoformat()}: class {predicted} -- {meaning}")
    return predicted


def cmd_report(cfg: RunConfig) -> dict[str, mx.EvalReport]:
    """Run train + evaluate for all three SVM regimes into regime_* subdirs."""
    reports: dict[str, mx.EvalReport] = {}
    base_out = Path(cfg.output_dir)
    for regime in REGIMES:
        sub = replace(
            cfg, model="svm", regime=regime, output_dir=str(base_out / f"regime_{regime}")
        )
        sub.validate()
        cmd_train(sub)
        reports[regime] = cmd_evaluate(sub)
    print(f"{'regime':<12} {'accuracy%':>9} {'precision':>9} {'recall':>9} {'f1':>9}")
    for regime, rep in reports.items():
        print(
            f"{regime:<12} {rep.accuracy_pct:>9.2f} {rep.precision:>9.3f} "
            f"{rep.recall:>9.3f} {rep.f1:>9.3f}"
        )
    return reports


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bloomcast",
        description="Peak-bloom date classification from daily temperature windows.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the configured model")
    p_eval = sub.add_parser("evaluate", help="evaluate a trained model on the test years")
    p_pred = sub.add_parser("predict", help="predict the bloom-offset class for a date")
    p_rep = sub.add_parser("report", help="train + evaluate all three SVM regimes")
    for p in (p_train, p_eval, p_pred, p_rep):
        p.add_argument("--config", required=True, help="path to the JSON run config")
    for p in (p_eval, p_pred):
        p.add_argument("--model", default=None, help="model file (default: from config)")
    p_eval.add_argument(
        "--lstm-pr-curves",
        action="store_true",
        help="also emit PR curves for LSTM models (SVM emits them by default)",
    )
    p_pred.add_argument("--date", required=True, help="anchor date, ISO YYYY-MM-DD")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, model_path=args.model, lstm_pr_curves=args.lstm_pr_curves)
        elif args.command == "predict":
            cmd_predict(cfg, args.date, model_path=args.model)
        elif args.command == "report":
            cmd_report(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (da.DataFormatError, InsufficientDataError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    except (sv.ConvergenceError, lm.DivergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


def entrypoint() -> None:
    sys.exit(main())
