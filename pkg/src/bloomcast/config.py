"""Run configuration: a single JSON file drives every CLI command.

The schema is documented in the README; unknown keys are rejected so typos
fail fast. The config hash (sha256 of the canonical JSON form) is stamped
into every JSON output to make reports traceable to their inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import CHANNELS

FEATURE_MODES = ("raw", "stats")
MODELS = ("svm", "lstm")
REGIMES = ("ordinary", "weighted", "oversampled")


class ConfigError(ValueError):
    """The run configuration is malformed or self-contradictory."""


@dataclass(frozen=True)
class SvmSettings:
    c: float = 1.0
    gamma: float | None = None  # None = 1/(n_features * var) heuristic


@dataclass(frozen=True)
class LstmSettings:
    num_layers: int = 2
    input_size: int = 1
    hidden_size: int = 30
    dropout: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"


@dataclass(frozen=True)
class RunConfig:
    temperature_csv: str
    bloom_csv: str
    train_years: tuple[int, int]
    test_years: tuple[int, int]
    output_dir: str
    window_len: int = 10
    horizon: int = 10  # classes are 0..horizon
    feature_mode: str = "raw"
    channels: tuple[str, ...] = ("tavg",)
    model: str = "svm"
    regime: str = "ordinary"
    svm: SvmSettings = field(default_factory=SvmSettings)
    lstm: LstmSettings = field(default_factory=LstmSettings)
    smote_neighbors: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.window_len < 1:
            raise ConfigError(f"window_len must be >= 1, got {self.window_len}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"feature_mode must be one of {FEATURE_MODES}")
        if not self.channels or any(ch not in CHANNELS for ch in self.channels):
            raise ConfigError(f"channels must be a nonempty subset of {CHANNELS}")
        if self.feature_mode == "stats" and self.channels != ("tavg",):
            raise ConfigError("stats feature_mode supports only channels=[tavg]")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}")
        if self.model == "lstm" and self.regime == "weighted":
            raise ConfigError(
                "regime=weighted applies penalty weights to the SVM and has no "
                "LSTM counterpart; use ordinary or oversampled"
            )
        for name, years in (("train_years", self.train_years), ("test_years", self.test_years)):
            if len(years) != 2 or years[0] > years[1]:
                raise ConfigError(f"{name} must be [first, last] with first <= last")
        if not (
            self.train_years[1] < self.test_years[0]
            or self.test_years[1] < self.train_years[0]
        ):
            raise ConfigError(
                f"train_years {self.train_years} and test_years {self.test_years} overlap"
            )
        if self.svm.c <= 0:
            raise ConfigError(f"svm.c must be > 0, got {self.svm.c}")
        if self.svm.gamma is not None and self.svm.gamma <= 0:
            raise ConfigError(f"svm.gamma must be > 0 or null, got {self.svm.gamma}")
        if self.smote_neighbors < 1:
            raise ConfigError(f"smote_neighbors must be >= 1, got {self.smote_neighbors}")
        lp = self.lstm
        if lp.num_layers < 1 or lp.hidden_size < 1 or lp.input_size < 1:
            raise ConfigError("lstm sizes must be >= 1")
        if not 0.0 <= lp.dropout < 1.0:
            raise ConfigError(f"lstm.dropout must be in [0, 1), got {lp.dropout}")
        if lp.learning_rate <= 0 or lp.epochs < 0 or lp.batch_size < 1:
            raise ConfigError("lstm training settings out of range")
        if lp.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"lstm.optimizer must be adam|sgd, got {lp.optimizer!r}")
        feature_len = self.feature_length()
        if self.model == "lstm" and feature_len % lp.input_size != 0:
            raise ConfigError(
                f"feature length {feature_len} is not a multiple of "
                f"lstm.input_size {lp.input_size}"
            )

    def feature_length(self) -> int:
        return self.window_len * len(self.channels) if self.feature_mode == "raw" else 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["train_years"] = list(self.train_years)
        d["test_years"] = list(self.test_years)
        return d

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def model_path(self) -> Path:
        return Path(self.output_dir) / f"{self.model}_model.json"


def _take(raw: dict, keys: set[str], where: str) -> None:
    unknown = set(raw) - keys
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {
        "temperature_csv", "bloom_csv", "train_years", "test_years", "output_dir",
        "window_len", "horizon", "feature_mode", "channels", "model", "regime",
        "svm", "lstm", "smote_neighbors", "seed",
    }
    _take(raw, known, "config")
    missing = {
        "temperature_csv", "bloom_csv", "train_years", "test_years", "output_dir"
    } - set(raw)
    if missing:
        raise ConfigError(f"missing required config keys: {sorted(missing)}")
    try:
        svm_raw = dict(raw.get("svm", {}))
        _take(svm_raw, {"c", "gamma"}, "svm")
        lstm_raw = dict(raw.get("lstm", {}))
        _take(
            lstm_raw,
            {"num_layers", "input_size", "hidden_size", "dropout", "learning_rate",
             "epochs", "batch_size", "optimizer"},
            "lstm",
        )
        cfg = RunConfig(
            temperature_csv=str(raw["temperature_csv"]),
            bloom_csv=str(raw["bloom_csv"]),
            train_years=tuple(int(y) for y in raw["train_years"]),
            test_years=tuple(int(y) for y in raw["test_years"]),
            output_dir=str(raw["output_dir"]),
            window_len=int(raw.get("window_len", 10)),
            horizon=int(raw.get("horizon", 10)),
            feature_mode=str(raw.get("feature_mode", "raw")),
            channels=tuple(raw.get("channels", ["tavg"])),
            model=str(raw.get("model", "svm")),
            regime=str(raw.get("regime", "ordinary")),
            svm=SvmSettings(**svm_raw),
            lstm=LstmSettings(**lstm_raw),
            smote_neighbors=int(raw.get("smote_neighbors", 5)),
            seed=int(raw.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)
