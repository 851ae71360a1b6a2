"""Experiment configuration: key-value file parsing, named presets, and the
resolved-config serialization written into run directories."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .ragtrain import AGGREGATION_MODES, AggregationConfig, TrainConfig

__all__ = ["ExperimentConfig", "PRESETS", "parse_kv_file", "load_experiment_config"]


@dataclass(frozen=True)
class ExperimentConfig:
    w_q: float = 0.6
    w_v: float = 0.4
    k_q: int = 4
    k_v: int = 16
    t_q: int = 8
    t_v: int = 32
    mode: str = "weighted_feature"
    refresh_every: int = 1
    use_dq: bool = True
    use_dv: bool = True
    lr: float = 0.05
    epochs: int = 10
    seed: int = 0
    preset: str = ""
    d: int = 16
    d_h: int = 32

    def __post_init__(self) -> None:
        if self.mode not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation mode {self.mode!r}")
        if self.t_q < 1 or self.t_v < 1:
            raise ValueError("database sample caps must be >= 1")

    def aggregation(self) -> AggregationConfig:
        return AggregationConfig(
            w_q=self.w_q, w_v=self.w_v, k_q=self.k_q, k_v=self.k_v,
            mode=self.mode, refresh_every=self.refresh_every,
            use_dq=self.use_dq, use_dv=self.use_dv,
        )

    def training(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, learning_rate=self.lr, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_resolved(self, path: str | Path) -> None:
        lines = [f"{key} = {value}" for key, value in sorted(self.to_dict().items())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# Hyperparameter presets for the two dataset regimes.
PRESETS: dict[str, dict] = {
    "gqa": dict(w_q=0.6, w_v=0.4, k_q=4, k_v=16, t_q=8, t_v=32),
    "vqa2": dict(w_q=0.6, w_v=0.4, k_q=4, k_v=4, t_q=1, t_v=32),
}

_BOOL_KEYS = {"use_dq", "use_dv"}
_INT_KEYS = {"k_q", "k_v", "t_q", "t_v", "refresh_every", "epochs", "seed", "d", "d_h"}
_FLOAT_KEYS = {"w_q", "w_v", "lr"}
_STR_KEYS = {"mode", "preset"}


def parse_kv_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _coerce(key: str, value: str):
    if key in _BOOL_KEYS:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {value!r}")
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _STR_KEYS:
        return value
    raise ValueError(f"unknown config key {key!r}")


def load_experiment_config(
    path: str | Path | None = None,
    preset: str | None = None,
    overrides: dict | None = None,
) -> ExperimentConfig:
    """Resolve: defaults, then preset, then config file, then flag overrides."""
    config = ExperimentConfig()
    file_values = {}
    if path is not None:
        file_values = {k: _coerce(k, v) for k, v in parse_kv_file(path).items()}
    preset_name = preset or file_values.get("preset") or ""
    if preset_name:
        if preset_name not in PRESETS:
            raise ValueError(f"unknown preset {preset_name!r} (have: {sorted(PRESETS)})")
        config = replace(config, preset=preset_name, **PRESETS[preset_name])
    if file_values:
        config = replace(config, **file_values)
    if overrides:
        config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    return config
