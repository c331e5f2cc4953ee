"""Flat ``key = value`` config files with ``#`` comments."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def dump_kv(values: dict[str, object]) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple, set, frozenset)):
        return ",".join(_fmt(x) for x in (sorted(v) if isinstance(v, (set, frozenset)) else v))
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def as_bool(value: str, key: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def as_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def as_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def as_list(value: str, key: str, conv=str) -> list:
    items = [x.strip() for x in value.split(",") if x.strip()]
    try:
        return [conv(x) for x in items]
    except ValueError:
        raise ConfigError(f"{key}: bad list item in {value!r}") from None


@dataclass
class ExperimentConfig:
    """Everything one CLI run needs; paths are resolved relative to the config file."""

    output_dir: Path
    corpus: Path | None = None
    vocab: Path | None = None
    mapping: Path | None = None
    eval_corpus: Path | None = None
    variant: str = "SEB_CO"
    d_out: int = 32
    d: int = 32
    h: int = 64
    use_bias: bool = False
    init_scale: float = 0.1
    fl: dict[str, str] = field(default_factory=dict)
    rules: list[str] = field(default_factory=lambda: ["LOOSE_ANY", "STRICT_ALL"])
    granularities: list[str] = field(default_factory=lambda: ["BYTE", "POSITION_BYTE"])
    prune_ratios: list[float] = field(default_factory=lambda: [0.0])
    epsilon: float = 1e-12
    coverage_byte_counts: list[int] = field(default_factory=list)
    coverage_trials: int = 20
    seed: int = 0
    raw: dict[str, str] = field(default_factory=dict)
    digest: str = ""

    PATH_KEYS = ("corpus", "vocab", "mapping", "eval_corpus")
    FL_KEYS = (
        "num_clients", "rounds", "learning_rate", "batch_size",
        "participation_ratio", "aggregation", "attack_rounds", "eval_every",
    )


def load_experiment_config(path, check_inputs: tuple[str, ...] = ()) -> ExperimentConfig:
    """Parse a run config.  ``SEB_SEED`` in the environment overrides ``seed``.

    ``check_inputs`` names path keys that must be present and exist.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    kv = parse_kv(text, str(path))
    known = set(ExperimentConfig.PATH_KEYS) | set(ExperimentConfig.FL_KEYS) | {
        "output_dir", "variant", "d_out", "d", "h", "use_bias", "init_scale", "rules",
        "granularities", "prune_ratios", "epsilon", "coverage_byte_counts", "coverage_trials", "seed",
    }
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys: {', '.join(unknown)}")
    if "output_dir" not in kv:
        raise ConfigError(f"{path}: missing required key 'output_dir'")
    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    cfg = ExperimentConfig(output_dir=resolve(kv["output_dir"]), raw=dict(kv))
    for key in ExperimentConfig.PATH_KEYS:
        if key in kv:
            setattr(cfg, key, resolve(kv[key]))
    cfg.variant = kv.get("variant", cfg.variant).upper()
    for key in ("d_out", "d", "h", "coverage_trials", "seed"):
        if key in kv:
            setattr(cfg, key, as_int(kv[key], key))
    for key in ("init_scale", "epsilon"):
        if key in kv:
            setattr(cfg, key, as_float(kv[key], key))
    if "use_bias" in kv:
        cfg.use_bias = as_bool(kv["use_bias"], "use_bias")
    if "rules" in kv:
        cfg.rules = [r.upper() for r in as_list(kv["rules"], "rules")]
    if "granularities" in kv:
        cfg.granularities = [g.upper() for g in as_list(kv["granularities"], "granularities")]
    if "prune_ratios" in kv:
        cfg.prune_ratios = as_list(kv["prune_ratios"], "prune_ratios", float)
    if "coverage_byte_counts" in kv:
        cfg.coverage_byte_counts = as_list(kv["coverage_byte_counts"], "coverage_byte_counts", int)
    cfg.fl = {k: kv[k] for k in ExperimentConfig.FL_KEYS if k in kv}
    env_seed = os.environ.get("SEB_SEED")
    if env_seed is not None and env_seed.strip():
        cfg.seed = as_int(env_seed.strip(), "SEB_SEED")
    if cfg.seed < 0 or cfg.seed >= 1 << 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg.digest = hashlib.sha256((text + f"\n#effective-seed={cfg.seed}").encode("utf-8")).hexdigest()

    for key in check_inputs:
        value = getattr(cfg, key)
        if value is None:
            raise ConfigError(f"{path}: missing required key {key!r}")
        if not value.exists():
            raise FileNotFoundError(f"{key}: {value} does not exist")
    return cfg
