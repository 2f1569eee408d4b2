"""Flat key=value run configuration shared by every CLI subcommand."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ConfigError


@dataclass
class RunConfig:
    seed: int = 0
    # synthetic data
    train_per_task: int = 20
    val_per_task: int = 5
    dim: int = 64
    noise: float = 1.0
    n_aug: int = 0
    aug_scale: float = 0.1
    # model
    stages: int = 4
    layers: int = 10
    kernel: int = 3
    channels: int = 64
    schedule: str = "fibonacci"
    fusion: bool = True
    dropout: float = 0.5
    # loss
    lam: float = 0.15
    gamma: float = 0.25
    tau: float = 4.0
    class_weights: bool = True
    # optimization
    eta0: float = 5e-4
    warmup_epochs: int = 5
    max_epochs: int = 50
    batch_size: int = 8
    clip_norm: float = 5.0
    weight_decay: float = 1e-4
    patience: int = 5
    # post-processing / evaluation
    median: bool = True
    window: int = 3
    collapse: bool = True
    min_len: int = 5
    matching: str = "optimal"
    # execution
    k_x: float = 1.0
    k_pz: float = 1.0
    d_ref: float = 0.5
    v_max: float = 0.25
    tolerance: float = 1e-3
    n_basis: int = 20
    servo_dt: float = 0.01

    def update(self, pairs, source="override"):
        types = {f.name: f.type for f in fields(self)}
        for key, raw in pairs.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r} ({source})")
            setattr(self, key, _parse(raw, types[key], key))
        return self

    def to_text(self):
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw, typ, key):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in ("bool", bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_pairs(lines, source):
    pairs = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides=()):
    """Defaults, then the file, then ``key=value`` overrides."""
    cfg = RunConfig()
    if path:
        with open(path, encoding="utf-8") as fh:
            cfg.update(parse_pairs(fh, path), source=path)
    cfg.update(parse_pairs(overrides, "--set"), source="--set")
    return cfg
