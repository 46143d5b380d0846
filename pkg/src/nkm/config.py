"""Flat ``key=value`` experiment configuration.

Keys use dotted section names, one per line; ``#`` starts a comment::

    seed=0
    data.path=balance.csv
    data.label_column=0
    data.header=true
    split.train_fraction=0.8
    blocks.1.m=4
    blocks.1.d_out=100
    blocks.1.D=100
    blocks.1.pooling=maxout
    blocks.1.sigma=3.0
    train.learning_rate=1.0
    search.d_out=50:600

Block indices are 1-based. Omitted keys take the defaults below;
:func:`dump_config` writes every key, so its output reproduces the run.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .network import BlockSpec, canonical_pooling
from .training import SearchSpace, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str = ""
    label_column: str = "-1"
    header: bool = False


@dataclass
class BaselineConfig:
    sigma: float = 4.0
    gamma: float = 1.0
    prototypes: int = 0  # 0: all training points (full-rank Nystrom)


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/out"
    repeats: int = 1
    train_fraction: float = 0.8
    data: DataConfig = field(default_factory=DataConfig)
    blocks: list[BlockSpec] = field(default_factory=lambda: [
        BlockSpec(100, 100, 4, "maxout", 3.0),
        BlockSpec(100, 100, 4, "maxout", 1.0),
    ])
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchSpace = field(default_factory=SearchSpace)
    search_budget: int = 10
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _to_bool(v: str) -> bool:
    try:
        return _BOOL[v.lower()]
    except KeyError:
        raise ConfigError(f"not a boolean: {v!r}") from None


def _convert(value: str, typ):
    if typ in (bool, "bool"):
        return _to_bool(value)
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def _range(value: str, typ):
    parts = value.split(":")
    if len(parts) != 2:
        raise ConfigError(f"range must be LO:HI, got {value!r}")
    return typ(parts[0]), typ(parts[1])


def _field_type(obj, name):
    for f in fields(obj):
        if f.name == name:
            return f.type if not isinstance(f.type, str) else f.type.split(" ")[0]
    raise ConfigError(f"unknown key {name!r} for {type(obj).__name__}")


def _set_simple(obj, name, value):
    typ = _field_type(obj, name)
    return replace(obj, **{name: _convert(value, typ)})


def parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


_BLOCK_KEY = re.compile(r"^blocks\.(\d+)\.(\w+)$")


def apply_pairs(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    """Return a copy of ``cfg`` with ``pairs`` applied in order.

    ``blocks.count`` truncates or extends the block list (new blocks copy the
    last one); ``blocks.<i>.<field>`` then overrides fields of block ``i``,
    which must exist after the count is applied.
    """
    cfg = replace(cfg, blocks=list(cfg.blocks))
    count = None
    block_fields: dict[int, dict[str, str]] = {}
    for key, value in pairs:
        m = _BLOCK_KEY.match(key)
        if key == "blocks.count":
            count = int(value)
            if count < 1:
                raise ConfigError("blocks.count must be >= 1")
        elif m:
            block_fields.setdefault(int(m.group(1)), {})[m.group(2)] = value
        else:
            try:
                cfg = _apply_one(cfg, key, value)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    blocks = cfg.blocks
    n = count if count is not None else len(blocks)
    if block_fields and (min(block_fields) < 1 or max(block_fields) > n):
        raise ConfigError(f"block indices must lie in 1..{n} (set blocks.count to add blocks), "
                          f"got {sorted(block_fields)}")
    blocks = (blocks + [blocks[-1]] * n)[:n]
    for i, kv in block_fields.items():
        kw = {}
        for name, v in kv.items():
            typ = _BLOCK_TYPES.get(name)
            if typ is None:
                raise ConfigError(f"unknown key blocks.{i}.{name}")
            try:
                kw[name] = _convert(v, typ)
            except ValueError as exc:
                raise ConfigError(f"bad value for blocks.{i}.{name}: {v!r} ({exc})") from None
        if kw.get("pooling") in ("identity", "hybrid") and "m" not in kw:
            kw["m"] = 1
        try:
            blocks[i - 1] = _block_replace(blocks[i - 1], kw)
        except ValueError as exc:
            raise ConfigError(f"block {i}: {exc}") from None
    return replace(cfg, blocks=blocks)


_BLOCK_TYPES = {"m": int, "d_out": int, "D": int, "sigma": float, "freeze": bool, "pooling": str}


def _block_replace(base: BlockSpec, kw) -> BlockSpec:
    merged = {f.name: getattr(base, f.name) for f in fields(base)}
    merged.update(kw)
    return BlockSpec(**merged)


def _apply_one(cfg, key, value):
    if key in ("seed", "repeats"):
        return replace(cfg, **{key: int(value)})
    if key == "out":
        return replace(cfg, out=value)
    if key == "split.train_fraction":
        return replace(cfg, train_fraction=float(value))
    section, _, name = key.partition(".")
    if section == "data" and name:
        return replace(cfg, data=_set_simple(cfg.data, name, value))
    if section == "train" and name:
        if name == "seed":
            raise ConfigError("use the top-level 'seed' key")
        return replace(cfg, train=_set_simple(cfg.train, name, value))
    if section == "baseline" and name:
        return replace(cfg, baseline=_set_simple(cfg.baseline, name, value))
    if section == "search" and name:
        if name == "budget":
            return replace(cfg, search_budget=int(value))
        if name in ("d_out", "D"):
            return replace(cfg, search=replace(cfg.search, **{name: _range(value, int)}))
        if name in ("sigma", "sigma_deep"):
            return replace(cfg, search=replace(cfg.search, **{name: _range(value, float)}))
        if name == "pooling":
            return replace(cfg, search=replace(cfg.search, pooling=canonical_pooling(value)))
        return replace(cfg, search=_set_simple(cfg.search, name, value))
    raise ConfigError(f"unknown key {key!r}")


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return apply_pairs(base or ExperimentConfig(), parse_pairs(text))


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ":".join(_fmt(x) for x in v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = [
        f"seed={cfg.seed}",
        f"out={cfg.out}",
        f"repeats={cfg.repeats}",
        f"split.train_fraction={_fmt(cfg.train_fraction)}",
    ]
    for f in fields(cfg.data):
        lines.append(f"data.{f.name}={_fmt(getattr(cfg.data, f.name))}")
    lines.append(f"blocks.count={len(cfg.blocks)}")
    for i, b in enumerate(cfg.blocks, 1):
        for name in ("m", "d_out", "D", "pooling", "sigma", "freeze"):
            lines.append(f"blocks.{i}.{name}={_fmt(getattr(b, name))}")
    for f in fields(cfg.train):
        if f.name != "seed":
            lines.append(f"train.{f.name}={_fmt(getattr(cfg.train, f.name))}")
    lines.append(f"search.budget={cfg.search_budget}")
    for f in fields(cfg.search):
        lines.append(f"search.{f.name}={_fmt(getattr(cfg.search, f.name))}")
    for f in fields(cfg.baseline):
        lines.append(f"baseline.{f.name}={_fmt(getattr(cfg.baseline, f.name))}")
    return "\n".join(lines) + "\n"
