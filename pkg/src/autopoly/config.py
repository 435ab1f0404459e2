"""Experiment configuration: TOML file plus ``--set key=value`` overrides.

A config looks like::

    regime = "auto"              # joint | auto | grid | mlp-baseline
    seeds = [0, 1, 2]
    output = "runs/sbm"
    protocol = "semi-supervised" # or "supervised", or give ratios = [tr, va, te]
    epochs = 1000
    patience = 200

    [data]
    bundle = "path/to/bundle"    # or a [data.sbm] table
    row_normalize = false

    [model]                      # ModelConfig fields
    [meta]                       # MetaConfig fields (auto regime)
    [grid]                       # values, order, epochs, patience

Every problem is reported as a :class:`ConfigError` naming the dotted
field path.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from autopoly.data import SEMI_SUPERVISED, SUPERVISED, SbmParams
from autopoly.errors import ConfigError, InputError
from autopoly.train import DEFAULT_GRID, MetaConfig, ModelConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

REGIMES = ("joint", "auto", "grid", "mlp-baseline")
PROTOCOLS = {"semi-supervised": SEMI_SUPERVISED, "supervised": SUPERVISED}
TOP_KEYS = {"regime", "seeds", "output", "protocol", "ratios", "epochs", "patience", "workers",
            "report_timing", "data", "model", "meta", "grid"}


@dataclass
class GridConfig:
    values: tuple = DEFAULT_GRID
    order: int = 2
    epochs: int = 200
    patience: int = 50


@dataclass
class RunConfig:
    regime: str
    seeds: list
    output: Path
    ratios: tuple
    protocol: str | None
    epochs: int
    patience: int
    workers: int
    report_timing: bool
    bundle: Path | None
    sbm: SbmParams | None
    row_normalize: bool
    model: ModelConfig
    meta: MetaConfig
    grid: GridConfig = field(default_factory=GridConfig)
    raw: dict = field(default_factory=dict, repr=False)


def parse_value(text: str):
    """Interpret an override value as a TOML value, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value", "--set")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad key {key!r}", "--set")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{p} is not a table", key)
    node[parts[-1]] = parse_value(value.strip())


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        apply_override(doc, item)
    return build_config(doc, base_dir=path.parent)


def _table(doc, key):
    value = doc.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError("expected a table", key)
    return value


def _dataclass_from(cls, table: dict, prefix: str):
    known = {f.name for f in fields(cls) if f.init}
    for k in table:
        if k not in known:
            raise ConfigError(f"unknown key (expected one of {sorted(known)})", f"{prefix}.{k}")
    try:
        return cls(**table)
    except (InputError, TypeError) as exc:
        message = str(exc)
        # validators start their messages with the offending field name
        first = message.split(" ", 1)[0]
        where = f"{prefix}.{first}" if first in known else prefix
        raise ConfigError(message, where) from None


def _int(doc, key, default, minimum=0):
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"expected an integer >= {minimum}, got {value!r}", key)
    return value


def build_config(doc: dict, base_dir=Path(".")) -> RunConfig:
    for k in doc:
        if k not in TOP_KEYS:
            raise ConfigError(f"unknown key (expected one of {sorted(TOP_KEYS)})", k)

    regime = doc.get("regime", "joint")
    if regime not in REGIMES:
        raise ConfigError(f"expected one of {list(REGIMES)}, got {regime!r}", "regime")

    seeds = doc.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = list(range(seeds))
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds
    ):
        raise ConfigError("expected a non-empty list of non-negative integers (or a count)", "seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct", "seeds")

    protocol = doc.get("protocol")
    if "ratios" in doc:
        if protocol is not None:
            raise ConfigError("give either protocol or ratios, not both", "ratios")
        ratios = doc["ratios"]
        if not isinstance(ratios, list) or len(ratios) != 3 or not all(
            isinstance(r, (int, float)) and not isinstance(r, bool) for r in ratios
        ):
            raise ConfigError("expected three numbers [train, val, test]", "ratios")
        ratios = tuple(float(r) for r in ratios)
    else:
        protocol = protocol or "semi-supervised"
        if protocol not in PROTOCOLS:
            raise ConfigError(f"expected one of {list(PROTOCOLS)}, got {protocol!r}", "protocol")
        ratios = PROTOCOLS[protocol]

    data = _table(doc, "data")
    for k in data:
        if k not in ("bundle", "sbm", "row_normalize"):
            raise ConfigError("unknown key (expected bundle, sbm or row_normalize)", f"data.{k}")
    bundle = sbm = None
    if "bundle" in data:
        if "sbm" in data:
            raise ConfigError("give either bundle or sbm, not both", "data")
        if not isinstance(data["bundle"], str):
            raise ConfigError("expected a path string", "data.bundle")
        bundle = Path(data["bundle"])
        if not bundle.is_absolute():
            bundle = base_dir / bundle
    elif "sbm" in data:
        sbm = _dataclass_from(SbmParams, _table(data, "sbm"), "data.sbm")
    else:
        raise ConfigError("missing; set data.bundle or a [data.sbm] table", "data")
    row_normalize = data.get("row_normalize", False)
    if not isinstance(row_normalize, bool):
        raise ConfigError("expected true or false", "data.row_normalize")

    model = _dataclass_from(ModelConfig, _table(doc, "model"), "model")
    meta = _dataclass_from(MetaConfig, _table(doc, "meta"), "meta")
    grid_table = dict(_table(doc, "grid"))
    if "values" in grid_table:
        vals = grid_table["values"]
        if not isinstance(vals, list) or not vals or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals
        ):
            raise ConfigError("expected a non-empty list of numbers", "grid.values")
        grid_table["values"] = tuple(float(v) for v in vals)
    grid = _dataclass_from(GridConfig, grid_table, "grid")
    for name in ("order", "epochs", "patience"):
        value = getattr(grid, name)
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ConfigError(f"expected a non-negative integer, got {value!r}", f"grid.{name}")

    report_timing = doc.get("report_timing", False)
    if not isinstance(report_timing, bool):
        raise ConfigError("expected true or false", "report_timing")

    output = doc.get("output", "autopoly-out")
    if not isinstance(output, str):
        raise ConfigError("expected a path string", "output")
    output = Path(output)
    if not output.is_absolute():
        output = base_dir / output

    return RunConfig(
        regime=regime,
        seeds=list(seeds),
        output=output,
        ratios=ratios,
        protocol=protocol,
        epochs=_int(doc, "epochs", 1000),
        patience=_int(doc, "patience", 200, minimum=1),
        workers=_int(doc, "workers", 1, minimum=1),
        report_timing=report_timing,
        bundle=bundle,
        sbm=sbm,
        row_normalize=row_normalize,
        model=model,
        meta=meta,
        grid=grid,
        raw=doc,
    )


def load_sbm_params(path) -> tuple[SbmParams, str | None]:
    """Read a flat TOML table of SbmParams fields (plus an optional ``name``)."""
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"params file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    doc = dict(doc.get("sbm", doc))
    name = doc.pop("name", None)
    return _dataclass_from(SbmParams, doc, "sbm"), name
