"""INI-style configuration files.

Sections
--------
``[prior]``
    ``preset = protein | simulation`` followed by any :class:`PriorSpec` field.
    Without this section each experiment uses its own preset.
``[chain]``
    Without this section the experiment defaults apply.  Otherwise any
    :class:`ChainConfig` field, plus ``hmc_step_size``,
    ``hmc_leapfrog_steps``, ``hmc_mass``, ``slice_width``, ``slice_max_steps``.
``[sim]``
    Any :class:`SimSpec` field (``which = sim1 | sim2``).  ``n_test``
    defaults to 2000 here; ``n_test = none`` uses every remaining case.
``[data]``
    ``train``, ``test`` (dataset files), ``n_classes``, ``center`` (bool).
``[hierarchy]``
    ``path`` of a hierarchy file.
``[sources]``
    One line per feature set, ``name = train_path, test_path``, in order.
``[experiment]``
    ``id`` (sim1 | sim2 | protein | protein-hier | protein-multisource),
    ``repetitions``, ``models`` (comma separated), ``seed``, ``ml_ridge``,
    ``n_jobs``.

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .data import SimSpec
from .engine import ChainConfig
from .model import PriorSpec


class ConfigError(ValueError):
    pass


# desk-scale test subset used by the experiments and ``simulate``
DESK_N_TEST = 2000

SECTIONS = {"prior", "chain", "sim", "data", "hierarchy", "sources", "experiment"}
MODELS = ("baseline", "mnl-ml", "mnl", "qmnl", "cormnl", "dpmnl", "dpcormnl")
EXPERIMENTS = ("sim1", "sim2", "protein", "protein-hier", "protein-multisource")


@dataclass
class ExperimentSettings:
    id: str = "sim1"
    repetitions: int = 10
    models: tuple | None = None
    seed: int = 0
    ml_ridge: float = 1e-4
    n_jobs: int = 1


@dataclass
class Config:
    prior: PriorSpec | None = None
    chain: ChainConfig | None = None
    sim: SimSpec = field(default_factory=lambda: SimSpec(n_test=DESK_N_TEST))
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    train_path: str | None = None
    test_path: str | None = None
    n_classes: int | None = None
    center: bool | None = None
    hierarchy_path: str | None = None
    sources: list = field(default_factory=list)


def _convert(section, key, raw, default):
    text = raw.strip()
    if key == "n_test" and text.lower() == "none":
        return None
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple) or key == "models":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if default is None:
            return None if text.lower() == "none" else int(text)
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _apply(section, obj, items, extra=()):
    """Return ``obj`` with ``items`` applied; keys in ``extra`` are passed back."""
    names = {f.name for f in fields(obj)}
    updates, leftover = {}, {}
    for key, raw in items:
        if key in extra:
            leftover[key] = raw
            continue
        if key not in names:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        updates[key] = _convert(section, key, raw, getattr(obj, key))
    try:
        return replace(obj, **updates), leftover
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def load_config(path) -> Config:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}".replace("\n", " ")) from None
    base = os.path.dirname(os.path.abspath(path))
    return config_from_parser(parser, base)


def parse_config_text(text: str, base_dir: str = ".") -> Config:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".replace("\n", " ")) from None
    return config_from_parser(parser, base_dir)


def config_from_parser(parser, base_dir) -> Config:
    unknown = set(parser.sections()) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    def resolve(p):
        p = p.strip()
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    cfg = Config()
    if parser.has_section("prior"):
        items = list(parser.items("prior"))
        preset = dict(items).get("preset", "protein").strip()
        if preset == "simulation":
            prior = PriorSpec.simulation()
        elif preset == "protein":
            prior = PriorSpec()
        else:
            raise ConfigError(f"[prior] unknown preset {preset!r}")
        cfg.prior, _ = _apply("prior", prior, [(k, v) for k, v in items if k != "preset"])

    if parser.has_section("chain"):
        hmc_keys = {"hmc_step_size": "step_size", "hmc_leapfrog_steps": "leapfrog_steps", "hmc_mass": "mass"}
        slice_keys = {"slice_width": "width", "slice_max_steps": "max_steps"}
        chain, extra = _apply("chain", ChainConfig(), parser.items("chain"), set(hmc_keys) | set(slice_keys))
        hmc, _ = _apply("chain", chain.hmc, [(hmc_keys[k], v) for k, v in extra.items() if k in hmc_keys])
        slc, _ = _apply("chain", chain.slice, [(slice_keys[k], v) for k, v in extra.items() if k in slice_keys])
        try:
            cfg.chain = replace(chain, hmc=hmc, slice=slc)
        except ValueError as exc:
            raise ConfigError(f"[chain] {exc}") from None

    if parser.has_section("sim"):
        cfg.sim, _ = _apply("sim", cfg.sim, parser.items("sim"))

    if parser.has_section("experiment"):
        cfg.experiment, _ = _apply("experiment", cfg.experiment, parser.items("experiment"))
        exp = cfg.experiment
        if exp.id not in EXPERIMENTS:
            raise ConfigError(f"[experiment] unknown id {exp.id!r}")
        bad = [m for m in exp.models or () if m not in MODELS]
        if bad:
            raise ConfigError(f"[experiment] unknown models {bad}")
        if exp.repetitions < 1:
            raise ConfigError("[experiment] repetitions must be at least 1")

    if parser.has_section("data"):
        for key, raw in parser.items("data"):
            if key == "train":
                cfg.train_path = resolve(raw)
            elif key == "test":
                cfg.test_path = resolve(raw)
            elif key == "n_classes":
                cfg.n_classes = _convert("data", key, raw, 0)
            elif key == "center":
                cfg.center = _convert("data", key, raw, False)
            else:
                raise ConfigError(f"[data] unknown key {key!r}")

    if parser.has_section("hierarchy"):
        for key, raw in parser.items("hierarchy"):
            if key != "path":
                raise ConfigError(f"[hierarchy] unknown key {key!r}")
            cfg.hierarchy_path = resolve(raw)

    if parser.has_section("sources"):
        for name, raw in parser.items("sources"):
            parts = [v for v in raw.split(",") if v.strip()]
            if len(parts) != 2:
                raise ConfigError(f"[sources] {name}: expected 'train_path, test_path'")
            cfg.sources.append((name, resolve(parts[0]), resolve(parts[1])))
    return cfg
