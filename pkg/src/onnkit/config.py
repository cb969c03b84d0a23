"""Run configuration: strict TOML schema, serialization, env overrides.

Unknown sections or keys are rejected outright so a typo in a
hyperparameter name cannot silently fall back to a default.
"""

import os
from dataclasses import dataclass
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .experiments import TASK_KINDS, TaskSpec, default_sublibrary
from .model import Architecture
from .operators import OperatorConstants, OperatorSubLibrary, make_sublibrary
from .plasticity import SpmConfig
from .train import TrainConfig

SEED_ENV = "ONN_SEED"

_REQUIRED = object()

# section -> key -> (type tag, default); _REQUIRED means the key must appear
_SCHEMA = {
    "run": {
        "task": ("str", _REQUIRED),
        "corpus": ("str", _REQUIRED),
        "output": ("str", _REQUIRED),
        "seed": ("int", 0),
        "folds": ("int", 0),  # 0 = all folds the corpus affords
        "runs": ("int", 10),
        "jobs": ("int", 1),
        "backend": ("str", None),
    },
    "architecture": {
        "hidden": ("int_list", [12, 12]),
        "kernel": ("int_list", [3, 3]),
        "resample": ("str_list", ["down2", "up2"]),
    },
    "operators": {
        "pools": ("int_list", None),
        "acts": ("int_list", None),
        "nodals": ("int_list", None),
        "k_nodal": ("float", OperatorConstants().k_nodal),
        "k_chirp": ("float", OperatorConstants().k_chirp),
        "cut": ("float", OperatorConstants().cut),
        "sinc_guard": ("float", OperatorConstants().sinc_guard),
        "arg_clip": ("float", OperatorConstants().arg_clip),
    },
    "train": {
        "iterations": ("int", 240),
        "lr0": ("float", 0.01),
        "lr_up": ("float", 1.05),
        "lr_down": ("float", 0.7),
        "lr_max": ("float", 0.5),
        "lr_min": ("float", 5e-5),
        "batch": ("int", 0),
        "weight_range": ("float", 0.1),
    },
    "spm": {
        "sessions": ("int", 30),
        "window": ("int", 80),
    },
    "task": {
        "noise_p": ("float", 0.4),
        "pairs_per_fold": ("int", 8),
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec
    corpus: str
    output: str
    seed: int
    folds: int
    runs: int
    jobs: int
    backend: Optional[str]
    arch: Architecture
    constants: OperatorConstants
    sublibrary: Optional[OperatorSubLibrary]  # None = task default
    train: TrainConfig
    spm: SpmConfig

    def resolved_sublibrary(self):
        if self.sublibrary is not None:
            return self.sublibrary
        return default_sublibrary(self.task.kind)


def _coerce(section, key, tag, value):
    where = f"{section}.{key}"
    if tag == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tag == "int_list":
        if not isinstance(value, list) or any(
                isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ConfigError(f"{where}: expected a list of integers")
        return list(value)
    if tag == "str_list":
        if not isinstance(value, list) or any(
                not isinstance(v, str) for v in value):
            raise ConfigError(f"{where}: expected a list of strings")
        return list(value)
    raise AssertionError(tag)


def _validate(doc):
    """Schema-check a parsed TOML document into a flat {section: {key: val}}."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a table")
    for section in doc:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(doc[section], dict):
            raise ConfigError(f"[{section}] must be a table")
        for key in doc[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
    out = {}
    for section, keys in _SCHEMA.items():
        out[section] = {}
        for key, (tag, default) in keys.items():
            if section in doc and key in doc[section]:
                out[section][key] = _coerce(section, key, tag, doc[section][key])
            elif default is _REQUIRED:
                raise ConfigError(f"missing required key {section}.{key}")
            else:
                out[section][key] = default
    return out


def from_dict(doc, env=None):
    """Build a RunConfig from a parsed TOML document."""
    v = _validate(doc)
    env = os.environ if env is None else env
    seed = v["run"]["seed"]
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None

    kind = v["run"]["task"]
    if kind not in TASK_KINDS:
        raise ConfigError(f"run.task: unknown task {kind!r}")
    try:
        task = TaskSpec(kind, noise_p=v["task"]["noise_p"],
                        pairs_per_fold=v["task"]["pairs_per_fold"])
        arch = Architecture(hidden=tuple(v["architecture"]["hidden"]),
                            kernel=tuple(v["architecture"]["kernel"]),
                            resample=tuple(v["architecture"]["resample"]))
        constants = OperatorConstants(
            k_nodal=v["operators"]["k_nodal"],
            k_chirp=v["operators"]["k_chirp"],
            cut=v["operators"]["cut"],
            sinc_guard=v["operators"]["sinc_guard"],
            arg_clip=v["operators"]["arg_clip"],
        )
        pools = v["operators"]["pools"]
        acts = v["operators"]["acts"]
        nodals = v["operators"]["nodals"]
        if (pools is None) != (acts is None) or (acts is None) != (nodals is None):
            raise ConfigError(
                "operators.pools/acts/nodals must be given together")
        sublib = None
        if pools is not None:
            sublib = make_sublibrary(pools, acts, nodals)
        train_cfg = TrainConfig(
            iterations=v["train"]["iterations"],
            lr0=v["train"]["lr0"],
            lr_up=v["train"]["lr_up"],
            lr_down=v["train"]["lr_down"],
            lr_max=v["train"]["lr_max"],
            lr_min=v["train"]["lr_min"],
            batch=v["train"]["batch"],
            weight_range=v["train"]["weight_range"],
            seed=seed,
        )
        spm_cfg = SpmConfig(sessions=v["spm"]["sessions"],
                            window=v["spm"]["window"], seed=seed,
                            train=train_cfg)
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from None

    backend = v["run"]["backend"]
    if backend not in (None, "python", "compiled"):
        raise ConfigError(f"run.backend: unknown backend {backend!r}")
    for field_name in ("folds", "runs", "jobs"):
        if v["run"][field_name] < 0 or (field_name != "folds"
                                        and v["run"][field_name] == 0):
            raise ConfigError(f"run.{field_name}: must be positive")
    return RunConfig(
        task=task,
        corpus=v["run"]["corpus"],
        output=v["run"]["output"],
        seed=seed,
        folds=v["run"]["folds"],
        runs=v["run"]["runs"],
        jobs=v["run"]["jobs"],
        backend=backend,
        arch=arch,
        constants=constants,
        sublibrary=sublib,
        train=train_cfg,
        spm=spm_cfg,
    )


def parse(text, env=None):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"TOML syntax error: {err}") from None
    return from_dict(doc, env=env)


def load(path, env=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    try:
        return parse(text, env=env)
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}") from None


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")


def serialize(cfg):
    """Write a RunConfig back to TOML; parse(serialize(cfg)) == cfg."""
    sections = {
        "run": {
            "task": cfg.task.kind,
            "corpus": cfg.corpus,
            "output": cfg.output,
            "seed": cfg.seed,
            "folds": cfg.folds,
            "runs": cfg.runs,
            "jobs": cfg.jobs,
        },
        "architecture": {
            "hidden": list(cfg.arch.hidden),
            "kernel": list(cfg.arch.kernel),
            "resample": list(cfg.arch.resample),
        },
        "operators": {
            "k_nodal": cfg.constants.k_nodal,
            "k_chirp": cfg.constants.k_chirp,
            "cut": cfg.constants.cut,
            "sinc_guard": cfg.constants.sinc_guard,
            "arg_clip": cfg.constants.arg_clip,
        },
        "train": {
            "iterations": cfg.train.iterations,
            "lr0": cfg.train.lr0,
            "lr_up": cfg.train.lr_up,
            "lr_down": cfg.train.lr_down,
            "lr_max": cfg.train.lr_max,
            "lr_min": cfg.train.lr_min,
            "batch": cfg.train.batch,
            "weight_range": cfg.train.weight_range,
        },
        "spm": {
            "sessions": cfg.spm.sessions,
            "window": cfg.spm.window,
        },
        "task": {
            "noise_p": cfg.task.noise_p,
            "pairs_per_fold": cfg.task.pairs_per_fold,
        },
    }
    if cfg.backend is not None:
        sections["run"]["backend"] = cfg.backend
    if cfg.sublibrary is not None:
        sections["operators"]["pools"] = list(cfg.sublibrary.pools)
        sections["operators"]["acts"] = list(cfg.sublibrary.acts)
        sections["operators"]["nodals"] = list(cfg.sublibrary.nodals)
    lines = []
    for section, keys in sections.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)
