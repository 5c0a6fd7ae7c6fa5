"""Declarative run configuration: YAML file + flag overrides, fully resolved per run."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .inference import VotingConfig
from .models import ModelSpec, default_spec, spec_to_dict
from .preprocessing import PreprocessingParams
from .synthetic import SyntheticConfig, train_config, val_config
from .training import TrainConfig, default_train_config


class ConfigError(ValueError):
    pass


# key -> description; the CLI help of every command lists the keys it consumes
CONFIG_KEYS = {
    "seed": "master seed for data generation, splitting, initialisation and shuffling",
    "paths.out_dir": "root directory for all outputs",
    "paths.data_dir": "recordings root holding train/ and val/ (default: <out_dir>/data)",
    "io.column_map": "mapping canonical CSV column -> column name in the files",
    "synthetic.num_train": "training recordings (3 contacts each)",
    "synthetic.num_val": "validation recordings",
    "synthetic.noise_std": "sensor noise as a fraction of the nominal channel ranges",
    "synthetic.library_seed": "seed of the motion/setup library shared by both splits",
    "preprocessing.mode": "fixed | sliding",
    "preprocessing.delta_offset_ms": "contact onset to window end, multiple of 5 ms",
    "preprocessing.delta_step_samples": "stride between sliding windows in 5 ms samples",
    "preprocessing.horizon_ms": "capture horizon after contact onset",
    "preprocessing.literal_velocity_error": "zero the velocity-error features",
    "model.family": "gru | lstm | transformer",
    "model.spec": "overrides of the family's default architecture fields",
    "training.learning_rate": "AdamW step size",
    "training.max_epochs": "epoch budget of the final training run",
    "training.batch_size": "mini-batch size",
    "training.early_stop_patience": "epochs without validation-loss improvement before stopping",
    "training.l2_lambda": "decoupled weight decay",
    "training.k_folds": "cross-validation folds",
    "training.val_fraction": "fraction of contact groups held out for early stopping",
    "training.cv_epochs": "epochs per fold during tuning (default: max_epochs)",
    "training.grid": "hyperparameter grid for tuning, name -> list of values",
    "voting.method": "hard | soft",
    "voting.n_p": "predictions per decision",
    "voting.infer_every": "ticks between inferences",
    "voting.model_runtime_ms": "model runtime added to the latency estimate",
    "voting.n_p_min": "lower latency bound N_p",
    "voting.n_p_max": "upper latency bound N_p",
    "voting.hard_tie": "recent | lowest",
    "sweep.families": "model families swept",
    "sweep.methods": "voting methods swept",
    "sweep.n_p_values": "N_p values swept",
    "sweep.workers": "parallel worker processes",
}

COMMAND_KEYS = {
    "synth": ["seed", "paths.", "synthetic."],
    "preprocess": ["seed", "paths.", "io.", "preprocessing."],
    "tune": ["seed", "paths.", "io.", "preprocessing.", "model.", "training."],
    "train": ["seed", "paths.", "io.", "preprocessing.", "model.", "training."],
    "evaluate": ["seed", "paths.", "io.", "preprocessing.", "model.", "voting."],
    "stream": ["seed", "paths.", "io.", "preprocessing.", "model.", "voting."],
    "sweep": ["seed", "paths.", "io.", "model.spec", "training.", "voting.", "sweep."],
    "report": ["paths."],
}


def keys_for(command: str) -> list[str]:
    prefixes = COMMAND_KEYS[command]
    return [k for k in CONFIG_KEYS if any(k.startswith(p) for p in prefixes)]


DEFAULTS = {
    "seed": 0,
    "paths": {"out_dir": "runs", "data_dir": None},
    "io": {"column_map": {}},
    "synthetic": {"num_train": 85, "num_val": 40, "noise_std": 0.01, "library_seed": 0},
    "preprocessing": {"mode": "sliding", "delta_offset_ms": 15, "delta_step_samples": 1, "horizon_ms": 300,
                      "literal_velocity_error": False},
    "model": {"family": "transformer", "spec": {}},
    "training": {},
    "voting": {"method": "hard", "n_p": 8, "infer_every": 3, "model_runtime_ms": 7.09, "n_p_min": 8,
               "n_p_max": 15, "hard_tie": "recent"},
    "sweep": {"families": ["gru", "lstm", "transformer"], "methods": ["hard", "soft"],
              "n_p_values": list(range(8, 16)), "workers": 1},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        name = f"{where}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {name!r}")
        if name == "training":
            if not isinstance(v, dict):
                raise ConfigError("config key 'training' must be a mapping")
            known = {f.name for f in dataclasses.fields(TrainConfig)}
            bad = sorted(set(v) - known)
            if bad:
                raise ConfigError(f"unknown config key(s) {['training.' + b for b in bad]}")
            out[k] = copy.deepcopy(v)
        elif isinstance(base[k], dict) and k not in ("column_map", "spec"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {name!r} must be a mapping")
            out[k] = _merge(base[k], v, name + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                loaded = yaml.safe_load(Path(path).read_text()) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            if not isinstance(loaded, dict):
                raise ConfigError(f"config {path} must be a mapping")
            data = _merge(data, loaded)
        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            head, _, tail = dotted.partition(".")
            if tail:
                data[head][tail] = value
            else:
                data[head] = value
        cfg = cls(data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        family = self.family
        if family not in ("gru", "lstm", "transformer"):
            raise ConfigError(f"model.family must be gru, lstm or transformer, got {family!r}")
        for fam in self.raw["sweep"]["families"]:
            if fam not in ("gru", "lstm", "transformer"):
                raise ConfigError(f"unknown family {fam!r} in sweep.families")
        try:
            self.preprocessing()
            self.voting()
            self.spec()
            self.training()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    # -- typed views --------------------------------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def family(self) -> str:
        return str(self.raw["model"]["family"]).lower()

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["paths"]["out_dir"])

    @property
    def data_dir(self) -> Path:
        d = self.raw["paths"]["data_dir"]
        return Path(d) if d else self.out_dir / "data"

    @property
    def column_map(self) -> dict:
        return dict(self.raw["io"]["column_map"] or {})

    def preprocessing(self, **over) -> PreprocessingParams:
        kw = dict(self.raw["preprocessing"])
        kw.update(over)
        return PreprocessingParams(**kw)

    def spec(self, family: str | None = None, strict: bool = True) -> ModelSpec:
        """Family defaults with ``model.spec`` overrides; non-strict drops fields the family lacks."""
        base = default_spec(family or self.family)
        over = dict(self.raw["model"]["spec"] or {})
        if not strict:
            names = {f.name for f in dataclasses.fields(base)}
            over = {k: v for k, v in over.items() if k in names}
        return dataclasses.replace(base, **over)

    def training(self, family: str | None = None) -> TrainConfig:
        kw = dict(self.raw["training"])
        kw.setdefault("seed", self.seed)
        return default_train_config(family or self.family, **kw)

    def voting(self, **over) -> VotingConfig:
        kw = dict(self.raw["voting"])
        kw.update(over)
        return VotingConfig(**kw)

    def synthetic(self, split: str) -> SyntheticConfig:
        s = self.raw["synthetic"]
        extra = dict(noise_std=float(s["noise_std"]), library_seed=int(s["library_seed"]))
        if split == "train":
            n, full, prefix, seed = int(s["num_train"]), 85, "train", self.seed
            make = train_config
        else:
            n, full, prefix, seed = int(s["num_val"]), 40, "val", self.seed + 1
            make = val_config
        if n == full:
            return make(seed, **extra)
        return SyntheticConfig(num_recordings=n, seed=seed, id_prefix=prefix, **extra)

    def resolved(self, command: str) -> dict:
        """Everything the command consumes, with family defaults filled in."""
        out = {"command": command, **copy.deepcopy(self.raw)}
        out["paths"]["data_dir"] = str(self.data_dir)
        out["preprocessing"] = self.preprocessing().as_dict()
        out["model"] = {"family": self.family, "spec": spec_to_dict(self.spec())}
        t = dataclasses.asdict(self.training())
        out["training"] = t
        v = dataclasses.asdict(self.voting())
        v["method"] = self.voting().method.value
        out["voting"] = v
        return out

    def dump(self, command: str) -> str:
        return yaml.safe_dump(self.resolved(command), sort_keys=True, default_flow_style=False)
