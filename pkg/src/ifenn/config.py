"""Plain-text run configuration: ``[section]`` headers with ``key = value`` lines.

Every experiment has a desk-scale profile (fast defaults) and a full-scale
profile.  A run starts from a preset, then applies a config file, then
``section.key=value`` overrides; keys outside the experiment's schema are
rejected.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .operatornet import BranchConfig, OperatorModel, TrunkConfig, build_model
from .training import (
    DewateringFamily,
    ExperimentSetup,
    GaussianBodyFamily,
    LrSchedule,
    TubeFluxFamily,
    constant,
    cube_setup,
    excavation_setup,
    tube_setup,
    warm_hold_decay,
)

EXPERIMENTS = ("cube", "tube", "excavation")
PROFILES = ("desk", "full")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# Shared sections: (type, desk default).
_COMMON = {
    "run": {"experiment": (str, "cube"), "profile": (str, "desk"), "seed": (int, 7), "threads": (int, 1)},
    "time": {"dt": (float, 180.0), "n_steps": (int, 20)},
    "data": {"n_cases": (int, 60), "n_test": (int, 10), "with_displacement": (_bool, False)},
    "model": {
        "load_gru_layers": (int, 2), "load_hidden": (int, 32), "load_fc_layers": (int, 1), "load_out": (int, 32),
        "strain_branch": (_bool, True), "strain_gru_layers": (int, 2), "strain_hidden": (int, 32),
        "strain_norm_channels": (int, 8), "strain_fc_layers": (int, 1), "strain_out": (int, 32),
        "trunk_fc_layers": (int, 4), "trunk_hidden": (int, 64), "trunk_out": (int, 64),
        "bc": (_bool, True), "init_seed": (int, 0),
    },
    "train": {
        "epochs": (int, 1200), "batch_size": (int, 8), "loss": (str, "L2"), "normalization": (str, "minmax11"),
        "schedule": (str, "warm-hold-decay"), "lr": (float, 3e-3), "warm": (float, 0.05), "hold": (float, 0.25),
        "start_factor": (float, 0.1), "end_factor": (float, 0.01),
    },
    "ifenn": {"case": (str, "median"), "transport": (str, "in-process")},
    "stability": {"case": (str, "median"), "switch_field": (int, 7), "switch_strain": (int, 14)},
    "bench": {"size": (int, 31), "steps": (int, 3)},
}

_SPECIFIC = {
    "cube": {
        "geometry": {"nodes_per_axis": (int, 11), "dim": (int, 2)},
        "loads": {"mean": (float, 5000.0), "std": (float, 2500.0), "length_space": (float, 0.4),
                  "length_time": (float, 1800.0), "control_space": (int, 5), "control_time": (int, 5),
                  "ramp_time": (float, 1800.0), "slope": (float, 10.0)},
        "sensors": {"load": (int, 4), "strain": (int, 4)},
    },
    "tube": {
        "geometry": {"divisions": (_ints, (6, 16))},
        "loads": {"q0_min": (float, -3000.0), "q0_max": (float, 3000.0), "q1_min": (float, 0.0),
                  "q1_max": (float, 3000.0), "omega_r_min": (float, 1.0), "omega_r_max": (float, 4.0),
                  "omega_t_min": (float, 1.0), "omega_t_max": (float, 4.0)},
        "sensors": {"wall": (int, 8), "strain": (_ints, (4, 8))},
    },
    "excavation": {
        "geometry": {"divisions": (_ints, (16, 8)), "width": (float, 40.0), "depth": (float, 20.0),
                     "pit_width": (float, 10.0)},
        "loads": {"mean": (float, 2e-5), "std": (float, 1e-5), "length_time": (float, 6e5),
                  "control_time": (int, 13)},
        "sensors": {"strain": (_ints, (8, 4))},
    },
}

# Desk values that differ from the shared defaults, per experiment.
_DESK = {
    "cube": {},
    "tube": {"time": {"dt": "3000", "n_steps": "20"}, "train": {"loss": "SSE"}},
    "excavation": {"time": {"dt": "150000", "n_steps": "20"}, "train": {"loss": "SSE"},
                   "model": {"bc": "false"}},
}

# Full-scale profiles: the original case counts, horizons, sensor grids and
# network sizes.  Learning-rate breakpoints are unknown; the desk
# schedule shape is kept.
_FULL = {
    "cube": {
        "geometry": {"nodes_per_axis": "11", "dim": "3"},
        "time": {"dt": "180", "n_steps": "100"},
        "sensors": {"load": "8", "strain": "8"},
        "data": {"n_cases": "1000", "n_test": "100"},
        "model": {"load_gru_layers": "2", "load_hidden": "200", "load_fc_layers": "1", "load_out": "200",
                  "strain_gru_layers": "2", "strain_hidden": "50", "strain_norm_channels": "25",
                  "strain_fc_layers": "1", "strain_out": "50",
                  "trunk_fc_layers": "4", "trunk_hidden": "200", "trunk_out": "250"},
        "train": {"epochs": "24000", "batch_size": "16", "loss": "L2"},
        "stability": {"switch_field": "33", "switch_strain": "66", "case": "p90"},
    },
    "tube": {
        "geometry": {"divisions": "16, 96"},
        "time": {"dt": "500", "n_steps": "120"},
        "sensors": {"wall": "64", "strain": "16, 32"},
        "data": {"n_cases": "1000", "n_test": "100"},
        "model": {"load_gru_layers": "2", "load_hidden": "64", "load_fc_layers": "1", "load_out": "64",
                  "strain_gru_layers": "2", "strain_hidden": "64", "strain_norm_channels": "32",
                  "strain_fc_layers": "1", "strain_out": "64",
                  "trunk_fc_layers": "4", "trunk_hidden": "256", "trunk_out": "128"},
        "train": {"epochs": "24000", "batch_size": "16", "loss": "SSE"},
    },
    "excavation": {
        "geometry": {"divisions": "60, 36"},
        "time": {"dt": "50000", "n_steps": "60"},
        "sensors": {"strain": "73, 8"},
        "data": {"n_cases": "700", "n_test": "100"},
        "model": {"load_gru_layers": "2", "load_hidden": "64", "load_fc_layers": "1", "load_out": "64",
                  "strain_gru_layers": "2", "strain_hidden": "64", "strain_norm_channels": "32",
                  "strain_fc_layers": "1", "strain_out": "64",
                  "trunk_fc_layers": "4", "trunk_hidden": "256", "trunk_out": "128", "bc": "false"},
        "train": {"epochs": "8000", "batch_size": "16", "loss": "SSE"},
    },
}


def schema(experiment: str) -> dict[str, dict[str, tuple]]:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    out = {s: dict(keys) for s, keys in _COMMON.items()}
    for s, keys in _SPECIFIC[experiment].items():
        out.setdefault(s, {}).update(keys)
    return out


@dataclass
class RunConfig:
    """Typed values for one experiment, addressed as ``cfg["section"]["key"]``."""

    experiment: str
    profile: str
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    def set(self, section: str, key: str, text: str):
        sch = schema(self.experiment)
        if section not in sch:
            raise ConfigError(f"unknown section [{section}] for experiment {self.experiment}")
        if key not in sch[section]:
            raise ConfigError(f"unknown key {section}.{key} for experiment {self.experiment}")
        if section == "run" and key in ("experiment", "profile") and str(text).strip() != self.values[section][key]:
            raise ConfigError(f"run.{key} selects the preset and cannot be changed after loading")
        conv = sch[section][key][0]
        try:
            self.values[section][key] = conv(str(text).strip())
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in self.values.items():
            cp[section] = {k: _fmt(v) for k, v in keys.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    # ------------------------------------------------------------ builders

    def setup(self) -> ExperimentSetup:
        g, t, ld, sn = self["geometry"], self["time"], self["loads"], self["sensors"]
        t_end = t["dt"] * t["n_steps"]
        if self.experiment == "cube":
            dim = g["dim"]
            fam = GaussianBodyFamily(extent=(1.0,) * dim, t_end=t_end, mean=ld["mean"], std=ld["std"],
                                     length_space=ld["length_space"], length_time=ld["length_time"],
                                     control_space=ld["control_space"], control_time=ld["control_time"])
            return cube_setup(g["nodes_per_axis"], t["dt"], t["n_steps"], sn["load"], sn["strain"], fam,
                              ld["ramp_time"], ld["slope"], dim)
        if self.experiment == "tube":
            bounds = {"omega_t": (ld["omega_t_min"], ld["omega_t_max"])}
            for wall in ("in", "out"):
                bounds[f"q_{wall}_0"] = (ld["q0_min"], ld["q0_max"])
                bounds[f"q_{wall}_1"] = (ld["q1_min"], ld["q1_max"])
                bounds[f"omega_{wall}_r"] = (ld["omega_r_min"], ld["omega_r_max"])
            fam = TubeFluxFamily(t_end=t_end, bounds=bounds)
            return tube_setup(g["divisions"], t["dt"], t["n_steps"], sn["wall"], sn["strain"], fam)
        fam = DewateringFamily(t_end=t_end, mean=ld["mean"], std=ld["std"], length_time=ld["length_time"],
                               control_time=ld["control_time"])
        return excavation_setup(g["divisions"], g["width"], g["depth"], g["pit_width"], t["dt"], t["n_steps"],
                                sn["strain"], fam)

    def model(self, setup: ExperimentSetup) -> OperatorModel:
        m = self["model"]
        branches = [BranchConfig("load", setup.n_load_sensors, m["load_gru_layers"], m["load_hidden"], 0,
                                 m["load_fc_layers"], m["load_out"])]
        if m["strain_branch"]:
            branches.append(BranchConfig("strain", setup.strain_sensors.count, m["strain_gru_layers"],
                                         m["strain_hidden"], m["strain_norm_channels"], m["strain_fc_layers"],
                                         m["strain_out"]))
        n_comp = 1 + setup.mesh.dim if self["data"]["with_displacement"] else 1
        bc = setup.bc if m["bc"] and n_comp == 1 else None
        return build_model(branches, TrunkConfig(setup.mesh.dim, m["trunk_fc_layers"], m["trunk_hidden"],
                                                 m["trunk_out"]), n_comp, bc, m["init_seed"])

    def schedule(self) -> LrSchedule:
        tr = self["train"]
        if tr["schedule"] == "constant":
            return constant(tr["lr"])
        if tr["schedule"] == "warm-hold-decay":
            return warm_hold_decay(tr["lr"], tr["epochs"], tr["warm"], tr["hold"], tr["start_factor"],
                                   tr["end_factor"])
        raise ConfigError(f"train.schedule must be 'constant' or 'warm-hold-decay', got {tr['schedule']!r}")


def preset(experiment: str = "cube", profile: str = "desk") -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {PROFILES}")
    sch = schema(experiment)
    cfg = RunConfig(experiment, profile, {s: {k: d for k, (_, d) in keys.items()} for s, keys in sch.items()})
    cfg.values["run"]["experiment"] = experiment
    cfg.values["run"]["profile"] = profile
    for layer in (_DESK[experiment], _FULL[experiment] if profile == "full" else {}):
        for section, keys in layer.items():
            for key, text in keys.items():
                cfg.set(section, key, text)
    return cfg


def parse_override(text: str) -> tuple[str, str, str]:
    head, sep, value = text.partition("=")
    section, dot, key = head.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    return section, key.strip(), value


def load_config(path=None, experiment: str | None = None, profile: str | None = None,
                overrides=()) -> RunConfig:
    """Preset, then the file at ``path``, then ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            parser.read_string(path.read_text())
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    overrides = [parse_override(o) for o in overrides]
    picked = {k: v.strip() for s, k, v in overrides if s == "run" and k in ("experiment", "profile")}

    def choose(key, flag, default):
        if key in picked:
            return picked[key]
        if flag is not None:
            return flag
        if parser.has_option("run", key):
            return parser.get("run", key).strip()
        return default

    cfg = preset(choose("experiment", experiment, "cube"), choose("profile", profile, "desk"))
    for section in parser.sections():
        for key, value in parser.items(section):
            cfg.set(section, key, value)
    for section, key, value in overrides:
        cfg.set(section, key, value)
    return cfg
