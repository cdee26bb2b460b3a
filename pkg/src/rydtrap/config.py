"""Experiment configuration: YAML with unit-suffixed keys and strict validation.

Every key has a type, a default and an optional constraint.  Unknown keys,
wrong types and out-of-range values are all reported together, each with
the line number where it appears in the file.
"""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import SimpleNamespace

import yaml

POSITIVE = "positive"
NON_NEGATIVE = "non-negative"
FRACTION = "fraction"
UNIT_INTERVAL_OPEN = "in (0, 1)"

AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    check: str = None
    choices: tuple = None
    nullable: bool = False


SCHEMA = {
    "pupil": {
        "grid_size": Key(int, 256, POSITIVE),
        "extent_mm": Key(float, 16.384, POSITIVE),
        "wavelength_nm": Key(float, 820.0, POSITIVE),
        "focal_length_mm": Key(float, 16.3, POSITIVE),
        "bob_radius_mm": Key(float, 5.5, POSITIVE),
        "bob_fill": Key(float, 0.7, POSITIVE),
        "dump_shift_um": Key(float, 100.0, POSITIVE),
        "power_scale": Key(float, 1.0, POSITIVE),
    },
    "window": {
        "half_width_um": Key(float, 3.0, POSITIVE),
        "step_um": Key(float, 0.1, POSITIVE),
        "half_length_um": Key(float, 20.0, POSITIVE),
        "axial_step_um": Key(float, 0.5, POSITIVE),
    },
    "array": {
        "rows": Key(int, 3, POSITIVE),
        "cols": Key(int, 6, POSITIVE),
        "pitch_um": Key(float, 15.0, POSITIVE),
        "power_disorder": Key(float, 0.01, NON_NEGATIVE),
    },
    "powers": {
        "tweezer_mW": Key(float, 2.6, POSITIVE),
        "tweezer_waist_um": Key(float, 1.2, POSITIVE),
        "bob_mW": Key(float, 20.0, POSITIVE),
        "oscillation_bob_mW": Key(float, 19.9, POSITIVE),
    },
    "bob": {
        "ratio": Key(float, None, UNIT_INTERVAL_OPEN, nullable=True),
        "search_min": Key(float, 0.4, UNIT_INTERVAL_OPEN),
        "search_max": Key(float, 0.8, UNIT_INTERVAL_OPEN),
    },
    "temperatures": {
        "atoms_uK": Key(float, 6.6, POSITIVE),
        "hot_uK": Key(float, 23.0, POSITIVE),
        "cold_uK": Key(float, 7.0, POSITIVE),
        "environment_K": Key(float, 300.0, NON_NEGATIVE),
    },
    "timing": {
        "excitation_us": Key(float, 15.0, POSITIVE),
        "tau_min_us": Key(float, 32.0, POSITIVE),
        "tau_max_ms": Key(float, 5.0, POSITIVE),
        "off_window_us": Key(float, 15.0, POSITIVE),
        "oscillation_tau_us": Key(float, 210.0, POSITIVE),
        "delay_start_us": Key(float, 16.0, NON_NEGATIVE),
        "delay_stop_us": Key(float, 120.0, POSITIVE),
        "delay_step_us": Key(float, 1.0, POSITIVE),
        "release_max_us": Key(float, 150.0, POSITIVE),
        "release_step_us": Key(float, 10.0, POSITIVE),
    },
    "dynamics": {
        "atoms_per_point": Key(int, 10000, POSITIVE),
        "oscillation_atoms": Key(int, 400, POSITIVE),
        "trapping_atoms": Key(int, 400, POSITIVE),
        "recoil_mm_s": Key(float, 6.0, NON_NEGATIVE),
        "kick_axis": Key(str, "z", choices=tuple(AXES)),
        "offset_nm": Key(float, 300.0, NON_NEGATIVE),
        "offset_axis": Key(str, "x", choices=tuple(AXES)),
        "gravity": Key(bool, False),
    },
    "rate_model": {
        "n_min": Key(int, 30, POSITIVE),
        "n_max": Key(int, 80, POSITIVE),
        "level": Key(int, 52, POSITIVE),
        "leak_per_s": Key(float, 0.0, NON_NEGATIVE),
        "anchor_lifetime_ms": Key(float, 30.0, POSITIVE),
    },
    "detection": {
        "loading": Key(float, 0.62, FRACTION),
        "preparation": Key(float, 0.70, FRACTION),
        "purity": Key(float, 0.9, FRACTION),
        "optical_recapture": Key(float, 0.35 / (0.70 * 0.9), FRACTION),
        "background": Key(float, 3e-4, FRACTION),
    },
    "rabi": {
        "gradient_MHz_per_mm": Key(float, 1.18, POSITIVE),
        "node_um": Key(float, -45.0),
        "omega0_kHz": Key(float, 0.0, NON_NEGATIVE),
        "damping_per_s": Key(float, 5000.0, NON_NEGATIVE),
        "t_max_us": Key(float, 150.0, POSITIVE),
        "t_step_us": Key(float, 0.5, POSITIVE),
    },
    "fit": {
        "temperature_min_uK": Key(float, 2.0, POSITIVE),
        "temperature_max_uK": Key(float, 15.0, POSITIVE),
        "temperature_step_uK": Key(float, 0.5, POSITIVE),
        "trapping_start_ms": Key(float, 1.0, NON_NEGATIVE),
        "trapping_atoms": Key(int, 1000, POSITIVE),
    },
    "decay": {
        "bob_enabled": Key(bool, True),
        "points": Key(int, 24, POSITIVE),
    },
    "run": {
        "seed": Key(int, 0, NON_NEGATIVE),
        "output_dir": Key(str, "out"),
        "acceptance": Key(bool, True),
    },
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


class ExperimentConfig:
    """Validated configuration; sections are attribute namespaces."""

    def __init__(self, values):
        self._values = {s: dict(v) for s, v in values.items()}
        for s, v in self._values.items():
            setattr(self, s, SimpleNamespace(**v))

    def as_dict(self):
        return {s: dict(v) for s, v in self._values.items()}

    def echo(self):
        """Deterministic YAML rendering of every setting, defaults included."""
        return yaml.safe_dump(self.as_dict(), sort_keys=False, default_flow_style=False)

    def with_overrides(self, **sections):
        vals = self.as_dict()
        for s, upd in sections.items():
            vals[s].update(upd)
        return ExperimentConfig(vals)


def defaults():
    return ExperimentConfig({s: {k: key.default for k, key in keys.items()} for s, keys in SCHEMA.items()})


def _check_value(where, name, key, value):
    if value is None:
        return None if key.nullable else f"{where}: '{name}' may not be empty"
    if key.type is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if key.type is bool and not isinstance(value, bool):
        return f"{where}: '{name}' must be true or false, got {value!r}"
    if key.type in (int, float) and (isinstance(value, bool) or not isinstance(value, key.type)):
        return f"{where}: '{name}' must be a {key.type.__name__}, got {value!r}"
    if key.type is str and not isinstance(value, str):
        return f"{where}: '{name}' must be a string, got {value!r}"
    if key.choices and value not in key.choices:
        return f"{where}: '{name}' must be one of {', '.join(key.choices)}, got {value!r}"
    if key.check == POSITIVE and not value > 0:
        return f"{where}: '{name}' must be positive (unit violation), got {value!r}"
    if key.check == NON_NEGATIVE and not value >= 0:
        return f"{where}: '{name}' must be non-negative (unit violation), got {value!r}"
    if key.check == FRACTION and not 0 <= value <= 1:
        return f"{where}: '{name}' must lie in [0, 1], got {value!r}"
    if key.check == UNIT_INTERVAL_OPEN and not 0 < value < 1:
        return f"{where}: '{name}' must lie in (0, 1), got {value!r}"
    return None


def _cross_checks(cfg):
    errs = []
    if cfg.bob.search_min >= cfg.bob.search_max:
        errs.append("bob: search_min must be below search_max")
    if cfg.rate_model.n_min > 48 or cfg.rate_model.n_max < 56:
        errs.append("rate_model: n_min..n_max must contain 48..56")
    if not cfg.rate_model.n_min <= cfg.rate_model.level <= cfg.rate_model.n_max:
        errs.append("rate_model: level must lie between n_min and n_max")
    if cfg.timing.delay_stop_us <= cfg.timing.delay_start_us:
        errs.append("timing: delay_stop_us must exceed delay_start_us")
    if cfg.timing.delay_stop_us + cfg.timing.off_window_us > cfg.timing.oscillation_tau_us:
        errs.append("timing: last delay plus off window must fit inside oscillation_tau_us")
    if cfg.timing.tau_max_ms * 1e3 <= cfg.timing.tau_min_us:
        errs.append("timing: tau_max_ms must exceed tau_min_us")
    if cfg.fit.temperature_max_uK <= cfg.fit.temperature_min_uK:
        errs.append("fit: temperature_max_uK must exceed temperature_min_uK")
    n = cfg.pupil.grid_size
    if n < 64 or n & (n - 1):
        errs.append("pupil: grid_size must be a power of two >= 64")
    return errs


def parse_config(text, source="<config>"):
    """Validate YAML text; raises ConfigError listing every problem."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{source}: YAML syntax error: {exc}"]) from None
    vals = defaults().as_dict()
    errors = []
    if root is None:
        return ExperimentConfig(vals)
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError([f"{source}:{root.start_mark.line + 1}: top level must be a mapping of sections"])
    loader = yaml.SafeLoader("")
    for knode, vnode in root.value:
        sec = knode.value
        line = knode.start_mark.line + 1
        if sec not in SCHEMA:
            errors.append(f"{source}:{line}: unknown section '{sec}'")
            continue
        if isinstance(vnode, yaml.ScalarNode) and vnode.value in ("", "~", "null"):
            continue
        if not isinstance(vnode, yaml.MappingNode):
            errors.append(f"{source}:{line}: section '{sec}' must be a mapping")
            continue
        for kn, vn in vnode.value:
            where = f"{source}:{kn.start_mark.line + 1}"
            name = kn.value
            if name not in SCHEMA[sec]:
                errors.append(f"{where}: unknown key '{name}' in section '{sec}'")
                continue
            if not isinstance(vn, yaml.ScalarNode):
                errors.append(f"{where}: '{name}' must be a scalar")
                continue
            value = loader.construct_object(vn, deep=True)
            key = SCHEMA[sec][name]
            msg = _check_value(where, f"{sec}.{name}", key, value)
            if msg:
                errors.append(msg)
                continue
            vals[sec][name] = float(value) if key.type is float and value is not None else value
    loader.dispose()
    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(vals)
    errs = _cross_checks(cfg)
    if errs:
        raise ConfigError([f"{source}: {e}" for e in errs])
    return cfg


def validate_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read: {exc.strerror}"]) from None
    return parse_config(text, str(path))


def reference_config_text():
    return resources.files("rydtrap").joinpath("data/reference.yaml").read_text()
