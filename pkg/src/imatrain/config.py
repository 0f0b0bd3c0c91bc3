"""Run configuration: plain ``key = value`` files with ``[section]`` headers.

Every key has a default; unknown sections or keys are hard errors so typos
cannot silently change a run.  Command-line ``--set section.key=value``
overrides file values, and dedicated flags (--out, --seed, --jobs) override
both.  The fully resolved configuration is echoed into the output directory
of every run.
"""

from __future__ import annotations

import configparser
import io

from .errors import ConfigError


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float_list(s):
    s = s.strip()
    if not s:
        return []
    return [float(v) for v in s.split(",")]


def _parse_int_list(s):
    s = s.strip()
    if not s:
        return []
    return [int(v) for v in s.split(",")]


def _parse_centers(s):
    # "x1 y1; x2 y2" -> list of coordinate lists
    out = []
    for part in s.split(";"):
        part = part.strip()
        if part:
            out.append([float(v) for v in part.split()])
    return out


_PARSERS = {
    "str": str.strip,
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "floats": _parse_float_list,
    "ints": _parse_int_list,
    "centers": _parse_centers,
}

# section -> key -> (type tag, default as written in a config file)
SCHEMA = {
    "dataset": {
        "generator": ("str", "moons"),        # moons | blobs | file
        "path": ("str", ""),                  # csv path when generator=file
        "n_train": ("int", "20000"),
        "n_val": ("int", "2000"),
        "n_test": ("int", "2000"),
        "noise_std": ("float", "0.05"),
        "blob_centers": ("centers", "-1 0; 1 0"),
        "blob_std": ("float", "0.5"),
        "blob_n": ("int", "200"),
        "seed": ("int", "0"),
    },
    "model": {
        "hidden": ("ints", "32,64,128"),
        "negative_slope": ("float", "0.01"),
        "layer_norm": ("bool", "true"),
    },
    "train": {
        "method": ("str", "ima"),             # ima | adv | ce
        "epochs": ("int", "30"),
        "batch_size": ("int", "128"),
        "beta": ("float", "0.5"),
        "eps_max": ("float", "0.3"),
        "delta_eps": ("float", "-1"),         # -1 means eps_max / epochs
        "eps": ("float", "-1"),               # required for method=adv
        "lr": ("float", "0.001"),
    },
    "attack": {
        "norm": ("str", "l2"),
        "n_pgd": ("int", "20"),
        "alpha": ("float", "4"),
        "n_binary": ("int", "10"),
        "clip_lo": ("float", "0"),
        "clip_hi": ("float", "0"),            # lo == hi means no box clip
    },
    "eval": {
        "levels": ("floats", "0,0.1,0.2,0.3"),
        "n_pgd": ("int", "100"),
        "white_noise_level": ("float", "-1"), # < 0 disables
        "white_noise_trials": ("int", "10"),
        "raster": ("bool", "false"),
        "raster_resolution": ("int", "200"),
        "equilibrium": ("bool", "false"),
        "equilibrium_points": ("int", "500"),
        "hist_bins": ("int", "30"),
        "margins_path": ("str", ""),
    },
    "run": {
        "out": ("str", ""),
        "seed": ("int", "1"),
        "jobs": ("int", "1"),
    },
    "sweep": {
        "beta": ("floats", ""),
        "eps_max": ("floats", ""),
        "delta_eps": ("floats", ""),
        "eps": ("floats", ""),
        "seeds": ("ints", "1"),
        "level": ("float", "0.2"),            # summary noise level
    },
}


class RunConfig:
    """Resolved configuration: ``cfg["section"]["key"]`` with parsed types."""

    def __init__(self, values, raw):
        self.values = values
        self.raw = raw        # string form of every key, for echoing

    def __getitem__(self, section):
        return self.values[section]

    def echo(self):
        """Render the resolved config in file format."""
        buf = io.StringIO()
        for section in SCHEMA:
            buf.write(f"[{section}]\n")
            for key in SCHEMA[section]:
                buf.write(f"{key} = {self.raw[section][key]}\n")
            buf.write("\n")
        return buf.getvalue()


def _defaults_raw():
    return {section: {key: default for key, (_t, default) in keys.items()}
            for section, keys in SCHEMA.items()}


def load_config(path=None, overrides=()) -> RunConfig:
    """Read a config file (optional), apply ``section.key=value`` overrides."""
    raw = _defaults_raw()
    if path is not None:
        parser = configparser.RawConfigParser()
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh, source=str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file: {exc}") from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                raw[section][key] = value
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(
                f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = (part.strip() for part in target.split(".", 1))
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        raw[section][key] = value
    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (type_tag, _default) in keys.items():
            text = raw[section][key]
            try:
                values[section][key] = _PARSERS[type_tag](text)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {exc}") from None
    return RunConfig(values, raw)
