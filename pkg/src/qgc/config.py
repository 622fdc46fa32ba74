"""Run configuration: INI-style text files, validation, and manifests.

Grammar: UTF-8 text, ``[section]`` headers, ``key = value`` lines, ``#``
comments.  Unknown sections or keys are rejected.  Every run writes a
manifest echoing the fully resolved configuration in the same grammar, so
a manifest re-parses to an equivalent RunConfig.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ConfigError


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str) -> Optional[float]:
    return None if not s.strip() else float(s)


def _opt_str(s: str) -> Optional[str]:
    return s.strip() or None


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "simulation": {
        "regime": (str, "eddy"),
        "nx": (int, 64),
        "dt": (_opt_float, None),
        "steps": (int, 2000),
        "seed": (int, 0),
        "ssd_on": (_bool, True),
        "sample_every": (int, 100),
        "beta": (_opt_float, None),
        "rd": (_opt_float, None),
        "delta": (_opt_float, None),
        "u1": (_opt_float, None),
        "u2": (_opt_float, None),
        "rek": (_opt_float, None),
    },
    "generate": {
        "sims": (int, 1),
        "samples": (int, 500),
        "factor": (int, 4),
        "nx_fine": (int, 128),
        "interval": (int, 100),
    },
    "train": {
        "model": (str, "ffno"),
        "epochs": (int, 50),
        "batch": (int, 16),
        "lr": (float, 1e-3),
        "seed": (int, 0),
        "val_fraction": (float, 0.1),
        "patience": (int, 0),
        "weight_decay": (float, 0.0),
    },
    "closure": {
        "kind": (str, "none"),
        "cs": (float, 0.1),
        "nu4": (_opt_float, None),
        "r_back": (float, 0.9),
        "kappa": (float, -4.87e8),
        "checkpoint_path": (_opt_str, None),
    },
    "evaluation": {
        "steps": (int, 4000),
        "sample_every": (int, 20),
        "spinup_frac": (float, 0.5),
        "reference_seed": (int, 0),
    },
}

CLOSURE_KINDS = ("none", "smagorinsky", "biharmonic", "backscatter", "zb", "neural")


@dataclass
class RunConfig:
    """Validated configuration tree; values live in ``sections``."""

    sections: dict[str, dict[str, Any]] = field(default_factory=dict)

    def __post_init__(self):
        for sec, keys in SCHEMA.items():
            self.sections.setdefault(sec, {})
            for key, (_, default) in keys.items():
                self.sections[sec].setdefault(key, default)
        self.validate()

    def get(self, section: str, key: str):
        return self.sections[section][key]

    def set(self, section: str, key: str, value):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        self.sections[section][key] = value

    def validate(self):
        regime = self.get("simulation", "regime")
        if regime not in ("eddy", "jet", "mixed"):
            raise ConfigError(f"unknown regime {regime!r}")
        if self.get("closure", "kind") not in CLOSURE_KINDS:
            raise ConfigError(f"unknown closure kind {self.get('closure', 'kind')!r}")
        if self.get("closure", "kind") == "neural" and not self.get(
            "closure", "checkpoint_path"
        ):
            raise ConfigError("neural closure needs closure.checkpoint_path")

    def manifest_text(self) -> str:
        lines = ["# fully resolved run configuration"]
        for sec in SCHEMA:
            lines.append(f"[{sec}]")
            for key in SCHEMA[sec]:
                v = self.sections[sec][key]
                lines.append(f"{key} = {'' if v is None else v}")
            lines.append("")
        return "\n".join(lines)


def parse_config(path: str) -> RunConfig:
    """Parse and validate an INI config file; unknown keys are errors."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except (configparser.Error, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from None
    rc = RunConfig()
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{path}: unknown key [{sec}] {key}")
            parser, _ = SCHEMA[sec][key]
            try:
                rc.sections[sec][key] = parser(raw)
            except ValueError as e:
                raise ConfigError(f"{path}: [{sec}] {key}: {e}") from None
    rc.validate()
    return rc


def model_params_from_config(rc: RunConfig, nx: Optional[int] = None,
                             regime: Optional[str] = None):
    """Build ModelParams from the [simulation] section plus overrides."""
    from .qgmodel import REGIMES

    sim = rc.sections["simulation"]
    regime = regime or sim["regime"]
    if regime == "mixed":
        raise ConfigError("mixed regime applies to dataset generation only")
    overrides = {}
    for cfg_key, param_key in (("beta", "beta"), ("rd", "rd"), ("delta", "delta"),
                               ("u1", "U1"), ("u2", "U2"), ("rek", "rek")):
        if sim[cfg_key] is not None:
            overrides[param_key] = sim[cfg_key]
    if sim["dt"] is not None:
        overrides["dt"] = sim["dt"]
    overrides["ssd_on"] = sim["ssd_on"]
    return REGIMES[regime](nx=nx or sim["nx"], **overrides)


def closure_from_config(rc: RunConfig):
    """Instantiate the configured closure callable (or None)."""
    from . import closures as cl

    sec = rc.sections["closure"]
    kind = sec["kind"]
    if kind == "none":
        return None
    if kind == "smagorinsky":
        return cl.make_smagorinsky(sec["cs"])
    if kind == "biharmonic":
        return cl.make_biharmonic(sec["nu4"])
    if kind == "backscatter":
        return cl.make_backscatter(sec["nu4"], sec["r_back"])
    if kind == "zb":
        return cl.make_zb(sec["kappa"])
    if kind == "neural":
        from .training import load_checkpoint

        model, stats = load_checkpoint(sec["checkpoint_path"])
        return cl.make_neural(model, stats)
    raise ConfigError(f"unknown closure kind {kind!r}")
