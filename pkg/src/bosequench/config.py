"""Quench run configuration: INI-style ``key = value`` lines grouped in sections.

Example::

    [system]
    N = 5
    gamma = 2.0
    omega = 1.0

    [grid]
    policy = uniform
    L = auto
    occupation_gamma = 0.3
    extent = 6.0

    [mps]
    chi_max = 128
    svd_cutoff = 1e-10
    n_max = auto

    [evolution]
    dt = auto
    t_final = 4.0
    t_unit = t_ia
    snapshots = 200
    t_first = 0.001
    truncation_budget = 1e-3

    [output]
    directory = runs/gamma2

Lengths in [grid] are in oscillator lengths. ``dt = auto`` picks the default
Trotter step; ``dt_hopping`` instead gives dt in units of 1/J_max.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, fields
from typing import Optional

from bosequench.errors import ConfigError

AUTO = "auto"


@dataclass
class QuenchConfig:
    N: int = 5
    gamma: Optional[float] = None
    g: Optional[float] = None
    omega: float = 1.0
    grid_policy: str = "uniform"
    L: Optional[int] = None              # None = from occupation_gamma
    occupation_gamma: float = 0.3
    target: Optional[float] = None       # adaptive: occupation per site at the centre
    extent: float = 8.0                  # oscillator lengths
    dx_edge: Optional[float] = None      # oscillator lengths
    chi_max: int = 128
    svd_cutoff: float = 1e-10
    n_max: Optional[int] = None
    dt: Optional[float] = None
    dt_hopping: Optional[float] = None
    t_final: float = 4.0
    t_unit: str = "t_ia"
    snapshots: int = 200
    t_first: float = 1e-3                # same unit as t_final
    measure_every: Optional[int] = None
    truncation_budget: Optional[float] = None
    nonlocal_: bool = True
    directory: str = "run"
    checkpoint: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if (self.gamma is None) == (self.g is None):
            raise ConfigError("give exactly one of gamma and g")
        coupling = self.gamma if self.gamma is not None else self.g
        if coupling < 0:
            raise ConfigError("interaction must be non-negative")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError("N must be a positive integer")
        if self.omega <= 0:
            raise ConfigError("omega must be positive")
        if self.grid_policy not in ("uniform", "adaptive"):
            raise ConfigError(f"unknown grid policy {self.grid_policy!r}")
        if self.grid_policy == "adaptive" and (self.target is None or self.target <= 0):
            raise ConfigError("adaptive grid needs a positive target occupation")
        if self.grid_policy == "uniform" and self.L is None and coupling == 0:
            raise ConfigError("L = auto needs a non-zero interaction")
        if self.chi_max < 1 or self.svd_cutoff < 0:
            raise ConfigError("chi_max must be >= 1 and svd_cutoff >= 0")
        if self.dt is not None and self.dt_hopping is not None:
            raise ConfigError("give at most one of dt and dt_hopping")
        if self.t_unit not in ("t_ia", "t_osc", "raw"):
            raise ConfigError(f"unknown time unit {self.t_unit!r}")
        if self.t_unit == "t_ia" and coupling == 0:
            raise ConfigError("t_unit = t_ia is undefined for g = 0")
        if not self.t_final > 0:
            raise ConfigError("t_final must be positive")
        if self.snapshots < 2:
            raise ConfigError("need at least two snapshots")

    # -- (de)serialization --------------------------------------------------

    _LAYOUT = {
        "system": ("N", "gamma", "g", "omega"),
        "grid": ("grid_policy", "L", "occupation_gamma", "target", "extent", "dx_edge"),
        "mps": ("chi_max", "svd_cutoff", "n_max"),
        "evolution": ("dt", "dt_hopping", "t_final", "t_unit", "snapshots", "t_first",
                      "measure_every", "truncation_budget", "nonlocal_"),
        "output": ("directory", "checkpoint"),
    }
    _KEYS = {"grid_policy": "policy", "nonlocal_": "nonlocal"}
    _AUTO = {"L", "n_max", "dt"}
    # written by runs into their manifest; ignored on input so a manifest can be rerun
    _REPORT_SECTIONS = {"resolved", "run"}

    @classmethod
    def from_text(cls, text: str) -> "QuenchConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        known = set()
        for section, names in cls._LAYOUT.items():
            for name in names:
                key = cls._KEYS.get(name, name)
                known.add((section, key.lower()))
                if cp.has_option(section, key):
                    values[name] = _convert(name, kinds[name], cp.get(section, key))
        for section in cp.sections():
            if section in cls._REPORT_SECTIONS:
                continue
            if section not in cls._LAYOUT:
                raise ConfigError(f"unknown section [{section}]")
            for key in cp.options(section):
                if (section, key) not in known:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "QuenchConfig":
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def with_overrides(self, pairs) -> "QuenchConfig":
        """Apply ``section.key=value`` strings."""
        text = self.to_text()
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.read_string(text)
        for item in pairs:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"override {item!r} is not section.key=value")
            lhs, value = item.split("=", 1)
            section, key = lhs.strip().split(".", 1)
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, key.strip(), value.strip())
        buf = io.StringIO()
        cp.write(buf)
        return QuenchConfig.from_text(buf.getvalue())

    def to_text(self, extra: Optional[dict] = None) -> str:
        """INI text of every field; ``extra`` adds sections of resolved values."""
        lines = []
        for section, names in self._LAYOUT.items():
            lines.append(f"[{section}]")
            for name in names:
                none = AUTO if name in self._AUTO else "none"
                lines.append(f"{self._KEYS.get(name, name)} = {_fmt(getattr(self, name), none)}")
            lines.append("")
        for section, items in (extra or {}).items():
            lines.append(f"[{section}]")
            for k, v in items.items():
                lines.append(f"{k} = {_fmt(v)}")
            lines.append("")
        return "\n".join(lines)


def _fmt(v, none="none") -> str:
    if v is None:
        return none
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(name, kind, raw: str):
    raw = raw.strip()
    optional = "Optional" in str(kind)
    if raw.lower() in (AUTO, "none", ""):
        if optional:
            return None
        raise ConfigError(f"{name} cannot be {raw!r}")
    base = str(kind).replace("Optional[", "").rstrip("]")
    try:
        if "bool" in base:
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if "int" in base:
            val = float(raw)
            if val != int(val):
                raise ValueError(raw)
            return int(val)
        if "float" in base:
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError(raw)
            return val
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {name}") from exc
