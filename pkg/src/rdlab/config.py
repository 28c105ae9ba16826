"""Flat `section.key = value` experiment configuration.

Lines are `key = value`; `#` starts a comment.  Every key must be
registered below, and each value is parsed by its registered kind.  Real
numbers accept `pi` in simple products and quotients (`2*pi`, `pi/2`).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .fields import BoxDomain
from .nonlinearity import ForcingSpec, NonlinearitySpec, builtin_family, forcing_profile


class ConfigError(ValueError):
    pass


# key -> (kind, default)
SCHEMA: dict[str, tuple[str, object]] = {
    "seed": ("int", 0),
    "domain.dim": ("int", 1),
    "domain.lengths": ("reals", (math.pi,)),
    "domain.resolution": ("ints", (63,)),
    "nonlinearity.family": ("str", "cubic_chafee_infante"),
    "nonlinearity.params": ("reals", (2.0,)),
    "forcing.profile": ("str", "zero"),
    "forcing.amplitude": ("real", 0.0),
    "forcing.s": ("real", 2.0),
    "solver.dt": ("real", 0.01),
    "solver.horizon": ("real", 20.0),
    "solver.scheme": ("str", "etd2rk"),
    "solver.log_m": ("reals", ()),
    "initial.l2": ("real", 1.0),
    "initial.decay": ("real", 1.0),
    "ensemble.size": ("int", 40),
    "ensemble.heldout": ("int", 10),
    "ensemble.norm_min": ("real", 1.0),
    "ensemble.norm_max": ("real", 1000.0),
    "ensemble.dt": ("real", 1 / 128),
    "ensemble.horizon": ("real", 8.0),
    "ladder.delta": ("real", 0.5),
    "ladder.d_exp": ("real", 1.0),
    "ladder.m0": ("real", 2.0),
    "ladder.m_max": ("real", 64.0),
    "ladder.floor": ("real", 1.0),
    "ladder.t1": ("reals", (0.0, 0.5, 1.0, 2.0, 4.0)),
    "ladder.tau": ("real", 1.0),
    "attractor.seed_count": ("int", 6),
    "attractor.modes": ("int", 4),
    "attractor.amplitudes": ("reals", (1e-6,)),
    "attractor.shoot_dt": ("real", 0.0025),
    "attractor.shoot_horizon": ("real", 40.0),
    "attractor.forward_count": ("int", 20),
    "attractor.forward_norm_min": ("real", 1e-8),
    "attractor.forward_norm_max": ("real", 10.0),
    "attractor.forward_horizon": ("real", 40.0),
    "attractor.forward_dt": ("real", 0.01),
    "attractor.transient": ("real", 12.0),
    "attractor.tol": ("real", 1e-6),
    "attractor.pairs": ("int", 100),
    "attractor.pair_times": ("reals", (0.25, 0.5, 1.0, 2.0)),
    "attractor.invariance_checks": ("int", 20),
    "dimension.alpha_slack": ("real", 1.0),
    "dimension.spectrum_count": ("int", 200),
    "dimension.n_max": ("int", 0),
    "dimension.projection_modes": ("int", 8),
    "dimension.t_min": ("real", 1e-3),
    "dimension.t_max": ("real", 10.0),
    "dimension.t_count": ("int", 241),
    "check.fields": ("int", 100),
}

_REAL = re.compile(r"^\s*([-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|pi))"
                   r"(?:\s*([*/])\s*(\d+\.?\d*(?:[eE][-+]?\d+)?|pi))?\s*$")


def parse_real(text: str) -> float:
    m = _REAL.match(text)
    if not m:
        raise ValueError(f"not a real number: {text!r}")

    def atom(s):
        sign = -1.0 if s.startswith("-") else 1.0
        s = s.lstrip("+-")
        return sign * (math.pi if s == "pi" else float(s))

    value = atom(m.group(1))
    if m.group(2) == "*":
        value *= atom(m.group(3))
    elif m.group(2) == "/":
        value /= atom(m.group(3))
    return value


def _items(text: str) -> list[str]:
    return [s for s in re.split(r"[,\s]+", text.strip()) if s]


def parse_value(kind: str, text: str):
    if kind == "int":
        return int(text.strip())
    if kind == "real":
        return parse_real(text)
    if kind == "str":
        return text.strip()
    if kind == "ints":
        return tuple(int(s) for s in _items(text))
    if kind == "reals":
        return tuple(parse_real(s) for s in _items(text))
    raise AssertionError(kind)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise KeyError(key)
        return self.values.get(key, SCHEMA[key][1])

    def set(self, key: str, text: str, where: str = "override"):
        if key not in SCHEMA:
            raise ConfigError(f"{where}: unknown key '{key}'")
        try:
            self.values[key] = parse_value(SCHEMA[key][0], text)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for '{key}': {exc}") from None

    def resolved(self) -> dict:
        return {k: self[k] for k in sorted(SCHEMA)}

    # -- builders --------------------------------------------------------

    def domain(self) -> BoxDomain:
        d = self["domain.dim"]
        lengths = self["domain.lengths"]
        res = self["domain.resolution"]
        if len(lengths) == 1 and d > 1:
            lengths = lengths * d
        if len(res) == 1 and d > 1:
            res = res * d
        return BoxDomain(d, tuple(lengths), tuple(res))

    def nonlinearity(self) -> NonlinearitySpec:
        return builtin_family(self["nonlinearity.family"], list(self["nonlinearity.params"]))

    def forcing(self, domain: BoxDomain | None = None) -> ForcingSpec:
        return forcing_profile(domain or self.domain(), self["forcing.profile"],
                               self["forcing.amplitude"], self["forcing.s"])

    def validate(self) -> "ExperimentConfig":
        """Build every component once so errors surface before any run."""
        try:
            dom = self.domain()
            self.nonlinearity()
            self.forcing(dom)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{self.source}: {exc}") from None
        positive = ["solver.dt", "solver.horizon", "ensemble.dt", "ensemble.horizon",
                    "attractor.tol", "attractor.shoot_dt", "attractor.forward_dt",
                    "ladder.delta", "ladder.tau"]
        for key in positive:
            if not self[key] > 0:
                raise ConfigError(f"{self.source}: '{key}' must be positive")
        if not 0 <= self["seed"] < 2**64:
            raise ConfigError(f"{self.source}: 'seed' must be an unsigned 64-bit integer")
        return self


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cfg = ExperimentConfig(source=source)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg.set(key, value, where=f"{source}:{lineno}")
    return cfg


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read a config file (or a shipped preset name) and apply `key=value` overrides."""
    path_obj = Path(path)
    if path_obj.exists():
        text, source = path_obj.read_text(), str(path)
    else:
        text, source = preset_text(str(path)), f"preset:{path}"
    cfg = parse_config(text, source)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        cfg.set(key, value, where=f"override {item!r}")
    return cfg.validate()


def preset_names() -> list[str]:
    root = resources.files("rdlab") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def preset_text(name: str) -> str:
    res = resources.files("rdlab") / "presets" / f"{name}.cfg"
    if not res.is_file():
        raise ConfigError(f"no config file or preset named {name!r} "
                          f"(presets: {', '.join(preset_names())})")
    return res.read_text()


def dump_config(cfg: ExperimentConfig) -> str:
    out = []
    for key, value in cfg.resolved().items():
        if isinstance(value, tuple):
            value = " ".join(repr(v) for v in value)
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"
