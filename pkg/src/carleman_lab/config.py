"""Experiment configuration: INI files with one section per concern.

Example::

    [experiment]
    kind = carleman-verify
    seed = 3
    out = runs/sweep

    [domain]
    resolution = 129,17,17,17

    [carleman]
    s_list = 4,8,16,32,64

Missing keys take the defaults of :class:`ExperimentConfig`; command-line
flags override file values.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .coefficients import CoefficientError, CoefficientSet, get_preset, load_coefficient_csv
from .domain import DomainSpec, GridError
from .geometry import GEOMETRIES
from .weights import CATALOG

KINDS = ("simulate", "carleman-verify", "uc-demo", "geometry-check")

DEFAULT_RESOLUTION = {
    "simulate": [33, 33, 33, 33],
    "carleman-verify": [129, 17, 17, 17],
    "uc-demo": [33, 17, 17, 17],
    "geometry-check": [65, 33, 33, 33],
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    out: str = "runs/out"
    # domain
    omega: list = field(default_factory=lambda: [[0.0, 1.0]])
    t_max: float = 1.0
    a_max: float = 1.0
    tau_min: float = 0.0
    tau_max: float = 1.0
    resolution: list = field(default_factory=list)
    # coefficients
    preset: str = "logistic-growth"
    coeff_csv: str = ""
    # carleman sweep
    weight: str = "affine"
    slope: float = 4.0
    offset: float = -4.0
    beta_w: float = 0.5
    center: list = field(default_factory=lambda: [0.5, 0.5, 0.5])
    bumps: int = 20
    s_list: list = field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0, 64.0])
    lambda_list: list = field(default_factory=lambda: [1.0, 2.0, 4.0])
    divergence_factor: float = 1.5
    # geometry
    geometry: str = "unit-interval"
    eps: float = 0.35
    N: int | None = None
    geo_lambda: float = 1.0
    samples: int = 10_000
    # continuation
    alpha_list: list = field(default_factory=lambda: [1e-2, 1e-4, 1e-6])
    noise_list: list = field(default_factory=lambda: [0.0])
    s_uc: float = 8.0
    penalty: float = 1e6
    decay_s_list: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 20.0, 40.0])
    # simulate
    slices: list = field(default_factory=lambda: [0, -1])

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r} (known: {', '.join(KINDS)})")
        if not self.resolution:
            self.resolution = list(DEFAULT_RESOLUTION[self.kind])
        self.resolution = [int(r) for r in self.resolution]
        expected = len(self.omega) + 3
        if len(self.resolution) == 1:
            self.resolution = self.resolution * expected
        if len(self.resolution) != expected:
            raise ConfigError(f"resolution needs 1 or {expected} entries, got {len(self.resolution)}")
        if any(r < 3 for r in self.resolution):
            raise ConfigError("resolution entries must be >= 3")
        try:
            self.domain_spec()
        except (GridError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        self.coefficients()
        if self.weight != "affine" and self.weight not in CATALOG:
            raise ConfigError(f"unknown weight {self.weight!r}")
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"unknown geometry {self.geometry!r} (known: {', '.join(GEOMETRIES)})")
        if len(self.center) != 3:
            raise ConfigError("center needs three entries (t0, a0, tau0)")
        for name in ("s_list", "lambda_list", "alpha_list"):
            vals = getattr(self, name)
            if not vals or any(not v > 0 for v in vals):
                raise ConfigError(f"{name} must be a non-empty list of positive numbers")
        if any(v < 0 for v in self.noise_list):
            raise ConfigError("noise levels must be >= 0")
        if self.bumps < 1:
            raise ConfigError("bumps must be >= 1")

    def domain_spec(self) -> DomainSpec:
        return DomainSpec(
            omega=tuple(tuple(float(v) for v in b) for b in self.omega),
            t_max=self.t_max,
            a_max=self.a_max,
            tau_min=self.tau_min,
            tau_max=self.tau_max,
        )

    def coefficients(self) -> CoefficientSet:
        n = len(self.omega)
        try:
            if self.coeff_csv:
                return load_coefficient_csv(self.coeff_csv, get_preset(self.preset, n))
            return get_preset(self.preset, n)
        except (CoefficientError, OSError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _omega(text: str) -> list[list[float]]:
    out = []
    for part in text.split(","):
        lo, hi = part.split(":")
        out.append([float(lo), float(hi)])
    return out


# (section, key) -> (attribute, parser)
_KEYS = {
    ("experiment", "kind"): ("kind", str),
    ("experiment", "seed"): ("seed", int),
    ("experiment", "out"): ("out", str),
    ("domain", "omega"): ("omega", _omega),
    ("domain", "t_max"): ("t_max", float),
    ("domain", "a_max"): ("a_max", float),
    ("domain", "tau_min"): ("tau_min", float),
    ("domain", "tau_max"): ("tau_max", float),
    ("domain", "resolution"): ("resolution", _ints),
    ("coefficients", "preset"): ("preset", str),
    ("coefficients", "csv"): ("coeff_csv", str),
    ("carleman", "weight"): ("weight", str),
    ("carleman", "slope"): ("slope", float),
    ("carleman", "offset"): ("offset", float),
    ("carleman", "beta_w"): ("beta_w", float),
    ("carleman", "center"): ("center", _floats),
    ("carleman", "bumps"): ("bumps", int),
    ("carleman", "s_list"): ("s_list", _floats),
    ("carleman", "lambda_list"): ("lambda_list", _floats),
    ("carleman", "divergence_factor"): ("divergence_factor", float),
    ("geometry", "name"): ("geometry", str),
    ("geometry", "eps"): ("eps", float),
    ("geometry", "n"): ("N", lambda v: int(v) if v.strip() else None),
    ("geometry", "lambda"): ("geo_lambda", float),
    ("geometry", "samples"): ("samples", int),
    ("continuation", "alpha_list"): ("alpha_list", _floats),
    ("continuation", "noise_list"): ("noise_list", _floats),
    ("continuation", "s"): ("s_uc", float),
    ("continuation", "penalty"): ("penalty", float),
    ("continuation", "decay_s_list"): ("decay_s_list", _floats),
    ("simulate", "slices"): ("slices", _ints),
}


def load_config(path: str | Path | None = None, kind: str | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Read ``path`` (optional), apply ``overrides`` (attribute -> value)."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                spec = _KEYS.get((section, key))
                if spec is None:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                attr, conv = spec
                try:
                    values[attr] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
    if kind is not None:
        if "kind" in values and values["kind"] != kind:
            raise ConfigError(f"config declares kind {values['kind']!r} but {kind!r} was requested")
        values["kind"] = kind
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    if "kind" not in values:
        raise ConfigError("experiment kind missing")
    return ExperimentConfig(**values)
