"""Run configuration: defaults, a flat TOML file and command-line flags.

Every config key has the same name as its CLI flag with dashes replaced by
underscores (``--max-cycles`` <-> ``max_cycles``). Flags override the file,
the file overrides defaults.
"""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from .anneal import SAConfig
from .models import MODELS, get_model
from .types import Bounds

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODES = ("npsa2", "npsa3", "osat")
WORKERS_ENV = "NPSA_WORKERS"


class ConfigError(ValueError):
    pass


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return value


@dataclass
class RunConfig:
    model: str = ""
    data: str = ""
    mode: str = "npsa3"
    K: int | None = None
    mu_lower: list[float] | None = None
    mu_upper: list[float] | None = None
    beta: list[float] | None = None
    beta_lower: list[float] | None = None
    beta_upper: list[float] | None = None
    sigma: float | None = None
    sigma_lower: float | None = None
    sigma_upper: float | None = None
    t0: float = 60.0
    rt: float = 0.85
    ns: int = 20
    nt: int = 10
    eps: float = 1e-4
    n_eps: int = 4
    max_cycles: int = 500
    seed: int = 0
    workers: int = 1
    out: str = "npsa_out"
    compute_d: bool = False
    prune_floor: float = 1e-5
    merge_radius: list[float] | None = None

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_sources(cls, file_values: dict | None = None, flag_values: dict | None = None) -> "RunConfig":
        values: dict = {"workers": default_workers()}
        for source in (file_values or {}, flag_values or {}):
            for key, value in source.items():
                if key not in cls.keys():
                    raise ConfigError(f"unknown config key {key!r}")
                if value is not None:
                    values[key] = value
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {sorted(MODELS)}, got {self.model!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.K is not None and self.mode != "npsa2":
            raise ConfigError("K only applies to mode npsa2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.prune_floor < 1:
            raise ConfigError("prune_floor must lie in [0, 1)")
        if self.beta is not None and (self.beta_lower is not None or self.beta_upper is not None):
            raise ConfigError("give either a fixed beta or beta bounds, not both")
        if self.sigma is not None and (self.sigma_lower is not None or self.sigma_upper is not None):
            raise ConfigError("give either a fixed sigma or sigma bounds, not both")
        model = get_model(self.model)
        if self.mode == "osat":
            if model.descriptor.has_beta and self.beta is None:
                raise ConfigError("mode osat requires a fixed beta (set beta)")
            if self.sigma_lower is not None:
                raise ConfigError("mode osat keeps sigma fixed; sigma bounds are not allowed")
        try:
            self.sa_config()
            self.bounds()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def sa_config(self) -> SAConfig:
        return SAConfig(self.t0, self.rt, self.ns, self.nt, self.eps, self.n_eps, self.seed, self.max_cycles)

    def model_kwargs(self) -> dict:
        model = get_model(self.model)
        return {"sigma": self.sigma} if model.uses_sigma and self.sigma is not None else {}

    def build_model(self):
        return get_model(self.model, **self.model_kwargs())

    def bounds(self) -> Bounds:
        model = get_model(self.model)
        default = model.default_bounds()
        if self.mu_lower is None or self.mu_upper is None:
            if default is None:
                raise ConfigError(f"model {self.model!r} needs mu_lower and mu_upper")
            mu_lo = default.mu_lower if self.mu_lower is None else self.mu_lower
            mu_hi = default.mu_upper if self.mu_upper is None else self.mu_upper
        else:
            mu_lo, mu_hi = self.mu_lower, self.mu_upper
        if len(mu_lo) != model.dim or len(mu_hi) != model.dim:
            raise ConfigError(f"model {self.model!r} needs {model.dim} mu bounds")
        if self.beta is not None:
            beta_lo = beta_hi = self.beta
        else:
            beta_lo = self.beta_lower if self.beta_lower is not None else (default.beta_lower if default else [])
            beta_hi = self.beta_upper if self.beta_upper is not None else (default.beta_upper if default else [])
        if len(beta_lo) != model.descriptor.beta_dim or len(beta_hi) != model.descriptor.beta_dim:
            raise ConfigError(f"model {self.model!r} needs {model.descriptor.beta_dim} beta value(s)")
        return Bounds(
            np.asarray(mu_lo, dtype=float),
            np.asarray(mu_hi, dtype=float),
            np.asarray(beta_lo, dtype=float),
            np.asarray(beta_hi, dtype=float),
            self.sigma_lower,
            self.sigma_upper,
        )

    def merge_radius_array(self, bounds: Bounds) -> np.ndarray:
        if self.merge_radius is None:
            return 1e-3 * bounds.width()
        return np.broadcast_to(np.asarray(self.merge_radius, dtype=float), (bounds.dim,)).copy()

    def to_dict(self) -> dict:
        """Config as plain data, minus the worker count and output directory,
        which do not affect results."""
        d = asdict(self)
        d.pop("workers")
        d.pop("out")
        return d


def read_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path!r}: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config {path!r}: tables are not supported ({nested[0]!r}); use flat keys")
    return data
