"""Flat ``section.key = value`` run configuration.

Precedence, highest first: command-line flags, ``STOPOU_*`` environment
variables, the config file, built-in defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import ConvexDomain, make_domain
from .errors import ConfigError, InvalidInputError
from .estimators import TestFunction, config_hash
from .gradient import GradConfig
from .matrixcalc import OUModel, read_model_file
from .pathlaw import DyadicGrid

DEFAULTS = {
    "model.preset": "kolmogorov",
    "domain.name": "ball",
    "domain.r": "1.0",
    "run.T": "1.0",
    "run.n": "7",
    "run.m": "100000",
    "run.seed": "0",
    "run.threads": "1",
    "run.x": "0.3 0.2",
    "run.y": "1 0",
    "phi.kind": "gauss_bump",
    "phi.width": "0.5",
    "pde.nodes": "201",
    "out.format": "csv",
}

KNOWN = {
    "model.preset", "model.file", "model.d", "model.A", "model.C",
    "domain.name", "domain.r", "domain.M",
    "run.T", "run.n", "run.m", "run.seed", "run.threads", "run.x", "run.y",
    "phi.kind", "phi.center", "phi.width", "phi.freq", "phi.phase", "phi.normal", "phi.offset",
    "grad.boundary_method", "grad.shell_eps", "grad.weight_variant", "grad.boundary_sign", "grad.fd_step",
    "pde.nodes", "pde.dt",
    "out.dir", "out.format",
}

# keys that change neither results nor output bytes
_NOT_HASHED = {"run.threads", "out.dir", "out.format"}

ENV_KEYS = {
    "STOPOU_SEED": "run.seed",
    "STOPOU_THREADS": "run.threads",
    "STOPOU_OUT": "out.dir",
    "STOPOU_FORMAT": "out.format",
}

PRESETS = ("kolmogorov", "brownian", "none")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = val
    return out


@dataclass
class RunConfig:
    """Resolved configuration; ``values`` maps dotted keys to raw strings."""

    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, env=None, overrides=None) -> "RunConfig":
        vals = dict(DEFAULTS)
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            vals.update(parse_config_text(p.read_text(), str(p)))
        env = os.environ if env is None else env
        for var, key in ENV_KEYS.items():
            if env.get(var):
                vals[key] = env[var]
        for key, val in (overrides or {}).items():
            if val is not None:
                if key not in KNOWN:
                    raise ConfigError(f"unknown key {key!r}")
                vals[key] = str(val)
        cfg = cls(vals)
        cfg.validate_scalars()
        return cfg

    # typed accessors

    def get(self, key, default=None):
        return self.values.get(key, default)

    def _num(self, key, kind=float, positive=False):
        raw = self.values.get(key)
        if raw is None:
            raise ConfigError(f"{key}: missing")
        try:
            v = kind(raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
        if kind is float and not np.isfinite(v):
            raise ConfigError(f"{key}: must be finite")
        if positive and not v > 0:
            raise ConfigError(f"{key}: must be > 0")
        return v

    def _vec(self, key, d=None):
        raw = self.values.get(key)
        if raw is None:
            return None
        try:
            v = np.array([float(t) for t in raw.replace(",", " ").split()])
        except ValueError:
            raise ConfigError(f"{key}: non-numeric entry in {raw!r}") from None
        if not np.all(np.isfinite(v)):
            raise ConfigError(f"{key}: entries must be finite")
        if d is not None and v.size != d:
            raise ConfigError(f"{key}: expected {d} entries, got {v.size}")
        return v

    def validate_scalars(self):
        self.T, self.n, self.m = self._num("run.T", positive=True), self._num("run.n", int), self._num("run.m", int, True)
        if self.n < 0:
            raise ConfigError("run.n: must be >= 0")
        self.seed = self._num("run.seed", int)
        if self.seed < 0:
            raise ConfigError("run.seed: must be >= 0")
        self.threads = self._num("run.threads", int, True)
        self.r = self._num("domain.r", positive=True)
        if self.values.get("out.format") not in ("csv", "json"):
            raise ConfigError("out.format: must be csv or json")
        if self.values.get("model.preset") not in PRESETS:
            raise ConfigError(f"model.preset: must be one of {PRESETS}")

    @property
    def out_format(self) -> str:
        return self.values["out.format"]

    @property
    def out_dir(self):
        return self.values.get("out.dir")

    def model(self) -> OUModel:
        v = self.values
        try:
            if "model.file" in v:
                return read_model_file(v["model.file"])
            if "model.A" in v or "model.C" in v:
                if "model.d" not in v:
                    raise ConfigError("model.d: required with model.A / model.C")
                d = self._num("model.d", int, True)
                A, C = self._vec("model.A"), self._vec("model.C")
                if A is None or C is None:
                    raise ConfigError("model.A and model.C must both be given")
                for key, arr in (("model.A", A), ("model.C", C)):
                    if arr.size != d * d:
                        raise ConfigError(f"{key}: expected {d * d} entries, got {arr.size}")
                C = C.reshape(d, d)
                if np.max(np.abs(C - C.T)) > 1e-12 * max(1.0, np.max(np.abs(C))):
                    raise ConfigError("model.C: matrix is not symmetric")
                return OUModel.from_arrays(A.reshape(d, d), C)
            preset = v["model.preset"]
            if preset == "kolmogorov":
                return OUModel.kolmogorov()
            if preset == "brownian":
                return OUModel.brownian(1)
            raise ConfigError("model: no preset, file or inline matrices given")
        except ConfigError:
            raise
        except (InvalidInputError, OSError) as exc:
            raise ConfigError(f"model: {exc}") from None

    def domain(self, d: int) -> ConvexDomain:
        M = self._vec("domain.M")
        if M is not None:
            if M.size != d * d:
                raise ConfigError(f"domain.M: expected {d * d} entries, got {M.size}")
            M = M.reshape(d, d)
        try:
            return make_domain(self.values["domain.name"], self.r, d, M)
        except InvalidInputError as exc:
            raise ConfigError(f"domain: {exc}") from None

    def grid(self) -> DyadicGrid:
        return DyadicGrid(self.T, self.n)

    def x(self, d: int):
        return self._vec("run.x", d)

    def y(self, d: int):
        return self._vec("run.y", d)

    def phi(self, d: int) -> TestFunction:
        kind = self.values["phi.kind"]
        params = {}
        for key in ("center", "freq", "normal"):
            v = self._vec(f"phi.{key}", d)
            if v is not None:
                params[key] = v
        for key in ("width", "phase", "offset"):
            if f"phi.{key}" in self.values:
                params[key] = self._num(f"phi.{key}")
        if kind == "bounded_sin" and "freq" not in params:
            raise ConfigError("phi.freq: required for bounded_sin")
        if kind == "halfspace_indicator" and "normal" not in params:
            raise ConfigError("phi.normal: required for halfspace_indicator")
        if kind != "gauss_bump":
            params.pop("width", None)
        try:
            return TestFunction(kind, **params)
        except InvalidInputError as exc:
            raise ConfigError(f"phi: {exc}") from None

    def grad_config(self) -> GradConfig:
        kw = {}
        for key in ("boundary_method", "weight_variant", "boundary_sign"):
            if f"grad.{key}" in self.values:
                kw[key] = self.values[f"grad.{key}"]
        for key in ("shell_eps", "fd_step"):
            if f"grad.{key}" in self.values:
                kw[key] = self._num(f"grad.{key}", positive=True)
        try:
            return GradConfig(**kw)
        except InvalidInputError as exc:
            raise ConfigError(f"grad: {exc}") from None

    def hashed_items(self):
        return sorted((k, v) for k, v in self.values.items() if k not in _NOT_HASHED)

    def hash(self) -> str:
        return config_hash(**dict(self.hashed_items()))

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))
