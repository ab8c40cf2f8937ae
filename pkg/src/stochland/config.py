"""Run configuration: JSON schema, validation and object builders.

One JSON document configures a run.  Validation happens before any compute and
reports offending field paths (e.g. ``noise.fields[2].scale``).  Sections are
only required by the subcommands that use them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import datasets
from .bridge import BridgeConfig
from .errors import ConfigError
from .kernels import KernelSpec
from .noise import EulerianNoise, LagrangianNoise, NoiseModel
from .optimize import DeConfig
from .sde import HEUN_STRATONOVICH, EULER_MARUYAMA_ITO, SdeConfig

SCHEMA_VERSION = 1


def _expect(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _get(obj: dict, key: str, path: str, types=None, default=None, required=False):
    if key not in obj:
        if required:
            raise ConfigError(f"{path}.{key}: required field missing")
        return default
    val = obj[key]
    if types is not None and not isinstance(val, types):
        tn = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ConfigError(f"{path}.{key}: expected {tn}, got {type(val).__name__}")
    return val


def _number(obj, key, path, required=False, default=None, positive=False):
    val = _get(obj, key, path, types=(int, float), default=default, required=required)
    if val is None:
        return None
    val = float(val)
    _expect(np.isfinite(val), f"{path}.{key}", "must be finite")
    if positive:
        _expect(val > 0, f"{path}.{key}", "must be positive")
    return val


def _array(obj, key, path, required=False, default=None, shape_hint=""):
    val = _get(obj, key, path, types=list, default=default, required=required)
    if val is None:
        return None
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.{key}: not a numeric array {shape_hint}: {exc}") from None
    _expect(np.all(np.isfinite(arr)), f"{path}.{key}", "entries must be finite")
    return arr


@dataclass
class ExperimentConfig:
    """A validated run configuration plus its canonical hash."""

    raw: dict
    path: str = ""

    def __post_init__(self):
        _expect(isinstance(self.raw, dict), "<root>", "config must be a JSON object")
        version = _get(self.raw, "schema_version", "<root>", types=int, required=True)
        _expect(version == SCHEMA_VERSION, "schema_version",
                f"expected {SCHEMA_VERSION}, got {version}")
        seed = _get(self.raw, "seed", "<root>", types=int, required=True)
        _expect(0 <= seed < 2**63, "seed", "must be a non-negative 64-bit integer")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        raw = dict(self.raw)
        raw["seed"] = int(seed)
        return ExperimentConfig(raw=raw, path=self.path)

    def sha256(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def section(self, name: str, required: bool = True) -> dict:
        sec = _get(self.raw, name, "<root>", types=dict, required=required, default={})
        return sec

    # ---- builders -------------------------------------------------------

    def kernel(self) -> KernelSpec:
        sec = self.section("kernel")
        family = _get(sec, "family", "kernel", types=str, required=True)
        scale = _number(sec, "scale", "kernel", required=True, positive=True)
        try:
            return KernelSpec(family=family, scale=scale)
        except ValueError as exc:
            raise ConfigError(f"kernel: {exc}") from None

    def noise(self, n_landmarks: int | None = None) -> NoiseModel:
        sec = self.section("noise")
        backend = _get(sec, "backend", "noise", types=str, required=True)
        family = _get(sec, "family", "noise", types=str, default="gaussian")
        if backend == "eulerian":
            if "grid" in sec:
                g = _get(sec, "grid", "noise", types=dict)
                nx = _get(g, "nx", "noise.grid", types=int, required=True)
                ny = _get(g, "ny", "noise.grid", types=int, required=True)
                region = _array(g, "region", "noise.grid", required=True)
                _expect(region.shape == (4,), "noise.grid.region",
                        "expected [xmin, xmax, ymin, ymax]")
                scale = _number(g, "scale", "noise.grid", required=True, positive=True)
                rule = _get(g, "amplitude_rule", "noise.grid", types=dict, required=True)
                try:
                    return datasets.synth_grid_noise(nx, ny, region, scale, rule, family)
                except (ValueError, ConfigError) as exc:
                    raise ConfigError(f"noise.grid: {exc}") from None
            fields = _get(sec, "fields", "noise", types=list, required=True)
            centers, lams, scales = [], [], []
            for i, f in enumerate(fields):
                p = f"noise.fields[{i}]"
                _expect(isinstance(f, dict), p, "must be an object")
                c = _array(f, "center", p, required=True)
                l = _array(f, "lambda", p, required=True)
                s = _number(f, "scale", p, required=True, positive=True)
                _expect(c.shape == l.shape, p, "center and lambda must share length")
                centers.append(c)
                lams.append(l)
                scales.append(s)
            try:
                return EulerianNoise(family=family, centers=np.array(centers),
                                     lams=np.array(lams), scales=np.array(scales))
            except ValueError as exc:
                raise ConfigError(f"noise: {exc}") from None
        if backend == "lagrangian":
            scale = _number(sec, "scale", "noise", required=True, positive=True)
            lambdas = _array(sec, "lambdas", "noise")
            if lambdas is None:
                _expect(n_landmarks is not None, "noise.lambdas",
                        "required when landmark count is not implied")
                lambdas = np.ones((n_landmarks, 2))
            try:
                return LagrangianNoise(kernel=KernelSpec(family, scale), lambdas=lambdas)
            except ValueError as exc:
                raise ConfigError(f"noise: {exc}") from None
        raise ConfigError(f"noise.backend: unknown backend {backend!r}")

    def initial(self) -> tuple[np.ndarray, np.ndarray]:
        sec = self.section("initial")
        q0 = None
        if "ellipse" in sec:
            e = _get(sec, "ellipse", "initial", types=dict)
            n = _get(e, "n_landmarks", "initial.ellipse", types=int, required=True)
            center = _array(e, "center", "initial.ellipse", default=[0.0, 0.0])
            axes = _array(e, "axes", "initial.ellipse", default=[1.0, 1.0])
            rotation = _number(e, "rotation", "initial.ellipse", default=0.0)
            try:
                q0 = datasets.synth_ellipse(n, center, axes, rotation)
            except ValueError as exc:
                raise ConfigError(f"initial.ellipse: {exc}") from None
        else:
            q0 = _array(sec, "q0", "initial", required=True)
            _expect(q0.ndim == 2, "initial.q0", "expected an (N, d) array")
        p0_raw = sec.get("p0", "zero")
        if isinstance(p0_raw, str):
            _expect(p0_raw == "zero", "initial.p0", 'expected an array or "zero"')
            p0 = np.zeros_like(q0)
        else:
            p0 = _array(sec, "p0", "initial", required=True)
            _expect(p0.shape == q0.shape, "initial.p0", "must match q0's shape")
        return q0, p0

    def horizon(self) -> float:
        sec = self.section("time")
        return _number(sec, "T", "time", required=True, positive=True)

    def sde(self) -> SdeConfig:
        sec = self.section("sde")
        dt = _number(sec, "dt", "sde", required=True, positive=True)
        scheme = _get(sec, "scheme", "sde", types=str, default=HEUN_STRATONOVICH)
        _expect(scheme in (HEUN_STRATONOVICH, EULER_MARUYAMA_ITO), "sde.scheme",
                f"unknown scheme {scheme!r}")
        try:
            return SdeConfig(dt=dt, T=self.horizon(), scheme=scheme, seed=self.seed)
        except ValueError as exc:
            raise ConfigError(f"sde: {exc}") from None

    def bridge(self, seed: int | None = None) -> BridgeConfig:
        sec = self.section("bridge")
        try:
            return BridgeConfig(
                n_steps=_get(sec, "n_steps", "bridge", types=int, default=100),
                epsilon_end=_number(sec, "epsilon_end", "bridge", default=0.02),
                n_samples=_get(sec, "n_samples", "bridge", types=int, default=256),
                n_pred_steps=_get(sec, "n_pred_steps", "bridge", types=int, default=10),
                clip_drift=_number(sec, "clip_drift", "bridge", default=None),
                seed=self.seed if seed is None else seed,
            )
        except ValueError as exc:
            raise ConfigError(f"bridge: {exc}") from None

    def de(self, section: str, bounds, seed: int) -> DeConfig:
        sec = self.section(section, required=False)
        de = _get(sec, "de", section, types=dict, default={})
        try:
            return DeConfig(
                generations=_get(de, "generations", f"{section}.de", types=int, default=200),
                bounds=bounds,
                population=_get(de, "population", f"{section}.de", types=int, default=None),
                f=_number(de, "f", f"{section}.de", default=0.8),
                cr=_number(de, "cr", f"{section}.de", default=0.9),
                polish_steps=_get(de, "polish_steps", f"{section}.de", types=int, default=0),
                seed=seed,
            )
        except ValueError as exc:
            raise ConfigError(f"{section}.de: {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"<root>: config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: invalid JSON in {path}: {exc}") from None
    return ExperimentConfig(raw=raw, path=str(path))
