"""Experiment configuration files (YAML).

Matrices are written row-major with explicit dimensions,
``{shape: [rows, cols], data: [...]}``; plain nested lists are accepted too.
See ``certmpc/data/double_integrator.yaml`` for a complete example.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from .certify import REPORTED_BENCHMARK, Certificate, certify
from .errors import ConfigParseError, DimensionMismatch, InvalidSpec
from .model import CondensedQp, LtiModel, MpcSpec
from .simulate import Controller
from .solvers import StopPolicy

BUILTIN_GRID = "builtin"


def _node_line(root, path) -> Optional[int]:
    node = root
    for key in path:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == key:
                    node = v
                    break
            else:
                return node.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
    return node.start_mark.line + 1 if node is not None else None


class _Reader:
    """Typed access to the parsed document with path-aware error messages."""

    def __init__(self, data, root_node):
        self.data = data
        self.root = root_node

    def fail(self, path, message):
        raise ConfigParseError(message, field=".".join(map(str, path)),
                               line=_node_line(self.root, path))

    def get(self, path, default=..., kind=None):
        node = self.data
        for key in path:
            if not isinstance(node, dict) or key not in node:
                if default is ...:
                    self.fail(path, "missing required field")
                return default
            node = node[key]
        if node is None and default is not ...:
            return default
        return node

    def number(self, path, default=..., positive=False, integer=False):
        v = self.get(path, default)
        if v is None or v is default and default is not ...:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {v!r}")
        if not math.isfinite(v):
            self.fail(path, "value must be finite")
        if integer and int(v) != v:
            self.fail(path, f"expected an integer, got {v!r}")
        if positive and not v > 0:
            self.fail(path, f"expected a positive value, got {v!r}")
        return int(v) if integer else float(v)

    def matrix(self, path, default=...):
        v = self.get(path, default)
        if v is None or (v is default and default is not ...):
            return v
        if isinstance(v, dict):
            if "shape" not in v or "data" not in v:
                self.fail(path, "matrix needs 'shape' and 'data'")
            shape, data = v["shape"], v["data"]
            if (not isinstance(shape, list) or len(shape) != 2
                    or not all(isinstance(s, int) and s > 0 for s in shape)):
                self.fail(path + ("shape",), f"shape must be [rows, cols], got {shape!r}")
            arr = self._numbers(path + ("data",), data)
            if arr.size != shape[0] * shape[1]:
                self.fail(path + ("data",),
                          f"{arr.size} entries do not fill a {shape[0]}x{shape[1]} matrix")
            return arr.reshape(shape)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return np.array([[float(v)]])
        arr = self._numbers(path, v)
        return np.atleast_2d(arr)

    def vector(self, path, default=...):
        v = self.get(path, default)
        if v is None or (v is default and default is not ...):
            return v
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [v]
        return self._numbers(path, v).ravel()

    def _numbers(self, path, v):
        try:
            arr = np.array(v, dtype=float)
        except (TypeError, ValueError):
            self.fail(path, f"expected numbers, got {v!r}")
        if arr.dtype == object or not np.all(np.isfinite(arr)):
            self.fail(path, "entries must be finite numbers")
        return arr


@dataclass
class MethodSettings:
    epsilon: float
    max_iter: int
    rho: Optional[float] = None
    mu: Optional[float] = None
    L: Optional[float] = None
    alpha: Optional[float] = None


@dataclass
class CertifySettings:
    eta1: float
    eta2: float
    gamma: Optional[float]
    kappa: Optional[float] = None
    m_bar_override: Optional[int] = None


@dataclass
class ExperimentConfig:
    spec: MpcSpec
    solvers: Dict[str, MethodSettings]
    certify: Dict[str, CertifySettings]
    x_init: np.ndarray
    n_steps: int
    bounded_policy: str = "combined"
    warm_start: bool = False
    grid: Dict[str, Any] = field(default_factory=lambda: {"file": BUILTIN_GRID})
    seed: Optional[int] = None
    workers: int = 1
    gamma_safety: float = 1.1
    out_dir: str = "results"
    formats: List[str] = field(default_factory=lambda: ["csv", "json"])
    source: Optional[str] = None
    sha256: str = ""

    def certificates(self, qp: CondensedQp) -> Dict[str, Certificate]:
        """One certificate per configured method, keyed ``"PGDM"`` / ``"ADMM"``."""
        out = {}
        for method in ("pgdm", "admm"):
            if method not in self.certify:
                continue
            s, c = self.solvers[method], self.certify[method]
            if c.gamma is None:
                raise InvalidSpec(f"certify.{method}.gamma is required")
            out[method.upper()] = certify(
                qp, self.spec.model, method.upper(), eta1=c.eta1, eta2=c.eta2,
                gamma=c.gamma, mu=s.mu, L=s.L, alpha=s.alpha, rho=s.rho,
                kappa=c.kappa, m_bar_override=c.m_bar_override,
                reported=REPORTED_BENCHMARK.get(method.upper()))
        return out

    def controllers(self, certs: Dict[str, Certificate]) -> List[Controller]:
        """Unbounded and m_bar-bounded controllers for each method, in table order."""
        out = []
        for method in ("admm", "pgdm"):
            if method not in self.solvers:
                continue
            s = self.solvers[method]
            cert = certs.get(method.upper())
            name = method.upper()
            common = dict(method=method, alpha=s.alpha, rho=s.rho, certificate=cert,
                          warm_start=self.warm_start)
            out.append(Controller(label=name, policy=StopPolicy.combined(s.max_iter, s.epsilon),
                                  **common))
            if cert is not None:
                if self.bounded_policy == "fixed":
                    pol = StopPolicy.fixed(cert.m_bar)
                else:
                    pol = StopPolicy.combined(cert.m_bar, s.epsilon)
                out.append(Controller(label=f"{name}(m_bar)", policy=pol, **common))
        return out


def _parse_text(text: str, source: Optional[str]) -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigParseError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                               line=mark.line + 1 if mark else None) from exc
    if not isinstance(data, dict):
        raise ConfigParseError("configuration must be a mapping of sections", line=1)
    r = _Reader(data, root)

    A = r.matrix(("model", "A"))
    B = r.matrix(("model", "B"))
    Ts = r.number(("model", "Ts"), 1.0, positive=True)
    try:
        model = LtiModel(A, B, Ts)
    except (DimensionMismatch, InvalidSpec) as exc:
        r.fail(("model",), str(exc))
    N = r.number(("mpc", "N"), integer=True, positive=True)
    Q = r.matrix(("mpc", "Q"))
    R = r.matrix(("mpc", "R"))
    P = r.matrix(("mpc", "P"), None)
    u_lo = r.vector(("mpc", "u_lo"))
    u_hi = r.vector(("mpc", "u_hi"))
    dare_tol = r.number(("mpc", "dare_tol"), 1e-8, positive=True)
    try:
        spec = MpcSpec(model, N, Q, R, u_lo, u_hi, P=P, dare_tol=dare_tol)
    except (DimensionMismatch, InvalidSpec) as exc:
        r.fail(("mpc",), str(exc))

    solvers: Dict[str, MethodSettings] = {}
    for method in ("pgdm", "admm"):
        if r.get(("solvers", method), None) is None:
            continue
        p = ("solvers", method)
        s = MethodSettings(
            epsilon=r.number(p + ("epsilon",), positive=True),
            max_iter=r.number(p + ("max_iter",), 15000, positive=True, integer=True))
        if method == "admm":
            s.rho = r.number(p + ("rho",), positive=True)
        else:
            s.mu = r.number(p + ("mu",), None, positive=True)
            s.L = r.number(p + ("L",), None, positive=True)
            s.alpha = r.number(p + ("alpha",), None, positive=True)
        solvers[method] = s
    if not solvers:
        r.fail(("solvers",), "at least one of 'pgdm' or 'admm' must be configured")

    certs: Dict[str, CertifySettings] = {}
    for method in solvers:
        p = ("certify", method)
        if r.get(p, None) is None:
            continue
        certs[method] = CertifySettings(
            eta1=r.number(p + ("eta1",)),
            eta2=r.number(p + ("eta2",), positive=True),
            gamma=r.number(p + ("gamma",), None, positive=True),
            kappa=r.number(p + ("kappa",), None),
            m_bar_override=r.number(p + ("m_bar_override",), None, positive=True, integer=True))
        if certs[method].eta1 < 0:
            r.fail(p + ("eta1",), "eta1 must be non-negative")
        if certs[method].kappa is not None and not 0 <= certs[method].kappa:
            r.fail(p + ("kappa",), "kappa must be non-negative")
    gamma_safety = r.number(("certify", "gamma_safety"), 1.1, positive=True)

    x_init = r.vector(("simulate", "x_init"))
    if x_init.size != model.nx:
        raise DimensionMismatch(
            f"simulate.x_init has {x_init.size} entries, the model has {model.nx} states")
    n_steps = r.number(("simulate", "n_steps"), 40, positive=True, integer=True)
    bounded = r.get(("simulate", "bounded_policy"), "combined")
    if bounded not in ("combined", "fixed"):
        r.fail(("simulate", "bounded_policy"), "must be 'combined' or 'fixed'")
    warm = r.get(("simulate", "warm_start"), False)
    if not isinstance(warm, bool):
        r.fail(("simulate", "warm_start"), "must be true or false")
    grid = r.get(("simulate", "grid"), {"file": BUILTIN_GRID})
    if not isinstance(grid, dict):
        r.fail(("simulate", "grid"), "grid must be a mapping")
    seed = r.number(("simulate", "seed"), None, integer=True)
    if "points" in grid:
        pts = r._numbers(("simulate", "grid", "points"), grid["points"])
        grid = {"points": np.atleast_2d(pts)}
    elif "file" not in grid:
        g = ("simulate", "grid")
        grid = {"n_points": r.number(g + ("n_points",), integer=True, positive=True),
                "box": r._numbers(g + ("box",), r.get(g + ("box",))).tolist(),
                "seed": r.number(g + ("seed",), None, integer=True)}
        if grid["seed"] is None and seed is None:
            r.fail(g + ("seed",), "a seed is required when the grid is sampled")
    workers = r.number(("simulate", "workers"), 1, positive=True, integer=True)

    out_dir = r.get(("output", "directory"), "results")
    formats = r.get(("output", "formats"), ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
        r.fail(("output", "formats"), "formats must be a list drawn from ['csv', 'json']")

    return ExperimentConfig(
        spec=spec, solvers=solvers, certify=certs, x_init=x_init, n_steps=n_steps,
        bounded_policy=bounded, warm_start=warm, grid=grid, seed=seed, workers=workers,
        gamma_safety=gamma_safety, out_dir=str(out_dir), formats=list(formats),
        source=source, sha256=hashlib.sha256(text.encode()).hexdigest())


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return _parse_text(text, str(path))


def parse_config(text: str) -> ExperimentConfig:
    return _parse_text(text, None)


def builtin_config_text(name: str = "double_integrator.yaml") -> str:
    return resources.files("certmpc.data").joinpath(name).read_text()
