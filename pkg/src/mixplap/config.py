"""Experiment configuration: a JSON object with a fixed schema.

Example::

    {
      "name": "cthm2-1d",
      "domain": {"dim": 1, "extent": [1.0], "M": [63], "delta": 0.2},
      "exponents": {"p": 2, "s": 0.5, "q": 2, "a": 0.04, "b": 0.04},
      "gamma": "1",
      "f": "200",
      "schedule_k": 10
    }

``gamma`` and ``f`` are numbers or expressions in x (and y in 2D).
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .calculus import Exponents, normalize_regime
from .errors import ConfigError, InvalidInput
from .expr import ExprError, Expression
from .grid import Grid, make_grid

TOP_KEYS = {
    "name", "domain", "exponents", "gamma", "gamma_star", "f", "f_integrability", "regime",
    "schedule_k", "tol", "tol_seq", "tol_mono", "seed", "out", "verify", "initial",
    "limit_solve", "convergence",
}
DOMAIN_KEYS = {"dim", "extent", "M", "delta"}
EXPONENT_KEYS = {"p", "s", "q", "a", "b"}
VERIFY_KEYS = {"x0", "R", "radii", "expansion_r", "tau", "deltas", "q_exps", "refine",
               "eta", "companion"}
CONVERGENCE_KEYS = {"M", "cases"}


@dataclass
class VerifyConfig:
    x0: tuple | None = None
    R: float = 0.4
    radii: tuple = (0.1, 0.2)
    expansion_r: float = 0.02
    tau: float = 0.5
    deltas: tuple = (1.0, 0.5, 0.1)
    q_exps: tuple | None = None
    refine: bool = True
    eta: float = 0.1
    companion: bool = True


@dataclass
class ExperimentConfig:
    name: str
    dim: int
    extent: tuple
    M: tuple
    delta: float
    exps: Exponents
    gamma: Expression
    f: Expression
    gamma_star: float | None = None
    f_integrability: float = math.inf
    regime: str | None = None
    schedule_k: int = 10
    tol: float = 1e-8
    tol_seq: float = 1e-6
    tol_mono: float = 1e-8
    seed: int = 0
    out: str | None = None
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    initial: str = "zero"
    limit_solve: bool = False
    convergence_M: tuple = (15, 31, 63)
    convergence_cases: tuple = ("quadratic", "sine")
    sha256: str = ""

    def grid(self) -> Grid:
        return make_grid(self.extent, self.M, self.delta)

    def gamma_values(self, grid=None):
        g = grid or self.grid()
        return _node_values(self.gamma, g)

    def f_values(self, grid=None):
        g = grid or self.grid()
        return _node_values(self.f, g)

    def with_grid(self, M) -> "ExperimentConfig":
        import dataclasses
        return dataclasses.replace(self, M=tuple(M))


def _node_values(e: Expression, grid: Grid):
    return np.broadcast_to(e(grid.nodes), (grid.size,)).astype(float)


def _locate(text, key, start=0):
    """Line and column (1-based) of ``"key"`` in the source text."""
    if text is None:
        return None, None
    m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, start)
    if not m:
        return None, None
    pos = m.start()
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


class _Ctx:
    def __init__(self, text):
        self.text = text

    def fail(self, msg, key):
        line, col = _locate(self.text, key)
        raise ConfigError(msg, line=line, column=col, key=key)

    def number(self, obj, key, default=None, positive=False, integer=False, required=False):
        if key not in obj:
            if required:
                self.fail(f"missing required key {key!r}", key)
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            if isinstance(v, str) and v.lower() in ("inf", "infinity"):
                return math.inf
            self.fail(f"{key!r} must be a number, got {v!r}", key)
        if integer and (not float(v).is_integer()):
            self.fail(f"{key!r} must be an integer, got {v!r}", key)
        if positive and not v > 0:
            self.fail(f"{key!r} must be positive, got {v!r}", key)
        return int(v) if integer else float(v)

    def unknown(self, obj, allowed, where):
        for k in obj:
            if k not in allowed:
                self.fail(f"unknown key {k!r} in {where}", k)

    def expression(self, obj, key, required=True):
        if key not in obj:
            if required:
                self.fail(f"missing required key {key!r}", key)
            return None
        v = obj[key]
        if isinstance(v, bool):
            self.fail(f"{key!r} must be a number or an expression string", key)
        if isinstance(v, (int, float)):
            v = repr(float(v))
        if not isinstance(v, str):
            self.fail(f"{key!r} must be a number or an expression string", key)
        try:
            return Expression.parse(v)
        except ExprError as exc:
            self.fail(f"{key!r}: {exc}", key)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate; expressions are evaluated on the grid eagerly."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", line=exc.lineno, column=exc.colno)
    ctx = _Ctx(text)
    if not isinstance(obj, dict):
        raise ConfigError("configuration must be a JSON object", line=1, column=1)
    ctx.unknown(obj, TOP_KEYS, "configuration")

    dom = obj.get("domain")
    if not isinstance(dom, dict):
        ctx.fail("missing or invalid 'domain' object", "domain")
    ctx.unknown(dom, DOMAIN_KEYS, "domain")
    dim = ctx.number(dom, "dim", required=True, integer=True)
    if dim not in (1, 2):
        ctx.fail(f"dim must be 1 or 2, got {dim}", "dim")
    extent = dom.get("extent", [1.0] * dim)
    if isinstance(extent, (int, float)):
        extent = [extent] * dim
    M = dom.get("M")
    if isinstance(M, int):
        M = [M] * dim
    if not isinstance(extent, list) or len(extent) != dim:
        ctx.fail(f"extent must list {dim} positive numbers", "extent")
    if not isinstance(M, list) or len(M) != dim or not all(isinstance(m, int) for m in M):
        ctx.fail(f"M must list {dim} integers", "M")
    delta = ctx.number(dom, "delta", default=0.0)
    try:
        grid = make_grid(tuple(float(e) for e in extent), tuple(M), delta)
    except InvalidInput as exc:
        ctx.fail(str(exc), "domain")

    ex = obj.get("exponents")
    if not isinstance(ex, dict):
        ctx.fail("missing or invalid 'exponents' object", "exponents")
    ctx.unknown(ex, EXPONENT_KEYS, "exponents")
    try:
        exps = Exponents(p=ctx.number(ex, "p", required=True), s=ctx.number(ex, "s", required=True),
                         N=dim, q=ctx.number(ex, "q", default=2.0),
                         a=ctx.number(ex, "a", default=1.0), b=ctx.number(ex, "b", default=1.0))
    except InvalidInput as exc:
        ctx.fail(str(exc), "exponents")

    gamma = ctx.expression(obj, "gamma")
    f = ctx.expression(obj, "f")
    try:
        gv = _node_values(gamma, grid)
    except InvalidInput as exc:
        ctx.fail(f"gamma: {exc}", "gamma")
    if not np.all(np.isfinite(gv)) or np.any(gv <= 0):
        ctx.fail("gamma must be positive and finite at every node", "gamma")
    try:
        fv = _node_values(f, grid)
    except InvalidInput as exc:
        ctx.fail(f"f: {exc}", "f")
    if not np.all(np.isfinite(fv)) or np.any(fv < 0):
        ctx.fail("f must be finite and nonnegative at every node", "f")

    regime = obj.get("regime")
    if regime is not None:
        try:
            regime = normalize_regime(regime)
        except InvalidInput as exc:
            ctx.fail(str(exc), "regime")
    initial = obj.get("initial", "zero")
    if initial not in ("zero", "random"):
        ctx.fail("initial must be 'zero' or 'random'", "initial")

    ver = obj.get("verify", {})
    if not isinstance(ver, dict):
        ctx.fail("'verify' must be an object", "verify")
    ctx.unknown(ver, VERIFY_KEYS, "verify")
    vc = VerifyConfig()
    if "x0" in ver:
        x0 = ver["x0"]
        if isinstance(x0, (int, float)):
            x0 = [x0]
        if not isinstance(x0, list) or len(x0) != dim:
            ctx.fail(f"x0 must list {dim} coordinates", "x0")
        vc.x0 = tuple(float(c) for c in x0)
    vc.R = ctx.number(ver, "R", default=vc.R, positive=True)
    vc.expansion_r = ctx.number(ver, "expansion_r", default=vc.expansion_r, positive=True)
    vc.tau = ctx.number(ver, "tau", default=vc.tau, positive=True)
    vc.eta = ctx.number(ver, "eta", default=vc.eta, positive=True)
    for key in ("radii", "deltas", "q_exps"):
        if key in ver:
            val = ver[key]
            if not isinstance(val, list) or not all(isinstance(v, (int, float)) for v in val):
                ctx.fail(f"{key!r} must be a list of numbers", key)
            setattr(vc, key, tuple(float(v) for v in val))
    for key in ("refine", "companion"):
        if key in ver:
            if not isinstance(ver[key], bool):
                ctx.fail(f"{key!r} must be true or false", key)
            setattr(vc, key, ver[key])
    if vc.x0 is None:
        vc.x0 = tuple(L / 2 for L in grid.extent)

    conv = obj.get("convergence", {})
    if not isinstance(conv, dict):
        ctx.fail("'convergence' must be an object", "convergence")
    ctx.unknown(conv, CONVERGENCE_KEYS, "convergence")
    cM = conv.get("M", [15, 31, 63])
    if not isinstance(cM, list) or not all(isinstance(m, int) and m >= 3 for m in cM):
        ctx.fail("convergence.M must list integers >= 3", "M")
    cases = conv.get("cases", ["quadratic", "sine"])
    if not isinstance(cases, list) or not set(cases) <= {"quadratic", "sine"}:
        ctx.fail("convergence.cases must be a subset of ['quadratic', 'sine']", "cases")

    schedule_k = ctx.number(obj, "schedule_k", default=10, integer=True)
    if schedule_k < 0:
        ctx.fail("schedule_k must be nonnegative", "schedule_k")

    name = obj.get("name", "experiment")
    if not isinstance(name, str):
        ctx.fail("name must be a string", "name")
    limit_solve = obj.get("limit_solve", False)
    if not isinstance(limit_solve, bool):
        ctx.fail("limit_solve must be true or false", "limit_solve")
    out = obj.get("out")
    if out is not None and not isinstance(out, str):
        ctx.fail("out must be a string", "out")

    return ExperimentConfig(
        name=name, dim=dim, extent=grid.extent, M=grid.M, delta=delta, exps=exps,
        gamma=gamma, f=f,
        gamma_star=ctx.number(obj, "gamma_star", positive=True),
        f_integrability=ctx.number(obj, "f_integrability", default=math.inf, positive=True),
        regime=regime,
        schedule_k=schedule_k,
        tol=ctx.number(obj, "tol", default=1e-8, positive=True),
        tol_seq=ctx.number(obj, "tol_seq", default=1e-6, positive=True),
        tol_mono=ctx.number(obj, "tol_mono", default=1e-8, positive=True),
        seed=ctx.number(obj, "seed", default=0, integer=True),
        out=out, verify=vc, initial=initial, limit_solve=limit_solve,
        convergence_M=tuple(cM), convergence_cases=tuple(cases), sha256=config_hash(text))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
