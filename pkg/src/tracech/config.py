"""Run configuration: key = value text with [sections], validated with defaults applied.

Example::

    [scenario]
    name = test2a
    level = 3

    [model]
    epsilon = 0.1

Initial conditions use a call syntax, e.g. ``ic = profile(axis=3, delta=20)`` or
``ic = piecewise(random(seed=1), constant(value=0))``. Axes are 1-based.
"""
from __future__ import annotations

import ast
import math
import os
from dataclasses import dataclass, fields

from . import timeloop as tl
from .scenarios import get_preset

DEFAULT_OUTPUT_ENV = "TRACECH_OUTPUT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str
    level: int
    # [model]
    epsilon: float
    sigma: float
    beta_s: float
    rho: float = 1.0
    c_delta: float = 1.0
    quad_degree: int = 4
    # [scenario]
    ic: str = ""
    seed: int | None = None
    offset: tuple = (0.0, 0.0, 0.0)
    # [time]
    phases: tuple = ()
    t_end: float = 0.0
    # [solver]
    tol: float = 1e-9
    maxit: int = 2000
    preconditioner: str = "ilu0"
    restart: int = 100
    # [output]
    output_dir: str = ""
    vtk_interval: int = 0

    @property
    def schedule(self) -> tl.Schedule:
        return tl.Schedule(list(self.phases), self.t_end)


# key -> (section, parser)
def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _vec3(s):
    parts = [p for p in s.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError("expected three numbers")
    return tuple(_float(p) for p in parts)


def _phases(s):
    out = []
    for item in s.split(","):
        if not item.strip():
            continue
        a, _, b = item.partition(":")
        if not b:
            raise ValueError("phases are written t_start:dt, ...")
        out.append((_float(a), _float(b)))
    if not out:
        raise ValueError("empty phase list")
    return tuple(out)


_KEYS = {
    "scenario": {"name": str, "level": int, "ic": str, "seed": int, "offset": _vec3},
    "model": {"epsilon": _float, "sigma": _float, "beta_s": _float, "rho": _float,
              "c_delta": _float, "quad_degree": int},
    "time": {"dt": _float, "t_start": _float, "t_end": _float, "phases": _phases},
    "solver": {"tol": _float, "maxit": int, "preconditioner": str, "restart": int},
    "output": {"dir": str, "vtk_interval": int},
}


def _read(text: str) -> dict:
    """Raw (section, key) -> (value string, line number)."""
    raw = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {s!r}")
            section = s[1:-1].strip()
            if section not in _KEYS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        key, eq, val = s.partition("=")
        key, val = key.strip(), val.strip()
        if not eq or not key:
            raise ConfigError(f"line {lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"line {lineno}: key {key!r} outside a section")
        if key not in _KEYS[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if (section, key) in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            parsed = _KEYS[section][key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r} ({exc})") from None
        raw[(section, key)] = (parsed, lineno)
    return raw


def parse_config(text: str) -> RunConfig:
    raw = _read(text)

    def get(section, key, default=None):
        return raw[(section, key)][0] if (section, key) in raw else default

    def line(section, key):
        return raw[(section, key)][1] if (section, key) in raw else "?"

    name = get("scenario", "name")
    if name is None:
        raise ConfigError("missing required key 'name' in [scenario]")
    try:
        preset = get_preset(name)
    except ValueError as exc:
        raise ConfigError(f"line {line('scenario', 'name')}: {exc}") from None
    level = get("scenario", "level", 2)
    if level < 0:
        raise ConfigError(f"line {line('scenario', 'level')}: level must be >= 0")

    eps = get("model", "epsilon", preset.epsilon)
    if not eps > 0:
        raise ConfigError(f"line {line('model', 'epsilon')}: 'epsilon' must be positive")
    sigma = get("model", "sigma", preset.sigma)
    if sigma < 0:
        raise ConfigError(f"line {line('model', 'sigma')}: 'sigma' must be non-negative")
    c_delta = get("model", "c_delta", 1.0)
    if c_delta < 1:
        raise ConfigError(f"line {line('model', 'c_delta')}: 'c_delta' must be >= 1")
    qd = get("model", "quad_degree", 4)
    if qd not in (2, 4):
        raise ConfigError(f"line {line('model', 'quad_degree')}: 'quad_degree' must be 2 or 4")
    rho = get("model", "rho", 1.0)
    if not rho > 0:
        raise ConfigError(f"line {line('model', 'rho')}: 'rho' must be positive")

    phases = get("time", "phases")
    dt = get("time", "dt")
    if phases is not None and (dt is not None or ("time", "t_start") in raw):
        raise ConfigError(f"line {line('time', 'phases')}: give either phases or dt/t_start, not both")
    if phases is None:
        default = preset.phases(level)
        t0 = get("time", "t_start", default[0][0])
        phases = ((t0, dt),) if dt is not None else tuple((float(a), float(b)) for a, b in default)
        if dt is None and ("time", "t_start") in raw:
            phases = ((t0, default[0][1]),)
    for _, step in phases:
        if not step > 0:
            key = "dt" if ("time", "dt") in raw else "phases"
            raise ConfigError(f"line {line('time', key)}: time step must be positive")
    t_end = get("time", "t_end", preset.t_end)
    try:
        tl.Schedule(list(phases), t_end)
    except ValueError as exc:
        raise ConfigError(f"line {line('time', 't_end')}: {exc}") from None

    ic = get("scenario", "ic")
    if ic is None:
        ic = ic_to_text(preset.ic)
    try:
        parse_ic(ic)
    except ValueError as exc:
        raise ConfigError(f"line {line('scenario', 'ic')}: {exc}") from None

    prec = get("solver", "preconditioner", "ilu0")
    if prec not in ("none", "jacobi", "ilu0"):
        raise ConfigError(f"line {line('solver', 'preconditioner')}: unknown preconditioner {prec!r}")
    tol = get("solver", "tol", 1e-9)
    if not 0 < tol < 1:
        raise ConfigError(f"line {line('solver', 'tol')}: 'tol' must lie in (0, 1)")
    for key in ("maxit", "restart"):
        if get("solver", key, 1) < 1:
            raise ConfigError(f"line {line('solver', key)}: {key!r} must be positive")

    out = get("output", "dir") or os.path.join(os.environ.get(DEFAULT_OUTPUT_ENV, "runs"), name)
    return RunConfig(
        scenario=name, level=level, epsilon=eps, sigma=sigma,
        beta_s=get("model", "beta_s", 1.0 / eps), rho=rho, c_delta=c_delta, quad_degree=qd,
        ic=ic, seed=get("scenario", "seed"), offset=get("scenario", "offset", (0.0, 0.0, 0.0)),
        phases=tuple(phases), t_end=t_end,
        tol=tol, maxit=get("solver", "maxit", 2000), preconditioner=prec,
        restart=get("solver", "restart", 100),
        output_dir=out, vtk_interval=get("output", "vtk_interval", 0),
    )


def echo_config(cfg: RunConfig) -> str:
    """Effective configuration as parseable text (parse(echo(cfg)) == cfg)."""
    def r(v):
        return repr(float(v))

    lines = [
        "[scenario]", f"name = {cfg.scenario}", f"level = {cfg.level}", f"ic = {cfg.ic}",
        f"offset = {r(cfg.offset[0])}, {r(cfg.offset[1])}, {r(cfg.offset[2])}",
    ]
    if cfg.seed is not None:
        lines.append(f"seed = {cfg.seed}")
    lines += [
        "", "[model]", f"epsilon = {r(cfg.epsilon)}", f"sigma = {r(cfg.sigma)}", f"beta_s = {r(cfg.beta_s)}",
        f"rho = {r(cfg.rho)}", f"c_delta = {r(cfg.c_delta)}", f"quad_degree = {cfg.quad_degree}",
        "", "[time]", "phases = " + ", ".join(f"{r(a)}:{r(b)}" for a, b in cfg.phases),
        f"t_end = {r(cfg.t_end)}",
        "", "[solver]", f"tol = {r(cfg.tol)}", f"maxit = {cfg.maxit}",
        f"preconditioner = {cfg.preconditioner}", f"restart = {cfg.restart}",
        "", "[output]", f"dir = {cfg.output_dir}", f"vtk_interval = {cfg.vtk_interval}", "",
    ]
    return "\n".join(lines)


# --- initial-condition specs ----------------------------------------------------------------

_IC_TYPES = {
    "profile": tl.Profile, "rotated": tl.RotatedProfile, "random": tl.RandomIC,
    "constant": tl.ConstantIC, "cosine": tl.CosineIC, "piecewise": tl.PiecewiseIC,
}
_AXIS_FIELDS = ("axis", "about")


def parse_ic(text: str, seed: int | None = None):
    """Build an initial-condition object from call syntax. 'exact' is returned as a string."""
    text = text.strip()
    if text == "exact":
        return "exact"
    try:
        node = ast.parse(text, mode="eval").body
    except SyntaxError:
        raise ValueError(f"malformed initial condition {text!r}") from None
    return _build_ic(node, seed)


def _literal(node):
    try:
        return ast.literal_eval(node)
    except ValueError:
        raise ValueError(f"initial-condition arguments must be literals: {ast.unparse(node)!r}") from None


def _build_ic(node, seed):
    if isinstance(node, ast.Name):
        node = ast.Call(func=node, args=[], keywords=[])
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise ValueError(f"unknown initial condition spec {ast.unparse(node)!r}")
    kind = node.func.id
    if kind not in _IC_TYPES:
        raise ValueError(f"unknown initial condition spec {kind!r}; choose from {sorted(_IC_TYPES)}")
    cls = _IC_TYPES[kind]
    if kind == "piecewise":
        parts = [_build_ic(a, seed) for a in node.args]
        kw = {k.arg: _build_ic(k.value, seed) for k in node.keywords}
        try:
            return cls(*parts, **kw)
        except TypeError as exc:
            raise ValueError(str(exc)) from None
    if node.args:
        raise ValueError(f"{kind}(...) takes keyword arguments only")
    kw = {k.arg: _literal(k.value) for k in node.keywords}
    allowed = {f.name for f in fields(cls)}
    bad = set(kw) - allowed
    if bad:
        raise ValueError(f"unknown argument(s) {sorted(bad)} for {kind}")
    for a in _AXIS_FIELDS:
        if a in kw:
            if kw[a] not in (1, 2, 3):
                raise ValueError(f"{a} must be 1, 2 or 3")
            kw[a] = kw[a] - 1
    if "center" in kw:
        kw["center"] = tuple(float(v) for v in kw["center"])
    if kind == "random" and seed is not None and "seed" not in kw:
        kw["seed"] = seed
    return cls(**kw)


def ic_to_text(ic) -> str:
    if isinstance(ic, str):
        return ic
    kind = {v: k for k, v in _IC_TYPES.items()}[type(ic)]
    if kind == "piecewise":
        return f"piecewise({ic_to_text(ic.negative)}, {ic_to_text(ic.positive)})"
    parts = []
    for f in fields(ic):
        v = getattr(ic, f.name)
        if v is None:
            continue
        if f.name in _AXIS_FIELDS:
            v = v + 1
        parts.append(f"{f.name}={v!r}")
    return f"{kind}({', '.join(parts)})"
