"""Line-oriented experiment configuration.

Grammar, one statement per line::

    section.key = value      # trailing comments allowed

Values are numbers, booleans (``true``/``false``), strings (bare words or
double-quoted), comma lists (``1, 2, 3``) or call forms such as
``geometric(1, 0.01)``, ``constant(1)``, ``reverse(1, 0.01)``,
``ring(8, 2, 0.05)``, ``grid(5, 1, 0.05)``, ``two_gaussian(1, 1)`` and
``bimodal(4, 0.1)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import ConfigError
from ..schedules import select_gamma

KINDS = ("flow", "train-cfg", "train-gan", "sample-langevin", "eval", "dump-field", "grad-check")


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


# --- lexical layer -----------------------------------------------------------

_KEY = re.compile(r"[a-z_][a-z0-9_]*\.[a-z_][a-z0-9_]*\Z")
_CALL = re.compile(r"([a-z_][a-z0-9_]*)\s*\((.*)\)\Z", re.S)
_NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")
_WORD = re.compile(r"[A-Za-z_][A-Za-z0-9_\-./]*\Z")


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _atom(text: str, line: int, col: int, key: str):
    t = text.strip()
    if not t:
        raise ConfigError("empty value", line, col, key)
    if t.startswith('"'):
        if len(t) < 2 or not t.endswith('"') or '"' in t[1:-1]:
            raise ConfigError(f"unterminated or malformed string {t!r}", line, col, key)
        return t[1:-1]
    if t in ("true", "false"):
        return t == "true"
    if _NUMBER.match(t):
        if re.fullmatch(r"[+-]?\d+", t):
            return int(t)
        return float(t)
    if t in ("inf", "+inf"):
        return math.inf
    if _WORD.match(t):
        return t
    raise ConfigError(f"cannot read value {t!r}", line, col, key)


def _split_commas(text: str) -> list[tuple[str, int]]:
    parts, start = [], 0
    for i, ch in enumerate(text):
        if ch == ",":
            parts.append((text[start:i], start))
            start = i + 1
    parts.append((text[start:], start))
    return parts


def parse_value(text: str, line: int = 0, col: int = 1, key: str | None = None):
    t = text.strip()
    offset = col + (len(text) - len(text.lstrip()))
    m = _CALL.match(t)
    if m:
        inner = m.group(2)
        if "(" in inner or ")" in inner:
            raise ConfigError("nested call forms are not supported", line, offset, key)
        start = offset + m.start(2)
        args = () if not inner.strip() else tuple(
            _atom(p, line, start + o, key) for p, o in _split_commas(inner)
        )
        return Call(m.group(1), args)
    if "(" in t or ")" in t:
        raise ConfigError("unbalanced parentheses", line, offset + max(t.find("("), t.find(")")), key)
    parts = _split_commas(t)
    if len(parts) > 1:
        return tuple(_atom(p, line, offset + o, key) for p, o in parts)
    return _atom(t, line, offset, key)


def tokenize(text: str) -> list[tuple[str, Any, int, int, int]]:
    """``(key, raw value, line, key column, value column)`` per statement; duplicates rejected."""
    seen: dict[str, int] = {}
    out = []
    for n, raw in enumerate(text.splitlines(), start=1):
        body = _strip_comment(raw)
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ConfigError("expected 'section.key = value'", n, col)
        lhs, rhs = body.split("=", 1)
        key = lhs.strip()
        key_col = len(lhs) - len(lhs.lstrip()) + 1
        if not _KEY.match(key):
            raise ConfigError(f"malformed key {key!r}", n, key_col)
        if key in seen:
            raise ConfigError(f"duplicate key, first set on line {seen[key]} and again on line {n}", n, key_col, key)
        seen[key] = n
        value_col = len(lhs) + 2 + (len(rhs) - len(rhs.lstrip()))
        out.append((key, parse_value(rhs, n, len(lhs) + 2, key), n, key_col, value_col))
    return out


# --- schema ------------------------------------------------------------------


def _as_float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError("expected a number")
    return float(v)


def _as_int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError("expected an integer")
    return v


def _as_bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _as_str(v):
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


def _positive(conv):
    def check(v):
        v = conv(v)
        if not v > 0:
            raise ValueError("must be positive")
        return v
    return check


def _at_least(conv, lo):
    def check(v):
        v = conv(v)
        if v < lo:
            raise ValueError(f"must be at least {lo}")
        return v
    return check


def _choice(*options):
    def check(v):
        v = _as_str(v)
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v
    return check


def _float_list(v):
    items = v if isinstance(v, tuple) else (v,)
    return tuple(_as_float(x) for x in items)


def _int_list(v):
    items = v if isinstance(v, tuple) else (v,)
    out = tuple(_as_int(x) for x in items)
    if not out or min(out) < 0:
        raise ValueError("expected non-negative integers")
    return out


def _dataset(v):
    shapes = {"ring": 3, "grid": 3, "two_gaussian": 2, "bimodal": 2}
    if not isinstance(v, Call) or v.name not in shapes:
        raise ValueError(f"expected one of {', '.join(f'{k}(...)' for k in shapes)}")
    if len(v.args) != shapes[v.name]:
        raise ValueError(f"{v.name} takes {shapes[v.name]} arguments")
    args = tuple(_as_float(a) for a in v.args)
    if v.name in ("ring", "grid"):
        if args[0] != int(args[0]) or args[0] < 1:
            raise ValueError("mode count must be a positive integer")
        args = (int(args[0]),) + args[1:]
    if args[-1] <= 0:
        raise ValueError("standard deviation must be positive")
    return Call(v.name, args)


def _schedule(v):
    shapes = {"geometric": 2, "reverse": 2, "constant": 1}
    if not isinstance(v, Call) or v.name not in shapes:
        raise ValueError("expected geometric(a, b), reverse(a, b) or constant(a)")
    if len(v.args) != shapes[v.name]:
        raise ValueError(f"{v.name} takes {shapes[v.name]} arguments")
    args = tuple(_as_float(a) for a in v.args)
    if min(args) <= 0:
        raise ValueError("schedule endpoints must be positive")
    if v.name == "geometric" and args[0] <= args[1]:
        raise ValueError("geometric needs a decreasing pair; use reverse(a, b) to increase")
    if v.name == "reverse" and args[0] == args[1]:
        raise ValueError("reverse needs distinct endpoints")
    return Call(v.name, args)


def _delta(v):
    if v == "computed":
        return v
    if isinstance(v, Call) and v.name == "constant" and len(v.args) == 1:
        return Call("constant", (_as_float(v.args[0]),))
    raise ValueError("expected constant(value) or computed")


def _auto_or_positive(v):
    if v == "auto":
        return v
    return _positive(_as_float)(v)


def _gamma(v):
    if v == "auto":
        return v
    g = _as_float(v)
    if not 0 < g < 1:
        raise ValueError("must lie in (0, 1)")
    return g


@dataclass(frozen=True)
class Key:
    check: Callable
    default: Any
    kinds: tuple = ()  # empty = shared by every kind


_ALL = ()
SCHEMA: dict[str, Key] = {
    "run.kind": Key(_choice(*KINDS), None),
    "run.seeds": Key(_int_list, (1,)),
    "run.out": Key(_as_str, "runs"),
    "run.eval_every": Key(_positive(_as_int), 50),
    "run.eval_samples": Key(_positive(_as_int), 2000),
    "run.quality_radius": Key(_positive(_as_float), 3.0),
    "run.record_wall_clock": Key(_as_bool, False),
    "data.dataset": Key(_dataset, Call("ring", (8, 2.0, 0.05))),
    "data.n_samples": Key(_positive(_as_int), 10000),
    "model.hidden": Key(_positive(_as_int), 64),
    "model.layers": Key(_positive(_as_int), 2),
    "model.latent_dim": Key(_positive(_as_int), 4),
    "model.activation": Key(_choice("leaky_relu", "tanh", "relu", "softplus"), "leaky_relu"),
    "optim.kind": Key(_choice("adam", "sgd"), "adam"),
    "optim.lr_d": Key(_auto_or_positive, "auto"),
    "optim.lr_g": Key(_auto_or_positive, "auto"),
    "optim.beta1": Key(_at_least(_as_float, 0.0), 0.5),
    "optim.beta2": Key(_at_least(_as_float, 0.0), 0.999),
    # flow
    "flow.mode": Key(_choice("ideal", "analytic-critic"), "ideal", ("flow",)),
    "flow.steps": Key(_positive(_as_int), 500, ("flow",)),
    "flow.eta_flow": Key(_positive(_as_float), 0.1, ("flow",)),
    "flow.start_mean": Key(_float_list, (1.0, 0.0), ("flow",)),
    "flow.start_sigma": Key(_positive(_as_float), 1.0, ("flow",)),
    "flow.schedule": Key(_schedule, Call("geometric", (1.0, 0.01)), ("flow",)),
    "flow.particles": Key(_positive(_as_int), 1024, ("flow",)),
    "flow.batch": Key(_positive(_as_int), 64, ("flow",)),
    # train-cfg
    "cfg.m": Key(_positive(_as_int), 15, ("train-cfg",)),
    "cfg.u": Key(_positive(_as_int), 1, ("train-cfg",)),
    "cfg.n": Key(_positive(_as_int), 1024, ("train-cfg",)),
    "cfg.b": Key(_positive(_as_int), 64, ("train-cfg",)),
    "cfg.eta_flow": Key(_positive(_as_float), 0.25, ("train-cfg",)),
    "cfg.schedule": Key(_schedule, Call("geometric", (1.0, 0.01)), ("train-cfg",)),
    "cfg.delta": Key(_delta, Call("constant", (1.0,)), ("train-cfg",)),
    "cfg.s_scale": Key(_positive(_as_float), 1.0, ("train-cfg",)),
    "cfg.phi0": Key(_choice("identity", "sign"), "identity", ("train-cfg",)),
    "cfg.delta_cap": Key(_positive(_as_float), 1e6, ("train-cfg",)),
    "cfg.epochs": Key(_positive(_as_int), 200, ("train-cfg",)),
    "cfg.critic": Key(_choice("trained", "analytic"), "trained", ("train-cfg",)),
    "cfg.distill_passes": Key(_at_least(_as_int, 0), 5, ("train-cfg",)),
    # train-gan
    "nats.scheme": Key(_choice("cts", "nts", "nats"), "nats", ("train-gan",)),
    "nats.n": Key(_at_least(_as_int, 1), 2000, ("train-gan",)),
    "nats.k": Key(_positive(_as_int), 1, ("train-gan",)),
    "nats.n_d": Key(_positive(_as_int), 10, ("train-gan",)),
    "nats.schedule": Key(_schedule, Call("geometric", (1.0, 0.01)), ("train-gan",)),
    "nats.loss": Key(_choice("original", "lsgan", "wgan", "hinge"), "original", ("train-gan",)),
    "nats.batch": Key(_positive(_as_int), 64, ("train-gan",)),
    "nats.clip": Key(_positive(_as_float), 0.05, ("train-gan",)),
    # sample-langevin
    "langevin.annealed": Key(_as_bool, True, ("sample-langevin",)),
    "langevin.steps": Key(_positive(_as_int), 100, ("sample-langevin",)),
    "langevin.epsilon": Key(_auto_or_positive, "auto", ("sample-langevin",)),
    "langevin.levels": Key(_positive(_as_int), 10, ("sample-langevin",)),
    "langevin.sigma_first": Key(_positive(_as_float), 8.0, ("sample-langevin",)),
    "langevin.gamma": Key(_gamma, "auto", ("sample-langevin",)),
    "langevin.chains": Key(_positive(_as_int), 5000, ("sample-langevin",)),
    "langevin.prior_mean": Key(_float_list, (8.0, 0.0), ("sample-langevin",)),
    "langevin.prior_sigma": Key(_positive(_as_float), 1.0, ("sample-langevin",)),
    "langevin.noise": Key(_choice("level", "base"), "level", ("sample-langevin",)),
    "langevin.bound": Key(_positive(_as_float), 1e3, ("sample-langevin",)),
    # eval
    "eval.snapshot": Key(_as_str, None, ("eval",)),
    # dump-field
    "field.critic": Key(_choice("trained", "analytic"), "trained", ("dump-field",)),
    "field.steps": Key(_at_least(_as_int, 0), 2000, ("dump-field",)),
    "field.batch": Key(_positive(_as_int), 256, ("dump-field",)),
    "field.reference_mean": Key(_float_list, (0.0, 0.0), ("dump-field",)),
    "field.reference_sigma": Key(_positive(_as_float), 1.0, ("dump-field",)),
    "field.nx": Key(_positive(_as_int), 21, ("dump-field",)),
    "field.ny": Key(_positive(_as_int), 21, ("dump-field",)),
    "field.xmin": Key(_as_float, -2.0, ("dump-field",)),
    "field.xmax": Key(_as_float, 3.0, ("dump-field",)),
    "field.ymin": Key(_as_float, -2.0, ("dump-field",)),
    "field.ymax": Key(_as_float, 2.0, ("dump-field",)),
    # grad-check
    "gradcheck.nets": Key(_positive(_as_int), 100, ("grad-check",)),
    "gradcheck.widths": Key(_int_list, (2, 16, 16, 1), ("grad-check",)),
    "gradcheck.activation": Key(_choice("tanh", "sigmoid", "softplus", "leaky_relu"), "tanh", ("grad-check",)),
    "gradcheck.batch": Key(_positive(_as_int), 8, ("grad-check",)),
    "gradcheck.tolerance": Key(_positive(_as_float), 1e-4, ("grad-check",)),
}

# learning rates filled in for "auto": critic-flow runs vs adversarial runs
AUTO_LR = {"train-cfg": 2.5e-4, "train-gan": 5e-4, "dump-field": 1e-3}
AUTO_LR_DEFAULT = 2.5e-4


@dataclass(frozen=True)
class RunConfig:
    """A validated configuration: every applicable key with its value."""

    kind: str
    values: tuple = field(repr=False)  # sorted (key, value) pairs

    def __getitem__(self, key: str):
        for k, v in self.values:
            if k == key:
                return v
        raise KeyError(key)

    def get(self, key: str, default=None):
        try:
            return self[key]
        except KeyError:
            return default

    def as_dict(self) -> dict:
        return dict(self.values)

    @property
    def seeds(self) -> tuple:
        return self["run.seeds"]

    def with_values(self, **updates) -> "RunConfig":
        """Copy with ``section__key=value`` overrides (re-validated)."""
        d = self.as_dict()
        for k, v in updates.items():
            d[k.replace("__", ".", 1)] = v
        return build_config(d)


def applicable(key: str, kind: str) -> bool:
    spec = SCHEMA[key]
    return not spec.kinds or kind in spec.kinds


def _pos(lines: dict, key: str, key_column: bool = False) -> tuple:
    if key not in lines:
        return None, None
    line, key_col, value_col = lines[key]
    return line, key_col if key_column else value_col


def build_config(raw: dict, lines: dict | None = None) -> RunConfig:
    """Validate ``raw`` (key -> parsed value) and fill defaults."""
    lines = lines or {}
    kind_raw = raw.get("run.kind")
    if kind_raw is None:
        raise ConfigError("run.kind is required", key="run.kind")
    try:
        kind = SCHEMA["run.kind"].check(kind_raw)
    except ValueError as exc:
        raise ConfigError(str(exc), *_pos(lines, "run.kind"), "run.kind") from None
    values = {}
    for key, val in raw.items():
        if key not in SCHEMA:
            raise ConfigError("unknown key", *_pos(lines, key, key_column=True), key)
        if not applicable(key, kind):
            owner = ", ".join(SCHEMA[key].kinds)
            raise ConfigError(f"key belongs to kind {owner}, not {kind}", *_pos(lines, key, key_column=True), key)
        try:
            values[key] = SCHEMA[key].check(val)
        except ValueError as exc:
            raise ConfigError(str(exc), *_pos(lines, key), key) from None
    for key, spec in SCHEMA.items():
        if key in values or not applicable(key, kind):
            continue
        if spec.default is None:
            raise ConfigError("required key is missing", None, None, key)
        values[key] = spec.default
    for lr_key in ("optim.lr_d", "optim.lr_g"):
        if values[lr_key] == "auto":
            values[lr_key] = AUTO_LR.get(kind, AUTO_LR_DEFAULT)
    if kind == "sample-langevin" and values["langevin.gamma"] == "auto":
        values["langevin.gamma"] = select_gamma(2)
    _cross_check(kind, values, lines)
    return RunConfig(kind, tuple(sorted(values.items())))


def _cross_check(kind: str, v: dict, lines: dict):
    def fail(msg, key):
        raise ConfigError(msg, *_pos(lines, key), key)

    if kind == "train-cfg":
        if v["cfg.b"] > v["cfg.n"]:
            fail("batch size exceeds the particle count", "cfg.b")
        if v["cfg.n"] > v["data.n_samples"] and v["cfg.critic"] == "trained":
            fail("particle count exceeds the data budget", "cfg.n")
        if v["cfg.m"] == 1 and v["cfg.schedule"].name != "constant":
            fail("a single flow step needs a constant schedule", "cfg.schedule")
    if kind == "train-gan" and v["nats.n_d"] == 1 and v["nats.schedule"].name != "constant":
        if v["nats.scheme"] == "nats":
            fail("n_d = 1 needs a constant schedule", "nats.schedule")
    if kind == "flow" and v["flow.batch"] > v["flow.particles"]:
        fail("batch exceeds the particle count", "flow.batch")
    if kind in ("flow",) and len(v["flow.start_mean"]) != 2:
        fail("start mean must be 2-dimensional", "flow.start_mean")
    if kind == "sample-langevin" and len(v["langevin.prior_mean"]) != 2:
        fail("prior mean must be 2-dimensional", "langevin.prior_mean")
    if kind == "dump-field" and len(v["field.reference_mean"]) != 2:
        fail("reference mean must be 2-dimensional", "field.reference_mean")
    if kind == "grad-check" and (len(v["gradcheck.widths"]) < 2 or min(v["gradcheck.widths"]) < 1):
        fail("need at least two positive widths", "gradcheck.widths")


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse config text; ``overrides`` (key -> parsed value) win over the text."""
    stmts = tokenize(text)
    raw = {k: v for k, v, *_ in stmts}
    lines = {k: pos for k, _, *pos in stmts}
    for k, v in (overrides or {}).items():
        raw[k] = v
    return build_config(raw, lines)


# --- emission ----------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    if isinstance(v, str):
        return v if _WORD.match(v) and v not in ("true", "false", "inf") else f'"{v}"'
    if isinstance(v, Call):
        return f"{v.name}({', '.join(format_value(a) for a in v.args)})"
    if isinstance(v, tuple):
        if len(v) == 1:
            # a one-element list reads back as a scalar; list checkers accept both
            return format_value(v[0])
        return ", ".join(format_value(a) for a in v)
    raise TypeError(f"cannot format {type(v).__name__}")


def emit_config(cfg: RunConfig) -> str:
    """Canonical text: every key, sorted by section then key."""
    return "".join(f"{k} = {format_value(v)}\n" for k, v in cfg.values)
