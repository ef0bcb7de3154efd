"""Dynamical models and the line-oriented ``.model`` file format.

A model file is a list of ``key = value`` lines::

    name    = Jet Engine
    vars    = [x, y]
    flow    = ["-y - 1.5*x^2 - 0.5*x^3 - 0.1", "3*x - y"]
    domain  = [[-1, 1], [-1, 1]]
    init    = [[0.45, 0.50], [-0.60, -0.55]]
    bad     = [[0.3, 0.35], [0.5, 0.6]]
    delta   = 0
    horizon = 1.5

``#`` starts a comment; a value may continue over several lines while its
brackets are unbalanced. ``domain`` defaults to ``[-1, 1]^n``.
"""

from __future__ import annotations

import functools
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Tuple

import numpy as np

from . import exprcore
from .errors import DomainError, ExprSyntaxError, ModelDomainError, ValidationError
from .exprcore import Expr
from .polylib import Box

log = logging.getLogger(__name__)

KEYS = ("name", "vars", "flow", "domain", "init", "bad", "delta", "horizon")

BENCHMARKS = {
    "water_tank": "water_tank.model",
    "jet_engine": "jet_engine.model",
    "steam_governor": "steam_governor.model",
    "exponential": "exponential.model",
    "nl1": "nl1.model",
    "nl2": "nl2.model",
}


@dataclass(frozen=True, eq=False)
class DynamicalModel:
    name: str
    variables: Tuple[str, ...]
    flow: Tuple[Expr, ...]
    domain: Box
    init: Box
    bad: Box
    delta: float = 0.0
    horizon: float = 1.0

    @property
    def n(self) -> int:
        return len(self.variables)

    def f(self, x) -> np.ndarray:
        """Vector field at a point ``(n,)`` or a batch ``(B, n)``."""
        x = np.asarray(x, dtype=float)
        xt = x.T
        cols = [np.broadcast_to(exprcore.eval_point(e, xt), x.shape[:-1]) for e in self.flow]
        return np.stack(cols, axis=-1)

    def f_interval(self, lo, hi):
        """Enclosure of the vector field over boxes ``(B, n)``; returns ``(B, n)`` pairs."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        outs = [exprcore.eval_interval(e, lo.T, hi.T) for e in self.flow]
        return np.stack([o[0] for o in outs], axis=-1), np.stack([o[1] for o in outs], axis=-1)

    @functools.cached_property
    def jacobian(self) -> Tuple[Tuple[Expr, ...], ...]:
        """Symbolic partial derivatives, ``jacobian[i][j] = d f_i / d x_j``."""
        return tuple(tuple(exprcore.diff(e, j) for j in range(self.n)) for e in self.flow)

    def jacobian_interval(self, lo, hi):
        """Enclosure of the Jacobian over boxes ``(B, n)``; returns ``(B, n, n)`` pairs.

        Boxes where a derivative is undefined (sqrt or cbrt at 0) get ``[-inf, inf]``.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        B, n = lo.shape
        jlo = np.empty((B, n, n))
        jhi = np.empty((B, n, n))
        for i, row in enumerate(self.jacobian):
            for j, e in enumerate(row):
                jlo[:, i, j], jhi[:, i, j] = _guarded_interval(e, lo.T, hi.T)
        bad = ~(np.isfinite(jlo) & np.isfinite(jhi))
        jlo[bad], jhi[bad] = -np.inf, np.inf
        return jlo, jhi

    def flow_text(self):
        return [exprcore.to_text(e, self.variables) for e in self.flow]

    def validate(self) -> None:
        n = self.n
        if len(self.flow) != n:
            raise ValidationError(f"{len(self.flow)} flow components for {n} variables")
        for box, label in ((self.domain, "domain"), (self.init, "init"), (self.bad, "bad")):
            if box.n != n:
                raise ValidationError(f"{label} has dimension {box.n}, expected {n}")
        for e in self.flow:
            exprcore.check_dims(e, n)
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        if not self.delta >= 0:
            raise ValidationError("delta must be non-negative")
        if not self.domain.contains_box(self.init):
            raise ValidationError(f"init {self.init} is not inside the domain {self.domain}")
        if not self.domain.intersects(self.bad):
            log.warning("bad set %s misses the domain; the safety query is vacuous", self.bad)
        try:
            lo, hi = self.f_interval(self.domain.lo[None], self.domain.hi[None])
        except DomainError as exc:
            raise ModelDomainError(f"vector field undefined on the domain: {exc}") from exc
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ModelDomainError("vector field unbounded on the domain")


def _guarded_interval(e: Expr, lo, hi):
    """``eval_interval`` that isolates the boxes raising DomainError."""
    B = lo.shape[1]
    if isinstance(e, exprcore.Const):
        return np.full(B, e.value), np.full(B, e.value)
    try:
        return exprcore.eval_interval(e, lo, hi)
    except DomainError:
        if B == 1:
            return np.array([-np.inf]), np.array([np.inf])
    half = B // 2
    a = _guarded_interval(e, lo[:, :half], hi[:, :half])
    b = _guarded_interval(e, lo[:, half:], hi[:, half:])
    return np.concatenate([a[0], b[0]]), np.concatenate([a[1], b[1]])


# ---------------------------------------------------------------- file format

_ITEM = re.compile(r"\s*(\"(?:[^\"\\]|\\.)*\"|'[^']*'|[^,\[\]]+)")


def _parse_value(text: str, pos: int = 0):
    """Parse a bracketed list of numbers / strings / bare words."""
    text = text.strip()

    def go(i):
        while i < len(text) and text[i].isspace():
            i += 1
        if i < len(text) and text[i] == "[":
            items = []
            i += 1
            while True:
                while i < len(text) and text[i].isspace():
                    i += 1
                if i < len(text) and text[i] == "]":
                    return items, i + 1
                item, i = go(i)
                items.append(item)
                while i < len(text) and text[i].isspace():
                    i += 1
                if i < len(text) and text[i] == ",":
                    i += 1
                elif i < len(text) and text[i] == "]":
                    continue
                else:
                    raise ExprSyntaxError("expected ',' or ']'", pos + i)
        m = _ITEM.match(text, i)
        if not m:
            raise ExprSyntaxError("expected a value", pos + i)
        tok = m.group(1).strip()
        if tok[:1] in "\"'":
            return tok[1:-1], m.end()
        try:
            return float(tok), m.end()
        except ValueError:
            return tok, m.end()

    if not text.startswith("["):
        return text
    value, end = go(0)
    if text[end:].strip():
        raise ExprSyntaxError("trailing characters after value", pos + end)
    return value


def parse_model_text(text: str) -> dict:
    entries = {}
    pending_key = None
    buf = ""
    start = 0
    offset = 0
    for line in text.splitlines(keepends=True):
        raw = line.split("#", 1)[0]
        if pending_key is None:
            if raw.strip():
                if "=" not in raw:
                    raise ExprSyntaxError("expected 'key = value'", offset)
                key, value = raw.split("=", 1)
                key = key.strip()
                if key not in KEYS:
                    raise ValidationError(f"unknown key {key!r}")
                pending_key, buf, start = key, value, offset + len(key) + 1
        else:
            buf += raw
        if pending_key is not None and buf.count("[") <= buf.count("]"):
            entries[pending_key] = _parse_value(buf, start)
            pending_key = None
        offset += len(line)
    if pending_key is not None:
        raise ExprSyntaxError(f"unterminated value for {pending_key!r}", offset)
    return entries


def model_from_entries(entries: dict, validate: bool = True) -> DynamicalModel:
    missing = [k for k in ("vars", "flow", "init", "bad", "horizon") if k not in entries]
    if missing:
        raise ValidationError(f"missing keys: {', '.join(missing)}")
    variables = tuple(str(v) for v in entries["vars"])
    flows = entries["flow"]
    if isinstance(flows, str):
        flows = [flows]
    flow = tuple(exprcore.parse(str(s), variables) for s in flows)
    n = len(variables)
    domain = Box.from_bounds(entries["domain"]) if "domain" in entries else Box(-np.ones(n), np.ones(n))
    try:
        model = DynamicalModel(
            name=str(entries.get("name", "model")),
            variables=variables,
            flow=flow,
            domain=domain,
            init=Box.from_bounds(entries["init"]),
            bad=Box.from_bounds(entries["bad"]),
            delta=float(entries.get("delta", 0.0)),
            horizon=float(entries["horizon"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc)) from exc
    if validate:
        model.validate()
    return model


def loads(text: str, validate: bool = True) -> DynamicalModel:
    return model_from_entries(parse_model_text(text), validate)


def load_model(path) -> DynamicalModel:
    """Read and validate a model file; bare benchmark names are resolved too."""
    p = Path(path)
    if not p.exists() and str(path) in BENCHMARKS:
        return load_benchmark(str(path))
    return loads(p.read_text())


def load_benchmark(name: str) -> DynamicalModel:
    fname = BENCHMARKS[name]
    return loads(resources.files("neuralabs.benchmarks").joinpath(fname).read_text())


def benchmark_path(name: str) -> Path:
    return Path(str(resources.files("neuralabs.benchmarks").joinpath(BENCHMARKS[name])))


def _fmt_box(b: Box) -> str:
    return "[" + ", ".join(f"[{lo!r}, {hi!r}]" for lo, hi in zip(b.lo.tolist(), b.hi.tolist())) + "]"


def dumps(model: DynamicalModel) -> str:
    flows = ", ".join('"' + s + '"' for s in model.flow_text())
    return "\n".join(
        [
            f"name = {model.name}",
            f"vars = [{', '.join(model.variables)}]",
            f"flow = [{flows}]",
            f"domain = {_fmt_box(model.domain)}",
            f"init = {_fmt_box(model.init)}",
            f"bad = {_fmt_box(model.bad)}",
            f"delta = {model.delta!r}",
            f"horizon = {model.horizon!r}",
            "",
        ]
    )
