"""SpaceEx model/config export (with a reader for our own output) and SVG plots."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import UnsupportedShape, ValidationError
from .hybridizer import Configuration, HybridAutomaton, Mode, Transition
from .polylib import Box, Polyhedron, polygon_2d

COMPONENT = "na"


def _names(ha: HybridAutomaton) -> List[str]:
    return list(ha.variables) if ha.variables else [f"x{i}" for i in range(ha.n)]


def _num(v: float) -> str:
    return repr(float(v))


def _linear(coefs, names) -> str:
    return " + ".join(f"{_num(a)}*{v}" for a, v in zip(coefs, names))


def _box_text(box: Box, names) -> str:
    parts = []
    for v, lo, hi in zip(names, box.lo, box.hi):
        parts.append(f"{v} >= {_num(lo)} & {v} <= {_num(hi)}")
    return " & ".join(parts)


def _require_box(obj, what: str) -> Box:
    if not isinstance(obj, Box):
        raise UnsupportedShape(f"{what} must be a box for SpaceEx export, got {type(obj).__name__}")
    return obj


def spaceex_xml(ha: HybridAutomaton) -> str:
    """One component, one location per mode, one transition per edge (identity reset)."""
    names = _names(ha)
    inputs = [f"d_{v}" for v in names]
    root = ET.Element("sspaceex", {"xmlns": "http://www-verimag.imag.fr/xml-namespaces/sspaceex", "version": "0.2", "math": "SpaceEx"})
    comp = ET.SubElement(root, "component", {"id": COMPONENT})
    for v in names:
        ET.SubElement(comp, "param", {"name": v, "type": "real", "local": "false", "d1": "1", "d2": "1", "dynamics": "any"})
    for u in inputs:
        ET.SubElement(comp, "param", {"name": u, "type": "real", "local": "false", "d1": "1", "d2": "1", "dynamics": "any", "controlled": "false"})
    for i, m in enumerate(ha.modes):
        loc = ET.SubElement(comp, "location", {"id": str(i + 1), "name": f"m_{m.config.key or 'affine'}"})
        clauses = [f"{_linear(a, names)} <= {_num(c)}" for a, c in zip(m.invariant.A, m.invariant.c)]
        clauses.append(_box_text(ha.domain, names))
        e = m.disturbance.hi
        clauses += [f"{u} >= {_num(-ei)} & {u} <= {_num(ei)}" for u, ei in zip(inputs, e)]
        ET.SubElement(loc, "invariant").text = " & ".join(clauses)
        flows = [f"{v}' == {_linear(row, names)} + {_num(bi)} + {u}" for v, row, bi, u in zip(names, m.A, m.b, inputs)]
        ET.SubElement(loc, "flow").text = " & ".join(flows)
    for t in ha.transitions:
        tr = ET.SubElement(comp, "transition", {"source": str(t.src + 1), "target": str(t.dst + 1)})
        g = ha.modes[t.dst].invariant
        guard = [f"{_linear(a, names)} <= {_num(c)}" for a, c in zip(g.A, g.c)]
        guard.append(_box_text(ha.domain, names))
        ET.SubElement(tr, "guard").text = " & ".join(guard)
        ET.SubElement(tr, "assignment").text = " & ".join(f"{v}' == {v}" for v in names)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


def spaceex_cfg(ha: HybridAutomaton, step: float = 0.01) -> str:
    names = _names(ha)
    init = _require_box(ha.init, "initial set")
    bad = _require_box(ha.bad, "bad set")
    lines = [
        f"# automaton: {ha.name}",
        f"system = \"{COMPONENT}\"",
        f"initially = \"{_box_text(init, names)}\"",
        f"forbidden = \"{_box_text(bad, names)}\"",
        "scenario = \"supp\"",
        "directions = \"oct\"",
        f"sampling-time = {_num(step)}",
        f"time-horizon = {_num(ha.horizon)}",
        "iter-max = -1",
        f"output-variables = \"{', '.join(names)}\"",
        "output-format = \"INTV\"",
        "rel-err = 1.0e-12",
        "abs-err = 1.0e-15",
    ]
    return "\n".join(lines) + "\n"


def write_spaceex(ha: HybridAutomaton, xml_path, cfg_path, step: float = 0.01) -> None:
    # validate before writing anything
    cfg = spaceex_cfg(ha, step)
    xml = spaceex_xml(ha)
    with open(xml_path, "w") as fh:
        fh.write(xml)
    with open(cfg_path, "w") as fh:
        fh.write(cfg)


# ---------------------------------------------------------------- reader

_BOUND = re.compile(r"^\s*([A-Za-z_][\w]*)\s*(>=|<=)\s*(\S+)\s*$")
_ROW = re.compile(r"^(.*)<=\s*(\S+)\s*$")
_TERM = re.compile(r"^\s*(\S+)\*([A-Za-z_][\w]*)\s*$")


def _split(text: str) -> List[str]:
    return [c.strip() for c in text.split("&") if c.strip()]


def _parse_box(clauses, names) -> Box:
    lo = np.full(len(names), -np.inf)
    hi = np.full(len(names), np.inf)
    for cl in clauses:
        m = _BOUND.match(cl)
        if not m or m.group(1) not in names:
            raise ValidationError(f"cannot read bound {cl!r}")
        k = names.index(m.group(1))
        if m.group(2) == ">=":
            lo[k] = float(m.group(3))
        else:
            hi[k] = float(m.group(3))
    return Box(lo, hi)


def _parse_row(clause, names) -> Tuple[np.ndarray, float]:
    m = _ROW.match(clause)
    if not m:
        raise ValidationError(f"cannot read constraint {clause!r}")
    a = np.zeros(len(names))
    for term in m.group(1).split(" + "):
        t = _TERM.match(term)
        if not t:
            raise ValidationError(f"cannot read term {term!r}")
        a[names.index(t.group(2))] = float(t.group(1))
    return a, float(m.group(2))


def _cfg_values(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("# automaton:"):
            out["name"] = line.split(":", 1)[1].strip()
            continue
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip().strip('"')
    return out


def read_spaceex(xml_text: str, cfg_text: str) -> HybridAutomaton:
    """Inverse of :func:`spaceex_xml`/:func:`spaceex_cfg` for files we emitted."""
    root = ET.fromstring(xml_text)
    ns = {"s": root.tag[1:].split("}")[0]} if root.tag.startswith("{") else {}
    q = (lambda tag: f"s:{tag}") if ns else (lambda tag: tag)
    comp = root.find(q("component"), ns)
    params = comp.findall(q("param"), ns)
    names = [p.get("name") for p in params if p.get("controlled") != "false"]
    inputs = [p.get("name") for p in params if p.get("controlled") == "false"]
    n = len(names)
    domain = None
    modes = []
    for loc in comp.findall(q("location"), ns):
        clauses = _split(loc.find(q("invariant"), ns).text)
        rows, rhs, dom_cl, dist_cl = [], [], [], []
        for cl in clauses:
            head = _BOUND.match(cl)
            if head and head.group(1) in inputs:
                dist_cl.append(cl)
            elif head and head.group(1) in names:
                dom_cl.append(cl)
            else:
                a, c = _parse_row(cl, names)
                rows.append(a)
                rhs.append(c)
        domain = _parse_box(dom_cl, names)
        dist = _parse_box([cl.replace(u, nm, 1) for cl in dist_cl for u, nm in zip(inputs, names) if cl.startswith(u + " ")], names)
        A = np.zeros((n, n))
        b = np.zeros(n)
        for k, fl in enumerate(_split(loc.find(q("flow"), ns).text)):
            rhs_text = fl.split("==", 1)[1]
            terms = [t.strip() for t in rhs_text.split(" + ")]
            A[k], _ = _parse_row(" + ".join(terms[:n]) + " <= 0", names)
            b[k] = float(terms[n])
        key = loc.get("name")[2:]
        config = Configuration(()) if key == "affine" else Configuration.from_string(key)
        inv = Polyhedron(np.array(rows).reshape(-1, n), np.array(rhs), domain)
        modes.append(Mode(config, inv, A, b, dist))
    trans = []
    for tr in comp.findall(q("transition"), ns):
        s, d = int(tr.get("source")) - 1, int(tr.get("target")) - 1
        trans.append(Transition(s, d, modes[d].invariant))
    cfg = _cfg_values(cfg_text)
    init = _parse_box(_split(cfg["initially"]), names)
    bad = _parse_box(_split(cfg["forbidden"]), names)
    return HybridAutomaton(modes, trans, domain, init, bad, float(cfg["time-horizon"]), cfg.get("name", "automaton"), tuple(names))


# ---------------------------------------------------------------- SVG

PALETTE = ["#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462", "#b3de69", "#fccde5", "#d9d9d9", "#bc80bd", "#ccebc5", "#ffed6f"]


class _Canvas:
    def __init__(self, lo, hi, width=640, height=640, pad=40):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        self.span = span
        self.w, self.h, self.pad = width, height, pad
        self.items: List[str] = []

    def xy(self, p):
        u = (np.asarray(p, dtype=float) - self.lo) / self.span
        return self.pad + u[..., 0] * (self.w - 2 * self.pad), self.h - self.pad - u[..., 1] * (self.h - 2 * self.pad)

    def rect(self, lo, hi, style, cls=""):
        x0, y1 = self.xy(lo)
        x1, y0 = self.xy(hi)
        self.items.append(f'<rect class="{cls}" x="{x0:.3f}" y="{y0:.3f}" width="{max(x1 - x0, 0.2):.3f}" height="{max(y1 - y0, 0.2):.3f}" style="{style}"/>')

    def polygon(self, pts, style, cls=""):
        xs, ys = self.xy(pts)
        coords = " ".join(f"{x:.3f},{y:.3f}" for x, y in zip(xs, ys))
        self.items.append(f'<polygon class="{cls}" points="{coords}" style="{style}"/>')

    def text(self, x, y, s, anchor="middle"):
        self.items.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="12" text-anchor="{anchor}">{s}</text>')

    def frame(self, xlabel, ylabel):
        self.items.append(f'<rect x="{self.pad}" y="{self.pad}" width="{self.w - 2 * self.pad}" height="{self.h - 2 * self.pad}" style="fill:none;stroke:#000"/>')
        self.text(self.w / 2, self.h - 10, xlabel)
        self.text(12, self.h / 2, ylabel)
        self.text(self.pad, self.h - self.pad + 14, f"{self.lo[0]:g}")
        self.text(self.w - self.pad, self.h - self.pad + 14, f"{self.hi[0]:g}")
        self.text(self.pad - 4, self.h - self.pad, f"{self.lo[1]:g}", "end")
        self.text(self.pad - 4, self.pad + 4, f"{self.hi[1]:g}", "end")

    def svg(self, x=0, y=0) -> str:
        body = "\n".join(self.items)
        return f'<g transform="translate({x},{y})">\n{body}\n</g>'


def _wrap(groups: Sequence[str], width: int, height: int) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
        + "\n".join(groups)
        + "\n</svg>\n"
    )


INIT_STYLE = "fill:#2ca02c;fill-opacity:0.6;stroke:#1a661a"
BAD_STYLE = "fill:#d62728;fill-opacity:0.6;stroke:#801818"
PIPE_STYLE = "fill:#1f77b4;fill-opacity:0.25;stroke:#1f77b4;stroke-width:0.3"


def plot_svg(ha: HybridAutomaton, flowpipe=None) -> str:
    """2D: mode partition, flowpipe boxes, initial and bad sets. Otherwise one time plot per axis."""
    names = _names(ha)
    if ha.n == 2:
        cv = _Canvas(ha.domain.lo, ha.domain.hi)
        for i, m in enumerate(ha.modes):
            cv.polygon(polygon_2d(m.invariant), f"fill:{PALETTE[i % len(PALETTE)]};stroke:#555;stroke-width:0.5", "mode")
        if flowpipe is not None:
            for s in flowpipe.segments:
                cv.rect(s.box.lo, s.box.hi, PIPE_STYLE, "segment")
        cv.rect(ha.init.lo, ha.init.hi, INIT_STYLE, "init")
        bad = ha.bad.intersection(ha.domain) or ha.bad
        cv.rect(bad.lo, bad.hi, BAD_STYLE, "bad")
        cv.frame(names[0], names[1])
        return _wrap([cv.svg()], cv.w, cv.h)
    panels = []
    width, height = 640, 320
    segs = flowpipe.segments if flowpipe is not None else []
    for k in range(ha.n):
        lo = np.array([0.0, ha.domain.lo[k]])
        hi = np.array([ha.horizon, ha.domain.hi[k]])
        cv = _Canvas(lo, hi, width, height)
        for s in segs:
            cv.rect([s.t_lo, s.box.lo[k]], [s.t_hi, s.box.hi[k]], PIPE_STYLE, "segment")
        cv.rect([0.0, ha.init.lo[k]], [0.0, ha.init.hi[k]], INIT_STYLE, "init")
        blo = max(ha.bad.lo[k], ha.domain.lo[k])
        bhi = min(ha.bad.hi[k], ha.domain.hi[k])
        if blo <= bhi:
            cv.rect([0.0, blo], [ha.horizon, bhi], BAD_STYLE.replace("0.6", "0.2"), "bad")
        cv.frame("t", names[k])
        panels.append(cv.svg(0, k * height))
    return _wrap(panels, width, height * ha.n)
