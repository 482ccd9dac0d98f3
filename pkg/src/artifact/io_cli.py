"""Input decks, mesh/fiber generators, VTK/CSV output, and the CLI.

Deck grammar (all SI units, ``#`` starts a comment):

    [solid]
    dims = 1.0 1.0 2.0          # box edge lengths
    divisions = 4 4 7           # hex8 elements per direction
    youngs_modulus = 10.0
    poisson_ratio = 0.3

    [beam]                      # repeatable, one fiber each
    generator = straight        # straight | arc | polyline
    start = 0.5 0.5 0.1         # straight
    end = 0.5 0.5 1.9
    n_elements = 5
    radius = 0.05
    youngs_modulus = 100.0
    poisson_ratio = 0.0
    # arc:   center, normal, arc_radius, start_angle, end_angle (radians)
    # polyline: points = x0 y0 z0 x1 y1 z1 ...

    [coupling]
    mode = BTS-FULL-MORTAR      # BTS-TRANS | BTS-FULL-GPTS | BTS-FULL-MORTAR | REF-2D3D
    triad = pol                 # pol | fix2 | fix3 | avg | ort
    eps_r = 100.0
    eps_theta = 100.0
    gauss_per_segment = 6
    circ_points = 8

    [bcs]                       # keys repeatable
    fix_solid_plane = x 0.0 xyz
    solid_traction = x 1.0 0.0 0.0 0.02
    torsion_traction = x 5.0 1.65885e-2
    fix_beam_node = 0 0 pos 0 0.0
    beam_point_force = 0 5 0.0 0.0 0.01
    beam_point_moment = 0 5 0.0 0.0 0.01
    beam_load = 0 0.0 0.0 10.0  # distributed moment per arc length, whole fiber
    solid_point_moment = 0.5 0.5 0.5 0.0 0.0 0.01 avg

    [program]
    steps = 4                   # or: scales = 0.25 0.5 0.75 1.0

    [output]
    vtk = out/run               # basename; writes <base>_solid.vtk, <base>_beam.vtk
    csv = out/steps.csv

The environment variable ARTIFACT_SEQUENTIAL_ASSEMBLY is accepted for
compatibility with batch scripts; assembly in this implementation is always
sequential and deterministic, so the flag changes nothing.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis
from . import beam_fem as bf
from . import coupling as cp
from . import so3
from . import solid_fem as sf
from . import solver as sv

PLANE_TOL = 1e-9
_AXES = {"x": 0, "y": 1, "z": 2}
_AXIS_NAMES = {v: k for k, v in _AXES.items()}


class BadSpec(ValueError):
    """Malformed or inconsistent input deck."""


# ---------------------------------------------------------------------------
# deck data model (plain tuples/floats so records compare with ==)
# ---------------------------------------------------------------------------


@dataclass
class SolidSpec:
    dims: tuple
    divisions: tuple
    youngs_modulus: float
    poisson_ratio: float


@dataclass
class BeamSpec:
    generator: str
    n_elements: int
    radius: float
    youngs_modulus: float
    poisson_ratio: float = 0.0
    start: Optional[tuple] = None
    end: Optional[tuple] = None
    center: Optional[tuple] = None
    normal: Optional[tuple] = None
    arc_radius: Optional[float] = None
    start_angle: Optional[float] = None
    end_angle: Optional[float] = None
    points: Optional[tuple] = None


@dataclass
class CouplingSpec:
    mode: str
    triad: str = "pol"
    eps_r: float = 100.0
    eps_theta: float = 100.0
    gauss_per_segment: int = 6
    circ_points: int = 8


@dataclass
class FixSolidPlane:
    axis: int
    value: float
    dofs: tuple = (0, 1, 2)


@dataclass
class SolidTraction:
    axis: int
    value: float
    traction: tuple


@dataclass
class TorsionTraction:
    """Torsional traction t = (T/J_p) n x (X - c) on the face plane axis=value,
    with c the section centroid and J_p its polar moment: total torque T."""

    axis: int
    value: float
    torque: float


@dataclass
class FixBeamNode:
    beam: int
    node: int
    field: str
    dof: int
    value: float = 0.0


@dataclass
class BeamPointForceSpec:
    beam: int
    node: int
    force: tuple


@dataclass
class BeamPointMomentSpec:
    beam: int
    node: int
    moment: tuple


@dataclass
class BeamLoad:
    beam: int
    moment: tuple  # distributed moment per unit arc length on the whole fiber


@dataclass
class SolidPointMomentSpec:
    point: tuple
    moment: tuple
    kind: str = "avg"


@dataclass
class ProgramSpec:
    steps: int = 1
    scales: Optional[tuple] = None


@dataclass
class OutputSpec:
    vtk: Optional[str] = None
    csv: Optional[str] = None


@dataclass
class InputDeck:
    solid: SolidSpec
    beams: list = field(default_factory=list)
    coupling: Optional[CouplingSpec] = None
    bcs: list = field(default_factory=list)
    program: ProgramSpec = field(default_factory=ProgramSpec)
    output: OutputSpec = field(default_factory=OutputSpec)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _floats(tokens, n=None):
    try:
        vals = tuple(float(t) for t in tokens)
    except ValueError as exc:
        raise BadSpec(f"expected numbers, got {tokens!r}") from exc
    if n is not None and len(vals) != n:
        raise BadSpec(f"expected {n} numbers, got {len(vals)}")
    return vals


def _ints(tokens, n=None):
    vals = _floats(tokens, n)
    out = tuple(int(round(v)) for v in vals)
    if any(abs(o - v) > 0.0 for o, v in zip(out, vals)):
        raise BadSpec(f"expected integers, got {tokens!r}")
    return out


def _axis(token):
    if token not in _AXES:
        raise BadSpec(f"axis must be one of x, y, z, got {token!r}")
    return _AXES[token]


def _dof_string(token):
    if not token or any(c not in "xyz" for c in token):
        raise BadSpec(f"dof set must combine x, y, z, got {token!r}")
    return tuple(sorted(_AXES[c] for c in token))


_SOLID_KEYS = {"dims", "divisions", "youngs_modulus", "poisson_ratio"}
_BEAM_KEYS = {f.name for f in fields(BeamSpec)}
_COUPLING_KEYS = {f.name for f in fields(CouplingSpec)}
_PROGRAM_KEYS = {"steps", "scales"}
_OUTPUT_KEYS = {"vtk", "csv"}
_BC_KEYS = {"fix_solid_plane", "solid_traction", "torsion_traction",
            "fix_beam_node", "beam_point_force", "beam_point_moment",
            "beam_load", "solid_point_moment"}


def _parse_bc(key, tokens):
    if key == "fix_solid_plane":
        if len(tokens) not in (2, 3):
            raise BadSpec("fix_solid_plane takes: axis value [dofs]")
        dofs = _dof_string(tokens[2]) if len(tokens) == 3 else (0, 1, 2)
        return FixSolidPlane(_axis(tokens[0]), float(tokens[1]), dofs)
    if key == "solid_traction":
        if len(tokens) != 5:
            raise BadSpec("solid_traction takes: axis value tx ty tz")
        return SolidTraction(_axis(tokens[0]), float(tokens[1]),
                             _floats(tokens[2:], 3))
    if key == "torsion_traction":
        if len(tokens) != 3:
            raise BadSpec("torsion_traction takes: axis value torque")
        return TorsionTraction(_axis(tokens[0]), float(tokens[1]),
                               float(tokens[2]))
    if key == "fix_beam_node":
        if len(tokens) != 5:
            raise BadSpec("fix_beam_node takes: beam node field dof value")
        if tokens[2] not in ("pos", "tan", "rot"):
            raise BadSpec(f"unknown beam field {tokens[2]!r}")
        return FixBeamNode(int(tokens[0]), int(tokens[1]), tokens[2],
                           int(tokens[3]), float(tokens[4]))
    if key == "beam_point_force":
        return BeamPointForceSpec(int(tokens[0]), int(tokens[1]),
                                  _floats(tokens[2:], 3))
    if key == "beam_point_moment":
        return BeamPointMomentSpec(int(tokens[0]), int(tokens[1]),
                                   _floats(tokens[2:], 3))
    if key == "beam_load":
        return BeamLoad(int(tokens[0]), _floats(tokens[1:], 3))
    if key == "solid_point_moment":
        if len(tokens) not in (6, 7):
            raise BadSpec("solid_point_moment takes: px py pz mx my mz [kind]")
        kind = tokens[6] if len(tokens) == 7 else "avg"
        return SolidPointMomentSpec(_floats(tokens[0:3], 3),
                                    _floats(tokens[3:6], 3), kind)
    raise BadSpec(f"unknown bcs key {key!r}")


def parse_deck(text: str) -> InputDeck:
    """Parse deck text; unknown sections or keys raise BadSpec."""
    section = None
    solid = None
    beams: list = []
    beam_kv: Optional[dict] = None
    coupling_kv = None
    program_kv: dict = {}
    output_kv: dict = {}
    bcs: list = []
    solid_kv = None

    def finish_beam():
        nonlocal beam_kv
        if beam_kv is not None:
            beams.append(_beam_from_kv(beam_kv))
            beam_kv = None

    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            finish_beam()
            section = line[1:-1].strip()
            if section == "beam":
                beam_kv = {}
            elif section == "solid":
                if solid_kv is not None:
                    raise BadSpec("duplicate [solid] section")
                solid_kv = {}
            elif section == "coupling":
                if coupling_kv is not None:
                    raise BadSpec("duplicate [coupling] section")
                coupling_kv = {}
            elif section not in ("bcs", "program", "output"):
                raise BadSpec(f"unknown section [{section}]")
            continue
        if "=" not in line:
            raise BadSpec(f"expected 'key = value', got {line!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        tokens = rhs.split()
        if section == "solid":
            if key not in _SOLID_KEYS:
                raise BadSpec(f"unknown solid key {key!r}")
            solid_kv[key] = tokens
        elif section == "beam":
            if key not in _BEAM_KEYS:
                raise BadSpec(f"unknown beam key {key!r}")
            beam_kv[key] = tokens
        elif section == "coupling":
            if key not in _COUPLING_KEYS:
                raise BadSpec(f"unknown coupling key {key!r}")
            coupling_kv[key] = tokens
        elif section == "bcs":
            if key not in _BC_KEYS:
                raise BadSpec(f"unknown bcs key {key!r}")
            bcs.append(_parse_bc(key, tokens))
        elif section == "program":
            if key not in _PROGRAM_KEYS:
                raise BadSpec(f"unknown program key {key!r}")
            program_kv[key] = tokens
        elif section == "output":
            if key not in _OUTPUT_KEYS:
                raise BadSpec(f"unknown output key {key!r}")
            output_kv[key] = tokens
        else:
            raise BadSpec(f"key {key!r} outside any section")
    finish_beam()

    if solid_kv is None:
        raise BadSpec("missing [solid] section")
    for need in _SOLID_KEYS:
        if need not in solid_kv:
            raise BadSpec(f"solid section misses {need!r}")
    solid = SolidSpec(
        dims=_floats(solid_kv["dims"], 3),
        divisions=_ints(solid_kv["divisions"], 3),
        youngs_modulus=float(solid_kv["youngs_modulus"][0]),
        poisson_ratio=float(solid_kv["poisson_ratio"][0]),
    )
    if any(d < 1 for d in solid.divisions):
        raise BadSpec("divisions must be at least 1")

    coupling = None
    if coupling_kv is not None:
        if "mode" not in coupling_kv:
            raise BadSpec("coupling section misses 'mode'")
        coupling = CouplingSpec(
            mode=coupling_kv["mode"][0],
            triad=coupling_kv.get("triad", ["pol"])[0],
            eps_r=float(coupling_kv.get("eps_r", ["100.0"])[0]),
            eps_theta=float(coupling_kv.get("eps_theta", ["100.0"])[0]),
            gauss_per_segment=_ints(coupling_kv.get("gauss_per_segment",
                                                    ["6"]), 1)[0],
            circ_points=_ints(coupling_kv.get("circ_points", ["8"]), 1)[0],
        )
        if coupling.mode not in cp.COUPLING_MODES:
            raise BadSpec(f"unknown coupling mode {coupling.mode!r}")

    program = ProgramSpec()
    if "scales" in program_kv:
        program = ProgramSpec(steps=len(program_kv["scales"]),
                              scales=_floats(program_kv["scales"]))
    elif "steps" in program_kv:
        program = ProgramSpec(steps=_ints(program_kv["steps"], 1)[0])
    if program.steps < 1:
        raise BadSpec("program needs at least one step")

    output = OutputSpec(
        vtk=" ".join(output_kv["vtk"]) if "vtk" in output_kv else None,
        csv=" ".join(output_kv["csv"]) if "csv" in output_kv else None,
    )
    return InputDeck(solid=solid, beams=beams, coupling=coupling, bcs=bcs,
                     program=program, output=output)


def _beam_from_kv(kv: dict) -> BeamSpec:
    for need in ("generator", "n_elements", "radius", "youngs_modulus"):
        if need not in kv:
            raise BadSpec(f"beam section misses {need!r}")
    gen = kv["generator"][0]
    spec = BeamSpec(
        generator=gen,
        n_elements=_ints(kv["n_elements"], 1)[0],
        radius=float(kv["radius"][0]),
        youngs_modulus=float(kv["youngs_modulus"][0]),
        poisson_ratio=float(kv.get("poisson_ratio", ["0.0"])[0]),
    )
    if gen == "straight":
        for need in ("start", "end"):
            if need not in kv:
                raise BadSpec(f"straight generator misses {need!r}")
        spec.start = _floats(kv["start"], 3)
        spec.end = _floats(kv["end"], 3)
    elif gen == "arc":
        for need in ("center", "normal", "arc_radius", "start_angle",
                     "end_angle"):
            if need not in kv:
                raise BadSpec(f"arc generator misses {need!r}")
        spec.center = _floats(kv["center"], 3)
        spec.normal = _floats(kv["normal"], 3)
        spec.arc_radius = float(kv["arc_radius"][0])
        spec.start_angle = float(kv["start_angle"][0])
        spec.end_angle = float(kv["end_angle"][0])
    elif gen == "polyline":
        if "points" not in kv:
            raise BadSpec("polyline generator misses 'points'")
        pts = _floats(kv["points"])
        if len(pts) < 6 or len(pts) % 3:
            raise BadSpec("polyline points must be 3k numbers, k >= 2")
        spec.points = pts
    else:
        raise BadSpec(f"unknown beam generator {gen!r}")
    if spec.n_elements < 1 or spec.radius <= 0.0:
        raise BadSpec("beam needs n_elements >= 1 and radius > 0")
    return spec


# ---------------------------------------------------------------------------
# serialization (canonical form; parse -> serialize -> parse is a fixed point)
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _bc_line(bc) -> str:
    if isinstance(bc, FixSolidPlane):
        dofs = "".join(_AXIS_NAMES[d] for d in bc.dofs)
        return f"fix_solid_plane = {_AXIS_NAMES[bc.axis]} {_fmt(bc.value)} {dofs}"
    if isinstance(bc, SolidTraction):
        return (f"solid_traction = {_AXIS_NAMES[bc.axis]} {_fmt(bc.value)} "
                f"{_fmt(bc.traction)}")
    if isinstance(bc, TorsionTraction):
        return (f"torsion_traction = {_AXIS_NAMES[bc.axis]} {_fmt(bc.value)} "
                f"{_fmt(bc.torque)}")
    if isinstance(bc, FixBeamNode):
        return (f"fix_beam_node = {bc.beam} {bc.node} {bc.field} {bc.dof} "
                f"{_fmt(bc.value)}")
    if isinstance(bc, BeamPointForceSpec):
        return f"beam_point_force = {bc.beam} {bc.node} {_fmt(bc.force)}"
    if isinstance(bc, BeamPointMomentSpec):
        return f"beam_point_moment = {bc.beam} {bc.node} {_fmt(bc.moment)}"
    if isinstance(bc, BeamLoad):
        return f"beam_load = {bc.beam} {_fmt(bc.moment)}"
    if isinstance(bc, SolidPointMomentSpec):
        return (f"solid_point_moment = {_fmt(bc.point)} {_fmt(bc.moment)} "
                f"{bc.kind}")
    raise TypeError(f"unknown bc record {type(bc).__name__}")


def serialize_deck(deck: InputDeck) -> str:
    lines = ["[solid]"]
    s = deck.solid
    lines.append(f"dims = {_fmt(s.dims)}")
    lines.append(f"divisions = {_fmt(s.divisions)}")
    lines.append(f"youngs_modulus = {_fmt(s.youngs_modulus)}")
    lines.append(f"poisson_ratio = {_fmt(s.poisson_ratio)}")
    for b in deck.beams:
        lines.append("")
        lines.append("[beam]")
        lines.append(f"generator = {b.generator}")
        lines.append(f"n_elements = {b.n_elements}")
        lines.append(f"radius = {_fmt(b.radius)}")
        lines.append(f"youngs_modulus = {_fmt(b.youngs_modulus)}")
        lines.append(f"poisson_ratio = {_fmt(b.poisson_ratio)}")
        if b.generator == "straight":
            lines.append(f"start = {_fmt(b.start)}")
            lines.append(f"end = {_fmt(b.end)}")
        elif b.generator == "arc":
            lines.append(f"center = {_fmt(b.center)}")
            lines.append(f"normal = {_fmt(b.normal)}")
            lines.append(f"arc_radius = {_fmt(b.arc_radius)}")
            lines.append(f"start_angle = {_fmt(b.start_angle)}")
            lines.append(f"end_angle = {_fmt(b.end_angle)}")
        else:
            lines.append(f"points = {_fmt(b.points)}")
    if deck.coupling is not None:
        c = deck.coupling
        lines.extend(["", "[coupling]", f"mode = {c.mode}",
                      f"triad = {c.triad}", f"eps_r = {_fmt(c.eps_r)}",
                      f"eps_theta = {_fmt(c.eps_theta)}",
                      f"gauss_per_segment = {c.gauss_per_segment}",
                      f"circ_points = {c.circ_points}"])
    if deck.bcs:
        lines.extend(["", "[bcs]"])
        lines.extend(_bc_line(bc) for bc in deck.bcs)
    lines.extend(["", "[program]"])
    if deck.program.scales is not None:
        lines.append(f"scales = {_fmt(deck.program.scales)}")
    else:
        lines.append(f"steps = {deck.program.steps}")
    if deck.output.vtk is not None or deck.output.csv is not None:
        lines.extend(["", "[output]"])
        if deck.output.vtk is not None:
            lines.append(f"vtk = {deck.output.vtk}")
        if deck.output.csv is not None:
            lines.append(f"csv = {deck.output.csv}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def generate_box_mesh(dims, divisions) -> sf.SolidMesh:
    """Structured hex8 grid over [0, dims] with lexicographic node order
    (x fastest, then y, then z)."""
    lx, ly, lz = (float(d) for d in dims)
    nx, ny, nz = (int(d) for d in divisions)
    if min(nx, ny, nz) < 1:
        raise BadSpec("divisions must be at least 1")
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    nodes = np.array([[x, y, z] for z in zs for y in ys for x in xs])

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    elems = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                elems.append([
                    nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k),
                    nid(i, j + 1, k), nid(i, j, k + 1), nid(i + 1, j, k + 1),
                    nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1),
                ])
    return sf.SolidMesh(nodes=nodes, elements=np.array(elems))


def _calibrate_lengths(nodes, tangents, elements, first_guess):
    """Element length parameters solving L = arc(L) for the Hermite map."""
    xs, ws = np.polynomial.legendre.leggauss(10)
    lengths = np.asarray(first_guess, dtype=float).copy()
    for e, (i, j) in enumerate(elements):
        X = np.concatenate([nodes[i], tangents[i], nodes[j], tangents[j]])
        L = lengths[e]
        for _ in range(60):
            arc = sum(w * np.linalg.norm(bf.hermite_derivative(x, X, L))
                      for x, w in zip(xs, ws))
            if abs(arc - L) < 1e-13 * max(L, 1.0):
                break
            L = arc
        lengths[e] = L
    return lengths


def _frame_normal(direction):
    """A deterministic unit vector orthogonal to `direction`."""
    k = np.argmin(np.abs(direction))
    v = np.zeros(3)
    v[k] = 1.0
    out = np.cross(direction, v)
    return out / np.linalg.norm(out)


def _psi_from_triad(g1, g2):
    g1 = g1 / np.linalg.norm(g1)
    g2 = g2 - (g2 @ g1) * g1
    g2 /= np.linalg.norm(g2)
    return so3.log_spurrier(np.column_stack([g1, g2, np.cross(g1, g2)]))


def generate_fiber(spec: BeamSpec) -> bf.BeamMesh:
    """A single fiber mesh from a generator spec (validated to 1e-8)."""
    props = bf.CrossSectionProperties.circular(spec.youngs_modulus,
                                               spec.poisson_ratio, spec.radius)
    ne = spec.n_elements
    nb = ne + 1
    elements = np.column_stack([np.arange(ne), np.arange(1, ne + 1)])

    if spec.generator == "straight":
        p0, p1 = np.asarray(spec.start, float), np.asarray(spec.end, float)
        axis = p1 - p0
        length = np.linalg.norm(axis)
        if length <= 0.0:
            raise BadSpec("straight beam has zero length")
        direction = axis / length
        t = np.linspace(0.0, 1.0, nb)
        nodes = p0[None, :] + t[:, None] * axis[None, :]
        tangents = np.tile(direction, (nb, 1))
        psi0 = _psi_from_triad(direction, _frame_normal(direction))
        psi_nodes = np.tile(psi0, (nb, 1))
        psi_mid = np.tile(psi0, (ne, 1))
        lengths = np.full(ne, length / ne)
    elif spec.generator == "arc":
        center = np.asarray(spec.center, float)
        n = np.asarray(spec.normal, float)
        nn = np.linalg.norm(n)
        if nn <= 0.0 or spec.arc_radius <= 0.0:
            raise BadSpec("arc needs a nonzero normal and positive radius")
        n = n / nn
        e1 = _frame_normal(n)
        e2 = np.cross(n, e1)
        R = spec.arc_radius
        th_n = np.linspace(spec.start_angle, spec.end_angle, nb)
        th_m = 0.5 * (th_n[:-1] + th_n[1:])
        if abs(spec.end_angle - spec.start_angle) <= 0.0:
            raise BadSpec("arc has zero opening angle")

        def on_circle(th):
            return center + R * (np.cos(th) * e1 + np.sin(th) * e2)

        def tangent(th):
            return -np.sin(th) * e1 + np.cos(th) * e2

        nodes = np.array([on_circle(t) for t in th_n])
        tangents = np.array([tangent(t) for t in th_n])
        # triad: g1 tangent, g2 radial (outward)
        psi_nodes = np.array(
            [_psi_from_triad(tangent(t), np.cos(t) * e1 + np.sin(t) * e2)
             for t in th_n])
        psi_mid = np.array(
            [_psi_from_triad(tangent(t), np.cos(t) * e1 + np.sin(t) * e2)
             for t in th_m])
        guess = np.full(ne, R * abs(th_n[1] - th_n[0]))
        lengths = _calibrate_lengths(nodes, tangents, elements, guess)
    elif spec.generator == "polyline":
        pts = np.asarray(spec.points, float).reshape(-1, 3)
        if pts.shape[0] != nb:
            raise BadSpec(
                f"polyline needs n_elements+1 = {nb} points, got {pts.shape[0]}")
        chords = np.diff(pts, axis=0)
        if np.any(np.linalg.norm(chords, axis=1) <= 0.0):
            raise BadSpec("polyline has coincident consecutive points")
        tangents = np.empty((nb, 3))
        tangents[0] = chords[0]
        tangents[-1] = chords[-1]
        for i in range(1, nb - 1):
            tangents[i] = (chords[i - 1] / np.linalg.norm(chords[i - 1])
                           + chords[i] / np.linalg.norm(chords[i]))
        tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
        # transported frame: keep the previous g2 as orthogonal as possible
        psi_nodes = np.empty((nb, 3))
        g2 = _frame_normal(tangents[0])
        for i in range(nb):
            g2 = g2 - (g2 @ tangents[i]) * tangents[i]
            g2 /= np.linalg.norm(g2)
            psi_nodes[i] = _psi_from_triad(tangents[i], g2)
        psi_mid = np.empty((ne, 3))
        for e in range(ne):
            l1 = so3.exp_rodrigues(psi_nodes[e])
            l2 = so3.exp_rodrigues(psi_nodes[e + 1])
            # geodesic midpoint on SO(3)
            mid = l1 @ so3.exp_rodrigues(0.5 * so3.log_spurrier(l1.T @ l2))
            psi_mid[e] = so3.log_spurrier(mid)
        nodes = pts
        guess = np.linalg.norm(chords, axis=1)
        lengths = _calibrate_lengths(nodes, tangents, elements, guess)
    else:
        raise BadSpec(f"unknown beam generator {spec.generator!r}")

    mesh = bf.BeamMesh(
        nodes=nodes,
        tangents=tangents,
        elements=elements,
        psi_nodes_ref=psi_nodes,
        psi_mid_ref=psi_mid,
        lengths=lengths,
        props=props,
    )
    mesh.validate(tol=1e-8)
    return mesh


def merge_fibers(meshes) -> tuple:
    """Concatenate fiber meshes into one BeamMesh.

    All fibers must share cross-section properties (single-property BeamMesh).
    Returns (mesh, node_offsets, element_offsets)."""
    if not meshes:
        raise BadSpec("no beams to merge")
    p0 = meshes[0].props
    for m in meshes[1:]:
        if (not np.allclose(m.props.C_F, p0.C_F)
                or not np.allclose(m.props.C_M, p0.C_M)
                or m.props.radius != p0.radius):
            raise BadSpec("all fibers must share cross-section properties")
    node_off, elem_off = [], []
    n_nodes = n_elems = 0
    for m in meshes:
        node_off.append(n_nodes)
        elem_off.append(n_elems)
        n_nodes += m.n_nodes
        n_elems += m.n_elements
    merged = bf.BeamMesh(
        nodes=np.vstack([m.nodes for m in meshes]),
        tangents=np.vstack([m.tangents for m in meshes]),
        elements=np.vstack([m.elements + off
                            for m, off in zip(meshes, node_off)]),
        psi_nodes_ref=np.vstack([m.psi_nodes_ref for m in meshes]),
        psi_mid_ref=np.vstack([m.psi_mid_ref for m in meshes]),
        lengths=np.concatenate([m.lengths for m in meshes]),
        props=p0,
    )
    return merged, node_off, elem_off


# ---------------------------------------------------------------------------
# model construction from a deck
# ---------------------------------------------------------------------------


def _plane_nodes(mesh: sf.SolidMesh, axis: int, value: float):
    scale = max(1.0, np.max(np.abs(mesh.nodes)))
    hits = np.nonzero(np.abs(mesh.nodes[:, axis] - value)
                      < PLANE_TOL * scale)[0]
    if hits.size == 0:
        raise BadSpec(f"no solid nodes on plane {_AXIS_NAMES[axis]}={value}")
    return hits


def _plane_faces(mesh: sf.SolidMesh, axis: int, value: float):
    """(element, face) pairs whose face lies in the given plane."""
    scale = max(1.0, np.max(np.abs(mesh.nodes)))
    out = []
    for e in range(mesh.n_elements):
        coords = mesh.nodes[mesh.elements[e]]
        for face, ids in sf.FACE_NODES.items():
            if np.all(np.abs(coords[list(ids), axis] - value)
                      < PLANE_TOL * scale):
                out.append((e, face))
    if not out:
        raise BadSpec(f"no element faces on plane {_AXIS_NAMES[axis]}={value}")
    return out


def _torsion_traction_fn(mesh: sf.SolidMesh, axis: int, value: float,
                         torque: float):
    """Linear torsional traction about the face-plane centroid with exact
    resultant torque (J_p from the section's bounding rectangle)."""
    nodes = mesh.nodes[_plane_nodes(mesh, axis, value)]
    in_plane = [a for a in range(3) if a != axis]
    lo = nodes[:, in_plane].min(axis=0)
    hi = nodes[:, in_plane].max(axis=0)
    b, h = hi - lo
    centroid = np.zeros(3)
    centroid[axis] = value
    centroid[in_plane[0]] = 0.5 * (lo[0] + hi[0])
    centroid[in_plane[1]] = 0.5 * (lo[1] + hi[1])
    j_polar = b * h * (b * b + h * h) / 12.0
    n = np.zeros(3)
    n[axis] = 1.0
    k = torque / j_polar

    def traction(X):
        return k * np.cross(n, X - centroid)

    return traction


def build_model(deck: InputDeck):
    """Assemble (CoupledModel, LoadProgram, OutputSpec) from a parsed deck."""
    material = sf.SVKMaterial(youngs_modulus=deck.solid.youngs_modulus,
                              poisson_ratio=deck.solid.poisson_ratio)
    solid = generate_box_mesh(deck.solid.dims, deck.solid.divisions)

    beam = None
    node_off = elem_off = None
    if deck.beams:
        fibers = [generate_fiber(b) for b in deck.beams]
        beam, node_off, elem_off = merge_fibers(fibers)

    point_moments = []
    for bc in deck.bcs:
        if isinstance(bc, FixSolidPlane):
            for n in _plane_nodes(solid, bc.axis, bc.value):
                for dof in bc.dofs:
                    solid.dirichlet.append(sf.DirichletBC(node=int(n),
                                                          dof=dof))
        elif isinstance(bc, SolidTraction):
            trac = np.asarray(bc.traction, float)
            for e, face in _plane_faces(solid, bc.axis, bc.value):
                solid.neumann.append(sf.NeumannBC(element=e, face=face,
                                                  traction=trac))
        elif isinstance(bc, TorsionTraction):
            fn = _torsion_traction_fn(solid, bc.axis, bc.value, bc.torque)
            for e, face in _plane_faces(solid, bc.axis, bc.value):
                solid.neumann.append(sf.NeumannBC(element=e, face=face,
                                                  traction=fn))
        elif isinstance(bc, SolidPointMomentSpec):
            point_moments.append(sv.SolidPointMoment(
                point=np.asarray(bc.point, float),
                moment=np.asarray(bc.moment, float), kind=bc.kind))
        elif isinstance(bc, (FixBeamNode, BeamPointForceSpec,
                             BeamPointMomentSpec, BeamLoad)):
            if beam is None:
                raise BadSpec("beam boundary condition without any beam")
            if not 0 <= bc.beam < len(deck.beams):
                raise BadSpec(f"beam index {bc.beam} out of range")
            if isinstance(bc, BeamLoad):
                n_el = deck.beams[bc.beam].n_elements
                for e in range(n_el):
                    beam.distributed_moments.append(bf.BeamDistributedMoment(
                        moment=np.asarray(bc.moment, float),
                        element=elem_off[bc.beam] + e))
            else:
                node = node_off[bc.beam] + bc.node
                if not 0 <= bc.node <= deck.beams[bc.beam].n_elements:
                    raise BadSpec(f"beam node {bc.node} out of range")
                if isinstance(bc, FixBeamNode):
                    beam.dirichlet.append(bf.BeamDirichletBC(
                        node=node, field=bc.field, dof=bc.dof, value=bc.value))
                elif isinstance(bc, BeamPointForceSpec):
                    beam.point_forces.append(bf.BeamPointForce(
                        node=node, force=np.asarray(bc.force, float)))
                else:
                    beam.point_moments.append(bf.BeamPointMoment(
                        node=node, moment=np.asarray(bc.moment, float)))
        else:
            raise BadSpec(f"unhandled bc record {type(bc).__name__}")

    coupling = None
    if deck.coupling is not None:
        if beam is None:
            raise BadSpec("coupling section without any beam")
        c = deck.coupling
        coupling = cp.PenaltyParams(eps_r=c.eps_r, eps_theta=c.eps_theta,
                                    mode=c.mode, triad=c.triad,
                                    gauss_per_segment=c.gauss_per_segment,
                                    circ_points=c.circ_points)

    model = sv.CoupledModel(solid=solid, material=material, beam=beam,
                            coupling=coupling,
                            solid_point_moments=point_moments)
    if deck.program.scales is not None:
        program = sv.LoadProgram(np.asarray(deck.program.scales, float))
    else:
        program = sv.LoadProgram.ramp(deck.program.steps)
    return model, program, deck.output


# ---------------------------------------------------------------------------
# legacy ASCII VTK
# ---------------------------------------------------------------------------


def _vtk_header(out, title):
    out.append("# vtk DataFile Version 3.0")
    out.append(title)
    out.append("ASCII")
    out.append("DATASET UNSTRUCTURED_GRID")


def _vtk_points(out, pts):
    out.append(f"POINTS {len(pts)} double")
    for p in pts:
        out.append(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}")


def _vtk_vectors(out, name, vecs):
    out.append(f"VECTORS {name} double")
    for v in vecs:
        out.append(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")


def write_solid_vtk(path, mesh: sf.SolidMesh, state: sf.SolidState,
                    material: sf.SVKMaterial):
    """Hex8 grid with point displacements and element-center PK2 tensors."""
    out: list = []
    _vtk_header(out, "solid")
    _vtk_points(out, mesh.nodes)
    ne = mesh.n_elements
    out.append(f"CELLS {ne} {9 * ne}")
    for e in range(ne):
        out.append("8 " + " ".join(str(int(i)) for i in mesh.elements[e]))
    out.append(f"CELL_TYPES {ne}")
    out.extend(["12"] * ne)  # VTK_HEXAHEDRON
    out.append(f"POINT_DATA {mesh.n_nodes}")
    _vtk_vectors(out, "displacement", state.displacements)
    out.append(f"CELL_DATA {ne}")
    out.append("TENSORS pk2 double")
    for e in range(ne):
        F = sf.deformation_gradient(mesh.element(e), state, 0.0, 0.0, 0.0)
        S = sf.pk2_stress(material, sf.green_lagrange(F))
        for row in S:
            out.append(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}")
        out.append("")
    Path(path).write_text("\n".join(out) + "\n")


def write_beam_vtk(path, mesh: bf.BeamMesh, state: bf.BeamState):
    """Per-element 3-point polylines with directors, strain measures, and
    cross-section resultants at the sample points."""
    xis = (-1.0, 0.0, 1.0)
    pts, d1, d2, d3, gam, om, frc, mom = ([] for _ in range(8))
    for e in range(mesh.n_elements):
        elem = mesh.element(e, state)
        triads = elem.current_triads()
        for xi in xis:
            pts.append(bf.hermite_centerline(xi, elem)[0])
            lam = bf._triad_field(xi, triads)[0]
            d1.append(lam[:, 0])
            d2.append(lam[:, 1])
            d3.append(lam[:, 2])
            gamma, omega = bf.deformation_measures(xi, elem)
            gam.append(gamma)
            om.append(omega)
            frc.append(elem.props.C_F * gamma)
            mom.append(elem.props.C_M * omega)
    out: list = []
    _vtk_header(out, "beams")
    _vtk_points(out, pts)
    ne = mesh.n_elements
    out.append(f"CELLS {ne} {4 * ne}")
    for e in range(ne):
        out.append(f"3 {3 * e} {3 * e + 1} {3 * e + 2}")
    out.append(f"CELL_TYPES {ne}")
    out.extend(["4"] * ne)  # VTK_POLY_LINE
    out.append(f"POINT_DATA {len(pts)}")
    for name, data in (("d1", d1), ("d2", d2), ("d3", d3), ("gamma", gam),
                       ("omega", om), ("force", frc), ("moment", mom)):
        _vtk_vectors(out, name, data)
    Path(path).write_text("\n".join(out) + "\n")


def read_vtk(path) -> dict:
    """Minimal legacy-VTK reader for structural round-trip checks."""
    tokens = Path(path).read_text().split()
    i = 0

    def take(n):
        nonlocal i
        chunk = tokens[i:i + n]
        if len(chunk) < n:
            raise ValueError("truncated VTK file")
        i += n
        return chunk

    data: dict = {"point_data": {}, "cell_data": {}}
    target = None
    while i < len(tokens):
        word = tokens[i]
        if word == "DATASET":
            data["dataset"] = take(2)[1]
        elif word == "POINTS":
            _, n, _ = take(3)
            n = int(n)
            data["points"] = np.array(take(3 * n), dtype=float).reshape(n, 3)
        elif word == "CELLS":
            _, n, total = take(3)
            n, total = int(n), int(total)
            flat = np.array(take(total), dtype=int)
            cells, j = [], 0
            for _ in range(n):
                cnt = flat[j]
                cells.append(flat[j + 1:j + 1 + cnt])
                j += cnt + 1
            data["cells"] = cells
        elif word == "CELL_TYPES":
            _, n = take(2)
            data["cell_types"] = np.array(take(int(n)), dtype=int)
        elif word == "POINT_DATA":
            take(2)
            target = "point_data"
        elif word == "CELL_DATA":
            take(2)
            target = "cell_data"
        elif word == "VECTORS":
            _, name, _ = take(3)
            n = len(data["points"]) if target == "point_data" \
                else len(data["cells"])
            data[target][name] = np.array(take(3 * n),
                                          dtype=float).reshape(n, 3)
        elif word == "TENSORS":
            _, name, _ = take(3)
            n = len(data["points"]) if target == "point_data" \
                else len(data["cells"])
            data[target][name] = np.array(take(9 * n),
                                          dtype=float).reshape(n, 3, 3)
        else:
            i += 1
    return data


# ---------------------------------------------------------------------------
# runs and studies
# ---------------------------------------------------------------------------


def run_deck(deck: InputDeck, settings: Optional[sv.NewtonSettings] = None,
             quiet: bool = True):
    """Build, solve, and write the requested outputs.  Returns (system,
    ProgramResult)."""
    model, program, output = build_model(deck)
    system = sv.build_system(model)
    rows = []

    def log(k, state, info):
        force, moment = sv.reaction_summary(system, info)
        rows.append([k + 1, info.scale, info.iterations, info.trace[-1],
                     *force, *moment])
        if not quiet:
            print(f"step {k + 1}: scale {info.scale:.4f}, "
                  f"{info.iterations} iterations")

    result = sv.run_program(system, program, settings, on_step=log)
    if output.csv is not None and rows:
        Path(output.csv).parent.mkdir(parents=True, exist_ok=True)
        analysis.write_table(
            output.csv,
            ["step", "scale", "iterations", "residual", "rfx", "rfy", "rfz",
             "rmx", "rmy", "rmz"],
            rows, comment="reaction sums over constrained DOFs")
    if output.vtk is not None and result.final_state is not None:
        base = Path(output.vtk)
        base.parent.mkdir(parents=True, exist_ok=True)
        write_solid_vtk(f"{base}_solid.vtk", model.solid,
                        result.final_state.solid, model.material)
        if model.beam is not None:
            write_beam_vtk(f"{base}_beam.vtk", model.beam,
                           result.final_state.beam)
    return system, result


def refine_deck(deck: InputDeck, factor: int) -> InputDeck:
    """Uniformly refine solid divisions and beam element counts."""
    import copy

    out = copy.deepcopy(deck)
    out.solid = SolidSpec(
        dims=deck.solid.dims,
        divisions=tuple(d * factor for d in deck.solid.divisions),
        youngs_modulus=deck.solid.youngs_modulus,
        poisson_ratio=deck.solid.poisson_ratio,
    )
    for b in out.beams:
        b.n_elements *= factor
    return out


def convergence_study(deck: InputDeck, levels: int,
                      settings: Optional[sv.NewtonSettings] = None,
                      csv_path=None, reference=None):
    """Uniform-refinement study against a surface-coupling reference run.

    Solves the deck at `levels` uniform refinements (factor 2 each), then the
    finest level once more with REF-2D3D coupling as the reference, and
    reports the absolute L2 displacement error of every level.  Returns
    (h_values, errors)."""
    if levels < 1:
        raise BadSpec("need at least one level")
    runs = []
    h_vals = []
    for lvl in range(levels):
        refined = refine_deck(deck, 2 ** lvl)
        model, program, _ = build_model(refined)
        system = sv.build_system(model)
        result = sv.run_program(system, program, settings)
        if result.failure is not None:
            raise RuntimeError(
                f"level {lvl} failed: {result.failure.reason}")
        runs.append((model, result.final_state))
        h_vals.append(refined.solid.dims[0] / refined.solid.divisions[0])

    if reference is None:
        ref_deck = refine_deck(deck, 2 ** (levels - 1))
        if ref_deck.coupling is None:
            raise BadSpec("convergence study needs a coupling section")
        ref_deck.coupling = CouplingSpec(
            mode="REF-2D3D", triad=ref_deck.coupling.triad,
            eps_r=ref_deck.coupling.eps_r,
            eps_theta=ref_deck.coupling.eps_theta,
            gauss_per_segment=ref_deck.coupling.gauss_per_segment,
            circ_points=ref_deck.coupling.circ_points)
        ref_model, ref_program, _ = build_model(ref_deck)
        ref_system = sv.build_system(ref_model)
        ref_result = sv.run_program(ref_system, ref_program, settings)
        if ref_result.failure is not None:
            raise RuntimeError(
                f"reference run failed: {ref_result.failure.reason}")
        reference = (ref_model.solid, ref_result.final_state.solid)

    ref_mesh, ref_state = reference
    errors = []
    for model, state in runs:
        comp = analysis.FieldComparison(model.solid, state.solid,
                                        ref_mesh, ref_state)
        errors.append(analysis.l2_displacement_error(comp, relative=False))
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        analysis.write_convergence_table(csv_path, h_vals, errors)
    return h_vals, errors


# ---------------------------------------------------------------------------
# verification suites (in-process property checks)
# ---------------------------------------------------------------------------


def _verify_so3(rng):
    worst_rt = worst_t = worst_fd = 0.0
    for _ in range(200):
        psi = rng.uniform(-1.0, 1.0, 3) * (0.99 * np.pi / np.sqrt(3.0))
        lam = so3.exp_rodrigues(psi)
        worst_rt = max(worst_rt,
                       np.max(np.abs(so3.log_spurrier(lam) - psi)))
        T = so3.transformation_matrix(psi)
        worst_t = max(worst_t, np.max(np.abs(T @ psi - psi)),
                      np.max(np.abs(T.T @ psi - psi)))
        delta = rng.standard_normal(3)
        h = 1e-7
        fd = (so3.log_spurrier(
            so3.exp_rodrigues(h * delta) @ lam) - psi) / h
        worst_fd = max(worst_fd, np.max(np.abs(T @ delta - fd))
                       / max(1.0, np.max(np.abs(fd))))
    checks = [("exp/log round trip < 1e-10", worst_rt < 1e-10),
              ("T(psi) psi = psi and T^T psi = psi < 1e-12", worst_t < 1e-12),
              ("variation map matches finite differences < 1e-5",
               worst_fd < 1e-5)]
    return checks


def _verify_triads(rng):
    from .solid_triads import TRIAD_KINDS, constraint_kinds, solid_triad

    # 'ort' couples through the fix2+fix3 pair, so check those constructors
    kinds = sorted({c for k in TRIAD_KINDS for c in constraint_kinds(k)})
    worst = {k: 0.0 for k in kinds}
    eye = np.eye(3)
    for _ in range(100):
        F = np.eye(3) + 0.3 * rng.uniform(-1.0, 1.0, (3, 3))
        if np.linalg.det(F) < 0.2:
            continue
        R = so3.exp_rodrigues(rng.uniform(-np.pi / 2, np.pi / 2, 3))
        for kind in kinds:
            lam = solid_triad(kind, F, eye)
            lam_rot = solid_triad(kind, R @ F, eye)
            worst[kind] = max(worst[kind],
                              np.max(np.abs(lam_rot - R @ lam)))
    return [(f"{kind} objectivity < 1e-10", err < 1e-10)
            for kind, err in worst.items()]


def _verify_appendix(rng):
    from .solid_triads import triad_pol

    worst = 0.0
    for _ in range(200):
        F2 = np.eye(2) + 0.5 * rng.uniform(-1.0, 1.0, (2, 2))
        if abs(np.linalg.det(F2)) < 0.2:
            continue
        F = np.eye(3)
        F[1:, 1:] = F2
        lam = triad_pol(F, np.eye(3))
        theta_pol = np.arctan2(lam[2, 1], lam[1, 1])
        theta_ref = analysis.appendix_a_oracle(F2)
        worst = max(worst, abs(theta_pol - theta_ref))
    return [("polar in-plane angle equals the L2 minimizer < 1e-8",
             worst < 1e-8)]


VERIFY_SUITES = {"so3": _verify_so3, "triads": _verify_triads,
                 "appendix": _verify_appendix}


def run_verify(suite: str) -> int:
    names = list(VERIFY_SUITES) if suite == "all" else [suite]
    for name in names:
        if name not in VERIFY_SUITES:
            print(f"unknown suite {name!r}; available: "
                  f"{', '.join(VERIFY_SUITES)} or all", file=sys.stderr)
            return 2
    rng = np.random.default_rng(0)
    failed = 0
    for name in names:
        for label, ok in VERIFY_SUITES[name](rng):
            print(f"[{name}] {label}: {'PASS' if ok else 'FAIL'}")
            failed += 0 if ok else 1
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="artifact",
        description="Beam-to-solid coupling batch solver")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="solve an input deck")
    p_run.add_argument("deck")
    p_run.add_argument("--quiet", action="store_true")
    p_ver = sub.add_parser("verify", help="run built-in property suites")
    p_ver.add_argument("suite", help="so3 | triads | appendix | all")
    p_conv = sub.add_parser("convergence",
                            help="uniform refinement study with CSV output")
    p_conv.add_argument("deck")
    p_conv.add_argument("--levels", type=int, default=4)
    p_conv.add_argument("--csv", default=None)
    return parser


def main(argv=None) -> int:
    if os.environ.get("ARTIFACT_SEQUENTIAL_ASSEMBLY"):
        pass  # assembly is always sequential and deterministic
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            deck = parse_deck(Path(args.deck).read_text())
            _, result = run_deck(deck, quiet=args.quiet)
            if result.failure is not None:
                print(f"solver failed: {result.failure.reason} "
                      f"({result.failure.message})", file=sys.stderr)
                return 1
            return 0
        if args.command == "verify":
            return run_verify(args.suite)
        if args.command == "convergence":
            deck = parse_deck(Path(args.deck).read_text())
            h_vals, errors = convergence_study(deck, args.levels,
                                               csv_path=args.csv)
            for h, err in zip(h_vals, errors):
                print(f"h = {h:.6g}  l2_error = {err:.6e}")
            return 0
    except (BadSpec, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
