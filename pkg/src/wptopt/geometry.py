"""Loop primitives, scenario families and geometric impedance evaluation.

All loops are single-turn circular thin-wire loops. Self impedances come
from closed-form thin-loop formulas; mutual impedances from the retarded
Neumann double line integral over the loop centerlines.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import mu_0 as MU0

from .errors import (
    CoincidentLoops,
    DegenerateNormal,
    InvalidScenario,
    NonPositiveDimension,
    NonPositiveFrequency,
    OverlappingElements,
    QuadratureNotConverged,
)

COPPER_CONDUCTIVITY = 5.8e7

QUAD_START = 64
QUAD_MAX = 1024
QUAD_RTOL = 1e-9
# absolute floor for the convergence test, in units of omega*mu0*sqrt(r_a r_b);
# keeps exactly-cancelling (orthogonal) pairs from chasing round-off
QUAD_FLOOR = 1e-6


class Role(str, enum.Enum):
    ACTIVE = "active"
    PASSIVE = "passive"
    RECEIVER = "receiver"


@dataclass(frozen=True)
class LoopElement:
    """A circular thin-wire loop.

    Parameters
    ----------
    center : tuple of float
        Loop center in meters.
    normal : tuple of float
        Unit normal of the loop plane.
    radius : float
        Loop (centerline) radius in meters.
    wire_radius : float
        Radius of the wire cross-section in meters.
    role : Role
    """

    center: tuple
    normal: tuple
    radius: float
    wire_radius: float
    role: Role

    def __post_init__(self):
        if not self.radius > 0 or not self.wire_radius > 0:
            raise NonPositiveDimension("loop and wire radius must be positive")
        if not self.wire_radius < self.radius:
            raise NonPositiveDimension("wire radius must be smaller than loop radius")
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-12:
            raise DegenerateNormal("normal must have unit length")

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    @property
    def normal_array(self) -> np.ndarray:
        return np.asarray(self.normal, dtype=float)

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Two orthonormal in-plane vectors (u, v) with u x v = normal."""
        n = self.normal_array
        helper = np.eye(3)[int(np.argmin(np.abs(n)))]
        u = np.cross(n, helper)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return u, v

    def sample(self, n_points: int) -> tuple[np.ndarray, np.ndarray]:
        """Uniformly spaced centerline points and unit tangents."""
        phi = np.linspace(0.0, 2 * np.pi, n_points, endpoint=False)
        return self._ring(phi)

    def _ring(self, phi):
        u, v = self.basis()
        cos, sin = np.cos(phi)[:, None], np.sin(phi)[:, None]
        points = self.center_array + self.radius * (cos * u + sin * v)
        tangents = -sin * u + cos * v
        return points, tangents

    def quadrature(self, n_points: int) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes on the centerline and weighted line elements dl."""
        x, w = _leggauss(n_points)
        phi = np.pi * (x + 1.0)
        points, tangents = self._ring(phi)
        return points, tangents * (self.radius * np.pi * w)[:, None]


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def make_circular_loop(center, normal, radius, wire_radius, role=Role.PASSIVE) -> LoopElement:
    """Validate inputs and build a :class:`LoopElement` with a normalized normal."""
    center = np.asarray(center, dtype=float).reshape(3)
    normal = np.asarray(normal, dtype=float).reshape(3)
    norm = np.linalg.norm(normal)
    if not norm > 0 or not np.isfinite(norm):
        raise DegenerateNormal("loop normal must be a nonzero vector")
    if not radius > 0:
        raise NonPositiveDimension(f"radius must be positive, got {radius}")
    if not 0 < wire_radius < radius:
        raise NonPositiveDimension(
            f"wire radius must satisfy 0 < wire_radius < radius, got {wire_radius}"
        )
    return LoopElement(
        center=tuple(float(x) for x in center),
        normal=tuple(float(x) for x in normal / norm),
        radius=float(radius),
        wire_radius=float(wire_radius),
        role=Role(role),
    )


@dataclass(frozen=True)
class Scenario:
    """An ordered set of loops at a single operating frequency.

    The receiver is always the last loop. Node sets follow the loop order:
    ``active_indices`` holds the driven loops, ``passive_indices`` every
    other loop including the receiver.
    """

    loops: tuple
    frequency: float
    conductivity: float = COPPER_CONDUCTIVITY
    include_radiation_resistance: bool = True
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "loops", tuple(self.loops))
        if not self.frequency > 0:
            raise NonPositiveFrequency(f"frequency must be positive, got {self.frequency}")
        if not self.conductivity > 0:
            raise NonPositiveDimension("conductivity must be positive")
        roles = [lp.role for lp in self.loops]
        if roles.count(Role.RECEIVER) != 1 or roles[-1] is not Role.RECEIVER:
            raise InvalidScenario("exactly one receiver is required and it must be last")
        if Role.ACTIVE not in roles:
            raise InvalidScenario("at least one active loop is required")
        seen = set()
        for lp in self.loops:
            key = (lp.center, lp.normal, lp.radius)
            if key in seen:
                raise InvalidScenario(f"duplicate loop at {lp.center}")
            seen.add(key)

    @property
    def n_nodes(self) -> int:
        return len(self.loops)

    @property
    def omega(self) -> float:
        return 2 * np.pi * self.frequency

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency

    @property
    def active_indices(self) -> tuple:
        return tuple(i for i, lp in enumerate(self.loops) if lp.role is Role.ACTIVE)

    @property
    def passive_indices(self) -> tuple:
        return tuple(i for i, lp in enumerate(self.loops) if lp.role is not Role.ACTIVE)

    @property
    def receiver_index(self) -> int:
        return self.n_nodes - 1

    def with_roles(self, roles: Sequence[Role]) -> "Scenario":
        loops = [replace(lp, role=Role(r)) for lp, r in zip(self.loops, roles)]
        return replace(self, loops=tuple(loops))

    def all_active(self) -> "Scenario":
        """Same geometry with every non-receiver loop driven."""
        roles = [Role.ACTIVE] * (self.n_nodes - 1) + [Role.RECEIVER]
        return self.with_roles(roles)

    def without(self, indices: Iterable[int]) -> "Scenario":
        """Remove loops (open-circuit them). The receiver cannot be removed."""
        drop = set(indices)
        if self.receiver_index in drop:
            raise InvalidScenario("the receiver cannot be removed")
        loops = [lp for i, lp in enumerate(self.loops) if i not in drop]
        return replace(self, loops=tuple(loops))

    def without_passive(self) -> "Scenario":
        return self.without(i for i, lp in enumerate(self.loops) if lp.role is Role.PASSIVE)


# ---------------------------------------------------------------------------
# impedances


def self_impedance(loop: LoopElement, frequency: float,
                   conductivity: float = COPPER_CONDUCTIVITY,
                   include_rad: bool = True) -> complex:
    """Series impedance R + jwL of an isolated loop.

    ``L = mu0 r (ln(8 r / a) - 2)``, skin-effect loss
    ``R = (r / a) sqrt(w mu0 / (2 sigma))`` and, optionally, the small-loop
    radiation resistance ``20 pi^2 (2 pi r / lambda)^4``.
    """
    if not frequency > 0:
        raise NonPositiveFrequency(f"frequency must be positive, got {frequency}")
    omega = 2 * np.pi * frequency
    r, a = loop.radius, loop.wire_radius
    inductance = MU0 * r * (math.log(8 * r / a) - 2.0)
    resistance = (r / a) * math.sqrt(omega * MU0 / (2 * conductivity))
    if include_rad:
        resistance += 20 * np.pi**2 * (2 * np.pi * r * frequency / SPEED_OF_LIGHT) ** 4
    return complex(resistance, omega * inductance)


def loop_separation(a: LoopElement, b: LoopElement, n_points: int = 256) -> float:
    """Minimum centerline-to-centerline distance, sampled."""
    pa, _ = a.sample(n_points)
    pb, _ = b.sample(n_points)
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(d2.min()))


def _check_distinct(a: LoopElement, b: LoopElement):
    limit = a.wire_radius + b.wire_radius
    # center distance minus both radii bounds the separation from below
    if np.linalg.norm(a.center_array - b.center_array) - a.radius - b.radius > limit:
        return
    if loop_separation(a, b) < limit:
        raise CoincidentLoops(f"loops at {a.center} and {b.center} overlap")


def _neumann_batch(pa, dla, pb, dlb, k):
    """Sum of (dl_a . dl_b) exp(-jkR)/R for stacked pairs; shapes (P, n, 3)."""
    origin = pa.mean(axis=1, keepdims=True)
    pa = pa - origin
    pb = pb - origin
    r2 = ((pa**2).sum(-1)[:, :, None] + (pb**2).sum(-1)[:, None, :]
          - 2 * np.einsum("pid,pjd->pij", pa, pb))
    dist = np.sqrt(np.maximum(r2, 0.0))
    dots = np.einsum("pid,pjd->pij", dla, dlb)
    kr = k * dist
    re = (dots * np.cos(kr) / dist).sum(axis=(1, 2))
    im = -(dots * np.sin(kr) / dist).sum(axis=(1, 2))
    return re + 1j * im


def _mutual_pairs(loops, pairs, frequency, rtol=QUAD_RTOL):
    """Converged mutual impedances for a list of index pairs."""
    omega = 2 * np.pi * frequency
    k = omega / SPEED_OF_LIGHT
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    prefactor = 1j * omega * MU0 / (4 * np.pi)
    scale = np.array([omega * MU0 * math.sqrt(loops[i].radius * loops[j].radius)
                      for i, j in pairs])

    def evaluate(idx, n):
        out = np.empty(len(idx), dtype=complex)
        quad = {}
        for i in set(pairs[idx].ravel()):
            quad[i] = loops[i].quadrature(n)
        chunk = max(1, int(2_000_000 // (n * n)))
        for start in range(0, len(idx), chunk):
            sel = pairs[idx[start:start + chunk]]
            pa = np.stack([quad[i][0] for i in sel[:, 0]])
            da = np.stack([quad[i][1] for i in sel[:, 0]])
            pb = np.stack([quad[j][0] for j in sel[:, 1]])
            db = np.stack([quad[j][1] for j in sel[:, 1]])
            out[start:start + chunk] = prefactor * _neumann_batch(pa, da, pb, db, k)
        return out

    result = np.empty(len(pairs), dtype=complex)
    todo = np.arange(len(pairs))
    n = QUAD_START
    previous = evaluate(todo, n)
    while len(todo):
        if 2 * n > QUAD_MAX:
            bad = pairs[todo[0]]
            raise QuadratureNotConverged(
                f"mutual impedance of loops {tuple(bad)} did not converge with {n} points"
            )
        n *= 2
        current = evaluate(todo, n)
        change = np.abs(current - previous)
        ok = change <= rtol * np.maximum(np.abs(current), QUAD_FLOOR * scale[todo])
        result[todo[ok]] = current[ok]
        todo, previous = todo[~ok], current[~ok]
    return result


def mutual_impedance(a: LoopElement, b: LoopElement, frequency: float) -> complex:
    """Retarded mutual impedance jwM between two distinct loops.

    Evaluates ``(j w mu0 / 4 pi) \\oint\\oint (dl_a . dl_b) exp(-jkR) / R`` with
    Gauss-Legendre quadrature, doubling the node count from 64 until the
    relative change drops below 1e-9 (at most 1024 nodes per loop).
    """
    if not frequency > 0:
        raise NonPositiveFrequency(f"frequency must be positive, got {frequency}")
    _check_distinct(a, b)
    return complex(_mutual_pairs([a, b], [(0, 1)], frequency)[0])


def mutual_impedance_matrix(loops: Sequence[LoopElement], frequency: float) -> np.ndarray:
    """Hollow symmetric matrix of all pairwise mutual impedances."""
    loops = list(loops)
    n = len(loops)
    iu, ju = np.triu_indices(n, k=1)
    for i, j in zip(iu, ju):
        _check_distinct(loops[i], loops[j])
    values = _mutual_pairs(loops, np.column_stack([iu, ju]), frequency)
    out = np.zeros((n, n), dtype=complex)
    out[iu, ju] = values
    out[ju, iu] = values
    return out


# ---------------------------------------------------------------------------
# scenario families


def _require_positive(**kwargs):
    for name, value in kwargs.items():
        if not value > 0:
            raise NonPositiveDimension(f"{name} must be positive, got {value}")


def build_coaxial_stack(n_passive: int, tx_receiver_separation: float, element_spacing: float,
                        loop_radius: float, wire_radius: float, frequency: float,
                        receiver_angle: float = 0.0,
                        conductivity: float = COPPER_CONDUCTIVITY,
                        include_radiation_resistance: bool = True) -> Scenario:
    """Transmitter at the origin with passive loops stacked behind it.

    Passive loop ``k`` sits at ``z = -k * element_spacing``. The receiver is
    placed at distance ``tx_receiver_separation`` from the transmitter, at
    polar angle ``receiver_angle`` from the common axis in the x-z plane,
    with its normal kept parallel to +z.
    """
    _require_positive(tx_receiver_separation=tx_receiver_separation,
                      element_spacing=element_spacing, loop_radius=loop_radius,
                      wire_radius=wire_radius)
    if n_passive < 0:
        raise NonPositiveDimension("n_passive must be nonnegative")
    z = (0.0, 0.0, 1.0)
    loops = [make_circular_loop((0, 0, 0), z, loop_radius, wire_radius, Role.ACTIVE)]
    for k in range(1, n_passive + 1):
        loops.append(make_circular_loop((0, 0, -k * element_spacing), z, loop_radius,
                                        wire_radius, Role.PASSIVE))
    rx = tx_receiver_separation * np.array([math.sin(receiver_angle), 0.0,
                                            math.cos(receiver_angle)])
    loops.append(make_circular_loop(rx, z, loop_radius, wire_radius, Role.RECEIVER))
    return Scenario(tuple(loops), frequency, conductivity, include_radiation_resistance,
                    name=f"coaxial_stack(n_passive={n_passive})")


def build_arc_relay_scenario(arc_radius: float, arc_angle: float, n_relays: int,
                             loop_radius: float, wire_radius: float, frequency: float,
                             conductivity: float = COPPER_CONDUCTIVITY,
                             include_radiation_resistance: bool = True) -> Scenario:
    """Transmitter and receiver at the ends of a circular arc, relays in between.

    The arc lies in the x-y plane, centered at the origin, starting on the
    +x axis. Every loop normal is tangent to the arc.
    """
    _require_positive(arc_radius=arc_radius, arc_angle=arc_angle,
                      loop_radius=loop_radius, wire_radius=wire_radius)
    if arc_angle > 2 * np.pi:
        raise NonPositiveDimension("arc angle must not exceed 2 pi")
    if n_relays < 0:
        raise NonPositiveDimension("n_relays must be nonnegative")
    loops = []
    count = n_relays + 2
    for k in range(count):
        theta = arc_angle * k / (count - 1)
        center = arc_radius * np.array([math.cos(theta), math.sin(theta), 0.0])
        normal = (-math.sin(theta), math.cos(theta), 0.0)
        role = Role.ACTIVE if k == 0 else Role.RECEIVER if k == count - 1 else Role.PASSIVE
        loops.append(make_circular_loop(center, normal, loop_radius, wire_radius, role))
    return Scenario(tuple(loops), frequency, conductivity, include_radiation_resistance,
                    name=f"arc_relay(n_relays={n_relays})")


def build_metasurface_scenario(nx: int, ny: int, pitch: float, ms_loop_diameter: float,
                               ms_wire: float, tx_rx_distance: float, tx_diameter: float,
                               tx_wire: float, frequency: float,
                               conductivity: float = COPPER_CONDUCTIVITY,
                               include_radiation_resistance: bool = True) -> Scenario:
    """Coaxial transmitter/receiver with a planar loop array on the mid-plane.

    ``ms_wire`` and ``tx_wire`` are wire radii; diameters refer to the loop
    centerline. The array is centered on the axis at ``z = d / 2``.
    """
    if nx < 1 or ny < 1:
        raise NonPositiveDimension("grid must have at least one element per side")
    _require_positive(pitch=pitch, ms_loop_diameter=ms_loop_diameter, ms_wire=ms_wire,
                      tx_rx_distance=tx_rx_distance, tx_diameter=tx_diameter,
                      tx_wire=tx_wire)
    if pitch < ms_loop_diameter:
        raise OverlappingElements(
            f"pitch {pitch:g} m is smaller than the element diameter {ms_loop_diameter:g} m"
        )
    z = (0.0, 0.0, 1.0)
    loops = [make_circular_loop((0, 0, 0), z, tx_diameter / 2, tx_wire, Role.ACTIVE)]
    xs = (np.arange(nx) - (nx - 1) / 2) * pitch
    ys = (np.arange(ny) - (ny - 1) / 2) * pitch
    for y in ys:
        for x in xs:
            loops.append(make_circular_loop((x, y, tx_rx_distance / 2), z,
                                            ms_loop_diameter / 2, ms_wire, Role.PASSIVE))
    loops.append(make_circular_loop((0, 0, tx_rx_distance), z, tx_diameter / 2, tx_wire,
                                    Role.RECEIVER))
    return Scenario(tuple(loops), frequency, conductivity, include_radiation_resistance,
                    name=f"metasurface({nx}x{ny})")


BUILDERS = {
    "coaxial_stack": build_coaxial_stack,
    "arc_relay": build_arc_relay_scenario,
    "metasurface": build_metasurface_scenario,
}

# ---------------------------------------------------------------------------
# reference geometries
#
# Loop sizes follow the published setups. Parameters the setups leave open
# (coaxial separation, arc wire radius) were calibrated once so the bare
# SISO link lands on its reported ~13% baseline.

HF_FREQUENCY = 13.56e6
MS_FREQUENCY = 6.78e6
COAX_WIRE_RADIUS = 2.5e-3
ARC_WIRE_RADIUS = 0.018


def reference_coaxial_stack(n_passive: int, receiver_angle: float = 0.0) -> Scenario:
    lam = SPEED_OF_LIGHT / HF_FREQUENCY
    return build_coaxial_stack(n_passive, lam / 25, lam / 1000, lam / 200, COAX_WIRE_RADIUS,
                               HF_FREQUENCY, receiver_angle=receiver_angle)


def reference_arc(n_relays: int, arc_angle: float = math.pi / 2) -> Scenario:
    """Quadrant arc of radius lambda/20 with loops of radius lambda/200."""
    lam = SPEED_OF_LIGHT / HF_FREQUENCY
    return build_arc_relay_scenario(lam / 20, arc_angle, n_relays, lam / 200, ARC_WIRE_RADIUS,
                                    HF_FREQUENCY)


def reference_metasurface(n: int, distance: float) -> Scenario:
    """``n x n`` surface midway between coaxial loops ``distance`` wavelengths apart."""
    lam = SPEED_OF_LIGHT / MS_FREQUENCY
    return build_metasurface_scenario(n, n, lam / 200, lam / 500, lam / 2e4, distance * lam,
                                      lam / 100, lam / 4000, MS_FREQUENCY)

# ---------------------------------------------------------------------------
# serialization

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_LAMBDA_EXPR = re.compile(
    rf"^\s*(?:(?P<mul>{_NUMBER})\s*\*?\s*)?lambda\s*(?:/\s*(?P<div>{_NUMBER}))?\s*$"
)


def _length(value, wavelength):
    """Accept plain numbers or strings like ``"lambda/200"`` / ``"0.05*lambda"``."""
    if isinstance(value, str):
        m = _LAMBDA_EXPR.match(value)
        if not m:
            raise InvalidScenario(f"cannot parse length {value!r}")
        mul = float(m.group("mul")) if m.group("mul") else 1.0
        div = float(m.group("div")) if m.group("div") else 1.0
        return mul * wavelength / div
    return float(value)


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "frequency_hz": s.frequency,
        "conductivity": s.conductivity,
        "include_radiation_resistance": s.include_radiation_resistance,
        "loops": [
            {"center": list(lp.center), "normal": list(lp.normal), "radius": lp.radius,
             "wire_radius": lp.wire_radius, "role": lp.role.value}
            for lp in s.loops
        ],
    }


_INT_PARAMS = {"n_passive", "n_relays", "nx", "ny"}
_PLAIN_PARAMS = {"arc_angle", "receiver_angle", "conductivity", "include_radiation_resistance"}


def scenario_from_dict(data: dict) -> Scenario:
    """Build a scenario from an explicit loop list or a ``type`` shorthand."""
    data = dict(data)
    if "type" in data:
        kind = data.pop("type")
        if kind not in BUILDERS:
            raise InvalidScenario(f"unknown scenario type {kind!r}")
        frequency = float(data.pop("frequency_hz", data.pop("frequency", 0.0)))
        if not frequency > 0:
            raise NonPositiveFrequency("shorthand scenarios need a positive frequency_hz")
        wavelength = SPEED_OF_LIGHT / frequency
        kwargs = {}
        for key, value in data.items():
            if key in _INT_PARAMS:
                kwargs[key] = int(value)
            elif key in _PLAIN_PARAMS:
                kwargs[key] = value
            else:
                kwargs[key] = _length(value, wavelength)
        try:
            return BUILDERS[kind](frequency=frequency, **kwargs)
        except TypeError as exc:
            raise InvalidScenario(f"bad parameters for {kind}: {exc}") from None
    try:
        loops = tuple(
            make_circular_loop(lp["center"], lp["normal"], lp["radius"], lp["wire_radius"],
                               Role(lp["role"]))
            for lp in data["loops"]
        )
        return Scenario(loops, float(data["frequency_hz"]),
                        float(data.get("conductivity", COPPER_CONDUCTIVITY)),
                        bool(data.get("include_radiation_resistance", True)))
    except KeyError as exc:
        raise InvalidScenario(f"missing field {exc}") from None


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2))
