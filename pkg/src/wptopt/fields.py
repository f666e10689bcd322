"""Magnetoquasistatic H-field maps from loop currents.

Each loop is replaced by a regular polygon of straight segments whose
Biot-Savart field is known in closed form. Retardation is ignored here
even though the coupling model keeps it; the loops are electrically small
and the maps are meant for visualization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularPoint
from .geometry import LoopElement, Scenario

N_SEGMENTS = 512
SINGULAR_WIRE_RADII = 2.0


@dataclass(frozen=True)
class PlaneSpec:
    """Rectangular sampling grid centered on ``origin``.

    Cell ``(a, b)`` sits at ``origin + (a - (nu-1)/2) * spacing * u_axis
    + (b - (nv-1)/2) * spacing * v_axis``.
    """

    origin: tuple
    u_axis: tuple
    v_axis: tuple
    nu: int
    nv: int
    spacing: float

    def __post_init__(self):
        if self.nu < 2 or self.nv < 2:
            raise ValueError("a field grid needs at least 2 cells per axis")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        u, v = np.asarray(self.u_axis, float), np.asarray(self.v_axis, float)
        if np.linalg.norm(u) == 0 or np.linalg.norm(v) == 0:
            raise ValueError("plane axes must be nonzero")
        if abs(u @ v) > 1e-12 * np.linalg.norm(u) * np.linalg.norm(v):
            raise ValueError("plane axes must be orthogonal")

    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        u = (np.arange(self.nu) - (self.nu - 1) / 2) * self.spacing
        v = (np.arange(self.nv) - (self.nv - 1) / 2) * self.spacing
        return u, v

    def points(self) -> np.ndarray:
        """Cell centers, shape ``(nu, nv, 3)``."""
        u, v = self.offsets()
        uh = np.asarray(self.u_axis, float)
        vh = np.asarray(self.v_axis, float)
        uh, vh = uh / np.linalg.norm(uh), vh / np.linalg.norm(vh)
        return (np.asarray(self.origin, float)
                + u[:, None, None] * uh + v[None, :, None] * vh)


@dataclass
class FieldGrid:
    plane: PlaneSpec
    values: np.ndarray  # (nu, nv, 3) complex, A/m
    singular: np.ndarray  # (nu, nv) bool
    quantity: str = "H"

    def magnitude(self) -> np.ndarray:
        """Peak phasor magnitude ``||H||``; singular cells are ``nan``."""
        mag = np.sqrt(np.sum(np.abs(self.values) ** 2, axis=-1))
        return np.where(self.singular, np.nan, mag)


def _polygon(loop: LoopElement, n_segments: int) -> np.ndarray:
    phi = 2 * np.pi * np.arange(n_segments + 1) / n_segments
    u, v = loop.basis()
    # vertices pushed out so the polygon encloses the circle's area; this
    # removes the leading O(1/n^2) error of the inscribed polygon
    t = 2 * np.pi / n_segments
    r = loop.radius * np.sqrt(t / np.sin(t))
    return (loop.center_array + r
            * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v))


def _unit_current_field(points: np.ndarray, loop: LoopElement, n_segments: int) -> np.ndarray:
    """H per ampere at ``points`` (shape ``(K, 3)``), summed over polygon segments."""
    verts = _polygon(loop, n_segments)
    out = np.zeros_like(points)
    for chunk in range(0, len(points), 2048):
        P = points[chunk:chunk + 2048, None, :]
        r1 = P - verts[None, :-1]
        r2 = P - verts[None, 1:]
        n1 = np.linalg.norm(r1, axis=-1)
        n2 = np.linalg.norm(r2, axis=-1)
        denom = n1 * n2 * (n1 * n2 + np.einsum("kse,kse->ks", r1, r2))
        coef = (n1 + n2) / denom
        out[chunk:chunk + 2048] = np.einsum("ks,kse->ke", coef, np.cross(r1, r2))
    return out / (4 * np.pi)


def distance_to_loop(points, loop: LoopElement) -> np.ndarray:
    """Distance from each point to the loop centerline circle."""
    d = np.atleast_2d(points) - loop.center_array
    axial = d @ loop.normal_array
    radial = np.linalg.norm(d - axial[:, None] * loop.normal_array, axis=1)
    return np.hypot(axial, radial - loop.radius)


def _singular_mask(points: np.ndarray, s: Scenario) -> np.ndarray:
    mask = np.zeros(len(points), dtype=bool)
    for lp in s.loops:
        mask |= distance_to_loop(points, lp) < SINGULAR_WIRE_RADII * lp.wire_radius
    return mask


def _currents(s: Scenario, i) -> np.ndarray:
    i = np.asarray(getattr(i, "currents", i), dtype=complex)
    if i.shape != (s.n_nodes,):
        raise DimensionMismatch(f"{i.size} currents for a {s.n_nodes}-loop scenario")
    return i


def _field(points: np.ndarray, s: Scenario, i: np.ndarray, n_segments: int) -> np.ndarray:
    H = np.zeros(points.shape, dtype=complex)
    for lp, cur in zip(s.loops, i):
        if cur != 0:
            H += cur * _unit_current_field(points, lp, n_segments)
    return H


def hfield_at(point, s: Scenario, i, n_segments: int = N_SEGMENTS) -> np.ndarray:
    """Phasor H (A/m) at one point; raises :class:`SingularPoint` inside a wire."""
    p = np.asarray(point, dtype=float).reshape(1, 3)
    i = _currents(s, i)
    if _singular_mask(p, s)[0]:
        raise SingularPoint(f"point {p[0].tolist()} lies within a wire")
    return _field(p, s, i, n_segments)[0]


def fieldmap_grid(s: Scenario, op, plane: PlaneSpec, n_segments: int = N_SEGMENTS) -> FieldGrid:
    """Sample H on ``plane``; ``op`` is an operating point or a current vector."""
    i = _currents(s, op)
    pts = plane.points().reshape(-1, 3)
    singular = _singular_mask(pts, s)
    H = np.zeros(pts.shape, dtype=complex)
    ok = ~singular
    H[ok] = _field(pts[ok], s, i, n_segments)
    shape = (plane.nu, plane.nv)
    return FieldGrid(plane, H.reshape(*shape, 3), singular.reshape(shape))


def write_field_csv(grid: FieldGrid, path, timestamp: str | None = None) -> None:
    """One row per cell, v-major; singular cells carry ``nan`` values."""
    u, v = grid.plane.offsets()
    mag = grid.magnitude()
    with open(path, "w", newline="") as fh:
        if timestamp:
            fh.write(f"# generated {timestamp}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v", "hx_re", "hx_im", "hy_re", "hy_im", "hz_re", "hz_im", "mag"])
        for b in range(grid.plane.nv):
            for a in range(grid.plane.nu):
                h = grid.values[a, b]
                if grid.singular[a, b]:
                    vals = [float("nan")] * 7
                else:
                    vals = [h[0].real, h[0].imag, h[1].real, h[1].imag,
                            h[2].real, h[2].imag, mag[a, b]]
                w.writerow([fmt(u[a]), fmt(v[b])] + [fmt(x) for x in vals])


def fmt(x: float) -> str:
    """17 significant digits in scientific notation, locale independent."""
    return f"{float(x):.16e}"
