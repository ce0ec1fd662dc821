"""Triangular-lattice photonic-crystal slabs and L3 cavity supercells.

Lengths are in nanometres at the API boundary.  A supercell of ``Nx`` by
``Ny`` periods is the rectangle ``Nx*a`` by ``Ny*sqrt(3)/2*a`` centred on
the origin, with the cavity axis along x through the origin.

Hole indexing
-------------
Holes are numbered from the cavity centre outward: sorted by
``(|row|, row < 0, |x_nominal|, x_nominal < 0)`` where ``row`` is the
integer row number (row 0 is the cavity axis) and ``x_nominal`` the
unperturbed x position.  ``L3Design.radius_deltas_nm`` keys refer to this
numbering of the *cavity* lattice (after the three holes are removed).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import j1

from . import kernels

SCHEMA_VERSION = 1
ROW_PITCH = np.sqrt(3.0) / 2.0


class GeometryError(ValueError):
    pass


class OverlapError(GeometryError):
    pass


class BoundsError(GeometryError):
    pass


class SchemaError(GeometryError):
    pass


@dataclass(frozen=True)
class SlabSpec:
    thickness_nm: float = 310.0
    core_index: float = 3.17
    cladding_index_above: float = 1.0
    cladding_index_below: float = 1.0

    def __post_init__(self):
        if not self.thickness_nm > 0:
            raise GeometryError(f"slab thickness must be positive, got {self.thickness_nm}")
        lo = min(self.cladding_index_above, self.cladding_index_below)
        hi = max(self.cladding_index_above, self.cladding_index_below)
        if lo < 1.0 or not self.core_index > hi:
            raise GeometryError(
                "need core_index > max(cladding indices) >= 1, got "
                f"core={self.core_index}, claddings=({self.cladding_index_below}, "
                f"{self.cladding_index_above})")

    @property
    def eps_core(self):
        return self.core_index ** 2

    @property
    def eps_claddings(self):
        """(below, above) permittivities."""
        return self.cladding_index_below ** 2, self.cladding_index_above ** 2


@dataclass(frozen=True, eq=False)
class Lattice:
    """A rectangular supercell of a triangular hole lattice.

    ``centers_nm`` is an ``(N, 2)`` array and ``radii_nm`` an ``(N,)`` array;
    ``rows`` and ``x_nominal_nm`` record where each hole sits in the
    unperturbed lattice and define the hole numbering.
    """

    period_a_nm: float
    base_radius_nm: float
    supercell: Tuple[int, int]
    centers_nm: np.ndarray
    radii_nm: np.ndarray
    slab: SlabSpec = field(default_factory=SlabSpec)
    rows: Optional[np.ndarray] = None
    x_nominal_nm: Optional[np.ndarray] = None
    hole_index: float = 1.0

    @property
    def size_nm(self):
        nx, ny = self.supercell
        return nx * self.period_a_nm, ny * ROW_PITCH * self.period_a_nm

    @property
    def cell_area_nm2(self):
        lx, ly = self.size_nm
        return lx * ly

    @property
    def n_holes(self):
        return self.radii_nm.size

    @property
    def holes(self):
        return [{"center_xy_nm": (float(c[0]), float(c[1])), "radius_nm": float(r)}
                for c, r in zip(self.centers_nm, self.radii_nm)]

    def reciprocal_basis(self):
        """Reciprocal vectors (rows) of the supercell, in 1/nm."""
        lx, ly = self.size_nm
        return np.array([[2 * np.pi / lx, 0.0], [0.0, 2 * np.pi / ly]])

    def scaled(self, s):
        """Copy with every length multiplied by ``s``."""
        return dataclasses.replace(
            self,
            period_a_nm=self.period_a_nm * s,
            base_radius_nm=self.base_radius_nm * s,
            centers_nm=self.centers_nm * s,
            radii_nm=self.radii_nm * s,
            x_nominal_nm=None if self.x_nominal_nm is None else self.x_nominal_nm * s,
            slab=dataclasses.replace(self.slab, thickness_nm=self.slab.thickness_nm * s),
        )

    def with_radii(self, radii_nm):
        return dataclasses.replace(self, radii_nm=np.broadcast_to(
            np.asarray(radii_nm, dtype=float), self.radii_nm.shape).copy())

    def fingerprint(self):
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(self.centers_nm, dtype=float).tobytes())
        h.update(np.ascontiguousarray(self.radii_nm, dtype=float).tobytes())
        h.update(repr((self.period_a_nm, self.supercell, self.slab, self.hole_index)).encode())
        return h.hexdigest()

    def validate(self, allow_zero_radius=True):
        a = self.period_a_nm
        r = self.radii_nm
        bad = (r < 0) | (r >= a / 2) | ((r == 0) & (not allow_zero_radius))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise GeometryError(f"hole {i}: radius {r[i]:.3f} nm outside (0, a/2)")
        lx, ly = self.size_nm
        tol = 1e-9 * a
        c = self.centers_nm
        out = (np.abs(c[:, 0]) > lx / 2 + tol) | (np.abs(c[:, 1]) > ly / 2 + tol)
        if np.any(out):
            i = int(np.flatnonzero(out)[0])
            raise BoundsError(f"hole {i} at {tuple(c[i])} nm lies outside the supercell")
        i, j = _first_overlap(c, r, (lx, ly))
        if i >= 0:
            raise OverlapError(f"holes {i} and {j} overlap")
        return self


def _first_overlap(centers, radii, size):
    """Brute-force minimum-image overlap scan; (-1, -1) if none."""
    lx, ly = size
    n = len(radii)
    for i in range(n - 1):
        d = centers[i + 1:] - centers[i]
        d[:, 0] -= lx * np.round(d[:, 0] / lx)
        d[:, 1] -= ly * np.round(d[:, 1] / ly)
        dist = np.hypot(d[:, 0], d[:, 1])
        hit = dist <= radii[i + 1:] + radii[i]
        # zero-radius holes never collide unless they coincide
        hit &= (radii[i + 1:] + radii[i] > 0) | (dist < 1e-9)
        if np.any(hit):
            return i, i + 1 + int(np.flatnonzero(hit)[0])
    return -1, -1


def _order_holes(rows, xnom):
    key = np.lexsort((xnom < 0, np.abs(np.round(xnom, 9)), rows < 0, np.abs(rows)))
    return key


def triangular_lattice(period_a_nm=425.0, base_radius_nm=115.0, supercell=(16, 10),
                       slab: Optional[SlabSpec] = None, hole_index=1.0) -> Lattice:
    """Unperturbed triangular lattice filling a rectangular supercell."""
    nx, ny = (int(v) for v in supercell)
    if nx < 1 or ny < 2 or ny % 2:
        raise GeometryError(f"supercell must be (Nx>=1, even Ny>=2), got {supercell}")
    a = float(period_a_nm)
    rows, xs = [], []
    for j in range(-(ny // 2), ny // 2):
        off = 0.5 if j % 2 else 0.0
        for i in range(-(nx // 2), nx - nx // 2):
            rows.append(j)
            xs.append((i + off) * a)
    rows = np.array(rows)
    xs = np.array(xs)
    order = _order_holes(rows, xs)
    rows, xs = rows[order], xs[order]
    centers = np.column_stack([xs, rows * ROW_PITCH * a])
    lat = Lattice(period_a_nm=a, base_radius_nm=float(base_radius_nm), supercell=(nx, ny),
                  centers_nm=centers, radii_nm=np.full(rows.size, float(base_radius_nm)),
                  slab=slab or SlabSpec(), rows=rows, x_nominal_nm=xs, hole_index=hole_index)
    return lat.validate()


@dataclass(frozen=True)
class L3Design:
    """Hole displacements defining an L3 cavity.

    ``row_shifts`` scale the distance of rows 1..3 from the cavity axis
    (mirrored above and below).  ``end_shifts`` scale the distance of the
    first three on-axis holes at each end from the cavity centre.
    ``farfield_shift`` additionally pushes the nearest end hole outward by
    that many periods.
    """

    row_shifts: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    end_shifts: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    radius_deltas_nm: Dict[int, float] = field(default_factory=dict)
    farfield_shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "row_shifts", tuple(float(v) for v in self.row_shifts))
        object.__setattr__(self, "end_shifts", tuple(float(v) for v in self.end_shifts))
        object.__setattr__(self, "radius_deltas_nm",
                           {int(k): float(v) for k, v in dict(self.radius_deltas_nm).items()})
        if len(self.row_shifts) != 3 or len(self.end_shifts) != 3:
            raise GeometryError("row_shifts and end_shifts need exactly three factors")
        if min(self.row_shifts + self.end_shifts) <= 0:
            raise GeometryError("shift factors must be positive")
        if self.farfield_shift < 0:
            raise GeometryError("farfield_shift must be non-negative")

    @property
    def vector(self):
        return np.array(self.row_shifts + self.end_shifts)

    @classmethod
    def from_vector(cls, v, template: Optional["L3Design"] = None):
        template = template or cls()
        v = [float(x) for x in v]
        return dataclasses.replace(template, row_shifts=tuple(v[:3]), end_shifts=tuple(v[3:6]))

    @classmethod
    def high_q(cls):
        """Reference high-Q shifts: rows (1, 0.94, 0.97), end holes (1.13, 1.09, 1.04)."""
        return cls(row_shifts=(1.0, 0.94, 0.97), end_shifts=(1.13, 1.09, 1.04))

    def to_dict(self):
        return {
            "row_shifts": list(self.row_shifts),
            "end_shifts": list(self.end_shifts),
            "radius_deltas_nm": {str(k): v for k, v in sorted(self.radius_deltas_nm.items())},
            "farfield_shift": self.farfield_shift,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(row_shifts=tuple(d.get("row_shifts", (1, 1, 1))),
                   end_shifts=tuple(d.get("end_shifts", (1, 1, 1))),
                   radius_deltas_nm={int(k): v for k, v in d.get("radius_deltas_nm", {}).items()},
                   farfield_shift=float(d.get("farfield_shift", 0.0)))


MIN_SUPERCELL = (12, 8)


def build_l3_supercell(base: Lattice, design: L3Design) -> Lattice:
    """Remove three collinear holes at the origin and apply ``design``.

    Raises
    ------
    OverlapError
        if displaced or enlarged holes touch.
    BoundsError
        if a hole leaves the supercell.
    """
    nx, ny = base.supercell
    if nx < MIN_SUPERCELL[0] or ny < MIN_SUPERCELL[1]:
        raise BoundsError(f"supercell {base.supercell} too small for an L3 design; "
                          f"need at least {MIN_SUPERCELL}")
    if base.rows is None or base.x_nominal_nm is None:
        raise GeometryError("base lattice lacks nominal row/position labels")
    a = base.period_a_nm
    rows = base.rows
    xn = base.x_nominal_nm
    col = np.round(xn / a, 6)
    keep = ~((rows == 0) & (np.abs(col) <= 1))
    rows, xn = rows[keep], xn[keep]
    col = col[keep]
    centers = base.centers_nm[keep].copy()
    radii = base.radii_nm[keep].copy()

    for k, s in enumerate(design.row_shifts, start=1):
        sel = np.abs(rows) == k
        centers[sel, 1] = s * rows[sel] * ROW_PITCH * a
    for k, s in enumerate(design.end_shifts, start=2):
        sel = (rows == 0) & (np.abs(col) == k)
        centers[sel, 0] = s * xn[sel]
    if design.farfield_shift:
        sel = (rows == 0) & (np.abs(col) == 2)
        centers[sel, 0] += np.sign(xn[sel]) * design.farfield_shift * a

    order = _order_holes(rows, xn)
    rows, xn, centers, radii = rows[order], xn[order], centers[order], radii[order]
    for idx, delta in design.radius_deltas_nm.items():
        if not 0 <= idx < radii.size:
            raise GeometryError(f"radius delta for unknown hole index {idx}")
        radii[idx] += delta

    lat = dataclasses.replace(base, centers_nm=centers, radii_nm=radii, rows=rows,
                              x_nominal_nm=xn)
    return lat.validate(allow_zero_radius=True)


def reciprocal_points(lattice: Lattice, g_cutoff):
    """Integer indices and vectors (1/nm) of the supercell reciprocal lattice with
    ``|G| <= g_cutoff * 2*pi/a``, ordered by (|G|, angle) for reproducibility."""
    b = lattice.reciprocal_basis()
    gmax = g_cutoff * 2 * np.pi / lattice.period_a_nm
    # the cutoff often sits exactly on a lattice shell; give the bounds the same
    # relative slack as the sphere test so rescaled lattices keep identical bases
    n1 = int(np.floor(gmax / b[0, 0] * (1 + 1e-12)))
    n2 = int(np.floor(gmax / b[1, 1] * (1 + 1e-12)))
    i1, i2 = np.meshgrid(np.arange(-n1, n1 + 1), np.arange(-n2, n2 + 1), indexing="ij")
    i1 = i1.ravel()
    i2 = i2.ravel()
    gv = np.column_stack([i1 * b[0, 0], i2 * b[1, 1]])
    gn = np.hypot(gv[:, 0], gv[:, 1])
    sel = gn <= gmax * (1 + 1e-12)
    i1, i2, gv, gn = i1[sel], i2[sel], gv[sel], gn[sel]
    order = np.lexsort((i2, i1, np.round(gn / gmax, 12)))
    return np.column_stack([i1[order], i2[order]]), gv[order]


def _eps_ft_unique(lattice: Lattice, dg):
    """Fourier coefficients eps(dG) for an array of difference vectors (1/nm)."""
    eps_b = lattice.slab.eps_core
    eps_h = lattice.hole_index ** 2
    area = lattice.cell_area_nm2
    dg = np.atleast_2d(dg)
    gn = np.hypot(dg[:, 0], dg[:, 1])
    radii_u, rid = np.unique(lattice.radii_nm, return_inverse=True)
    zero = gn < 1e-14
    safe = np.where(zero, 1.0, gn)
    form = np.empty((gn.size, radii_u.size))
    for j, r in enumerate(radii_u):
        form[:, j] = np.where(zero, np.pi * r * r, 2 * np.pi * r * j1(safe * r) / safe)
    form *= (eps_h - eps_b) / area
    out = kernels.phase_sum(np.ascontiguousarray(dg[:, 0]), np.ascontiguousarray(dg[:, 1]),
                            np.ascontiguousarray(lattice.centers_nm[:, 0]),
                            np.ascontiguousarray(lattice.centers_nm[:, 1]),
                            form, rid.astype(np.int64).ravel())
    out[zero] += eps_b
    return out


def fourier_dielectric(lattice: Lattice, g_vectors) -> np.ndarray:
    """Hermitian matrix ``eps_hat(G_i - G_j)`` of the in-plane permittivity.

    ``g_vectors`` is an ``(M, 2)`` array of supercell reciprocal vectors in
    1/nm.  Each hole contributes its disk transform
    ``2 pi r J1(|G| r) / |G|`` with the phase of its centre.
    """
    g = np.asarray(g_vectors, dtype=float).reshape(-1, 2)
    b = lattice.reciprocal_basis()
    idx = np.rint(g / np.diag(b)).astype(np.int64)
    return _eps_matrix_from_indices(lattice, idx)


def _eps_matrix_from_indices(lattice, idx):
    b = np.diag(lattice.reciprocal_basis())
    d1 = idx[:, 0][:, None] - idx[:, 0][None, :]
    d2 = idx[:, 1][:, None] - idx[:, 1][None, :]
    # evaluate each distinct difference once, and derive -dG by conjugation
    span2 = 2 * int(np.abs(d2).max()) + 1
    code = d1 * span2 + d2
    uniq, inv = np.unique(code.ravel(), return_inverse=True)
    half = uniq >= 0
    pos = uniq[half]
    u1 = np.floor_divide(pos + span2 // 2, span2)
    u2 = pos - u1 * span2
    vals_pos = _eps_ft_unique(lattice, np.column_stack([u1 * b[0], u2 * b[1]]))
    lookup = dict(zip(pos.tolist(), range(pos.size)))
    vals = np.empty(uniq.size, dtype=np.complex128)
    vals[half] = vals_pos
    neg = np.flatnonzero(~half)
    vals[neg] = np.conj(vals_pos[[lookup[-c] for c in uniq[neg].tolist()]])
    return vals[inv].reshape(code.shape)


def eps_on_grid(lattice: Lattice, nx, ny):
    """Real-space permittivity sampled at cell-centred points of an nx x ny grid
    spanning the supercell (x fastest along axis 0)."""
    lx, ly = lattice.size_nm
    x = (np.arange(nx) + 0.5) / nx * lx - lx / 2
    y = (np.arange(ny) + 0.5) / ny * ly - ly / 2
    X, Y = np.meshgrid(x, y, indexing="ij")
    eps = np.full(X.shape, lattice.slab.eps_core)
    for (cx, cy), r in zip(lattice.centers_nm, lattice.radii_nm):
        dx = X - cx
        dy = Y - cy
        dx -= lx * np.round(dx / lx)
        dy -= ly * np.round(dy / ly)
        eps[dx * dx + dy * dy < r * r] = lattice.hole_index ** 2
    return x, y, eps


# --------------------------------------------------------------------------
# JSON geometry files
# --------------------------------------------------------------------------

def geometry_to_dict(base: Lattice, design: Optional[L3Design] = None):
    s = base.slab
    return {
        "schema": SCHEMA_VERSION,
        "period_a_nm": base.period_a_nm,
        "base_radius_nm": base.base_radius_nm,
        "supercell": list(base.supercell),
        "hole_index": base.hole_index,
        "slab": {
            "thickness_nm": s.thickness_nm,
            "core_index": s.core_index,
            "cladding_index_above": s.cladding_index_above,
            "cladding_index_below": s.cladding_index_below,
        },
        "design": (design or L3Design()).to_dict(),
    }


def geometry_from_dict(d) -> Tuple[Lattice, L3Design]:
    """Parse a geometry document into ``(base_lattice, design)``."""
    if not isinstance(d, dict) or not d:
        raise SchemaError("geometry document is empty or not an object")
    if d.get("schema") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported or missing schema version: {d.get('schema')!r}")
    try:
        slab = SlabSpec(**{k: float(v) for k, v in d.get("slab", {}).items()})
        base = triangular_lattice(float(d["period_a_nm"]), float(d["base_radius_nm"]),
                                  tuple(d.get("supercell", (16, 10))), slab,
                                  float(d.get("hole_index", 1.0)))
        design = L3Design.from_dict(d.get("design", {}))
    except KeyError as exc:
        raise SchemaError(f"missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, GeometryError):
            raise
        raise SchemaError(str(exc)) from None
    return base, design


def load_geometry(path) -> Tuple[Lattice, L3Design]:
    try:
        with open(path) as fh:
            text = fh.read()
        d = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return geometry_from_dict(d)


def reference_geometry(design: Optional[L3Design] = None):
    """The 425 nm / 115 nm / 310 nm InP membrane with the reported high-Q shifts."""
    base = triangular_lattice(425.0, 115.0, (16, 10), SlabSpec())
    return base, design if design is not None else L3Design.high_q()


def mirror_symmetric(lattice: Lattice, tol_nm=1e-9):
    """True if the hole set maps onto itself under x -> -x and y -> -y."""
    lx, ly = lattice.size_nm
    pts = np.column_stack([lattice.centers_nm, lattice.radii_nm])

    def _same(a, b):
        for p in a:
            d = b[:, :2] - p[:2]
            d[:, 0] -= lx * np.round(d[:, 0] / lx)
            d[:, 1] -= ly * np.round(d[:, 1] / ly)
            hit = (np.hypot(d[:, 0], d[:, 1]) < tol_nm) & (np.abs(b[:, 2] - p[2]) < tol_nm)
            if not hit.any():
                return False
        return True

    mx = pts * np.array([-1, 1, 1])
    my = pts * np.array([1, -1, 1])
    return _same(mx, pts) and _same(my, pts)
