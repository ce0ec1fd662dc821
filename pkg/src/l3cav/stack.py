"""Transfer-matrix optics of the vertical layer stack and a two-beam extraction model.

Layers are listed top to bottom.  Light is incident from the ambient above;
the substrate is semi-infinite below.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.signal import find_peaks

SCHEMA_VERSION = 1


class StackError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    name: str
    refractive_index: complex
    thickness_nm: float

    def __post_init__(self):
        object.__setattr__(self, "refractive_index", complex(self.refractive_index))
        if not self.thickness_nm > 0:
            raise StackError(f"layer {self.name!r}: thickness must be positive")
        if self.refractive_index.real <= 0:
            raise StackError(f"layer {self.name!r}: refractive index must have positive real part")


@dataclass(frozen=True)
class LayerStack:
    layers: tuple
    ambient_above: complex = 1.0
    substrate_below: complex = 3.17
    emitter_layer: int = 0
    emitter_offset_nm: float = 0.0     # measured down from the top of the emitter layer
    gap_layer: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise StackError("stack needs at least one layer")
        if not 0 <= self.emitter_layer < len(self.layers):
            raise StackError("emitter layer index out of range")
        t = self.layers[self.emitter_layer].thickness_nm
        if not 0 <= self.emitter_offset_nm <= t:
            raise StackError(f"emitter offset {self.emitter_offset_nm} nm outside its layer (0..{t})")
        if self.gap_layer is not None and not 0 <= self.gap_layer < len(self.layers):
            raise StackError("gap layer index out of range")

    def index_of(self, name):
        for i, lay in enumerate(self.layers):
            if lay.name == name:
                return i
        raise StackError(f"no layer named {name!r}")

    def with_thickness(self, i, thickness_nm):
        layers = list(self.layers)
        layers[i] = replace(layers[i], thickness_nm=float(thickness_nm))
        return replace(self, layers=tuple(layers))

    def reversed(self):
        """Same stack seen from the substrate side (ambient and substrate swapped)."""
        return LayerStack(tuple(reversed(self.layers)), self.substrate_below, self.ambient_above,
                          len(self.layers) - 1 - self.emitter_layer,
                          self.layers[self.emitter_layer].thickness_nm - self.emitter_offset_nm,
                          None if self.gap_layer is None else len(self.layers) - 1 - self.gap_layer)

    def below_emitter(self):
        """(indices, thicknesses) from the emitter plane down into the substrate."""
        e = self.emitter_layer
        lay = self.layers[e]
        rest = lay.thickness_nm - self.emitter_offset_nm
        n = [lay.refractive_index] + [l.refractive_index for l in self.layers[e + 1:]]
        d = [rest] + [l.thickness_nm for l in self.layers[e + 1:]]
        return n, d


def _cos_theta(n, n0, angle):
    s = n0 * np.sin(angle) / n
    c = np.sqrt(1 - s * s + 0j)
    # forward-propagating / decaying branch
    if np.imag(n * c) < 0 or (np.imag(n * c) == 0 and np.real(n * c) < 0):
        c = -c
    return c


def _rt(n_in, ns: Sequence[complex], ds: Sequence[float], n_out, wavelength_nm,
        polarization="s", angle=0.0):
    """Complex (r, t) for incidence from ``n_in`` through films ``ns``/``ds`` into ``n_out``.

    Characteristic-matrix formulation; ``r`` is referenced to the first
    interface, ``t`` to the last.  Fields go as ``exp(i(kz - wt))``, so an
    absorbing medium has ``Im(n) > 0`` and the layer matrix carries ``-i``.
    """
    if polarization not in ("s", "p"):
        raise StackError("polarization must be 's' or 'p'")
    k0 = 2 * np.pi / wavelength_nm
    allm = [complex(n_in)] + [complex(v) for v in ns] + [complex(n_out)]
    cos = [_cos_theta(n, allm[0], angle) for n in allm]

    def adm(n, c):
        return n * c if polarization == "s" else n / c

    eta = [adm(n, c) for n, c in zip(allm, cos)]
    M = np.eye(2, dtype=complex)
    for n, c, e, d in zip(allm[1:-1], cos[1:-1], eta[1:-1], ds):
        delta = k0 * n * c * d
        M = M @ np.array([[np.cos(delta), -1j * np.sin(delta) / e],
                          [-1j * e * np.sin(delta), np.cos(delta)]])
    e0, es = eta[0], eta[-1]
    B = M[0, 0] + M[0, 1] * es
    C = M[1, 0] + M[1, 1] * es
    denom = e0 * B + C
    r = (e0 * B - C) / denom
    t = 2 * e0 / denom            # tangential-field transmission
    return r, t, e0, es, denom


def reflectance(stack: LayerStack, wavelength_nm, polarization="s", angle_deg=0.0):
    """Power reflectance and transmittance {R, T} for light incident from above."""
    if not wavelength_nm > 0:
        raise StackError("wavelength must be positive")
    ns = [l.refractive_index for l in stack.layers]
    ds = [l.thickness_nm for l in stack.layers]
    r, _, e0, es, denom = _rt(stack.ambient_above, ns, ds, stack.substrate_below,
                                    wavelength_nm, polarization, np.radians(angle_deg))
    R = float(abs(r) ** 2)
    T = float(4 * e0.real * es.real / abs(denom) ** 2)
    return {"R": R, "T": T}


def emitter_reflection(stack: LayerStack, wavelength_nm, substrate=None):
    """Complex reflection of everything below the emitter, referenced to the emitter plane."""
    n, d = stack.below_emitter()
    sub = stack.substrate_below if substrate is None else substrate
    r, *_ = _rt(n[0], n[1:], d[1:], sub, wavelength_nm)
    # carry the phase from the emitter plane down to the first interface and back
    phase = np.exp(2j * 2 * np.pi / wavelength_nm * n[0] * d[0])
    return r * phase


def enhancement(stack: LayerStack, wavelength_nm):
    """Two-beam upward intensity relative to the stack with a semi-infinite gap medium below.

    ``|1 + r_b|^2 / |1 + r_b0|^2``: ``r_b`` is the reflection from the full
    stack under the emitter; in ``r_b0`` the substrate is replaced by the gap
    material so no light returns from below the gap.
    """
    if stack.gap_layer is None:
        raise StackError("stack has no gap layer")
    r = emitter_reflection(stack, wavelength_nm)
    r0 = emitter_reflection(stack, wavelength_nm,
                            substrate=stack.layers[stack.gap_layer].refractive_index)
    return float(abs(1 + r) ** 2 / abs(1 + r0) ** 2)


@dataclass
class SweepResult:
    gap_nm: np.ndarray
    enhancement: np.ndarray
    maxima_nm: List[float]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("gap_nm,enhancement\n")
            for g, e in zip(self.gap_nm, self.enhancement):
                fh.write(f"{g:.6f},{e:.12g}\n")


def extraction_vs_gap(stack: LayerStack, gap_range_nm, wavelength_nm, n_samples=2001):
    """Sample the enhancement over gap thicknesses; report local maxima.

    ``gap_range_nm`` is ``(start, stop)`` in either order or an explicit
    array of gap values.
    """
    if stack.gap_layer is None:
        raise StackError("stack has no gap layer")
    g = np.asarray(gap_range_nm, float)
    if g.size == 2:
        lo, hi = sorted(g)
        g = np.linspace(lo, hi, n_samples)
    else:
        g = np.sort(g)
    if np.any(g <= 0):
        raise StackError("gap thicknesses must be positive")
    e = np.array([enhancement(stack.with_thickness(stack.gap_layer, x), wavelength_nm) for x in g])
    return SweepResult(g, e, find_maxima(g, e))


def find_maxima(x, y, rel_prominence=1e-9):
    """Interior local maxima of a sampled curve, refined by a parabola through 3 points."""
    y = np.asarray(y, float)
    span = np.ptp(y)
    if span <= rel_prominence * max(1.0, np.abs(y).max()):
        return []
    idx, _ = find_peaks(y, prominence=rel_prominence * span + 1e-15)
    out = []
    for i in idx:
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        den = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        out.append(float(x[i] + shift * (x[i + 1] - x[i - 1]) / 2))
    return out


# -- default stack and file I/O ------------------------------------------------

def membrane_stack(gap_nm=1500.0, membrane_nm=310.0, n_membrane=3.17, n_substrate=3.17):
    """Suspended membrane over an air gap on a substrate; emitter mid-membrane."""
    layers = (Layer("membrane", n_membrane, membrane_nm), Layer("gap", 1.0, gap_nm))
    return LayerStack(layers, 1.0, n_substrate, 0, membrane_nm / 2, 1)


def _cplx(v):
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def _jsonable(z):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


def stack_to_dict(stack: LayerStack):
    return {
        "schema": SCHEMA_VERSION,
        "ambient_index": _jsonable(stack.ambient_above),
        "substrate_index": _jsonable(stack.substrate_below),
        "layers": [{"name": l.name, "refractive_index": _jsonable(l.refractive_index),
                    "thickness_nm": l.thickness_nm} for l in stack.layers],
        "emitter": {"layer": stack.layers[stack.emitter_layer].name,
                    "offset_nm": stack.emitter_offset_nm},
        "gap_layer": None if stack.gap_layer is None else stack.layers[stack.gap_layer].name,
    }


def stack_from_dict(d) -> LayerStack:
    if not isinstance(d, dict) or d.get("schema") != SCHEMA_VERSION:
        raise StackError(f"stack file must be a JSON object with \"schema\": {SCHEMA_VERSION}")
    try:
        layers = tuple(Layer(str(l["name"]), _cplx(l["refractive_index"]), float(l["thickness_nm"]))
                       for l in d["layers"])
        names = [l.name for l in layers]
        em = d.get("emitter", {"layer": names[0], "offset_nm": layers[0].thickness_nm / 2})
        gap = d.get("gap_layer")
        return LayerStack(layers, _cplx(d.get("ambient_index", 1.0)),
                          _cplx(d["substrate_index"]), names.index(em["layer"]),
                          float(em["offset_nm"]), None if gap is None else names.index(gap))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, StackError):
            raise
        raise StackError(f"invalid stack description: {exc}") from exc


def load_stack(path) -> LayerStack:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise StackError(f"{path}: not valid JSON ({exc})") from exc
    return stack_from_dict(d)
