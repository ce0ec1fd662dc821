"""Q maximisation over the L3 shift parameters.

Ascent works on log Q (Q spans orders of magnitude across the design space)
with central-difference gradients, a backtracking line search along the
gradient, and a coordinate pattern search once the gradient stops paying.
Every objective evaluation is one trace entry; the trace doubles as an
evaluation cache, which is what makes runs resumable: replaying a trace
re-walks the same deterministic path without calling the solver again.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import gme
from .geometry import GeometryError, L3Design, Lattice, build_l3_supercell

log = logging.getLogger(__name__)

PARAM_NAMES = ("s1", "s2", "s3", "a1", "a2", "a3")
DEFAULT_BOUNDS = tuple((0.85, 1.25) for _ in PARAM_NAMES)


class OptimizationError(RuntimeError):
    pass


# objective failures that mark a point as infeasible instead of aborting the run
_INFEASIBLE = (gme.GmeError, GeometryError, ValueError, np.linalg.LinAlgError)


def _key(vec):
    return tuple(np.round(np.asarray(vec, float), 12))


class QObjective:
    """Fundamental-mode Q of ``build_l3_supercell(base, design)``.

    The frequency window is the band gap of ``base`` at this basis,
    computed once.
    """

    def __init__(self, base: Lattice, basis: gme.GmeBasis, window=None):
        self.base = base
        self.basis = basis
        self.window = window if window is not None else gme.band_gap(base, basis)
        self.template = L3Design()

    def __call__(self, design: L3Design) -> float:
        lat = build_l3_supercell(self.base, design)
        modes = gme.solve_modes(lat, self.basis, self.window)
        mode = gme.fundamental_mode(modes, lat)
        q = gme.compute_q(mode, lat)
        gme.clear_cache()
        return q


@dataclass
class TraceEntry:
    index: int
    vector: Tuple[float, ...]
    objective: Optional[float]
    accepted: bool
    kind: str
    error: Optional[str] = None

    def to_json(self, template: L3Design):
        return {
            "eval": self.index,
            "kind": self.kind,
            "params": L3Design.from_vector(self.vector, template).to_dict(),
            "vector": list(self.vector),
            "objective_q": self.objective,
            "accepted": self.accepted,
            "error": self.error,
        }


@dataclass
class OptimizationTrace:
    budget: int
    seed: int
    iterations: List[TraceEntry] = field(default_factory=list)

    def accepted_objectives(self):
        return [e.objective for e in self.iterations if e.accepted]

    def best(self) -> TraceEntry:
        acc = [e for e in self.iterations if e.accepted]
        return acc[-1]

    def write_jsonl(self, path, template: L3Design = L3Design()):
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            fh.write(json.dumps({"header": {"budget": self.budget, "seed": self.seed,
                                            "params": list(PARAM_NAMES)}}) + "\n")
            for e in self.iterations:
                fh.write(json.dumps(e.to_json(template), sort_keys=True) + "\n")
        os.replace(tmp, path)

    @classmethod
    def read_jsonl(cls, path):
        entries, budget, seed = [], 0, 0
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "header" in rec:
                    budget, seed = rec["header"]["budget"], rec["header"]["seed"]
                    continue
                entries.append(TraceEntry(rec["eval"], tuple(rec["vector"]), rec["objective_q"],
                                          rec["accepted"], rec["kind"], rec.get("error")))
        return cls(budget, seed, entries)


class _Evaluator:
    """Budgeted, cached objective; appends every fresh point to the trace."""

    def __init__(self, objective, template, budget, trace, cache, on_entry):
        self.objective = objective
        self.template = template
        self.budget = budget
        self.trace = trace
        self.cache = cache
        self.used = 0
        self.best_q = -np.inf
        self.on_entry = on_entry

    def remaining(self):
        return self.budget - self.used

    def __call__(self, vec, kind, count=True):
        key = _key(vec)
        if count:
            self.used += 1
        if key in self.cache:
            q, err = self.cache[key]
        else:
            try:
                q, err = float(self.objective(L3Design.from_vector(vec, self.template))), None
                if not np.isfinite(q) or q <= 0:
                    q, err = None, f"non-physical objective {q}"
            except _INFEASIBLE as exc:
                q, err = None, f"{type(exc).__name__}: {exc}"
                log.info("rejected point %s: %s", key, err)
            self.cache[key] = (q, err)
        accepted = q is not None and q > self.best_q
        if accepted:
            self.best_q = q
        entry = TraceEntry(len(self.trace.iterations), key, q, accepted, kind, err)
        self.trace.iterations.append(entry)
        self.on_entry(entry)
        return q


@dataclass
class GradientResult:
    gradient: np.ndarray
    pinned: np.ndarray
    errors: Dict[str, str]
    value: Optional[float] = None


def finite_difference_gradient(design: L3Design, step, objective: Callable[[L3Design], float],
                               bounds=DEFAULT_BOUNDS, log_scale=False, _evaluate=None):
    """Central-difference gradient of ``objective`` in the six shift factors.

    Parameters whose bounds interval has zero width are pinned: gradient 0,
    flag set, no evaluations spent.  Next to a bound the stencil becomes
    one-sided.  A failed evaluation leaves that component NaN and records
    the error under the parameter name.
    """
    x = np.asarray(design.vector, float)
    h = np.broadcast_to(np.asarray(step, float), x.shape).copy()
    if np.any(h <= 0):
        raise ValueError("finite-difference steps must be positive")
    lo = np.array([b[0] for b in bounds], float)
    hi = np.array([b[1] for b in bounds], float)
    pinned = hi - lo <= 0
    if _evaluate is None:
        def _evaluate(vec, kind):
            try:
                return objective(L3Design.from_vector(vec, design))
            except _INFEASIBLE as exc:
                log.info("gradient stencil point %s failed: %s", _key(vec), exc)
                return None
    f = (lambda q: np.log(q)) if log_scale else (lambda q: q)
    grad = np.zeros_like(x)
    errors = {}
    center = None
    for i, name in enumerate(PARAM_NAMES):
        if pinned[i]:
            continue
        up = min(x[i] + h[i], hi[i])
        dn = max(x[i] - h[i], lo[i])
        pts = []
        for v in (up, dn):
            if v == x[i]:
                if center is None:
                    center = _evaluate(x.copy(), "gradient")
                pts.append(center)
            else:
                xv = x.copy()
                xv[i] = v
                pts.append(_evaluate(xv, "gradient"))
        if pts[0] is None or pts[1] is None or up == dn:
            grad[i] = np.nan
            errors[name] = "evaluation failed at a stencil point"
            continue
        grad[i] = (f(pts[0]) - f(pts[1])) / (up - dn)
    return GradientResult(grad, pinned, errors, center)


def optimize_q(initial: L3Design, lattice: Lattice, basis: gme.GmeBasis,
               bounds=DEFAULT_BOUNDS, budget=200, seed=0, step=0.01, trace_path=None,
               resume=False, objective: Optional[Callable[[L3Design], float]] = None,
               min_pattern_step=1e-3) -> Tuple[L3Design, OptimizationTrace]:
    """Maximise fundamental-mode Q; returns the best design and the full trace.

    ``budget`` counts objective evaluations after the initial one.  With
    ``resume=True`` and an existing ``trace_path``, previously evaluated
    points are taken from the trace instead of being re-solved.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    bounds = tuple(tuple(map(float, b)) for b in bounds)
    if len(bounds) != len(PARAM_NAMES):
        raise ValueError(f"need {len(PARAM_NAMES)} bounds intervals")
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    x = np.asarray(initial.vector, float)
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ValueError("initial design outside bounds")
    if objective is None:
        objective = QObjective(lattice, basis)

    cache = {}
    if resume and trace_path and os.path.exists(trace_path):
        old = OptimizationTrace.read_jsonl(trace_path)
        for e in old.iterations:
            cache[_key(e.vector)] = (e.objective, e.error)
    trace = OptimizationTrace(budget, seed)
    fh = open(trace_path + ".partial", "w") if trace_path else None

    def on_entry(entry):
        if fh is not None:
            fh.write(json.dumps(entry.to_json(initial), sort_keys=True) + "\n")
            fh.flush()

    ev = _Evaluator(objective, initial, budget, trace, cache, on_entry)
    try:
        fx = ev(x, "initial", count=False)
        if fx is None:
            raise OptimizationError(f"initial design could not be evaluated: "
                                    f"{trace.iterations[0].error}")
        _ascend(ev, x, fx, lo, hi, step, seed, min_pattern_step)
    finally:
        if fh is not None:
            fh.close()
            os.remove(trace_path + ".partial")
    if trace_path:
        trace.write_jsonl(trace_path, initial)
    best = L3Design.from_vector(trace.best().vector, initial)
    return best, trace


def _ascend(ev: _Evaluator, x, fx, lo, hi, step, seed, min_pattern_step):
    rng = np.random.Generator(np.random.Philox(seed))
    free = np.flatnonzero(hi - lo > 0)
    n = len(PARAM_NAMES)
    h = np.full(n, float(step))
    pattern = 0.05
    trust = 0.05
    logf = np.log(fx)

    def evaluate(vec, kind):
        if ev.remaining() <= 0:
            return None
        return ev(np.clip(vec, lo, hi), kind)

    while ev.remaining() > 0:
        improved = False
        if ev.remaining() >= 2 * free.size + 1:
            g = finite_difference_gradient(L3Design.from_vector(x, L3Design()), h, None,
                                           tuple(zip(lo, hi)), log_scale=True,
                                           _evaluate=lambda v, k: evaluate(v, k)).gradient
            g = np.where(np.isfinite(g), g, 0.0)
            gn = np.linalg.norm(g)
            if gn > 1e-6:
                direction = g / gn
                t = trust
                for _ in range(4):
                    if ev.remaining() <= 0:
                        break
                    cand = np.clip(x + t * direction, lo, hi)
                    q = evaluate(cand, "line")
                    if q is not None and np.log(q) > logf:
                        x, fx, logf = cand, q, np.log(q)
                        trust = min(2 * t, 0.1)
                        improved = True
                        break
                    t *= 0.5
                if not improved:
                    trust = max(t, 4 * min_pattern_step)
        if improved:
            continue
        # coordinate pattern search
        while ev.remaining() > 0 and not improved and pattern >= min_pattern_step:
            for i in rng.permutation(free):
                for sgn in (1.0, -1.0):
                    if ev.remaining() <= 0:
                        break
                    cand = x.copy()
                    cand[i] = np.clip(cand[i] + sgn * pattern, lo[i], hi[i])
                    if cand[i] == x[i]:
                        continue
                    q = evaluate(cand, "pattern")
                    if q is not None and np.log(q) > logf:
                        x, fx, logf = cand, q, np.log(q)
                        improved = True
                        break
                if improved:
                    break
            if not improved:
                pattern *= 0.5
        if not improved:
            break
    return x, fx
