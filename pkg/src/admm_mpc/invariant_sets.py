"""Maximal output admissible sets, their 2-D slices and slice areas.

For stable ``S`` and output bounds ``lo <= C S^k x <= hi`` (all ``k``), the
set is built layer by layer; a layer whose rows are all implied by the
rows collected so far certifies finite determination.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .augmented import AugmentedModel
from .mpc_core import BoxSet, LinearSystem, LqrSolution
from .numerics import ConvergenceError, lp_maximize, spectral_radius

__all__ = [
    "OutputAdmissibleSpec",
    "AdmissibleSet",
    "Polygon2D",
    "max_admissible_set",
    "contains",
    "terminal_set",
    "pstar_set",
    "linear_regime_set",
    "slice_2d",
    "polygon_area",
    "write_polygon_csv",
    "read_polygon_csv",
    "sample_in_set",
]

REDUNDANCY_SLACK = 1e-9
DEDUP_TOL = 1e-12


@dataclass(frozen=True)
class OutputAdmissibleSpec:
    S: np.ndarray
    C: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.S, float))
        C = np.atleast_2d(np.asarray(self.C, float))
        lo = np.asarray(self.lower, float).ravel()
        hi = np.asarray(self.upper, float).ravel()
        if S.shape[0] != S.shape[1] or C.shape[1] != S.shape[0]:
            raise ValueError("inconsistent shapes of S and C")
        if lo.size != C.shape[0] or hi.size != C.shape[0]:
            raise ValueError("bounds do not match the number of outputs")
        if not (np.all(lo < 0) and np.all(hi > 0)):
            raise ValueError("the origin must be interior to the output bounds")
        if spectral_radius(S) >= 1.0:
            raise ValueError("S must be Schur stable")
        for name, val in (("S", S), ("C", C), ("lower", lo), ("upper", hi)):
            object.__setattr__(self, name, val)


@dataclass(frozen=True)
class AdmissibleSet:
    """``{x | lo <= A x <= hi}``; ``k_bar`` is the determination index."""

    A: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    k_bar: int

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains(self, x, tol: float = 1e-9) -> bool:
        v = self.A @ np.asarray(x, float)
        return bool(np.all(v <= self.hi + tol) and np.all(v >= self.lo - tol))

    def contains_many(self, xs, tol: float = 1e-9) -> np.ndarray:
        V = np.asarray(xs, float) @ self.A.T
        return np.all((V <= self.hi + tol) & (V >= self.lo - tol), axis=1)

    def to_json(self) -> str:
        return json.dumps({
            "k_bar": self.k_bar,
            "halfspaces": [
                {"a": [float(v) for v in a], "lo": float(l), "hi": float(h)}
                for a, l, h in zip(self.A, self.lo, self.hi)
            ],
        })

    @classmethod
    def from_json(cls, text: str) -> "AdmissibleSet":
        d = json.loads(text)
        hs = d["halfspaces"]
        return cls(np.array([h["a"] for h in hs]), np.array([h["lo"] for h in hs]),
                   np.array([h["hi"] for h in hs]), int(d["k_bar"]))


def contains(aset: AdmissibleSet, x) -> bool:
    return aset.contains(x)


class _Polyhedron:
    """Growing two-sided halfspace system with a cached LP form."""

    def __init__(self, dim):
        self.dim = dim
        self.A = np.zeros((0, dim))
        self.lo = np.zeros(0)
        self.hi = np.zeros(0)
        self.symmetric = True
        self._ub = None

    def add(self, A, lo, hi):
        for a, l, h in zip(A, lo, hi):
            self._add_row(a, l, h)
        self._ub = None

    def _add_row(self, a, l, h):
        scale = np.max(np.abs(a))
        if scale == 0.0:
            return
        if self.A.shape[0]:
            # identical support up to scaling: keep the tighter bounds
            an = a / scale
            norms = np.max(np.abs(self.A), axis=1)
            diff = np.max(np.abs(self.A / norms[:, None] - an), axis=1)
            hit = np.flatnonzero(diff <= DEDUP_TOL)
            if hit.size:
                i = hit[0]
                ratio = norms[i] / scale
                self.lo[i] = max(self.lo[i], l * ratio)
                self.hi[i] = min(self.hi[i], h * ratio)
                self.symmetric = self.symmetric and self.lo[i] == -self.hi[i]
                return
        self.A = np.vstack([self.A, a])
        self.lo = np.append(self.lo, l)
        self.hi = np.append(self.hi, h)
        self.symmetric = self.symmetric and l == -h

    def _lp_form(self):
        if self._ub is None:
            up = np.isfinite(self.hi)
            dn = np.isfinite(self.lo)
            self._ub = (np.vstack([self.A[up], -self.A[dn]]),
                        np.concatenate([self.hi[up], -self.lo[dn]]))
        return self._ub

    def support(self, c):
        """``max c'x`` over the polyhedron; ``inf`` when unbounded."""
        A_ub, b_ub = self._lp_form()
        res = linprog(-c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * self.dim,
                      method="highs")
        if res.status == 0:
            return -res.fun
        if res.status == 3:
            return np.inf
        if res.status == 2:
            raise ConvergenceError("admissible-set construction produced an empty polyhedron")
        # status 4 / numerical trouble: fall back to the generic wrapper
        out = lp_maximize(c, self.A, self.lo, self.hi)
        if out.status == "optimal":
            return out.value
        if out.status == "unbounded":
            return np.inf
        raise ConvergenceError("admissible-set construction produced an empty polyhedron")

    def implies(self, a, l, h, slack) -> bool:
        if self.A.shape[0] == 0:
            return False
        if np.isfinite(h):
            top = self.support(a)
            if top > h + slack:
                return False
        if np.isfinite(l):
            if self.symmetric and l == -h:
                return True
            bottom = -self.support(-a)
            if bottom < l - slack:
                return False
        return True


def max_admissible_set(spec: OutputAdmissibleSpec, k_cap: int = 500,
                       slack: float = REDUNDANCY_SLACK) -> AdmissibleSet:
    """Finitely determined maximal output admissible set of ``(S, C, lo, hi)``."""
    S, C, lo, hi = spec.S, spec.C, spec.lower, spec.upper
    poly = _Polyhedron(S.shape[0])
    poly.add(C, lo, hi)
    layer = C
    for k in range(k_cap + 1):
        layer = layer @ S
        keep = []
        for i, a in enumerate(layer):
            scale = np.max(np.abs(a))
            if scale <= 1e-14 * max(1.0, np.max(np.abs(C[i]))):
                continue  # zero rows hold trivially since lo < 0 < hi
            if not poly.implies(a, lo[i], hi[i], slack):
                keep.append(i)
        if not keep:
            return AdmissibleSet(poly.A.copy(), poly.lo.copy(), poly.hi.copy(), k)
        poly.add(layer[keep], lo[keep], hi[keep])
    raise ConvergenceError(f"set not finitely determined within {k_cap} layers")


def sample_in_set(aset: AdmissibleSet, count: int, rng, spread: float = 1.0) -> np.ndarray:
    """Points of a bounded set containing the origin, by ray shooting.

    A random direction is scaled to a uniform fraction of the distance to
    the boundary along it, so samples are spread from the origin out to the
    faces.  Not uniform in volume.
    """
    d = rng.standard_normal((count, aset.dim))
    V = d @ aset.A.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(V > 0, aset.hi / V, np.inf)
        t_lo = np.where(V < 0, aset.lo / V, np.inf)
    t_max = np.minimum(t_hi.min(axis=1), t_lo.min(axis=1))
    if not np.all(np.isfinite(t_max)):
        raise ValueError("set is unbounded")
    t = spread * rng.uniform(0.0, 1.0, count) * t_max
    return d * t[:, None]


def terminal_set(system: LinearSystem, lqr: LqrSolution, X: BoxSet, U: BoxSet,
                 k_cap: int = 500) -> AdmissibleSet:
    """Largest set where ``u = Kx`` keeps ``(x, u)`` in ``X x U`` forever."""
    C = np.vstack([np.eye(system.n), lqr.K])
    spec = OutputAdmissibleSpec(lqr.S_cl, C, np.concatenate([X.lower, U.lower]),
                                np.concatenate([X.upper, U.upper]))
    return max_admissible_set(spec, k_cap)


def pstar_set(model: AugmentedModel, X: BoxSet, k_cap: int = 500) -> AdmissibleSet:
    """Invariant subset of the linear regime that also respects ``X`` and ``Z``."""
    lo, hi = model.output_bounds(X)
    return max_admissible_set(OutputAdmissibleSpec(model.S_M, model.C_M, lo, hi), k_cap)


def linear_regime_set(model: AugmentedModel) -> AdmissibleSet:
    """``{xa | K_j xa in Z, j = 1..M}`` where the ADMM iterates are linear (not invariant)."""
    zb = model.qp.bounds
    lo = np.tile(zb.lower, model.M)
    hi = np.tile(zb.upper, model.M)
    return AdmissibleSet(model.gains.stacked, lo, hi, 0)


@dataclass(frozen=True)
class Polygon2D:
    vertices: np.ndarray  # (k, 2), counterclockwise

    @property
    def empty(self) -> bool:
        return len(self.vertices) < 3


def polygon_area(poly: Polygon2D) -> float:
    """Shoelace formula."""
    v = np.asarray(poly.vertices, float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip(vertices, a, b):
    """Keep the part of a convex polygon with ``a @ v <= b``."""
    out = []
    k = len(vertices)
    for i in range(k):
        p, q = vertices[i], vertices[(i + 1) % k]
        fp, fq = a @ p - b, a @ q - b
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    return out


def _halfplane_polygon(A2, lo, hi) -> Polygon2D:
    # bounding box from four 2-D LPs keeps the clipping numerically local
    box = []
    for c in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        top = lp_maximize(c, A2, lo, hi)
        bot = lp_maximize(-c, A2, lo, hi)
        if top.status == "infeasible":
            return Polygon2D(np.zeros((0, 2)))
        if top.status == "unbounded" or bot.status == "unbounded":
            raise ValueError("slice is unbounded")
        box.append((-bot.value, top.value))
    (x0, x1), (y0, y1) = box
    pad = 1e-6 * max(1.0, x1 - x0, y1 - y0)
    x0, x1, y0, y1 = x0 - pad, x1 + pad, y0 - pad, y1 + pad
    verts = [np.array(v) for v in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]
    for a, l, h in zip(A2, lo, hi):
        if not np.any(a):
            continue
        if np.isfinite(h):
            verts = _clip(verts, a, h)
        if np.isfinite(l):
            verts = _clip(verts, -a, -l)
        if len(verts) < 3:
            return Polygon2D(np.zeros((0, 2)))
    v = np.array(verts)
    # drop near-duplicate consecutive vertices
    keep = [0]
    for i in range(1, len(v)):
        if np.max(np.abs(v[i] - v[keep[-1]])) > 1e-12 * max(1.0, np.abs(v).max()):
            keep.append(i)
    if len(keep) > 1 and np.max(np.abs(v[keep[-1]] - v[0])) <= 1e-12 * max(1.0, np.abs(v).max()):
        keep.pop()
    return Polygon2D(v[keep])


def slice_2d(aset: AdmissibleSet, D_0=None, n: int = 2) -> Polygon2D:
    """Slice at ``xa = (x, D_0 x, 0)``; with ``D_0=None`` the set lives in R^2 itself."""
    if n != 2:
        raise ValueError("slices are only supported for two-dimensional states")
    if D_0 is None:
        if aset.dim != 2:
            raise ValueError("D_0 is required for sets in the augmented space")
        W = np.eye(2)
    else:
        D_0 = np.asarray(D_0, float)
        if D_0.shape[1] != 2:
            raise ValueError("slices are only supported for two-dimensional states")
        q = D_0.shape[0]
        if aset.dim != 2 + 2 * q:
            raise ValueError("D_0 does not match the augmented dimension")
        W = np.vstack([np.eye(2), D_0, np.zeros((q, 2))])
    return _halfplane_polygon(aset.A @ W, aset.lo, aset.hi)


def write_polygon_csv(path, poly: Polygon2D) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2"])
        for v in poly.vertices:
            w.writerow([format(float(v[0]), ".17g"), format(float(v[1]), ".17g")])


def read_polygon_csv(path) -> Polygon2D:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return Polygon2D(np.array([[float(a), float(b)] for a, b in rows]).reshape(-1, 2))
