"""Pseudo-arclength continuation of equilibria in the forcing parameter.

A branch point is described internally by ``(c, y)``, where ``y`` are the
unknowns of a matching problem ``R(c, y) = 0`` and ``proj(c, y)`` gives the
plane coordinates ``(f0, fp0)`` at x = 0.  For decaying forcing ``y`` are
the tail amplitudes ``(aR, aL)`` seeded at ``+-x0`` and ``R`` is the gap
``Z(aR) - Z'(aL)``; the arclength condition is imposed in ``(c, f0, fp0)``.
A branch ends where a tail amplitude reaches zero: beyond it the orbit is
no longer global.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .equilibrium import DEFAULT_STEP, DEFAULT_X0, _Matcher, build_solution, find_equilibria
from .grid import Grid, PotentialProfile
from .spectrum import SchrodingerOp, eigs_above_edge

DEFAULT_DS = 5e-3
DEFAULT_C_RANGE = (-0.5, 0.8)
MIN_DS = 1e-6
SYMMETRIC_TOL = 1e-6


@dataclass(frozen=True)
class BranchPoint:
    c: float
    f0: float
    fp0: float
    n_unstable: int = -1
    smallest_abs_eig: float = math.nan
    seeds: tuple = field(default=(math.nan, math.nan), compare=False)
    det: float = field(default=math.nan, compare=False)


@dataclass(frozen=True)
class Event:
    kind: str
    c: float
    info: dict = field(default_factory=dict, compare=False)


@dataclass(eq=False)
class Branch:
    points: list
    events: list = field(default_factory=list)
    branch_id: int = 0

    def __eq__(self, other):
        return (isinstance(other, Branch) and self.points == other.points
                and [(e.kind, e.c) for e in self.events] == [(e.kind, e.c) for e in other.events])

    @property
    def c(self) -> np.ndarray:
        return np.array([p.c for p in self.points])

    @property
    def f0(self) -> np.ndarray:
        return np.array([p.f0 for p in self.points])

    @property
    def fp0(self) -> np.ndarray:
        return np.array([p.fp0 for p in self.points])


class MatchingProblem:
    """Shooting residual for the family ``c -> PotentialProfile``.

    Subclasses provide ``residual(c, y)`` and ``project(c, y)``;
    ``profile(c, y, grid)`` builds an equilibrium for spectral annotation.
    """

    family: Callable[[float], PotentialProfile]
    decaying = True

    def residual(self, c, y):
        raise NotImplementedError

    def project(self, c, y):
        raise NotImplementedError

    def profile(self, c, y, grid):
        raise NotImplementedError

    def vanished(self, y) -> float:
        """Smallest tail amplitude; the branch ends where this reaches 0."""
        return math.inf


class TailMatching(MatchingProblem):
    def __init__(self, family=PotentialProfile.gaussian_quadratic, x0=DEFAULT_X0, step=DEFAULT_STEP, order="corrected"):
        self.family = family
        self.x0 = x0
        self.step = step
        self.order = order
        self._cache = {}

    def matcher(self, c):
        m = self._cache.get(c)
        if m is None:
            if len(self._cache) > 64:
                self._cache.clear()
            m = self._cache[c] = _Matcher(self.family(c), self.x0, self.step, order=self.order)
        return m

    def residual(self, c, y):
        return self.matcher(c).mismatch(y[0], y[1])

    def project(self, c, y):
        return self.matcher(c).z(y[0], +1)

    def profile(self, c, y, grid):
        return build_solution(self.matcher(c), y[0], y[1], grid).profile

    def vanished(self, y):
        return float(min(y))


class ConstantMatching(MatchingProblem):
    """Spatially constant equilibria ``f0**2 = P`` of constant forcing ``P = c``."""

    family = staticmethod(PotentialProfile.constant)
    decaying = False

    def residual(self, c, y):
        return np.array([y[0] ** 2 - c, y[1]])

    def project(self, c, y):
        return np.array([y[0], y[1]])

    def profile(self, c, y, grid):
        from .grid import GridFunction

        return GridFunction(grid, np.full(grid.n, y[0]))


def _jacobian(fun, u, base=None):
    base = fun(u) if base is None else base
    J = np.empty((base.size, u.size))
    for k in range(u.size):
        du = 1e-7 * max(abs(u[k]), 1e-3)
        up = u.copy()
        up[k] += du
        fp = fun(up)
        if not np.all(np.isfinite(fp)):
            up[k] -= 2 * du
            fp = fun(up)
            du = -du
        J[:, k] = (fp - base) / du
    return J


def _newton(fun, u, tol=1e-10, max_iter=12):
    F = fun(u)
    if not np.all(np.isfinite(F)):
        return u, False
    for _ in range(max_iter):
        if np.max(np.abs(F)) < tol:
            return u, True
        J = _jacobian(fun, u, F)
        try:
            du = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return u, False
        u = u + du
        F = fun(u)
        if not np.all(np.isfinite(F)):
            return u, False
    return u, bool(np.max(np.abs(F)) < tol)


class Continuation:
    """Pseudo-arclength continuation engine for one :class:`MatchingProblem`."""

    def __init__(self, problem: MatchingProblem, grid: Grid | None = None, annotate: bool = True, n_eigs: int = 4):
        self.problem = problem
        self.grid = grid or Grid()
        self.annotate = annotate
        self.n_eigs = n_eigs

    def plane(self, u):
        return np.concatenate([[u[0]], self.problem.project(u[0], u[1:])])

    def det(self, u):
        c, y = u[0], u[1:]
        J = _jacobian(lambda yy: self.problem.residual(c, yy), y.copy())
        return float(np.linalg.det(J))

    def point(self, u) -> BranchPoint:
        c, y = float(u[0]), u[1:]
        p = self.problem.project(c, y)
        n_unst, small = -1, math.nan
        if self.annotate:
            prof = self.problem.profile(c, y, self.grid)
            op = SchrodingerOp.linearization(prof, 0.0 if self.problem.decaying else None)
            rep = eigs_above_edge(op, check_truncation=False)
            n_unst = rep.n_positive
            small = float(np.min(np.abs(op.top_eigenvalues(self.n_eigs))))
        return BranchPoint(c, float(p[0]), float(p[1]), n_unst, small, tuple(float(v) for v in y), self.det(u))

    def refine(self, c, y):
        y, ok = _newton(lambda yy: self.problem.residual(c, yy), np.asarray(y, dtype=float))
        return y, ok

    def run(self, seed_c: float, seed_y, c_to: float, ds: float = DEFAULT_DS, window=None,
            max_points: int = 20000) -> Branch:
        y0, ok = self.refine(seed_c, seed_y)
        if not ok:
            raise RuntimeError(f"seed refinement failed at c = {seed_c}")
        lo, hi = window if window is not None else (min(seed_c, c_to), max(seed_c, c_to))
        u = np.concatenate([[seed_c], y0])
        pts = [self.point(u)]
        events = []
        # initial tangent: null vector of [R_c, R_y]
        J = _jacobian(lambda uu: self.problem.residual(uu[0], uu[1:]), u)
        _, _, vt = np.linalg.svd(J)
        tu = vt[-1]
        if tu[0] * (c_to - seed_c) < 0:
            tu = -tu
        tp = (self.plane(u + 1e-6 * tu) - self.plane(u)) / 1e-6
        tu = tu / np.linalg.norm(tp)
        p_prev = self.plane(u)
        step = ds
        while len(pts) < max_points:
            pred = u + step * tu
            p_now = p_prev
            tdir = self.plane(pred) - p_now
            nrm = np.linalg.norm(tdir)
            if not np.isfinite(nrm) or nrm == 0:
                tdir = None
            else:
                tdir /= nrm

            def G(v):
                r = self.problem.residual(v[0], v[1:])
                if tdir is None:
                    return np.append(r, v[0] - pred[0])
                return np.append(r, np.dot(self.plane(v) - p_now, tdir) - step)

            v, ok = _newton(G, pred.copy())
            if ok:
                jump = np.linalg.norm(self.plane(v) - p_now)
                ok = jump < 3 * step
            if not ok:
                step *= 0.5
                if step < MIN_DS:
                    events.append(Event("end", float(u[0]), {"cause": "corrector failure"}))
                    break
                continue
            a_old, a_new = self.problem.vanished(u[1:]), self.problem.vanished(v[1:])
            if a_new <= 0 < a_old:
                frac = a_old / (a_old - a_new)
                c_end = float(u[0] + frac * (v[0] - u[0]))
                events.append(Event("end", c_end, {"cause": "tail amplitude reached zero",
                                                   "existence": _existence_info(self.problem, pts[-5:])}))
                break
            if not lo <= v[0] <= hi:
                break
            dv = v - u
            tu = dv / np.linalg.norm(self.plane(v) - p_now)
            u = v
            p_prev = self.plane(u)
            pts.append(self.point(u))
            step = min(ds, 2 * step)
        branch = Branch(pts, events)
        branch.events = detect_events(branch, problem=self.problem) + events
        branch.events.sort(key=lambda e: e.c)
        return branch


def _existence_info(problem, pts):
    """Forward existence interval past ``x0`` for the last points (inf when global)."""
    out = []
    if not isinstance(problem, TailMatching):
        return out
    from . import _kernels

    for p in pts:
        m = problem.matcher(p.c)
        row = []
        for side, a in ((+1, p.seeds[0]), (-1, p.seeds[1])):
            f, fp, x, st = _kernels.integrate(a, m.seed_slope(a, side), side * m.x0, side * (m.x0 + 200.0),
                                              m.step * 10, *m.args, m.guard)
            row.append(math.inf if st == _kernels.GLOBAL else abs(x))
        out.append({"c": p.c, "x_blow": row})
    return out


def detect_events(branch: Branch, problem: MatchingProblem | None = None) -> list:
    """Folds (reversal of dc along the branch) and pitchforks.

    A pitchfork is either a sign change of the matching Jacobian at
    symmetric points without a fold, or a fold located at a symmetric
    point of an otherwise nonsymmetric branch (the arms meeting there).
    When ``problem`` is given, each pitchfork is confirmed by refining an
    antisymmetrically perturbed seed next to it.
    """
    pts = branch.points
    out = []
    if len(pts) < 3:
        return out
    c = branch.c
    fp0 = branch.fp0
    dc = np.diff(c)
    for k in range(1, len(pts) - 1):
        if dc[k - 1] * dc[k] < 0:
            # parabola through three points in arclength
            s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(c[k - 1:k + 2]), np.diff(branch.f0[k - 1:k + 2])))])
            coef = np.polyfit(s, c[k - 1:k + 2], 2)
            s_ext = -coef[1] / (2 * coef[0]) if coef[0] != 0 else s[1]
            s_ext = min(max(s_ext, s[0]), s[2])
            c_ext = float(np.polyval(coef, s_ext))
            fp_ext = float(np.interp(s_ext, s, fp0[k - 1:k + 2]))
            others_nonsym = np.median(np.abs(fp0)) > 1e-3
            kind = "pitchfork" if abs(fp_ext) < 1e-3 and others_nonsym else "fold"
            out.append(Event(kind, c_ext, {"index": k}))
    det = np.array([p.det for p in pts])
    for k in range(len(pts) - 1):
        if not (abs(fp0[k]) < SYMMETRIC_TOL and abs(fp0[k + 1]) < SYMMETRIC_TOL):
            continue
        if not (np.isfinite(det[k]) and np.isfinite(det[k + 1])) or det[k] * det[k + 1] >= 0:
            continue
        near_fold = any(abs(e.info.get("index", -9) - k) <= 1 or abs(e.info.get("index", -9) - (k + 1)) <= 1
                        for e in out if e.kind == "fold")
        if near_fold:
            continue
        w = det[k] / (det[k] - det[k + 1])
        c_pf = float(c[k] + w * (c[k + 1] - c[k]))
        info = {"index": k}
        if problem is not None:
            info["verified"], c_pf = _verify_pitchfork(problem, pts[k], pts[k + 1], c_pf)
        out.append(Event("pitchfork", c_pf, info))
    return out


def _verify_pitchfork(problem, p, q, c_pf, distance=1e-3):
    """Sharpen ``c_pf`` and look for a nonsymmetric solution within ``distance`` of the symmetric one.

    The symmetric solution is re-solved at fixed c and ``c_pf`` refined by
    secant steps on the matching determinant; nonsymmetric solutions are
    then sought just either side of it from antisymmetrically split seeds.
    Returns ``(verified, c_pf)``.
    """
    ya, yb = np.array(p.seeds), np.array(q.seeds)

    def sym(cc, guess):
        return _newton(lambda yy: problem.residual(cc, yy), guess.copy())

    def det_at(cc, guess):
        ys, ok = sym(cc, guess)
        if not ok:
            return math.nan, ys
        J = _jacobian(lambda yy: problem.residual(cc, yy), ys.copy())
        return float(np.linalg.det(J)), ys

    c0, c1 = p.c, q.c
    d0, y0 = det_at(c0, ya)
    d1, y1 = det_at(c1, yb)
    for _ in range(30):
        if not (np.isfinite(d0) and np.isfinite(d1)) or d0 == d1:
            break
        c2 = c1 - d1 * (c1 - c0) / (d1 - d0)
        d2, y2 = det_at(c2, y1)
        c0, d0, y0 = c1, d1, y1
        c1, d1, y1 = c2, d2, y2
        if abs(c1 - c0) < 1e-12:
            break
    if np.isfinite(d1) and abs(c1 - c_pf) < 0.05:
        c_pf = float(c1)
    ysym = y1
    # the arm through the pitchfork, pinned at a small antisymmetric amplitude
    for target in (3e-4, -3e-4):
        def G(u):
            r = problem.residual(u[0], u[1:])
            return np.append(r, problem.project(u[0], u[1:])[1] - target)

        for eps in (1e-3, 3e-3, -1e-3, -3e-3):
            u0 = np.concatenate([[c_pf], ysym * np.array([1 + eps, 1 - eps])])
            u, ok = _newton(G, u0, max_iter=30)
            if not ok:
                continue
            ys, ok = sym(u[0], ysym)
            if ok and np.hypot(*(problem.project(u[0], u[1:]) - problem.project(u[0], ys))) < distance:
                return True, c_pf
    return False, c_pf


def continue_branch(seed: BranchPoint, c_from: float, c_to: float, ds: float = DEFAULT_DS, *,
                    problem: MatchingProblem | None = None, grid: Grid | None = None, window=None,
                    annotate: bool = True) -> Branch:
    """Continue the equilibrium ``seed`` (at ``c_from``) toward ``c_to``.

    Continuation stops when c leaves ``window`` (default: the interval
    between ``c_from`` and ``c_to``) or at an end event.
    """
    if not ds > 0:
        raise ValueError("ds must be > 0")
    problem = problem or TailMatching()
    eng = Continuation(problem, grid, annotate)
    y = np.array(seed.seeds, dtype=float)
    if not np.all(np.isfinite(y)):
        y = np.array([seed.f0, seed.fp0])
    return eng.run(c_from, y, c_to, ds, window)


SEED_BRANCHES = {"upper": (0.0, "upper"), "symmetric": (0.0, "lower"), "fork+": (0.06, "fork+"), "fork-": (0.06, "fork-")}


def seed_point(which: str, problem: TailMatching | None = None, grid: Grid | None = None) -> BranchPoint:
    """Starting equilibrium for a named branch of the (x**2 - c) exp(-x**2/2) diagram."""
    key = which.replace("−", "-")
    if key not in SEED_BRANCHES:
        raise ValueError(f"unknown branch {which!r}; choose from {sorted(SEED_BRANCHES)}")
    c, pick = SEED_BRANCHES[key]
    problem = problem or TailMatching()
    sols = find_equilibria(problem.family(c), problem.x0, grid or Grid())
    sym = [s for s in sols if abs(s.fp0) < 1e-6]
    if pick == "upper":
        s = max(sym, key=lambda s: s.f0)
    elif pick == "lower":
        s = min(sym, key=lambda s: s.f0)
    else:
        arms = [s for s in sols if (s.fp0 > 1e-6 if pick == "fork+" else s.fp0 < -1e-6)]
        if not arms:
            raise RuntimeError(f"no {pick} equilibrium at c = {c}")
        s = arms[0]
    return BranchPoint(c, s.f0, s.fp0, seeds=s.seeds)


def bifurcation_diagram(c_range=DEFAULT_C_RANGE, ds: float = DEFAULT_DS, branches=("upper", "symmetric", "fork+"),
                        grid: Grid | None = None, annotate: bool = True) -> list:
    """Continue each named seed both ways inside ``c_range``; returns the branches."""
    problem = TailMatching()
    out = []
    lo, hi = c_range
    for name in branches:
        sp = seed_point(name, problem, grid)
        for target in (hi, lo):
            b = continue_branch(sp, sp.c, target, ds, problem=problem, grid=grid, window=(lo, hi), annotate=annotate)
            b.branch_id = len(out)
            out.append(b)
    return out


def export_diagram(branches, points_path=None, events_path=None) -> tuple[str, str]:
    """Points CSV ``c,f0,fp0,n_unstable,smallest_abs_eig,branch_id`` and events CSV ``kind,c,branch_id``."""
    pbuf, ebuf = io.StringIO(), io.StringIO()
    pw = csv.writer(pbuf, lineterminator="\n")
    ew = csv.writer(ebuf, lineterminator="\n")
    pw.writerow(["c", "f0", "fp0", "n_unstable", "smallest_abs_eig", "branch_id"])
    ew.writerow(["kind", "c", "branch_id"])
    for i, b in enumerate(branches):
        bid = b.branch_id if b.branch_id is not None else i
        for p in b.points:
            pw.writerow([repr(p.c), repr(p.f0), repr(p.fp0), p.n_unstable, repr(p.smallest_abs_eig), bid])
        for e in b.events:
            ew.writerow([e.kind, repr(e.c), bid])
    ptext, etext = pbuf.getvalue(), ebuf.getvalue()
    for path, text in ((points_path, ptext), (events_path, etext)):
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
    return ptext, etext


def import_diagram(points_csv: str, events_csv: str) -> list:
    """Inverse of :func:`export_diagram` (arguments are CSV text)."""
    branches = {}
    for row in csv.DictReader(io.StringIO(points_csv)):
        bid = int(row["branch_id"])
        branches.setdefault(bid, Branch([], [], bid)).points.append(
            BranchPoint(float(row["c"]), float(row["f0"]), float(row["fp0"]), int(row["n_unstable"]),
                        float(row["smallest_abs_eig"])))
    for row in csv.DictReader(io.StringIO(events_csv)):
        bid = int(row["branch_id"])
        branches.setdefault(bid, Branch([], [], bid)).events.append(Event(row["kind"], float(row["c"])))
    return [branches[k] for k in sorted(branches)]
