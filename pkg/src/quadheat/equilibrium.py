"""Global solutions of ``0 = f'' - f**2 + phi(x)`` by asymptotic-numeric matching.

Beyond ``|x| = x0`` the forcing is negligible and bounded orbits follow the
tail family ``6 / (x - d)**2``, which fixes the slope through the asymptotic
boundary condition.  Seeding that condition at ``+x0`` (resp. ``-x0``) and
integrating back to ``x = 0`` traces the set Z (resp. Z') of initial data
with global forward (backward) orbits; equilibria are the points of Z ∩ Z'.
Each crossing is refined with a 2-D Newton iteration on the seed
amplitudes and the profile is then polished on the grid.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_banded
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .grid import Grid, GridFunction, PotentialProfile, residual

SQRT_2_3 = math.sqrt(2.0 / 3.0)
SQRT_8_3 = math.sqrt(8.0 / 3.0)

DEFAULT_X0 = 12.0
DEFAULT_STEP = 1e-3
DEFAULT_GUARD = 1e6
DEFAULT_RESOLUTION = 2e-2
DEFAULT_WINDOW = 50.0
MERGE_DISTANCE = 1e-4
TRANSVERSAL_ANGLE = 1e-3


def default_f_samples() -> np.ndarray:
    return np.logspace(-4, math.log10(5.0), 400)


@dataclass(frozen=True)
class PhaseState:
    f: float
    fp: float
    x: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.f, self.fp, self.x)):
            raise ValueError("phase state must be finite")


@dataclass(frozen=True)
class Nonglobal:
    """Orbit left the blow-up guard at ``x_blow``."""

    x_blow: float


def hamiltonian(s: PhaseState, phi: PotentialProfile, negative: str = "error") -> float:
    """``f^3/3 - f'^2/2 - f phi + (2/3) phi^(3/2)`` at the state's x.

    For ``phi(x) < 0`` the last term is undefined; ``negative`` selects
    ``"error"``, ``"drop"`` (omit it) or ``"signed"`` (``sign(phi)|phi|^1.5``).
    """
    p = float(phi(s.x))
    if p >= 0:
        last = (2.0 / 3.0) * p**1.5
    elif negative == "drop":
        last = 0.0
    elif negative == "signed":
        last = -(2.0 / 3.0) * (-p) ** 1.5
    else:
        raise ValueError(f"phi({s.x}) = {p} < 0; pass negative='drop' or 'signed'")
    return s.f**3 / 3.0 - 0.5 * s.fp**2 - s.f * p + last


def in_funnel(f, fp, P: float) -> np.ndarray:
    """Membership in the teardrop ``{H >= 0, f <= sqrt(P)}`` for constant forcing P > 0."""
    f = np.asarray(f, dtype=float)
    fp = np.asarray(fp, dtype=float)
    H = f**3 / 3.0 - 0.5 * fp**2 - f * P + (2.0 / 3.0) * P**1.5
    return (H >= 0) & (f <= math.sqrt(P))


def integrate_phase(s: PhaseState, x_target: float, step: float, phi: PotentialProfile,
                    guard: float = DEFAULT_GUARD):
    """RK4 on ``(f, f') -> (f', f**2 - phi)`` from ``s.x`` to ``x_target``.

    Returns the final :class:`PhaseState`, or :class:`Nonglobal` if ``|f|``
    exceeds ``guard`` on the way.
    """
    if not step > 0:
        raise ValueError("step must be > 0")
    f, fp, x, status = _kernels.integrate(s.f, s.fp, s.x, float(x_target), step, *phi.kernel_args(), guard)
    if status == _kernels.NONGLOBAL or not (math.isfinite(f) and math.isfinite(fp)):
        return Nonglobal(x)
    return PhaseState(f, fp, x)


# --------------------------------------------------------------------------
# tail asymptotics


def _tail_integral(phi: PotentialProfile, x0: float, d: float) -> float:
    """``integral_{x0}^inf phi(s) / (s - d)^3 ds``, truncated where |phi| < 1e-14."""
    if phi.family == "constant" or phi.limit != 0.0:
        raise ValueError("tail correction needs a forcing that decays at infinity")
    upper = x0
    while abs(phi(upper)) >= 1e-14 or abs(phi(upper + 1.0)) >= 1e-14:
        upper += 1.0
        if upper > x0 + 1e4:
            raise ValueError("forcing does not decay; tail correction undefined")
    if upper == x0:
        return 0.0
    val, _ = quad(lambda s: phi(s) / (s - d) ** 3, x0, upper, limit=200, epsabs=1e-300)
    return float(val)


def asymptotic_bc(f: float, x0: float, phi: PotentialProfile, order: str = "leading") -> float:
    """Slope of the decaying tail through ``f`` at ``x0 > 0``.

    ``leading``: ``-sqrt(2/3) f**1.5``.  ``corrected`` adds
    ``(x0-d)**3 * integral_{x0}^inf phi/(s-d)**3`` with ``d`` from
    ``f = 6/(x0-d)**2``.
    """
    if not f > 0:
        raise ValueError("tail ansatz needs f > 0")
    fp = -SQRT_2_3 * f**1.5
    if order == "leading":
        return fp
    if order != "corrected":
        raise ValueError(f"unknown order {order!r}")
    w = math.sqrt(6.0 / f)
    return fp + w**3 * _tail_integral(phi, x0, x0 - w)


def _reflect(phi: PotentialProfile) -> PotentialProfile:
    if phi.family in ("gauss-quad", "gauss", "constant"):
        return phi
    t = phi.table
    return PotentialProfile.tabulated(GridFunction(Grid(-t.grid.x_max, -t.grid.x_min, t.grid.n), t.values[::-1]),
                                      phi.limit, tol=math.inf)


class _Matcher:
    """Seed-to-plane maps for one forcing.

    ``side=+1`` seeds the tail condition at ``+x0`` and integrates back to 0;
    ``side=-1`` is the mirror image at ``-x0``.  The seed amplitude ``a`` may
    be negative (the slope is continued as ``-sqrt(2/3) a |a|**0.5``); such
    seeds are not global, which is how branch ends are detected.
    """

    def __init__(self, phi, x0=DEFAULT_X0, step=DEFAULT_STEP, guard=DEFAULT_GUARD, order="corrected"):
        self.phi = phi
        self.x0 = float(x0)
        self.step = step
        self.guard = guard
        self.order = order
        self.args = phi.kernel_args()
        self._corr = {}
        decays = phi.family != "constant" and phi.limit == 0.0
        self._use_corr = order == "corrected" and decays
        self._refl = _reflect(phi) if self._use_corr else None

    def seed_slope(self, a: float, side: int) -> float:
        fp = -SQRT_2_3 * a * math.sqrt(abs(a))
        if self._use_corr:
            fp += self._correction(a, side)
        return fp * side

    def _correction(self, a, side):
        key = (round(a, 15), side)
        if key not in self._corr:
            ph = self.phi if side > 0 else self._refl
            if a > 0:
                w = math.sqrt(6.0 / a)
                val = w**3 * _tail_integral(ph, self.x0, self.x0 - w)
            else:
                # d -> -inf limit of the correction
                val = _tail_integral_flat(ph, self.x0)
            if len(self._corr) > 20000:
                self._corr.clear()
            self._corr[key] = val
        return self._corr[key]

    def z(self, a: float, side: int):
        """Point at x = 0 reached from seed ``a``; NaNs if the orbit is not global on the way."""
        xs = side * self.x0
        f, fp, _, st = _kernels.integrate(a, self.seed_slope(a, side), xs, 0.0, self.step, *self.args, self.guard)
        if st != _kernels.GLOBAL or not (math.isfinite(f) and math.isfinite(fp)):
            return np.array([np.nan, np.nan])
        return np.array([f, fp])

    def z_many(self, seeds, side: int) -> np.ndarray:
        seeds = np.asarray(seeds, dtype=float)
        slopes = np.array([self.seed_slope(a, side) for a in seeds])
        out = _kernels.integrate_many(seeds, slopes, side * self.x0, 0.0, self.step, *self.args, self.guard)
        pts = out[:, :2].copy()
        pts[out[:, 2] != _kernels.GLOBAL] = np.nan
        return pts

    def mismatch(self, aR: float, aL: float) -> np.ndarray:
        return self.z(aR, +1) - self.z(aL, -1)


def _tail_integral_flat(phi, x0):
    upper = x0
    while abs(phi(upper)) >= 1e-14 or abs(phi(upper + 1.0)) >= 1e-14:
        upper += 1.0
        if upper > x0 + 1e4:
            raise ValueError("forcing does not decay")
    if upper == x0:
        return 0.0
    return float(quad(phi, x0, upper, limit=200, epsabs=1e-300)[0])


# --------------------------------------------------------------------------
# Z curves


@dataclass(eq=False)
class ZCurve:
    """Polyline approximation of Z (``side='plus'``) or Z' (``side='minus'``) at x = 0.

    ``seeds[i]`` is the tail amplitude at ``+-x0`` that produced
    ``points[i]``.  ``gaps`` lists indices ``i`` where points ``i`` and
    ``i+1`` could not be brought within ``resolution`` (survival edges and
    window exits); segments are never drawn across a gap.
    """

    x0: float
    points: np.ndarray
    seeds: np.ndarray
    side: str
    resolution: float
    gaps: tuple = ()

    def segments(self):
        """Yield ``(i, p, q)`` for drawable consecutive pairs."""
        gaps = set(self.gaps)
        for i in range(len(self.points) - 1):
            if i not in gaps:
                yield i, self.points[i], self.points[i + 1]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["f", "fp"])
        for f, fp in self.points:
            w.writerow([repr(float(f)), repr(float(fp))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def trace_Z(x0: float, phi: PotentialProfile, f_samples=None, side: str = "plus", *,
            resolution: float = DEFAULT_RESOLUTION, window: float = DEFAULT_WINDOW,
            step: float = DEFAULT_STEP, guard: float = DEFAULT_GUARD, order: str = "corrected",
            max_points: int = 20000, _matcher=None) -> ZCurve:
    """Trace Z (or Z') at the plane x = 0 from tail seeds placed at ``x0`` (or ``-x0``).

    Seeds whose backward orbit blows up are discarded.  Between surviving
    neighbours the seed interval is bisected (geometrically) until the
    plane distance is below ``resolution``; points outside the box
    ``|f|, |f'| <= window`` are dropped.
    """
    if not x0 > 0:
        raise ValueError("x0 must be > 0")
    sgn = {"plus": 1, "minus": -1}[side]
    m = _matcher or _Matcher(phi, x0, step, guard, order)
    seeds = np.sort(np.asarray(default_f_samples() if f_samples is None else f_samples, dtype=float))
    if np.any(seeds <= 0):
        raise ValueError("f_samples must be positive")
    pts = m.z_many(seeds, sgn)

    def inside(p):
        return np.all(np.isfinite(p), axis=-1) & np.all(np.abs(p) <= window, axis=-1)

    S = list(seeds)
    P = [p for p in pts]
    ok = list(inside(pts))
    i = 0
    while i < len(S) - 1 and len(S) < max_points:
        if ok[i] and ok[i + 1]:
            far = np.hypot(*(P[i + 1] - P[i])) > resolution
        else:
            # refine toward a survival edge only a few levels
            far = ok[i] != ok[i + 1] and S[i + 1] / S[i] > 1 + 1e-3
        if far and S[i + 1] / S[i] > 1 + 1e-13:
            a = math.sqrt(S[i] * S[i + 1])
            p = m.z(a, sgn)
            S.insert(i + 1, a)
            P.insert(i + 1, p)
            ok.insert(i + 1, bool(inside(p[None, :])[0]))
            continue
        i += 1
    S = np.array(S)
    P = np.array(P)
    ok = np.array(ok)
    if not ok.any():
        raise ValueError("no global seeds")
    keep_idx = np.flatnonzero(ok)
    pts_k = P[keep_idx]
    gaps = []
    for j in range(len(keep_idx) - 1):
        contiguous = keep_idx[j + 1] == keep_idx[j] + 1
        if not contiguous or np.hypot(*(pts_k[j + 1] - pts_k[j])) > resolution:
            gaps.append(j)
    return ZCurve(float(x0), pts_k, S[keep_idx], side, resolution, tuple(gaps))


def _segment_intersections(A: ZCurve, B: ZCurve):
    """All proper crossings between drawable segments of two polylines."""
    out = []
    segB = list(B.segments())
    if not segB:
        return out
    jB = np.array([s[0] for s in segB])
    q = np.array([s[1] for s in segB])
    s = np.array([s[2] for s in segB]) - q
    for i, p, p2 in A.segments():
        r = p2 - p
        den = r[0] * s[:, 1] - r[1] * s[:, 0]
        qp = q - p
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
            u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / den
        hits = np.flatnonzero((den != 0) & (t >= 0) & (t < 1) & (u >= 0) & (u < 1))
        for k in hits:
            nr = np.hypot(*r)
            ns = np.hypot(*s[k])
            sin_angle = abs(den[k]) / (nr * ns) if nr > 0 and ns > 0 else 0.0
            out.append((i, int(jB[k]), float(t[k]), float(u[k]), p + t[k] * r, math.asin(min(1.0, sin_angle))))
    return out


# --------------------------------------------------------------------------
# refinement and profiles


def newton_seeds(matcher: _Matcher, aR: float, aL: float, tol: float = 1e-11, max_iter: int = 50):
    """2-D Newton on ``Z(aR) - Z'(aL)`` with a finite-difference Jacobian.

    Returns ``(aR, aL, |mismatch|, converged)``.
    """
    x = np.array([aR, aL], dtype=float)
    F = matcher.mismatch(*x)
    if not np.all(np.isfinite(F)):
        return x[0], x[1], math.inf, False
    for _ in range(max_iter):
        nF = float(np.hypot(*F))
        if nF < tol:
            return x[0], x[1], nF, True
        J = np.empty((2, 2))
        for k in range(2):
            dk = 1e-7 * max(abs(x[k]), 1e-4)
            xp = x.copy()
            xp[k] += dk
            Fp = matcher.mismatch(*xp)
            if not np.all(np.isfinite(Fp)):
                xp[k] -= 2 * dk
                Fp = matcher.mismatch(*xp)
                dk = -dk
            J[:, k] = (Fp - F) / dk
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return x[0], x[1], nF, False
        lam = 1.0
        while lam > 1e-6:
            xn = x + lam * dx
            Fn = matcher.mismatch(*xn)
            if np.all(np.isfinite(Fn)) and np.hypot(*Fn) < nF:
                break
            lam *= 0.5
        else:
            return x[0], x[1], nF, False
        x, F = xn, Fn
    nF = float(np.hypot(*F))
    return x[0], x[1], nF, nF < tol


def tail_value(a: float, x0: float, x):
    """Leading tail ``6/(|x| - d)**2`` through amplitude ``a`` at ``|x| = x0``; zero for ``a <= 0``."""
    x = np.abs(np.asarray(x, dtype=float))
    if a <= 0:
        return np.zeros_like(x)
    w = math.sqrt(6.0 / a)
    return 6.0 / (x - x0 + w) ** 2


def assemble_profile(matcher: _Matcher, aR: float, aL: float, grid: Grid, sub_step: float | None = None) -> np.ndarray:
    """Sample the matched orbit on ``grid``: RK4 inside ``[-x0, x0]``, tails outside."""
    x = grid.x
    x0 = matcher.x0
    out = np.empty(grid.n)
    step = sub_step or matcher.step
    sub = max(1, int(math.ceil(grid.dx / step)))
    for side, a in ((+1, aR), (-1, aL)):
        sel = (side * x >= 0) & (np.abs(x) <= x0) if side > 0 else (x < 0) & (np.abs(x) <= x0)
        nodes = np.sort(x[sel])[::-1] if side > 0 else np.sort(x[sel])
        xs = np.concatenate([[side * x0], nodes])
        if xs.size > 1 and xs[1] == xs[0]:
            xs = xs[1:]
            f_start = a
        else:
            f_start = a
        path = _kernels.integrate_path(f_start, matcher.seed_slope(a, side), xs, sub, *matcher.args, matcher.guard)
        vals = path[:, 0] if xs[0] != side * x0 or nodes.size == 0 or nodes[0] != xs[0] else path[:, 0]
        # drop the seed row when it is not a grid node
        if nodes.size and xs[0] == side * x0 and (nodes[0] != side * x0):
            vals = vals[1:]
        out[np.searchsorted(x, nodes)] = vals
        tail = np.abs(x) > x0
        tail &= (x > 0) if side > 0 else (x < 0)
        out[tail] = tail_value(a, x0, x[tail])
    return out


def polish(values: np.ndarray, grid: Grid, phi: PotentialProfile, far_field=(0.0, 0.0),
           tol: float = 1e-12, max_iter: int = 20) -> tuple[np.ndarray, float]:
    """Newton on the grid for ``D2 f - f**2 + phi = 0`` with Dirichlet values one node outside.

    The result is an exact fixed point of the IMEX step run with the same
    ``far_field``.  Returns the polished values and the final max residual.
    """
    f = np.array(values, dtype=float)
    dx2 = grid.dx**2
    ph = phi(grid.x)
    gl, gr = far_field
    ab = np.zeros((3, grid.n))
    ab[0, 1:] = 1.0 / dx2
    ab[2, :-1] = 1.0 / dx2
    res = math.inf
    for _ in range(max_iter):
        F = np.empty_like(f)
        F[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / dx2
        F[0] = (f[1] - 2 * f[0] + gl) / dx2
        F[-1] = (f[-2] - 2 * f[-1] + gr) / dx2
        F += ph - f * f
        res = float(np.max(np.abs(F)))
        if not math.isfinite(res):
            break
        if res < tol:
            break
        ab[1] = -2.0 / dx2 - 2.0 * f
        f = f - solve_banded((1, 1), ab, F)
    return f, res


@dataclass(eq=False)
class EquilibriumSolution:
    """A refined equilibrium with its grid profile.

    ``residual`` is the max of ``|f'' - f**2 + phi|`` on the grid (``diff2``
    stencils).  ``far_field`` holds the tail values one node beyond each
    end, for use as IMEX boundary data.
    """

    profile: GridFunction = field(repr=False)
    f0: float
    fp0: float
    residual: float
    n_unstable: int | None = None
    seeds: tuple = (math.nan, math.nan)
    far_field: tuple = (0.0, 0.0)
    status: str = "refined"
    mismatch: float = 0.0
    phi: PotentialProfile | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {"f0": self.f0, "fp0": self.fp0, "residual": self.residual, "n_unstable": self.n_unstable}

    def save(self, csv_path, json_path=None) -> None:
        self.profile.to_csv(csv_path)
        json_path = json_path or str(csv_path).rsplit(".", 1)[0] + ".json"
        with open(json_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


class EquilibriumList(list):
    """List of refined solutions, plus ``reason`` (why empty) and ``candidates`` (unrefined/tangential)."""

    def __init__(self, items=(), reason: str = "", candidates=()):
        super().__init__(items)
        self.reason = reason
        self.candidates = list(candidates)


def build_solution(matcher: _Matcher, aR: float, aL: float, grid: Grid, status="refined", mismatch=0.0) -> EquilibriumSolution:
    """Assemble, polish and package the equilibrium matched by seeds ``(aR, aL)``."""
    raw = assemble_profile(matcher, aR, aL, grid)
    ff = (float(tail_value(aL, matcher.x0, grid.x_min - grid.dx)), float(tail_value(aR, matcher.x0, grid.x_max + grid.dx)))
    vals, _ = polish(raw, grid, matcher.phi, ff)
    if not np.all(np.isfinite(vals)):
        vals = raw
    prof = GridFunction(grid, vals)
    res = float(np.max(np.abs(residual(prof, matcher.phi).values)))
    zR = matcher.z(aR, +1)
    zL = matcher.z(aL, -1)
    z = 0.5 * (zR + zL)
    return EquilibriumSolution(prof, float(z[0]), float(z[1]), res, None, (float(aR), float(aL)), ff,
                               status, float(mismatch), matcher.phi)


def _constant_equilibria(phi: PotentialProfile, grid: Grid) -> EquilibriumList:
    P = phi.param
    if P < 0:
        return EquilibriumList([], reason="constant forcing P < 0 admits no bounded solutions")
    sols = []
    for v in sorted({math.sqrt(P), -math.sqrt(P)}):
        prof = GridFunction(grid, np.full(grid.n, v))
        sols.append(EquilibriumSolution(prof, v, 0.0, abs(-v * v + P), None, (math.nan, math.nan), (v, v), "refined", 0.0, phi))
    return EquilibriumList(sols, reason="spatially constant equilibria of the autonomous problem")


def find_equilibria(phi: PotentialProfile, x0: float = DEFAULT_X0, grid: Grid | None = None, *,
                    f_samples=None, resolution: float = DEFAULT_RESOLUTION, step: float = DEFAULT_STEP,
                    order: str = "corrected", merge_distance: float = MERGE_DISTANCE) -> EquilibriumList:
    """All transversal matches of Z and Z' at x = 0, Newton-refined, as grid profiles.

    For constant forcing only the two constant solutions are returned.
    """
    grid = grid or Grid()
    if phi.family == "constant":
        return _constant_equilibria(phi, grid)
    nc = necessary_condition(phi, grid)
    if not nc.passes or not nc.window_test:
        why = "integral of phi is not positive" if not nc.passes else "a window violates the integral bound"
        return EquilibriumList([], reason=f"necessary condition fails: {why}")
    m = _Matcher(phi, x0, step, DEFAULT_GUARD, order)
    try:
        zp = trace_Z(x0, phi, f_samples, "plus", resolution=resolution, _matcher=m)
        zm = trace_Z(x0, phi, f_samples, "minus", resolution=resolution, _matcher=m)
    except ValueError as exc:
        return EquilibriumList([], reason=str(exc))
    crossings = _segment_intersections(zp, zm)
    sols, cands = [], []
    for i, j, t, u, pt, angle in crossings:
        aR = zp.seeds[i] * (zp.seeds[i + 1] / zp.seeds[i]) ** t
        aL = zm.seeds[j] * (zm.seeds[j + 1] / zm.seeds[j]) ** u
        aR, aL, mis, ok = newton_seeds(m, aR, aL)
        if not ok:
            cands.append({"status": "unrefined", "f0": float(pt[0]), "fp0": float(pt[1]), "mismatch": mis})
            continue
        z = m.z(aR, +1)
        if any(abs(z[0] - s.f0) < merge_distance and abs(z[1] - s.fp0) < merge_distance for s in sols):
            continue
        status = "refined" if angle > TRANSVERSAL_ANGLE else "tangential candidate"
        sol = build_solution(m, aR, aL, grid, status, mis)
        if status == "refined":
            sols.append(sol)
        else:
            cands.append({"status": status, "f0": sol.f0, "fp0": sol.fp0, "mismatch": mis})
    sols.sort(key=lambda s: (s.f0, s.fp0))
    reason = "" if sols else "matching conditions not met: Z and Z' do not intersect"
    return EquilibriumList(sols, reason=reason, candidates=cands)


# --------------------------------------------------------------------------
# necessary condition and series tail


@dataclass(frozen=True)
class NecessaryCondition:
    passes: bool
    integral: float
    window_test: bool


def necessary_condition(phi: PotentialProfile, grid: Grid | None = None) -> NecessaryCondition:
    """Integral test (``integral phi > 0``) plus the windowed slope-budget test.

    ``window_test`` is False when some window ``[A, B]`` of grid nodes has
    ``-integral_A^B phi > sqrt(8/3) (sup_{x<=A}|phi|**0.75 + sup_{x>=B}|phi|**0.75)``,
    which rules out bounded solutions.
    """
    grid = grid or Grid()
    integral = phi.integral(grid)
    x = grid.x
    v = phi(x)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * grid.dx)])
    a = np.abs(v) ** 0.75
    # sup over (-inf, x_i]: outside the grid phi equals its limit
    lim = abs(phi.limit) ** 0.75
    left = np.maximum(np.maximum.accumulate(a), lim)
    right = np.maximum(np.maximum.accumulate(a[::-1])[::-1], lim)
    # best A < B: maximize cum[A] - sqrt(8/3) left[A] - (cum[B] + sqrt(8/3) right[B])
    best_left = np.maximum.accumulate(cum - SQRT_8_3 * left)
    score = best_left[:-1] - cum[1:] - SQRT_8_3 * right[1:]
    window_ok = not bool(np.any(score > 0))
    return NecessaryCondition(bool(integral > 0), float(integral), window_ok)


@dataclass(frozen=True)
class SeriesTail:
    d: float
    K: float
    R: float
    alpha: float
    M: float
    A: np.ndarray
    valid: bool
    max_ratio: float

    def __post_init__(self):
        if self.M > 0 and not self.alpha > 5:
            raise ValueError("decay too slow for series bound")


def bound_coefficients(A1: float, order: int) -> np.ndarray:
    """``A_1..A_order`` from ``A_k = sum_{m=1}^{k-1} A_m A_{k-m} / ((k+6)(k-1))``."""
    if order < 1:
        raise ValueError("order must be >= 1")
    A = np.zeros(order + 1)
    A[1] = A1
    for k in range(2, order + 1):
        A[k] = np.dot(A[1:k], A[k - 1:0:-1]) / ((k + 6) * (k - 1))
    return A[1:]


def series_tail(d: float, K: float, phi: PotentialProfile, order: int, *, R: float | None = None,
                fit_length: float = 8.0, x_tail: float = DEFAULT_X0, M: float | None = None,
                alpha: float | None = None) -> SeriesTail:
    """Bounding series for the tail expansion around the pole ``d``.

    ``alpha`` and ``M`` are fitted from ``|phi|`` on ``[d + R, d + R + fit_length]``
    (``R`` defaults to ``x_tail - d``) by least squares on ``log|phi|``
    against ``log(x - d)``; ``M`` is then the smallest constant with
    ``|phi| <= M (x-d)**-alpha`` on the fit window.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if R is None:
        R = x_tail - d
    if not R > 0:
        raise ValueError("R must be > 0")
    if M is None or alpha is None:
        xs = np.linspace(d + R, d + R + fit_length, 400)
        ph = np.abs(phi(xs))
        if np.all(ph < 1e-300):
            M, alpha = 0.0, math.inf
        else:
            keep = ph > 1e-300
            lx = np.log(xs[keep] - d)
            slope, icpt = np.polyfit(lx, np.log(ph[keep]), 1)
            alpha = -slope
            if not alpha > 5:
                raise ValueError("decay too slow for series bound")
            logM = float(np.max(np.log(ph[keep]) + alpha * lx))
            M = math.exp(logM) if logM < 700 else math.inf
    if M == 0:
        A1 = abs(K)
        valid = True
    else:
        # log space: fast (e.g. Gaussian) decay fits a large alpha with huge M
        logM = math.log(M) if math.isfinite(M) else logM
        base = math.log((2 + alpha) * (alpha - 5))
        A1 = abs(K) + math.exp(logM - base - (alpha - 5) * math.log(R))
        valid = bool(logM < math.log(8.0) + base + (alpha - 4) * math.log(R))
    A = bound_coefficients(A1, order)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = A[1:] / A[:-1]
    ratios = ratios[np.isfinite(ratios)]
    max_ratio = float(ratios.max()) if ratios.size else 0.0
    return SeriesTail(float(d), float(K), float(R), float(alpha), float(M), A, valid, max_ratio)


class EquilibriumFinder(BaseEstimator):
    """Estimator front end: ``fit(phi)`` stores ``equilibria_`` and ``n_equilibria_``."""

    def __init__(self, x0=DEFAULT_X0, grid=None, resolution=DEFAULT_RESOLUTION, step=DEFAULT_STEP, order="corrected"):
        self.x0 = x0
        self.grid = grid
        self.resolution = resolution
        self.step = step
        self.order = order

    def fit(self, phi: PotentialProfile, y=None):
        grid = self.grid or Grid()
        self.equilibria_ = find_equilibria(phi, self.x0, grid, resolution=self.resolution, step=self.step, order=self.order)
        self.n_equilibria_ = len(self.equilibria_)
        return self

    def predict(self, X=None):
        """Grid profiles of the equilibria found."""
        check_is_fitted(self, "equilibria_")
        return [s.profile for s in self.equilibria_]
