"""Parabolic experiments: perturbed equilibria, fates, frontiers, heteroclines, Fujita fences."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import EquilibriumSolution
from .grid import Grid, GridFunction, PotentialProfile, action, energy, norms
from .imex import Reaction, Trajectory, evolve
from .spectrum import SchrodingerOp, eigs_above_edge

CONVERGENCE_TOL = 1e-3
TRAILING_FRACTION = 0.1
BOUNDARY_LAYER = 10.0
FUNNEL_TOL = 1e-6
MAX_DOUBLINGS = 4


# --------------------------------------------------------------------------
# perturbation directions


@dataclass(frozen=True)
class Gaussian:
    """Direction ``exp(-x**2 / width)``."""

    width: float = 10.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("width must be > 0")

    def vector(self, f_eq: GridFunction) -> np.ndarray:
        return np.exp(-f_eq.x**2 / self.width)


@dataclass(frozen=True)
class Eigenmix:
    """Direction ``e1 cos(theta) + e2 sin(theta)`` in the unstable plane of ``f_eq``.

    ``e1``, ``e2`` are the unit-L2 eigenfunctions of the two smallest
    positive eigenvalues, ascending.  Signs: each is positive at its
    largest entry, except that an odd-looking eigenfunction (more mass
    than half of it on one side) is made positive on x > 0.
    """

    theta: float

    def vector(self, f_eq: GridFunction) -> np.ndarray:
        e1, e2 = unstable_pair(f_eq)
        return math.cos(self.theta) * e1 + math.sin(self.theta) * e2


def _orient(v: np.ndarray, x: np.ndarray) -> np.ndarray:
    right = np.sum(v[x > 0])
    left = np.sum(v[x < 0])
    if right * left < 0 and abs(right + left) < 0.5 * (abs(right) + abs(left)):
        return v if right > 0 else -v
    return v if v[np.argmax(np.abs(v))] > 0 else -v


def unstable_pair(f_eq: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    """``(e1, e2)``: eigenfunctions of the two smallest positive eigenvalues of ``d2/dx2 - 2 f_eq``."""
    rep = eigs_above_edge(SchrodingerOp.linearization(f_eq), check_truncation=False)
    pos = [(lam, v) for lam, v in zip(rep.eigenvalues, rep.eigenfunctions) if lam > 0]
    if len(pos) < 2:
        raise ValueError(f"eigenmix needs >= 2 positive eigenvalues, found {len(pos)}")
    pos.sort(key=lambda p: p[0])
    x = f_eq.x
    return _orient(pos[0][1].values, x), _orient(pos[1][1].values, x)


def _unpack(f_eq, far_field):
    if isinstance(f_eq, EquilibriumSolution):
        return f_eq.profile, f_eq.far_field if far_field is None else far_field
    return f_eq, (0.0, 0.0) if far_field is None else far_field


def evolve_perturbed(f_eq, A: float, direction, phi: PotentialProfile, h: float = 1e-3, t_end: float = 10.0, *,
                     far_field=None, **kwargs) -> Trajectory:
    """IMEX run from ``f_eq + A * g``.

    ``f_eq`` may be an :class:`EquilibriumSolution`, whose tail values are
    then used as far-field data (pass ``far_field`` to override).
    """
    prof, ff = _unpack(f_eq, far_field)
    g = direction.vector(prof)
    u0 = prof.with_values(prof.values + A * g)
    return evolve(u0, h, t_end, Reaction.quadratic(phi, prof.grid), far_field=ff, **kwargs)


# --------------------------------------------------------------------------
# fate classification


@dataclass(frozen=True)
class FateReport:
    """``verdict`` is ``"converged"``, ``"blowup"`` or ``"undecided"``."""

    verdict: str
    horizon: float
    to: int | None = None
    sup_dist: float = math.nan
    t_star: float | None = None

    @property
    def key(self):
        return (self.verdict, self.to)

    def to_json(self) -> str:
        return json.dumps({"verdict": self.verdict, "horizon": self.horizon, "to": self.to,
                           "sup_dist": None if math.isnan(self.sup_dist) else self.sup_dist, "t_star": self.t_star})


def _window_mask(grid: Grid, window):
    if window is None:
        half = 0.5 * (grid.x_max - grid.x_min) - BOUNDARY_LAYER
        mid = 0.5 * (grid.x_max + grid.x_min)
        if half <= 0:
            return np.ones(grid.n, dtype=bool)
        return np.abs(grid.x - mid) <= half
    return np.abs(grid.x) <= window


def classify_fate(traj: Trajectory, equilibria, tol: float = CONVERGENCE_TOL, window: float | None = None) -> FateReport:
    """Converged, blow-up or undecided.

    Converged means the sup distance to one equilibrium stays below ``tol``
    at every snapshot of the trailing 10% of the horizon.  Distances are
    taken on ``|x| <= window`` (default: the grid minus a boundary layer of
    width 10 at each end, where truncated tails differ).
    """
    eqs = [e.profile if isinstance(e, EquilibriumSolution) else e for e in equilibria]
    if not eqs:
        raise ValueError("need at least one equilibrium")
    t0 = float(traj.times[0])
    t_end = float(traj.t_end if traj.t_end is not None else traj.times[-1])
    horizon = t_end - t0
    if traj.blowup is not None:
        return FateReport("blowup", horizon, t_star=traj.blowup.t_star)
    if traj.times[-1] < t_end - 0.5 * traj.h:
        return FateReport("undecided", horizon)
    mask = _window_mask(traj.grid, window)
    tail = traj.times >= t0 + (1.0 - TRAILING_FRACTION) * horizon - 1e-12
    best = (math.inf, None)
    for i, e in enumerate(eqs):
        d = np.max(np.abs(traj.values[tail][:, mask] - e.values[mask][None, :]), axis=1)
        worst = float(np.max(d))
        if worst < best[0]:
            best = (worst, i)
    if best[0] < tol:
        return FateReport("converged", horizon, best[1], best[0])
    return FateReport("undecided", horizon, sup_dist=best[0])


# --------------------------------------------------------------------------
# frontier search


class Frontier(float):
    """Bisection midpoint, with ``bracket``, ``undecided`` and the probe ``log``."""

    def __new__(cls, value, bracket, undecided=False, log=()):
        obj = super().__new__(cls, value)
        obj.bracket = tuple(bracket)
        obj.undecided = bool(undecided)
        obj.log = list(log)
        return obj


def frontier_search(f_eq, direction, A_lo: float, A_hi: float, tol: float, phi: PotentialProfile,
                    horizon: float, *, equilibria=None, h: float = 1e-3, vary: str = "A", A: float = 0.1,
                    max_doublings: int = MAX_DOUBLINGS, window: float | None = None, far_field=None) -> Frontier:
    """Bisect the basin boundary between ``A_lo`` and ``A_hi``.

    With ``vary="A"`` the amplitude along ``direction`` is bisected; with
    ``vary="theta"`` the eigenmix angle is bisected at fixed amplitude
    ``A`` (``direction`` is then ignored).  Undecided probes are rerun with
    the horizon doubled, at most ``max_doublings`` times; a probe that
    stays undecided ends the search with the current bracket.
    """
    if equilibria is None:
        equilibria = [f_eq]
    log = []

    def probe(p):
        T = horizon
        for _ in range(max_doublings + 1):
            if vary == "theta":
                traj = evolve_perturbed(f_eq, A, Eigenmix(p), phi, h, T, far_field=far_field)
            else:
                traj = evolve_perturbed(f_eq, p, direction, phi, h, T, far_field=far_field)
            rep = classify_fate(traj, equilibria, window=window)
            if rep.verdict != "undecided":
                break
            T *= 2
        log.append((p, rep))
        return rep

    lo, hi = float(A_lo), float(A_hi)
    r_lo, r_hi = probe(lo), probe(hi)
    if r_lo.verdict == "undecided" or r_hi.verdict == "undecided":
        return Frontier(0.5 * (lo + hi), (lo, hi), True, log)
    if r_lo.key == r_hi.key:
        raise ValueError("no bracket")
    while abs(hi - lo) >= tol:
        mid = 0.5 * (lo + hi)
        r = probe(mid)
        if r.verdict == "undecided":
            return Frontier(0.5 * (lo + hi), (lo, hi), True, log)
        if r.key == r_lo.key:
            lo = mid
        else:
            hi = mid
    return Frontier(0.5 * (lo + hi), (lo, hi), False, log)


# --------------------------------------------------------------------------
# heteroclinic construction and variational checks


def construct_heteroclinic(f_minus, f_plus, phi: PotentialProfile, eps: float = 0.5, h: float = 1e-3,
                           t_end: float = 300.0, *, far_field=None, max_snapshots: int = 2000,
                           tol: float = FUNNEL_TOL) -> Trajectory:
    """Evolve ``f_minus + eps (f_plus - f_minus)`` and anchor time at the midpoint crossing.

    Every snapshot is checked against ``f_minus <= u <= f_plus``; time is
    shifted so that ``u(0, 0)`` equals the midpoint of ``f_minus(0)`` and
    ``f_plus(0)`` (left unshifted if u(t, 0) never crosses it).  Far-field
    data default to those of ``f_plus``.
    """
    lo, _ = _unpack(f_minus, None)
    hi, ff = _unpack(f_plus, far_field)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if np.any(lo.values > hi.values):
        raise ValueError("f_minus must lie below f_plus")
    u0 = lo.with_values(lo.values + eps * (hi.values - lo.values))
    traj = evolve(u0, h, t_end, Reaction.quadratic(phi, lo.grid), far_field=ff, max_snapshots=max_snapshots)
    if traj.blowup is not None:
        raise RuntimeError("funnel breach: run blew up")
    below = float(np.max(lo.values[None, :] - traj.values))
    above = float(np.max(traj.values - hi.values[None, :]))
    if max(below, above) > tol:
        raise RuntimeError(f"funnel breach by {max(below, above):.3g}")
    i0 = int(np.argmin(np.abs(lo.x)))
    mid = 0.5 * (lo.values[i0] + hi.values[i0])
    s = traj.values[:, i0] - mid
    cross = np.flatnonzero(np.sign(s[:-1]) != np.sign(s[1:]))
    if cross.size:
        k = cross[0]
        w = s[k] / (s[k] - s[k + 1])
        t_mid = traj.times[k] + w * (traj.times[k + 1] - traj.times[k])
        traj = traj.shifted(-t_mid)
    return traj


@dataclass(frozen=True)
class VariationalCheck:
    """Monotonicity is tested on ``-A`` (increasing along the flow).

    ``max_decrease`` is the largest drop of ``-A`` between consecutive
    snapshots; the gap compares the energy with ``A(start) - A(end)``.
    """

    monotone: bool
    max_decrease: float
    energy_vs_action_gap: float
    action_drop: float = 0.0
    energy: float = 0.0


def verify_variational(traj: Trajectory, phi: PotentialProfile, tol: float = 1e-6) -> VariationalCheck:
    if traj.blowup is not None:
        raise ValueError("trajectory blew up")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        A = np.array([float(action(s, phi)) for s in traj.snapshots])
    ascent = -A
    steps = np.diff(ascent)
    allowed = tol * (1.0 + np.abs(A[1:]))
    max_dec = float(max(0.0, np.max(-steps))) if steps.size else 0.0
    monotone = bool(np.all(steps >= -allowed)) if steps.size else True
    E = energy(traj, phi) if len(traj) > 1 else 0.0
    drop = float(A[0] - A[-1])
    return VariationalCheck(monotone, max_dec, abs(E - drop), drop, float(E))


# --------------------------------------------------------------------------
# Fujita fence


@dataclass(eq=False)
class FujitaDiagnostic:
    times: np.ndarray
    J: np.ndarray
    w_l1: np.ndarray
    violation_time: float | None
    t_star: float | None = None
    t_star_limit: float | None = None
    consistent: bool | None = None

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "J", "w_l1"])
        for row in zip(self.times, self.J, self.w_l1):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def shifted_gaussian(grid: Grid, beta: float, x0: float) -> GridFunction:
    """``-beta exp(-beta**1.5 (x - x0)**2)``: narrow, deep, negative bump at ``x0``."""
    return grid.sample(lambda x: -beta * np.exp(-beta**1.5 * (x - x0) ** 2))


def fujita_experiment(f: GridFunction, h_init: GridFunction, x0: float, T: float, h: float = 1e-3, *,
                      blowup_threshold: float = 1e6, max_snapshots: int = 4000) -> FujitaDiagnostic:
    """Adjoint fence ``w_t = w_xx - 2 f w`` from a unit delta at ``x0`` against the nonlinear run.

    ``J(t) = integral w(t) h_init``.  The fence is violated at the first t
    with ``-J(t) > 1 / integral_0^t ds / ||w(s)||_1``.  The perturbation
    ``h`` itself is evolved under ``h_t = h_xx - 2 f h - h**2`` at steps h
    and h/2; ``t_star_limit`` is the extrapolated blow-up time, and when a
    violation exists ``consistent`` records whether it does not exceed the
    violation time.
    """
    if np.any(h_init.values > 0):
        raise ValueError("h_init must be <= 0 pointwise")
    if np.any(f.values < -1e-12):
        raise ValueError("f must be >= 0")
    if h_init.grid != f.grid:
        raise ValueError("fields live on different grids")
    grid = f.grid
    dx = grid.dx
    w0 = np.zeros(grid.n)
    w0[int(np.argmin(np.abs(grid.x - x0)))] = 1.0 / dx
    nsteps = max(1, int(round(T / h)))
    stride = max(1, int(math.ceil(nsteps / max_snapshots)))
    adj = evolve(GridFunction(grid, w0), h, T, Reaction.linear(-2.0 * f.values), stride=stride)
    times = adj.times
    W = adj.values
    J = W @ h_init.values * dx
    J[0] = h_init.values[int(np.argmin(np.abs(grid.x - x0)))]
    l1 = np.array([norms(GridFunction(grid, np.abs(w))).l1 for w in W])
    l1[0] = 1.0
    # integral of ds / ||w(s)||_1 by the trapezoid rule on the snapshot times
    inv = 1.0 / l1
    S = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(times))])
    with np.errstate(divide="ignore"):
        fence = np.where(S > 0, 1.0 / S, np.inf)
    hit = np.flatnonzero(-J > fence)
    violation = float(times[hit[0]]) if hit.size else None
    G = Reaction((0.0, -2.0 * f.values, -1.0))
    nl = evolve(h_init, h, T, G, blowup_threshold=blowup_threshold, max_snapshots=10)
    t_star = nl.blowup.t_star if nl.blowup is not None else None
    t_lim = None
    if t_star is not None:
        # the explicit reaction lags the continuum blow-up by O(h); remove the
        # leading term with a second run at h/2
        half = evolve(h_init, 0.5 * h, T, G, blowup_threshold=blowup_threshold, max_snapshots=10)
        if half.blowup is not None:
            t_lim = 2.0 * half.blowup.t_star - t_star
    consistent = None
    if violation is not None:
        consistent = t_lim is not None and t_lim <= violation
    return FujitaDiagnostic(times, J, l1, violation, t_star, t_lim, consistent)
