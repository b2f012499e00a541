"""Implicit-explicit time stepping for ``u_t = u_xx + G(u)``.

Each step inverts the diffusion exactly on the lattice,
``u_{n+1} = (I - h D2)^{-1} (u_n + h G(u_n))``, where the inverse is
evaluated as a pair of first-order recursive filters.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from ._validation import as_grid_function, check_finite, check_positive
from .grid import Grid, GridFunction, PotentialProfile, norms

UNBOUNDED = math.inf
DEFAULT_BLOWUP_THRESHOLD = 1e6
DEFAULT_MAX_SNAPSHOTS = 500


@dataclass(frozen=True, eq=False)
class Reaction:
    """Polynomial reaction ``G(u) = sum_i a_i(x) u**i``.

    ``coefficients[i]`` is a scalar or an array sampled on the grid.
    """

    coefficients: tuple

    def __post_init__(self):
        if len(self.coefficients) == 0:
            raise ValueError("reaction needs at least one coefficient")
        for a in self.coefficients:
            check_finite(np.asarray(a, dtype=float), "reaction coefficient")

    @classmethod
    def quadratic(cls, phi: PotentialProfile | GridFunction | float = 0.0, grid: Grid | None = None) -> "Reaction":
        """The flagship reaction ``-u**2 + phi``."""
        if isinstance(phi, PotentialProfile):
            if grid is None:
                raise ValueError("a profile needs a grid to be sampled on")
            a0 = phi(grid.x)
        elif isinstance(phi, GridFunction):
            a0 = phi.values
        else:
            a0 = float(phi)
        return cls((a0, 0.0, -1.0))

    @classmethod
    def linear(cls, potential) -> "Reaction":
        """``G(w) = potential * w`` (for adjoint / linearized problems)."""
        p = potential.values if isinstance(potential, GridFunction) else potential
        return cls((0.0, p))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def coefficient_matrix(self, grid: Grid) -> np.ndarray:
        out = np.empty((len(self.coefficients), grid.n))
        for i, a in enumerate(self.coefficients):
            out[i] = np.broadcast_to(np.asarray(a, dtype=float), (grid.n,))
        return out

    def __call__(self, u: GridFunction) -> GridFunction:
        v = u.values
        C = self.coefficient_matrix(u.grid)
        g = np.zeros_like(v)
        for i in range(C.shape[0] - 1, -1, -1):
            g = g * v + C[i]
        return u.with_values(g)

    def sup_coefficients(self) -> np.ndarray:
        return np.array([float(np.max(np.abs(a))) for a in self.coefficients])

    def majorant(self, z):
        """``g_inf(z) = sum ||a_i||_inf z**i``."""
        return np.polyval(self.sup_coefficients()[::-1], z)


@dataclass(frozen=True, eq=False)
class BlowUp:
    t_star: float
    norm_at_stop: float


@dataclass(eq=False)
class Trajectory:
    """Snapshots ``u(t_k)`` of an IMEX run, plus blow-up metadata."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray = field(repr=False)
    h: float
    blowup: BlowUp | None = None
    far_field: tuple = (0.0, 0.0)
    t_end: float | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.times), self.grid.n):
            raise ValueError("snapshots must align with times")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def snapshots(self) -> list[GridFunction]:
        return [GridFunction(self.grid, v) for v in self.values]

    def snapshot(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.values[k])

    @property
    def final(self) -> GridFunction:
        return self.snapshot(-1)

    def at(self, t: float) -> GridFunction:
        """Piecewise-linear interpolation in time."""
        ts = self.times
        if not ts[0] <= t <= ts[-1]:
            raise ValueError(f"t={t} outside [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t, side="right")) - 1
        if k >= len(ts) - 1:
            return self.snapshot(-1)
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return GridFunction(self.grid, (1 - w) * self.values[k] + w * self.values[k + 1])

    def shifted(self, dt: float) -> "Trajectory":
        b = None if self.blowup is None else BlowUp(self.blowup.t_star + dt, self.blowup.norm_at_stop)
        return Trajectory(self.grid, self.times + dt, self.values, self.h, b, self.far_field,
                          None if self.t_end is None else self.t_end + dt)

    def reversed(self) -> "Trajectory":
        """Same snapshots in reverse order on the same time stamps."""
        return Trajectory(self.grid, self.times, self.values[::-1], self.h, None, self.far_field, self.t_end)

    def sup_distance(self, target: GridFunction) -> np.ndarray:
        return np.max(np.abs(self.values - target.values[None, :]), axis=1)

    # serialization ------------------------------------------------------

    def metadata(self) -> dict:
        return {
            "h": self.h,
            "t_end": self.t_end if self.t_end is not None else float(self.times[-1]),
            "blowup": None if self.blowup is None else {"t_star": self.blowup.t_star,
                                                       "norm_at_stop": self.blowup.norm_at_stop},
            "grid": {"x_min": self.grid.x_min, "x_max": self.grid.x_max, "n": self.grid.n},
            "far_field": list(self.far_field),
        }

    def to_csv(self, path=None) -> str:
        """Long format ``t,x,value``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "value"])
        x = self.grid.x
        for t, row in zip(self.times, self.values):
            rt = repr(float(t))
            for xi, vi in zip(x, row):
                w.writerow([rt, repr(float(xi)), repr(float(vi))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def save(self, csv_path, json_path=None) -> None:
        self.to_csv(csv_path)
        json_path = json_path or str(csv_path).rsplit(".", 1)[0] + ".json"
        with open(json_path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2)

    @classmethod
    def load(cls, csv_path, json_path=None) -> "Trajectory":
        json_path = json_path or str(csv_path).rsplit(".", 1)[0] + ".json"
        with open(json_path) as fh:
            meta = json.load(fh)
        g = meta["grid"]
        grid = Grid(g["x_min"], g["x_max"], g["n"])
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        if [h.strip() for h in rows[0]] != ["t", "x", "value"]:
            raise ValueError("expected header 't,x,value'")
        data = np.array([[float(a) for a in r] for r in rows[1:]])
        times = data[:: grid.n, 0]
        values = data[:, 2].reshape(len(times), grid.n)
        b = meta.get("blowup")
        blowup = None if b is None else BlowUp(b["t_star"], b.get("norm_at_stop", math.inf))
        return cls(grid, times, values, meta["h"], blowup, tuple(meta.get("far_field", (0.0, 0.0))), meta["t_end"])


# --------------------------------------------------------------------------
# operations


def resolvent(f: GridFunction, h: float, far_field=(0.0, 0.0)) -> GridFunction:
    """Apply ``(I - h D2)^{-1}``.

    Values one node beyond each end are held at ``far_field`` (zero by
    default, i.e. decaying data).  Constants away from the ends, and
    everywhere when ``far_field`` equals the constant, are preserved to
    rounding.
    """
    h = check_positive(h, "h")
    v = np.ascontiguousarray(f.values, dtype=float)
    r = _kernels.filter_coefficient(f.grid.dx, h)
    u = np.empty_like(v)
    _kernels.resolvent_inplace(v, u, np.empty_like(v), r, float(far_field[0]), float(far_field[1]))
    return f.with_values(u)


def resolvent_direct(f: GridFunction, h: float) -> GridFunction:
    """O(n^2) trapezoid quadrature of ``(2 sqrt h)^{-1} int f(y) exp(-|x-y|/sqrt h) dy``.

    Reference implementation of the continuous resolvent on the line with
    zero data outside the grid.
    """
    h = check_positive(h, "h")
    x = f.x
    s = math.sqrt(h)
    w = np.full(x.shape, f.grid.dx)
    w[0] = w[-1] = 0.5 * f.grid.dx
    K = np.exp(-np.abs(x[:, None] - x[None, :]) / s) / (2 * s)
    return f.with_values(K @ (w * f.values))


def imex_step(u: GridFunction, h: float, G: Reaction, far_field=(0.0, 0.0)) -> GridFunction:
    """One step ``(I - h D2)^{-1}(u + h G(u))``.

    Raises :class:`FloatingPointError` if the intermediate state is not finite.
    """
    check_finite(u.values, "field")
    v = u.values + h * G(u).values
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite intermediate state (blow-up)")
    return resolvent(u.with_values(v), h, far_field)


def evolve(
    u0: GridFunction,
    h: float,
    t_end: float,
    G: Reaction,
    blowup_threshold: float = DEFAULT_BLOWUP_THRESHOLD,
    *,
    stride: int | None = None,
    max_snapshots: int = DEFAULT_MAX_SNAPSHOTS,
    far_field=(0.0, 0.0),
    stop=None,
) -> Trajectory:
    """Run the IMEX iteration from ``u0`` up to ``t_end``.

    Snapshots are kept every ``stride`` steps (by default chosen to keep
    about ``max_snapshots``).  The run stops early, with a
    :class:`BlowUp` record on the last snapshot, as soon as ``|u|`` exceeds
    ``blowup_threshold`` or turns non-finite.  ``stop(t, u)`` may end the
    run early by returning True; it is polled at snapshot times.
    """
    h = check_positive(h, "h")
    t_end = check_positive(t_end, "t_end")
    check_finite(u0.values, "initial data")
    nsteps = max(1, int(round(t_end / h)))
    if stride is None:
        stride = max(1, int(math.ceil(nsteps / max_snapshots)))
    grid = u0.grid
    coef = G.coefficient_matrix(grid)
    r = _kernels.filter_coefficient(grid.dx, h)
    gl, gr = float(far_field[0]), float(far_field[1])
    u = np.array(u0.values, dtype=float)
    times, snaps = [0.0], [u.copy()]
    done = 0
    blow = None
    while done < nsteps:
        chunk = min(stride, nsteps - done)
        taken, flag = _kernels.imex_advance(u, coef, h, r, gl, gr, chunk, blowup_threshold)
        done += taken
        t = done * h
        if flag:
            finite = u[np.isfinite(u)]
            nrm = float(np.max(np.abs(finite))) if finite.size and np.all(np.isfinite(u)) else math.inf
            times.append(t)
            snaps.append(u.copy())
            blow = BlowUp(t, nrm)
            break
        times.append(t)
        snaps.append(u.copy())
        if stop is not None and stop(t, u):
            break
    return Trajectory(grid, np.array(times), np.array(snaps), h, blow, (gl, gr), t_end)


def a_priori_horizon(B: float, G: Reaction, growth: float = 10.0) -> float:
    """Time for which the scalar majorant ``y' = g_inf(y), y(0) = B`` stays below ``growth * B``.

    Returns :data:`UNBOUNDED` (``inf``) when the majorant never reaches that
    level.  The quadratic case ``g_inf(y) = a0 + a1 y + a2 y**2`` is done in
    closed form; higher degrees are integrated numerically.
    """
    B = check_positive(B, "B", strict=False)
    a = G.sup_coefficients()
    # trailing zero coefficients do not change the majorant
    while len(a) > 1 and a[-1] == 0.0:
        a = a[:-1]
    target = growth * B if B > 0 else None
    if np.all(a == 0.0):
        return UNBOUNDED
    if target is None:
        # B = 0: only a forcing term can move y off zero
        if a[0] == 0.0:
            return UNBOUNDED
        target = growth * a[0]
    if len(a) <= 3:
        return _quadratic_hitting_time(B, target, *np.pad(a, (0, 3 - len(a))))
    sol = solve_ivp(lambda t, y: [np.polyval(a[::-1], y[0])], (0.0, 1e6), [B],
                    events=_level_event(target), rtol=1e-10, atol=1e-12)
    if sol.t_events[0].size:
        return float(sol.t_events[0][0])
    return UNBOUNDED


def _level_event(level):
    def ev(t, y):
        return y[0] - level
    ev.terminal = True
    return ev


def _quadratic_hitting_time(B, target, a0, a1, a2):
    """Time for ``y' = a0 + a1 y + a2 y^2`` (all coefficients >= 0) to go from B to target."""
    if a2 == 0.0:
        if a1 == 0.0:
            return (target - B) / a0 if a0 > 0 else UNBOUNDED
        return math.log((a1 * target + a0) / (a1 * B + a0)) / a1

    # integral of dy / (a2 y^2 + a1 y + a0) between B and target
    disc = a1 * a1 - 4 * a0 * a2

    def F(y):
        if disc < 0:
            s = math.sqrt(-disc)
            return 2.0 / s * math.atan((2 * a2 * y + a1) / s)
        if disc == 0:
            return -2.0 / (2 * a2 * y + a1)
        s = math.sqrt(disc)
        return math.log(abs((2 * a2 * y + a1 - s) / (2 * a2 * y + a1 + s))) / s

    return F(target) - F(B)


@dataclass
class ConvergenceTable:
    h: np.ndarray
    distances: np.ndarray
    ratios: np.ndarray

    def rows(self):
        for i, d in enumerate(self.distances):
            yield self.h[i], d, (self.ratios[i - 1] if i > 0 else float("nan"))


def convergence_study(u0: GridFunction, T: float, h_list, G: Reaction | None = None, far_field=(0.0, 0.0)) -> ConvergenceTable:
    """Pairwise L2 distances ``||u_h(T) - u_{h_next}(T)||`` for a decreasing list of steps.

    Raises ``RuntimeError`` naming the step sizes that blew up before ``T``.
    """
    hs = np.asarray(h_list, dtype=float)
    if len(hs) < 2 or not np.all(np.diff(hs) < 0):
        raise ValueError("h_list must be strictly decreasing with at least two entries")
    G = G or Reaction.quadratic(0.0)
    finals, bad = [], []
    for h in hs:
        traj = evolve(u0, h, T, G, max_snapshots=1, far_field=far_field)
        if traj.blowup is not None:
            bad.append(h)
        finals.append(traj.final)
    if bad:
        raise RuntimeError(f"blow-up before T={T} for h in {bad}")
    d = np.array([norms(finals[i] - finals[i + 1]).l2 for i in range(len(hs) - 1)])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = d[:-1] / d[1:]
    return ConvergenceTable(hs, d, ratios)


class IMEXSolver(BaseEstimator):
    """Estimator wrapper around :func:`evolve`.

    ``fit(u0, phi)`` runs the iteration and stores ``trajectory_``;
    ``predict(t)`` interpolates the stored run.
    """

    def __init__(self, h=1e-3, t_end=10.0, blowup_threshold=DEFAULT_BLOWUP_THRESHOLD,
                 max_snapshots=DEFAULT_MAX_SNAPSHOTS, far_field=(0.0, 0.0)):
        self.h = h
        self.t_end = t_end
        self.blowup_threshold = blowup_threshold
        self.max_snapshots = max_snapshots
        self.far_field = far_field

    def fit(self, u0, phi=None, reaction: Reaction | None = None, grid: Grid | None = None):
        u0 = as_grid_function(u0, grid)
        if reaction is None:
            reaction = Reaction.quadratic(phi if phi is not None else 0.0, u0.grid)
        self.reaction_ = reaction
        self.trajectory_ = evolve(u0, self.h, self.t_end, reaction, self.blowup_threshold,
                                  max_snapshots=self.max_snapshots, far_field=self.far_field)
        self.blowup_ = self.trajectory_.blowup
        return self

    def predict(self, t):
        check_is_fitted(self, "trajectory_")
        return self.trajectory_.at(t)
