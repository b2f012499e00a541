"""Uniform 1-D grids, sampled fields, forcing profiles and the variational functionals.

Everything downstream works on :class:`GridFunction` values sampled on a
:class:`Grid`.  Integrals use the trapezoid rule; derivatives use central
differences with one-sided second-order stencils at the two ends.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from ._validation import check_finite, check_values

if TYPE_CHECKING:
    from .imex import Trajectory

DEFAULT_X_MIN = -30.0
DEFAULT_X_MAX = 30.0
DEFAULT_N = 3001


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``n`` samples on ``[x_min, x_max]``."""

    x_min: float = DEFAULT_X_MIN
    x_max: float = DEFAULT_X_MAX
    n: int = DEFAULT_N

    def __post_init__(self):
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)):
            raise ValueError("grid bounds must be finite")
        if not self.x_min < self.x_max:
            raise ValueError(f"need x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"grid.n must be an integer >= 3, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        x = np.linspace(self.x_min, self.x_max, self.n)
        x.flags.writeable = False
        return x

    def refine(self) -> "Grid":
        """Grid with every interval halved (``n -> 2n - 1``)."""
        return Grid(self.x_min, self.x_max, 2 * self.n - 1)

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.n))

    def sample(self, fn) -> "GridFunction":
        return GridFunction(self, np.asarray(fn(self.x), dtype=float) * np.ones(self.n))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values sampled on a grid.  Values are copied and made read-only."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = check_values(self.values, self.grid.n)
        object.__setattr__(self, "values", v)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.grid.n

    def __add__(self, other):
        return self.with_values(self.values + _raw(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - _raw(other))

    def __rsub__(self, other):
        return self.with_values(_raw(other) - self.values)

    def __mul__(self, other):
        return self.with_values(self.values * _raw(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def to_csv(self, path=None) -> str:
        """Write ``x,value`` rows at full precision; returns the text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "value"])
        for xi, vi in zip(self.x, self.values):
            w.writerow([repr(float(xi)), repr(float(vi))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "GridFunction":
        """Read a CSV produced by :meth:`to_csv` (path or text)."""
        text = _read_text(source)
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != ["x", "value"]:
            raise ValueError("expected header 'x,value'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        if len(data) < 3:
            raise ValueError("need at least 3 samples")
        x = data[:, 0]
        grid = Grid(float(x[0]), float(x[-1]), len(x))
        if not np.allclose(x, grid.x, rtol=0, atol=1e-9 * max(1.0, abs(grid.x_max))):
            raise ValueError("samples are not on a uniform grid")
        return cls(grid, data[:, 1])


def _raw(other):
    if isinstance(other, GridFunction):
        return other.values
    return other


def _read_text(source) -> str:
    if isinstance(source, str) and "\n" in source:
        return source
    with open(source, newline="") as fh:
        return fh.read()


# --------------------------------------------------------------------------
# forcing profiles

_KIND_CODES = {"gauss-quad": 0, "gauss": 1, "constant": 2, "tabulated": 3}


@dataclass(frozen=True, eq=False)
class PotentialProfile:
    """The forcing term phi(x).

    Use the constructors :meth:`gaussian_quadratic`, :meth:`gaussian`,
    :meth:`constant` and :meth:`tabulated` rather than building one directly.
    Tabulated data are interpolated linearly and continued by the declared
    limit outside the table.
    """

    family: str
    param: float = 0.0
    table: GridFunction | None = None
    limit: float = 0.0

    def __post_init__(self):
        if self.family not in _KIND_CODES:
            raise ValueError(f"unknown profile family {self.family!r}")
        if self.family == "tabulated" and self.table is None:
            raise ValueError("tabulated profile needs a table")
        if self.family == "constant":
            object.__setattr__(self, "limit", float(self.param))

    @classmethod
    def gaussian_quadratic(cls, c: float) -> "PotentialProfile":
        """``(x**2 - c) * exp(-x**2 / 2)``."""
        return cls("gauss-quad", float(c))

    @classmethod
    def gaussian(cls, c: float) -> "PotentialProfile":
        """``c * exp(-x**2 / 2)``."""
        return cls("gauss", float(c))

    @classmethod
    def constant(cls, P: float) -> "PotentialProfile":
        return cls("constant", float(P))

    @classmethod
    def tabulated(cls, table: GridFunction, limit: float, tol: float = 1e-3) -> "PotentialProfile":
        """Profile from samples; both table ends must lie within ``tol`` of ``limit``."""
        v = table.values
        check_finite(v, "tabulated potential")
        if abs(v[0] - limit) > tol or abs(v[-1] - limit) > tol:
            raise ValueError(
                f"tabulated values do not approach the declared limit {limit} "
                f"within {tol} at the grid ends ({v[0]:.3g}, {v[-1]:.3g})"
            )
        return cls("tabulated", 0.0, table, float(limit))

    def with_param(self, value: float) -> "PotentialProfile":
        if self.family == "tabulated":
            raise ValueError("tabulated profiles have no scalar parameter")
        return PotentialProfile(self.family, float(value))

    @property
    def kind_code(self) -> int:
        return _KIND_CODES[self.family]

    def kernel_args(self):
        """(kind, param, table_x, table_v, limit) for the compiled integrators."""
        if self.table is not None:
            return (3, 0.0, np.ascontiguousarray(self.table.x), np.ascontiguousarray(self.table.values), self.limit)
        empty = np.zeros(1)
        return (self.kind_code, self.param, empty, empty, self.limit)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "gauss-quad":
            return (x * x - self.param) * np.exp(-0.5 * x * x)
        if self.family == "gauss":
            return self.param * np.exp(-0.5 * x * x)
        if self.family == "constant":
            return np.full_like(x, self.param)
        tx, tv = self.table.x, self.table.values
        return np.interp(x, tx, tv, left=self.limit, right=self.limit)

    def on(self, grid: Grid) -> GridFunction:
        return GridFunction(grid, self(grid.x))

    def integral(self, grid: Grid | None = None) -> float:
        """Integral of phi over the line (closed form where available)."""
        if self.family == "gauss-quad":
            return float(np.sqrt(2 * np.pi) * (1.0 - self.param))
        if self.family == "gauss":
            return float(np.sqrt(2 * np.pi) * self.param)
        if self.family == "constant":
            return float("inf") * np.sign(self.param) if self.param else 0.0
        g = grid or self.table.grid
        return float(np.trapezoid(self(g.x), g.x))

    def describe(self) -> dict:
        d = {"family": self.family, "param": self.param, "limit": self.limit}
        return d


# --------------------------------------------------------------------------
# norms and derivatives


class Norms(NamedTuple):
    l1: float
    l2: float
    linf: float


def norms(f: GridFunction) -> Norms:
    """Trapezoid L1 and L2 norms plus the max norm."""
    v = f.values
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite field")
    x = f.x
    return Norms(
        float(np.trapezoid(np.abs(v), x)),
        float(np.sqrt(np.trapezoid(v * v, x))),
        float(np.max(np.abs(v))),
    )


def diff2(f: GridFunction) -> GridFunction:
    """Second derivative: central differences inside, one-sided 4-point stencils at the ends."""
    v = f.values
    dx = f.grid.dx
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dx**2
    if f.grid.n >= 4:
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / dx**2
        out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / dx**2
    else:
        out[0] = out[-1] = out[1]
    return f.with_values(out)


def diff1(f: GridFunction) -> GridFunction:
    """First derivative by central differences (second order everywhere)."""
    return f.with_values(np.gradient(f.values, f.grid.dx, edge_order=2))


# --------------------------------------------------------------------------
# functionals


class ActionResult(float):
    """A float carrying a ``decaying`` flag for the tail check."""

    decaying: bool

    def __new__(cls, value, decaying=True):
        obj = super().__new__(cls, value)
        obj.decaying = decaying
        return obj


def action_density(f: GridFunction, phi: PotentialProfile, coefficients=None) -> np.ndarray:
    """Pointwise integrand of the action.

    With ``coefficients`` (arrays ``a_0..a_N`` of a general polynomial
    reaction ``sum a_i u**i``) the density is
    ``0.5 f'**2 - sum a_i f**(i+1) / (i+1)``; the default is the quadratic
    case ``0.5 f'**2 + f**3/3 - f*phi``.
    """
    v = f.values
    fp = np.gradient(v, f.grid.dx, edge_order=2)
    if coefficients is None:
        return 0.5 * fp * fp + v**3 / 3.0 - v * phi(f.x)
    dens = 0.5 * fp * fp
    for i, a in enumerate(coefficients):
        dens = dens - np.asarray(a) * v ** (i + 1) / (i + 1)
    return dens


def action(f: GridFunction, phi: PotentialProfile, tail_tol: float = 1e-3, coefficients=None) -> ActionResult:
    """Action ``integral(0.5 f'^2 + f^3/3 - f phi)`` by the trapezoid rule.

    Decreases along solutions of the parabolic flow.  If ``|f|`` at either
    grid end exceeds ``tail_tol`` a warning is issued and the result's
    ``decaying`` attribute is False.
    """
    check_finite(f.values, "field")
    decaying = max(abs(f.values[0]), abs(f.values[-1])) <= tail_tol
    if not decaying:
        warnings.warn("field does not decay at the grid ends; action is truncated", RuntimeWarning, stacklevel=2)
    val = float(np.trapezoid(action_density(f, phi, coefficients), f.x))
    return ActionResult(val, decaying)


def residual(f: GridFunction, phi: PotentialProfile) -> GridFunction:
    """``f'' - f**2 + phi`` on the grid."""
    return diff2(f) - f.values**2 + phi(f.x)


def energy(traj: "Trajectory", phi: PotentialProfile) -> float:
    """Space-time energy ``0.5 * integral(u_t**2 + (u_xx - u**2 + phi)**2)``.

    ``u_t`` is the forward difference between consecutive snapshots and the
    per-interval density is averaged trapezoidally in time.
    """
    if traj.blowup is not None:
        raise ValueError("energy undefined after blow-up")
    if len(traj.times) < 2:
        raise ValueError("energy needs at least two snapshots")
    x = traj.grid.x
    ph = phi(x)
    U = traj.values
    t = traj.times
    res = np.array([np.trapezoid((diff2(GridFunction(traj.grid, u)).values - u * u + ph) ** 2, x) for u in U])
    total = 0.0
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        ut = (U[k + 1] - U[k]) / dt
        kin = np.trapezoid(ut * ut, x)
        total += dt * (kin + 0.5 * (res[k] + res[k + 1]))
    return 0.5 * total
