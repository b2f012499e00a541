"""Bound states of ``H = d2/dx2 - W(x)`` above the essential edge.

The operator is discretized on the interior nodes with zero values one
node outside, giving a symmetric tridiagonal matrix.  Eigenvalues are
located by Sturm-sequence bisection (exact counts in any interval) and
eigenvectors by inverse iteration.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import solve_banded

from .grid import Grid, GridFunction

EDGE_TOL = 5e-2


@numba.njit(cache=True, nogil=True)
def _count_below(diag, off2, x):
    """Number of eigenvalues of the tridiagonal (diag, off) strictly below ``x``."""
    count = 0
    d = 1.0
    for i in range(diag.shape[0]):
        d = diag[i] - x - (off2[i - 1] / d if i > 0 else 0.0)
        if d == 0.0:
            d = -1e-300
        if d < 0.0:
            count += 1
    return count


@numba.njit(cache=True, nogil=True)
def _bisect_top(diag, off2, k, lo, hi):
    """The ``k`` largest eigenvalues greater than ``lo`` (fewer if there are fewer), descending."""
    m = diag.shape[0]
    n_above = m - _count_below(diag, off2, lo)
    k = min(k, n_above)
    out = np.empty(k)
    for j in range(k):
        # eigenvalue index (ascending) m-1-j: find x with count_below(x) == m-1-j crossing
        target = m - 1 - j
        a, b = lo, hi
        for _ in range(200):
            mid = 0.5 * (a + b)
            if mid == a or mid == b:
                break
            if _count_below(diag, off2, mid) > target:
                b = mid
            else:
                a = mid
        out[j] = 0.5 * (a + b)
    return out


def _gershgorin(diag, off):
    r = np.zeros_like(diag)
    r[:-1] += np.abs(off)
    r[1:] += np.abs(off)
    return float(np.min(diag - r)), float(np.max(diag + r))


def _inverse_iteration(diag, off, lam, iters=3):
    m = diag.size
    ab = np.zeros((3, m))
    ab[0, 1:] = off
    ab[2, :-1] = off
    shift = lam + 1e-10 * max(1.0, abs(lam))
    ab[1] = diag - shift
    v = np.ones(m) / math.sqrt(m)
    v[::2] *= 1.0 + 1e-3
    for _ in range(iters):
        v = solve_banded((1, 1), ab, v, check_finite=False)
        v /= np.linalg.norm(v)
    return v


def sign_changes(v: np.ndarray, rel: float = 1e-7) -> int:
    """Sign changes of ``v``, ignoring entries below ``rel * max|v|``."""
    v = np.asarray(v)
    s = np.sign(v[np.abs(v) > rel * np.max(np.abs(v))])
    return int(np.count_nonzero(s[1:] != s[:-1]))


class Count(int):
    """Integer count carrying an ``ambiguous`` flag."""

    def __new__(cls, value, ambiguous=False):
        obj = super().__new__(cls, value)
        obj.ambiguous = bool(ambiguous)
        return obj

    def __sub__(self, other):
        return Count(int(self) - int(other), self.ambiguous or getattr(other, "ambiguous", False))


@dataclass(eq=False)
class SchrodingerOp:
    """``H = d2/dx2 - W`` on ``grid``; ``essential_edge = -lim W`` (default: mean of W's end values)."""

    grid: Grid
    W: GridFunction
    essential_edge: float | None = None
    limit_tol: float = EDGE_TOL

    def __post_init__(self):
        if self.W.grid != self.grid:
            raise ValueError("potential lives on a different grid")
        w = self.W.values
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite potential")
        tail = -0.5 * (w[0] + w[-1])
        if self.essential_edge is None:
            self.essential_edge = float(tail)
        elif abs(self.essential_edge - tail) > self.limit_tol * max(1.0, abs(tail)):
            raise ValueError(f"essential edge {self.essential_edge} inconsistent with tail average {tail}")

    @classmethod
    def linearization(cls, f: GridFunction, edge: float | None = 0.0):
        """``d2/dx2 - 2 f`` about an equilibrium; a decaying f has edge 0."""
        return cls(f.grid, GridFunction(f.grid, 2.0 * f.values), edge)

    def tridiagonal(self):
        dx2 = self.grid.dx**2
        diag = -2.0 / dx2 - self.W.values[1:-1]
        off = np.full(diag.size - 1, 1.0 / dx2)
        return diag, off

    def matvec(self, v: np.ndarray) -> np.ndarray:
        diag, off = self.tridiagonal()
        out = diag * v
        out[:-1] += off * v[1:]
        out[1:] += off * v[:-1]
        return out

    def top_eigenvalues(self, k: int, lower: float | None = None) -> np.ndarray:
        """Largest ``k`` eigenvalues (above ``lower`` if given), descending."""
        diag, off = self.tridiagonal()
        glo, ghi = _gershgorin(diag, off)
        lo = glo - 1.0 if lower is None else max(lower, glo - 1.0)
        return _bisect_top(diag, off * off, int(k), lo, ghi + 1.0)

    def extended(self, factor: float = 1.5) -> "SchrodingerOp":
        """Same operator on a domain ``factor`` times wider, W continued by its end values."""
        g = self.grid
        half = 0.5 * (g.x_max - g.x_min) * factor
        mid = 0.5 * (g.x_max + g.x_min)
        extra = int(round((half - 0.5 * (g.x_max - g.x_min)) / g.dx))
        g2 = Grid(mid - 0.5 * (g.x_max - g.x_min) - extra * g.dx, mid + 0.5 * (g.x_max - g.x_min) + extra * g.dx,
                  g.n + 2 * extra)
        w = np.concatenate([np.full(extra, self.W.values[0]), self.W.values, np.full(extra, self.W.values[-1])])
        return SchrodingerOp(g2, GridFunction(g2, w), self.essential_edge, self.limit_tol)


@dataclass(eq=False)
class SpectrumReport:
    """Eigenvalues above ``edge + margin`` (descending) with unit-L2 eigenfunctions.

    ``ambiguous`` holds eigenvalues inside ``(edge - margin, edge + margin]``;
    they are reported but never counted.  ``truncation_shift`` is the
    largest eigenvalue change when the domain is widened 1.5 times (NaN when
    the check was skipped).
    """

    eigenvalues: np.ndarray
    eigenfunctions: list = field(repr=False)
    n_positive: int
    edge: float
    margin: float
    ambiguous: np.ndarray = field(default_factory=lambda: np.empty(0))
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    oscillation_ok: bool = True
    truncation_shift: float = math.nan

    @property
    def edge_ambiguous(self) -> bool:
        return self.ambiguous.size > 0

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "eigenvalue"])
        for i, lam in enumerate(self.eigenvalues, start=1):
            w.writerow([i, repr(float(lam))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def eigs_above_edge(op: SchrodingerOp, margin: float | None = None, *, check_truncation: bool = True,
                    max_eigs: int = 200) -> SpectrumReport:
    """Discrete eigenvalues of ``op`` above ``essential_edge + margin``.

    ``margin`` defaults to ``1e-3 * max(1, max|W|)``.
    """
    if margin is None:
        margin = 1e-3 * max(1.0, float(np.max(np.abs(op.W.values))))
    if not margin > 0:
        raise ValueError("margin must be > 0")
    edge = float(op.essential_edge)
    diag, off = op.tridiagonal()
    lam_all = op.top_eigenvalues(max_eigs, lower=edge - margin)
    keep = lam_all > edge + margin
    lams = lam_all[keep]
    amb = lam_all[~keep]
    vecs, res, osc = [], [], True
    dx = op.grid.dx
    for j, lam in enumerate(lams):
        v = _inverse_iteration(diag, off, lam)
        full = np.concatenate([[0.0], v, [0.0]])
        nv = np.linalg.norm(v)
        res.append(float(np.linalg.norm(op.matvec(v) - lam * v) / nv))
        if sign_changes(v) != j:
            osc = False
        # unit L2 in the continuum sense, positive at its largest entry
        full /= math.sqrt(dx) * nv
        if full[np.argmax(np.abs(full))] < 0:
            full = -full
        vecs.append(GridFunction(op.grid, full))
    n_pos = int(np.count_nonzero(lams > 0)) if edge + margin >= 0 else int(np.count_nonzero(lams > margin))
    shift = math.nan
    if check_truncation and lams.size:
        big = op.extended(1.5).top_eigenvalues(lams.size, lower=edge - margin)
        k = min(big.size, lams.size)
        shift = float(np.max(np.abs(big[:k] - lams[:k]))) if k else math.nan
    return SpectrumReport(lams, vecs, n_pos, edge, float(margin), amb, np.array(res), osc, shift)


def count_positive(f: GridFunction, margin: float | None = None, check_truncation: bool = False) -> Count:
    """Unstable dimension of the equilibrium ``f``: positive eigenvalues of ``d2/dx2 - 2f``.

    The result is flagged ambiguous when an eigenvalue sits within the
    margin of 0.
    """
    rep = eigs_above_edge(SchrodingerOp.linearization(f), margin, check_truncation=check_truncation)
    return Count(rep.n_positive, rep.edge_ambiguous)


def connecting_dimension(f_minus: GridFunction, f_plus: GridFunction, margin: float | None = None) -> Count:
    """``count_positive(f_minus) - count_positive(f_plus)``; may be nonpositive."""
    return count_positive(f_minus, margin) - count_positive(f_plus, margin)


@dataclass(eq=False)
class OrbitSpectrum:
    """Top-k eigenvalue curves along a trajectory.

    ``n_positive[i]`` counts positive eigenvalues among the k computed
    values at snapshot ``i`` (and so saturates at k).
    """

    times: np.ndarray
    eigenvalues: np.ndarray
    gaps: np.ndarray
    n_positive: np.ndarray

    @property
    def min_gap(self) -> float:
        return float(np.min(self.gaps)) if self.gaps.size else math.inf

    def to_csv(self, path=None) -> str:
        k = self.eigenvalues.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"lambda_{j}" for j in range(1, k + 1)] + ["min_gap"])
        for t, row, g in zip(self.times, self.eigenvalues, self.gaps):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [repr(float(g))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def spectrum_along_orbit(traj, k: int = 3, stride: int = 1, n_jobs: int = 1) -> OrbitSpectrum:
    """Top-``k`` eigenvalues of ``d2/dx2 - 2u(t)`` on every ``stride``-th snapshot."""
    if traj.blowup is not None:
        raise ValueError("trajectory blew up")
    if k < 1 or stride < 1:
        raise ValueError("k and stride must be >= 1")
    idx = np.arange(0, len(traj.times), stride)
    grid = traj.grid

    def one(i):
        op = SchrodingerOp(grid, GridFunction(grid, 2.0 * traj.values[i]), essential_edge=None, limit_tol=math.inf)
        return op.top_eigenvalues(k)

    if n_jobs == 1:
        rows = [one(i) for i in idx]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            rows = list(ex.map(one, idx))
    lam = np.array(rows)
    gaps = np.min(lam[:, :-1] - lam[:, 1:], axis=1) if k > 1 else np.full(len(idx), math.inf)
    return OrbitSpectrum(traj.times[idx], lam, gaps, np.count_nonzero(lam > 0, axis=1))
