import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from quadheat import Grid, GridFunction, PotentialProfile, action, energy, norms, residual
from quadheat.grid import diff1, diff2
from quadheat.imex import BlowUp, Trajectory


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(1.0, 0.0, 10)
    with pytest.raises(ValueError):
        Grid(0.0, 1.0, 2)
    g = Grid(-1, 1, 21)
    assert g.dx == pytest.approx(0.1)
    assert g.x[0] == -1 and g.x[-1] == 1


def test_gridfunction_length_and_immutability():
    g = Grid(0, 1, 11)
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(5))
    f = GridFunction(g, np.ones(11))
    with pytest.raises(ValueError):
        f.values[0] = 3.0


def test_norms_trivial():
    assert tuple(norms(Grid(-3, 3, 31).zeros())) == (0.0, 0.0, 0.0)
    n = norms(GridFunction(Grid(0, 1, 101), np.ones(101)))
    assert n.l1 == pytest.approx(1) and n.l2 == pytest.approx(1) and n.linf == 1


def test_norms_gaussian_against_quadrature():
    g = Grid(-20, 20, 4001)
    ref, _ = quad(lambda x: math.exp(-x * x / 2), -20, 20)
    assert abs(norms(g.sample(lambda x: np.exp(-x**2 / 2))).l1 - ref) < 1e-6


def test_norms_nonfinite():
    g = Grid(0, 1, 5)
    f = GridFunction.__new__(GridFunction)
    object.__setattr__(f, "grid", g)
    object.__setattr__(f, "values", np.array([0, 1, np.nan, 0, 0.0]))
    with pytest.raises(ValueError, match="non-finite field"):
        norms(f)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(0, 2**31 - 1))
def test_norms_homogeneous(alpha, seed):
    g = Grid(-5, 5, 101)
    f = GridFunction(g, np.random.default_rng(seed).normal(size=101))
    a, b = norms(f), norms(f * alpha)
    for u, v in zip(a, b):
        assert v == pytest.approx(abs(alpha) * u, rel=1e-12, abs=1e-12)


def test_diff2_examples():
    g = Grid(-1, 1, 21)
    assert np.allclose(diff2(g.sample(lambda x: x**2)).values[1:-1], 2.0, atol=1e-10)
    assert np.allclose(diff2(GridFunction(g, np.full(21, 5.0))).values, 0.0)
    g = Grid(0, 5, 2001)
    f = g.sample(lambda x: 6 / (x + 10) ** 2)
    assert np.max(np.abs(diff2(f).values - f.values**2)) < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_diff2_annihilates_affine(a, b):
    g = Grid(-2, 3, 41)
    assert np.max(np.abs(diff2(g.sample(lambda x: a * x + b)).values)) < 1e-10


def test_diff1_linear():
    g = Grid(0, 1, 11)
    assert np.allclose(diff1(g.sample(lambda x: 3 * x)).values, 3.0)


def test_potential_families():
    x = np.linspace(-3, 3, 7)
    assert np.allclose(PotentialProfile.gaussian_quadratic(0.4)(x), (x**2 - 0.4) * np.exp(-x**2 / 2))
    assert np.allclose(PotentialProfile.gaussian(2.0)(x), 2 * np.exp(-x**2 / 2))
    assert np.all(PotentialProfile.constant(9.0)(x) == 9.0)
    assert PotentialProfile.gaussian_quadratic(1.0).integral() == 0.0


def test_tabulated_limit_checked():
    g = Grid(-10, 10, 201)
    t = g.sample(lambda x: np.exp(-x**2))
    p = PotentialProfile.tabulated(t, 0.0)
    assert p(0.0) == pytest.approx(1.0)
    assert p(100.0) == 0.0
    with pytest.raises(ValueError):
        PotentialProfile.tabulated(GridFunction(g, np.ones(201)), 0.0)


def test_csv_round_trip(tmp_path):
    g = Grid(-1, 1, 7)
    f = g.sample(lambda x: np.sin(x) / 3)
    text = f.to_csv(tmp_path / "f.csv")
    assert text.splitlines()[0] == "x,value"
    back = GridFunction.from_csv(tmp_path / "f.csv")
    assert back.grid == g and np.array_equal(back.values, f.values)


def test_action_zero_field():
    assert float(action(Grid().zeros(), PotentialProfile.gaussian_quadratic(0.3))) == 0.0


def test_action_against_quadrature():
    phi = PotentialProfile.gaussian(1.0)
    g = Grid(-15, 15, 6001)
    f = g.sample(lambda x: np.exp(-x**2))
    ref, _ = quad(lambda x: 0.5 * (2 * x * math.exp(-x * x)) ** 2 + math.exp(-3 * x * x) / 3
                  - math.exp(-x * x) * math.exp(-x * x / 2), -15, 15)
    assert float(action(f, phi)) == pytest.approx(ref, rel=1e-4)


def test_action_refinement_second_order():
    phi = PotentialProfile.gaussian(1.0)
    vals = []
    for n in (301, 601, 1201):
        g = Grid(-15, 15, n)
        vals.append(float(action(g.sample(lambda x: np.exp(-x**2)), phi)))
    ratio = (vals[0] - vals[1]) / (vals[1] - vals[2])
    assert ratio > 3.5


def test_action_warns_without_decay():
    g = Grid(-5, 5, 101)
    with pytest.warns(RuntimeWarning):
        a = action(GridFunction(g, np.ones(101)), PotentialProfile.gaussian(0.0))
    assert not a.decaying


@pytest.mark.filterwarnings("ignore:field does not decay")
def test_action_distinguishes_equilibria(eq_04):
    phi = PotentialProfile.gaussian_quadratic(0.4)
    lo, hi = eq_04
    a_lo, a_hi = float(action(lo.profile, phi)), float(action(hi.profile, phi))
    assert a_lo != pytest.approx(a_hi, abs=1e-3)
    # the flow lowers the action, so the stable equilibrium has the smaller value
    assert a_hi < a_lo


def test_residual_of_equilibrium(eq_m12):
    phi = PotentialProfile.gaussian_quadratic(-1.2)
    f = eq_m12[0].profile
    assert np.max(np.abs(residual(f, phi).values)) < 1e-6


def test_energy_constant_trajectory_is_zero(eq_m12):
    f = eq_m12[0].profile
    traj = Trajectory(f.grid, [0.0, 1.0, 2.0], np.array([f.values] * 3), 1e-3)
    assert energy(traj, PotentialProfile.gaussian_quadratic(-1.2)) < 1e-12


def test_energy_rejects_blowup():
    g = Grid(-1, 1, 5)
    traj = Trajectory(g, [0.0, 1.0], np.zeros((2, 5)), 0.1, BlowUp(1.0, 1e7))
    with pytest.raises(ValueError, match="energy undefined after blow-up"):
        energy(traj, PotentialProfile.gaussian(0.0))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_energy_nonnegative(seed):
    g = Grid(-5, 5, 51)
    v = np.random.default_rng(seed).normal(size=(4, 51))
    traj = Trajectory(g, [0.0, 0.1, 0.3, 0.6], v, 0.1)
    assert energy(traj, PotentialProfile.gaussian(0.5)) >= 0
