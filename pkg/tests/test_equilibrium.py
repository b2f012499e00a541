import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadheat import Grid, GridFunction, PotentialProfile, residual
from quadheat.equilibrium import (
    EquilibriumFinder,
    Nonglobal,
    PhaseState,
    ZCurve,
    asymptotic_bc,
    bound_coefficients,
    find_equilibria,
    hamiltonian,
    in_funnel,
    integrate_phase,
    necessary_condition,
    series_tail,
    trace_Z,
)

ZERO = PotentialProfile.constant(0.0)
NINE = PotentialProfile.constant(9.0)


# --- Hamiltonian -----------------------------------------------------------

@pytest.mark.parametrize("P", [0.5, 1.0, 9.0])
def test_hamiltonian_vanishes_at_constant_root(P):
    s = PhaseState(math.sqrt(P), 0.0, 3.0)
    assert hamiltonian(s, PotentialProfile.constant(P)) == pytest.approx(0.0, abs=1e-12)


def test_hamiltonian_origin_constant_nine():
    assert hamiltonian(PhaseState(0.0, 0.0, 0.0), NINE) == pytest.approx(18.0, abs=1e-12)


def test_hamiltonian_negative_phi_requires_flag():
    neg = PotentialProfile.constant(-1.0)
    s = PhaseState(0.5, 0.1, 0.0)
    with pytest.raises(ValueError):
        hamiltonian(s, neg)
    assert hamiltonian(s, neg, negative="drop") == pytest.approx(0.5**3 / 3 - 0.005 + 0.5)
    assert hamiltonian(s, neg, negative="signed") == pytest.approx(0.5**3 / 3 - 0.005 + 0.5 - 2 / 3)


def test_hamiltonian_conserved_along_orbit():
    s = PhaseState(1.0, 0.5, 0.0)
    h0 = hamiltonian(s, NINE)
    for step in (0.02, 0.01):
        end = integrate_phase(s, 5.0, step, NINE)
        assert isinstance(end, PhaseState)
        assert abs(hamiltonian(end, NINE) - h0) < 50 * step**4


def test_phase_state_rejects_nonfinite():
    with pytest.raises(ValueError):
        PhaseState(math.nan, 0.0, 0.0)


# --- phase integration -----------------------------------------------------

def test_integrate_exact_pole_tail():
    d = -10.0
    s = PhaseState(6 / d**2, 12 / d**3, 0.0)  # f = 6/(x-d)^2, f' = -12/(x-d)^3
    end = integrate_phase(s, 20.0, 1e-3, ZERO)
    assert end.f == pytest.approx(6 / 900, rel=1e-8)


def test_integrate_constant_orbit():
    end = integrate_phase(PhaseState(3.0, 0.0, 0.0), 10.0, 1e-3, NINE)
    assert end.f == pytest.approx(3.0, abs=1e-12) and end.fp == pytest.approx(0.0, abs=1e-12)


def test_integrate_outside_funnel_blows_up():
    out = integrate_phase(PhaseState(4.0, 1.0, 0.0), 50.0, 1e-3, NINE)
    assert isinstance(out, Nonglobal) and 0 < out.x_blow < 50


def test_integrate_rejects_bad_step():
    with pytest.raises(ValueError):
        integrate_phase(PhaseState(0.0, 0.0, 0.0), 1.0, 0.0, NINE)


@settings(max_examples=20, deadline=None)
@given(f=st.floats(1e-4, 0.2), c=st.floats(-1.2, 0.75))
def test_tail_seed_trace_reversible(f, c):
    # seeds as placed by the Z tracer; orbits leaving its window are discarded there too
    phi = PotentialProfile.gaussian_quadratic(c)
    s = PhaseState(f, asymptotic_bc(f, 12.0, phi, "corrected"), 12.0)
    back = integrate_phase(s, 0.0, 1e-3, phi)
    if isinstance(back, Nonglobal) or max(abs(back.f), abs(back.fp)) > 50.0:
        return
    fwd = integrate_phase(back, 12.0, 1e-3, phi)
    assert abs(fwd.f - s.f) < 1e-6 and abs(fwd.fp - s.fp) < 1e-6


@settings(max_examples=25, deadline=None)
@given(P=st.floats(0.25, 4.0), u=st.floats(0.001, 0.999), v=st.floats(-1.0, 1.0))
def test_bounded_orbits_respect_funnel_bounds(P, u, v):
    # H(f, 0) = (f - sqrt P)^2 (f + 2 sqrt P) / 3, so the teardrop spans [-2 sqrt P, sqrt P]
    r = math.sqrt(P)
    f = -2 * r + u * 3 * r
    bound = math.sqrt(max(0.0, 2 * (f**3 / 3 - f * P + 2 / 3 * P**1.5)))
    fp = 0.999 * v * bound
    assert in_funnel(f, fp, P)
    phi = PotentialProfile.constant(P)
    s = PhaseState(f, fp, 0.0)
    for x in np.linspace(1.0, 10.0, 10):
        s = integrate_phase(s, x, 1e-3, phi)
        assert isinstance(s, PhaseState)
        assert -2 * r - 1e-6 <= s.f <= r + 1e-6
        assert abs(s.fp) <= math.sqrt(8 / 3) * P**0.75 + 1e-6


def test_bounded_orbit_goes_below_sqrt_3P():
    # a periodic orbit inside the teardrop dips below -sqrt(3P): that lower bound is not valid
    P = 1.0
    s = PhaseState(-1.95, 0.0, 0.0)
    assert in_funnel(s.f, s.fp, P)
    fs = []
    for x in np.linspace(0.5, 20.0, 40):
        s = integrate_phase(s, x, 1e-3, PotentialProfile.constant(P))
        fs.append(s.f)
    assert min(fs) < -math.sqrt(3 * P) and max(fs) <= 1.0


# --- asymptotic boundary condition ------------------------------------------

def test_asymptotic_bc_exact_tail_identity():
    x0, d = 12.0, 3.0
    f = 6 / (x0 - d) ** 2
    assert asymptotic_bc(f, x0, ZERO) == pytest.approx(-12 / (x0 - d) ** 3, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(f=st.floats(1e-4, 10.0))
def test_leading_bc_on_invariant_curve(f):
    fp = asymptotic_bc(f, 12.0, ZERO)
    assert f**3 / 3 == pytest.approx(0.5 * fp**2, rel=1e-12)


def test_corrected_bc_correction_vanishes_with_x0():
    phi = PotentialProfile.gaussian_quadratic(0.0)
    diffs = [abs(asymptotic_bc(0.05, x0, phi, "corrected") - asymptotic_bc(0.05, x0, phi)) for x0 in (4.0, 6.0, 8.0)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert asymptotic_bc(0.05, 12.0, phi, "corrected") == pytest.approx(asymptotic_bc(0.05, 12.0, phi), abs=1e-20)


def test_asymptotic_bc_rejects_nonpositive():
    with pytest.raises(ValueError):
        asymptotic_bc(0.0, 12.0, ZERO)


# --- Z curves --------------------------------------------------------------

def test_Z_without_forcing_is_invariant_curve():
    z = trace_Z(12.0, ZERO, np.logspace(-3, np.log10(2.0), 60))
    f, fp = z.points.T
    assert np.all(fp < 0)
    # plane distance to {3 fp^2 = 2 f^3}: |fp + sqrt(2/3) f^1.5| bounds it
    assert np.max(np.abs(fp + math.sqrt(2 / 3) * f**1.5)) < 1e-3


def test_Z_consecutive_points_within_resolution():
    z = trace_Z(12.0, PotentialProfile.gaussian(1.0), resolution=2e-2)
    for _, p, q in z.segments():
        assert np.hypot(*(q - p)) <= 2e-2 + 1e-12


def test_Z_positive_M_shape_crosses_both_axes():
    z = trace_Z(12.0, PotentialProfile.gaussian(1.0))
    f, fp = z.points.T
    assert np.any(fp > 0) and np.any(fp < 0)
    assert np.any(f < 0) and np.any(f > 0)
    # crossing of f = 0 with fp > 0
    idx = [i for i, p, q in z.segments() if p[0] * q[0] <= 0]
    assert any(z.points[i][1] > 0 for i in idx)


def test_Z_no_survivors_raises():
    with pytest.raises(ValueError, match="no global seeds"):
        trace_Z(12.0, PotentialProfile.constant(-1.0), [0.1, 0.2, 0.3])


def test_Z_csv_header():
    z = trace_Z(12.0, ZERO, [0.001, 0.01])
    assert z.to_csv().splitlines()[0] == "f,fp"
    assert isinstance(z, ZCurve)


def test_gaussian_small_amplitude_unique_equilibrium():
    sols = find_equilibria(PotentialProfile.gaussian(0.05))
    assert len(sols) == 1


# --- equilibria ------------------------------------------------------------

def _check_solution(s, phi):
    f = s.profile
    assert s.residual < 1e-6 * (1 + np.max(np.abs(f.values)))
    assert np.max(np.abs(residual(f, phi).values)) == pytest.approx(s.residual)
    assert abs(f.values[0]) < 0.1 and abs(f.values[-1]) < 0.1


def test_unique_equilibrium_negative_c(eq_m12):
    assert len(eq_m12) == 1
    _check_solution(eq_m12[0], PotentialProfile.gaussian_quadratic(-1.2))
    assert np.all(eq_m12[0].profile.values > 0)


def test_no_equilibria_beyond_fold():
    sols = find_equilibria(PotentialProfile.gaussian_quadratic(0.9))
    assert len(sols) == 0 and sols.reason


def test_ordered_pair(eq_04):
    assert len(eq_04) == 2
    lo, hi = eq_04
    assert np.all(lo.profile.values <= hi.profile.values)
    for s in eq_04:
        _check_solution(s, PotentialProfile.gaussian_quadratic(0.4))


def test_four_equilibria_near_pitchfork(eq_006):
    assert len(eq_006) == 4
    fp0 = sorted(s.fp0 for s in eq_006)
    assert fp0[0] < -1e-3 and fp0[-1] > 1e-3


def test_equilibria_distinct_beyond_merge_distance(eq_0, eq_006):
    for sols in (eq_0, eq_006):
        for i, a in enumerate(sols):
            for b in sols[i + 1:]:
                assert max(abs(a.f0 - b.f0), abs(a.fp0 - b.fp0)) > 1e-4


def test_constant_forcing_returns_roots():
    sols = find_equilibria(PotentialProfile.constant(4.0), grid=Grid(-5, 5, 101))
    assert [s.f0 for s in sols] == [-2.0, 2.0]
    s = PhaseState(2.0, 0.0, 0.0)
    assert hamiltonian(s, PotentialProfile.constant(4.0)) == pytest.approx(0.0, abs=1e-12)


def test_estimator_front_end():
    est = EquilibriumFinder().fit(PotentialProfile.gaussian_quadratic(-1.2))
    assert est.n_equilibria_ == 1
    assert isinstance(est.predict()[0], GridFunction)
    assert est.get_params()["x0"] == 12


def test_save_writes_profile_and_summary(tmp_path, eq_m12):
    eq_m12[0].save(tmp_path / "eq.csv")
    assert (tmp_path / "eq.csv").read_text().startswith("x,")
    assert '"f0"' in (tmp_path / "eq.json").read_text()


# --- necessary condition ---------------------------------------------------

def test_necessary_condition_fails_at_c_one():
    nc = necessary_condition(PotentialProfile.gaussian_quadratic(1.0))
    assert nc.integral == pytest.approx(0.0, abs=1e-10) and not nc.passes


@pytest.mark.parametrize("c", [0.1, 1.0, 5.0])
def test_necessary_condition_positive_gaussian(c):
    assert necessary_condition(PotentialProfile.gaussian(c)).passes


def test_necessary_condition_negative_gaussian():
    nc = necessary_condition(PotentialProfile.gaussian(-1.0))
    assert not nc.passes and not nc.window_test


# --- series tail -----------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(A1=st.floats(0.0, 1e3))
def test_second_bound_coefficient(A1):
    A = bound_coefficients(A1, 2)
    assert A[1] == pytest.approx(A1**2 / 8, rel=1e-14, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(R=st.floats(0.05, 50.0), frac=st.floats(0.01, 1.0))
def test_bound_ratio_below_R(R, frac):
    A = bound_coefficients(8 * R * frac, 31)
    ratios = A[2:] / A[1:-1]  # A_{k+1}/A_k for k = 2..30
    assert np.all(ratios <= R * (1 + 1e-12))


def test_recursion_matches_definition():
    A = bound_coefficients(0.7, 6)
    for k in range(2, 7):
        s = sum(A[m - 1] * A[k - m - 1] for m in range(1, k))
        assert A[k - 1] == pytest.approx(s / ((k + 6) * (k - 1)))


def test_series_tail_without_forcing_vanishes():
    st_ = series_tail(0.0, 0.0, ZERO, 10, R=12.0)
    assert np.all(st_.A == 0) and st_.valid


def test_series_tail_gaussian_is_valid():
    st_ = series_tail(0.0, 0.0, PotentialProfile.gaussian_quadratic(0.0), 20, R=12.0)
    assert st_.valid and st_.alpha > 5 and st_.A[0] <= 8 * st_.R


def test_series_tail_slow_decay_rejected():
    x = np.linspace(-200, 200, 4001)
    slow = PotentialProfile.tabulated(GridFunction(Grid(-200, 200, 4001), 1.0 / (1 + x**2) ** 1.5), 0.0)
    with pytest.raises(ValueError, match="decay too slow"):
        series_tail(0.0, 0.0, slow, 5, R=12.0)
