import math

import numpy as np
import pytest

from quadheat import Grid, PotentialProfile, find_equilibria
from quadheat.bifurcation import (
    Branch,
    BranchPoint,
    ConstantMatching,
    Event,
    TailMatching,
    continue_branch,
    detect_events,
    export_diagram,
    import_diagram,
    seed_point,
)


def _events(branches, kind):
    return [e for b in branches for e in b.events if e.kind == kind]


def _constant_branch(annotate=False):
    seed = BranchPoint(1.0, 1.0, 0.0, seeds=(1.0, 0.0))
    return continue_branch(seed, 1.0, 9.0, 0.05, problem=ConstantMatching(), grid=Grid(-5, 5, 101),
                           annotate=annotate)


def test_constant_forcing_branch_has_no_events():
    b = _constant_branch()
    assert b.events == []
    assert b.c[0] == 1.0 and b.c[-1] <= 9.0 and b.c[-1] > 8.9
    assert np.allclose(b.f0, np.sqrt(b.c), atol=1e-10)


def test_seed_refinement_failure_raises():
    with pytest.raises(RuntimeError, match="seed refinement failed"):
        continue_branch(BranchPoint(-1.0, 1.0, 0.0, seeds=(1.0, 0.0)), -1.0, 1.0, problem=ConstantMatching(),
                        annotate=False)


def test_bad_step_rejected():
    with pytest.raises(ValueError):
        continue_branch(BranchPoint(1.0, 1.0, 0.0), 1.0, 2.0, 0.0, problem=ConstantMatching())


def test_unknown_seed_branch():
    with pytest.raises(ValueError):
        seed_point("middle")


def test_detect_events_needs_three_points():
    assert detect_events(Branch([BranchPoint(0.0, 0.0, 0.0)] * 2)) == []


def test_detect_fold_on_synthetic_branch():
    s = np.linspace(-1, 1, 21)
    pts = [BranchPoint(float(0.5 - t**2), float(t), 0.1) for t in s]
    ev = detect_events(Branch(pts))
    assert [e.kind for e in ev] == ["fold"] and ev[0].c == pytest.approx(0.5, abs=1e-3)


def test_export_empty_is_header_only():
    p, e = export_diagram([])
    assert p == "c,f0,fp0,n_unstable,smallest_abs_eig,branch_id\n"
    assert e == "kind,c,branch_id\n"


def test_export_round_trip(tmp_path):
    b = _constant_branch(annotate=True)
    b.events = [Event("fold", 0.123456789012345)]
    b.branch_id = 3
    p, e = export_diagram([b], tmp_path / "p.csv", tmp_path / "e.csv")
    back = import_diagram((tmp_path / "p.csv").read_text(), (tmp_path / "e.csv").read_text())
    assert back == [b]
    assert export_diagram(back) == (p, e)


# --- the (x^2 - c) exp(-x^2/2) diagram -------------------------------------

def test_fold_value(diagram):
    folds = _events(diagram, "fold")
    assert folds and all(abs(e.c - 0.7706) < 0.02 for e in folds)


def test_pitchfork_value_and_verified(diagram):
    pf = [e for e in _events(diagram, "pitchfork") if e.info.get("verified")]
    assert pf and all(abs(e.c - 0.0501) < 0.01 for e in pf)


def test_symmetric_branch_end(diagram):
    ends = [e.c for e in _events(diagram, "end") if e.c < 0]
    assert ends and all(abs(c + 0.4652) < 0.05 for c in ends)


def test_fork_arm_end(diagram):
    ends = [e.c for b in diagram for e in b.events if e.kind == "end" and np.median(np.abs(b.fp0)) > 1e-3]
    assert ends and all(abs(c - 0.0740) < 0.01 for c in ends)


def test_end_event_carries_existence_diagnostics(diagram):
    ends = _events(diagram, "end")
    assert all(len(e.info.get("existence", [])) == 5 for e in ends if "amplitude" in e.info.get("cause", ""))


def test_counts_change_only_at_events(diagram):
    for b in diagram:
        event_c = [e.c for e in b.events]
        for p, q in zip(b.points, b.points[1:]):
            if p.n_unstable == q.n_unstable:
                continue
            near_event = any(min(p.c, q.c) - 0.01 <= c <= max(p.c, q.c) + 0.01 for c in event_c)
            near_zero = min(p.smallest_abs_eig, q.smallest_abs_eig) < 0.05
            assert near_event or near_zero, (p, q)


def test_counts_are_zero_one_two(diagram):
    for b in diagram:
        assert {p.n_unstable for p in b.points} <= {0, 1, 2}


def test_fold_is_local_extremum(diagram):
    for b in diagram:
        for e in b.events:
            if e.kind != "fold":
                continue
            k = e.info["index"]
            cs = b.c[max(0, k - 3):k + 4]
            assert b.c[k] == pytest.approx(cs.max(), abs=1e-12) or b.c[k] == pytest.approx(cs.min(), abs=1e-12)


def test_points_rerefine_from_scratch(diagram):
    b = max(diagram, key=lambda b: len(b.points))
    for p in (b.points[len(b.points) // 4], b.points[len(b.points) // 2]):
        sols = find_equilibria(PotentialProfile.gaussian_quadratic(p.c))
        assert min(math.hypot(s.f0 - p.f0, s.fp0 - p.fp0) for s in sols) < 1e-6


def test_consecutive_points_within_arclength(diagram):
    for b in diagram:
        d = np.hypot(np.hypot(np.diff(b.c), np.diff(b.f0)), np.diff(b.fp0))
        assert np.all(d < 3 * 5e-3)


@pytest.mark.slow
def test_half_step_reproduces_events(diagram):
    problem = TailMatching()
    seed = seed_point("upper", problem)
    fine = continue_branch(seed, 0.0, 0.8, 2.5e-3, problem=problem, window=(-0.5, 0.8))
    coarse = next(b for b in diagram if b.points[0].c == 0.0 and b.points[0].f0 == seed.f0 and
                  any(p.c > 0.1 for p in b.points))
    for kind, tol in (("fold", 0.02), ("pitchfork", 0.01), ("end", 0.05)):
        a = sorted(e.c for e in coarse.events if e.kind == kind)
        f = sorted(e.c for e in fine.events if e.kind == kind)
        assert len(a) == len(f)
        assert all(abs(x - y) <= 2 * tol for x, y in zip(a, f))
