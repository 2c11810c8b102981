import itertools

import numpy as np
import pytest

from micpkit.errors import ModelError
from micpkit.milp import (
    CutRecord,
    MilpProblem,
    MilpRow,
    chvatal_gomory_round,
    extract_terminal_lp,
    milp_solve,
    value_function_row,
)
from micpkit.simplex import LpProblem, lp_solve

LOG1PE = float(np.log1p(np.e))


def _enumerate_reference(prob):
    grids = []
    for i in range(prob.n):
        if prob.integer[i]:
            grids.append(np.arange(prob.lb[i], prob.ub[i] + 0.5))
        else:
            grids.append(None)
    best = np.inf
    A = np.vstack([r.cy for r in prob.all_rows()]) if prob.all_rows() else None
    b = np.array([r.at_param(prob.x_param) for r in prob.all_rows()]) if prob.all_rows() else None
    for combo in itertools.product(*[g if g is not None else [None] for g in grids]):
        lb, ub = prob.lb.copy(), prob.ub.copy()
        for i, v in enumerate(combo):
            if v is not None:
                lb[i] = ub[i] = v
        sol = lp_solve(LpProblem.build(prob.c, A, b, None, None, lb, ub))
        if sol.status == "optimal":
            best = min(best, sol.obj)
    return best


def test_master_with_bound_cut_appended():
    prob = MilpProblem(
        c=[1, 2, 1],
        rows=[MilpRow(cx=[], cy=[-3, -1, 0], rhs=-2), MilpRow(cx=[], cy=[-1, 0, 0], rhs=-1)],
        integer=[True, True, False], lb=[0, 0, 0], ub=[1, 1, 20],
    )
    res = milp_solve(prob, "bb")
    assert res.status == "optimal"
    assert np.allclose(res.y[:2], [1, 0])


def test_cutting_plane_reproduces_walkthrough_master():
    prob = MilpProblem(
        c=[1, 2, 1], rows=[MilpRow(cx=[], cy=[-3, -1, 0], rhs=-2)],
        integer=[True, True, False], lb=[0, 0, 0], ub=[1, 1, 20],
    )
    res = milp_solve(prob, "cp")
    assert res.status == "optimal"
    assert np.allclose(res.root_point[:2], [2 / 3, 0], atol=1e-9)
    assert np.allclose(res.y, [1, 0, 0], atol=1e-9)
    # the empty-branch split yields the plain bound cut on the first variable
    assert res.cuts and np.allclose(res.cuts[0].row.cy, [-1, 0, 0])
    assert res.cuts[0].row.rhs == pytest.approx(-1.0)


def test_scenario_rounding_cut_and_terminal_lp():
    # joint tangent row anchored at the fractional first stage
    tangent = MilpRow(cx=[-1.0, -1.0], cy=[-1.2725823685, -0.5858440560],
                      rhs=-(0.9191437724 + 2.0 / 3.0))
    prob = MilpProblem(
        c=[0.5, 1.0], rows=[], integer=[True, True], lb=[0, 0], ub=[10, 10],
        l1=2, x_param=[1.0, 0.0],
        cut_rows=[CutRecord(row=tangent, provenance="supporting", iteration=0)],
    )
    res = milp_solve(prob, "cp")
    assert res.status == "optimal"
    assert np.allclose(res.y, [1, 0])
    assert res.obj == pytest.approx(0.5)
    cg = [c for c in res.cuts if c.provenance == "gomory"]
    assert cg and np.allclose(cg[0].row.cx, [-1, -1]) and np.allclose(cg[0].row.cy, [-1, -1])
    assert cg[0].row.rhs == pytest.approx(-2.0)

    terminal = extract_terminal_lp(res, prob)
    rows = {tuple(np.round(np.concatenate([r.cx, r.cy, [r.rhs]]), 6)) for r in terminal.rows}
    assert (-1.0, -1.0, -1.0, -1.0, -2.0) in rows
    assert terminal.obj == pytest.approx(0.5)
    # fidelity across the other binary parameter values: still a lower bound
    for bits in itertools.product((0.0, 1.0), repeat=2):
        sol = lp_solve(terminal.lp_at(np.array(bits)))
        assert sol.status == "optimal"


def test_integral_relaxation_returns_no_cuts():
    prob = MilpProblem(
        c=[1.0, 1.0], rows=[MilpRow(cx=[], cy=[-1.0, 0.0], rhs=-1.0)],
        integer=[True, True], lb=[0, 0], ub=[3, 3],
    )
    res = milp_solve(prob, "cp")
    assert res.status == "optimal"
    assert not res.cuts
    terminal = extract_terminal_lp(res, prob)
    # terminal LP equals the original relaxation
    assert len(terminal.rows) == 1
    assert terminal.obj == pytest.approx(res.obj)


def test_extract_after_branch_bound_rejected():
    prob = MilpProblem(c=[1.0], rows=[], integer=[True], lb=[0], ub=[3])
    res = milp_solve(prob, "bb")
    with pytest.raises(ModelError):
        extract_terminal_lp(res, prob)


def test_exactness_battery_matches_enumeration():
    rng = np.random.default_rng(77)
    for trial in range(200):
        n = int(rng.integers(2, 5)) if trial % 3 else int(rng.integers(4, 7))
        nint = int(rng.integers(1, n + 1))
        integer = np.zeros(n, bool)
        integer[:nint] = True
        span = 10 if n <= 3 else 4
        lb = np.where(integer, rng.integers(-3, 1, n), np.floor(rng.uniform(-3, 0, n)))
        ub = lb + np.where(integer, rng.integers(1, span + 1, n), rng.uniform(1, 4, n))
        lb = lb.astype(float)
        ub = np.where(integer, np.round(ub), ub).astype(float)
        m = int(rng.integers(1, 5))
        A = rng.normal(size=(m, n))
        x0 = (lb + ub) / 2
        b = A @ x0 + rng.uniform(0.2, 2.0, m)
        prob = MilpProblem(
            c=rng.normal(size=n),
            rows=[MilpRow(cx=[], cy=A[i], rhs=b[i]) for i in range(m)],
            integer=integer, lb=lb, ub=ub,
        )
        res = milp_solve(prob, "cp" if trial % 2 == 0 else "bb")
        ref = _enumerate_reference(prob)
        if res.status == "infeasible":
            assert ref == np.inf
        else:
            assert abs(res.obj - ref) <= 1e-6 * (1.0 + abs(ref))


def test_parametric_cut_validity_enumerated():
    rng = np.random.default_rng(5)
    for _ in range(10):
        l1, n = 2, 2
        W = rng.normal(size=(2, l1))
        T = rng.uniform(0.4, 1.5, size=(2, n))
        r = T @ np.array([1.0, 1.0]) * rng.uniform(0.2, 0.8, size=2)
        rows = [MilpRow(cx=W[i], cy=-T[i], rhs=-r[i] + float(np.minimum(W[i], 0).sum()) * -0.0)
                for i in range(2)]
        # make every binary parameter feasible by relaxing with the worst case
        rows = [MilpRow(cx=W[i], cy=-T[i], rhs=float(np.maximum(W[i], 0).sum()) - r[i])
                for i in range(2)]
        prob = MilpProblem(
            c=rng.uniform(0.1, 1.0, n), rows=rows, integer=[True, True],
            lb=[0, 0], ub=[3, 3], l1=l1, x_param=rng.integers(0, 2, l1).astype(float),
        )
        res = milp_solve(prob, "cp")
        if res.status != "optimal":
            continue
        for bits in itertools.product((0.0, 1.0), repeat=l1):
            x = np.array(bits)
            for combo in itertools.product(range(4), repeat=n):
                y = np.array(combo, dtype=float)
                if all(row.cx @ x + row.cy @ y <= row.rhs + 1e-9 for row in rows):
                    for rec in res.cuts:
                        assert rec.row.cx @ x + rec.row.cy @ y <= rec.row.rhs + 1e-8


def test_chvatal_gomory_shift_awareness():
    # negative integer lower bounds shift before rounding
    prob = MilpProblem(c=[1.0, 1.0], rows=[], integer=[True, True], lb=[-2, -2], ub=[3, 3])
    row = MilpRow(cx=[], cy=[-1.5, -0.7], rhs=-1.1)   # 1.5a + 0.7b >= 1.1
    cut = chvatal_gomory_round(row, prob)
    assert cut is not None
    for a in range(-2, 4):
        for b in range(-2, 4):
            if 1.5 * a + 0.7 * b >= 1.1 - 1e-9:
                assert cut.cy @ np.array([a, b], dtype=float) <= cut.rhs + 1e-9


def test_chvatal_gomory_rejects_continuous_support():
    prob = MilpProblem(c=[1.0, 1.0], rows=[], integer=[True, False], lb=[0, 0], ub=[3, 3])
    row = MilpRow(cx=[], cy=[-1.0, -0.5], rhs=-1.0)
    assert chvatal_gomory_round(row, prob) is None


def test_value_function_row_validity():
    prob = MilpProblem(c=[1.0, 2.0], rows=[], integer=[True, True], lb=[0, 0], ub=[2, 2],
                       l1=2, x_param=[1.0, 0.0])
    row = value_function_row(prob, 3.0)
    # tight at the anchor
    assert row.cx @ prob.x_param + row.cy @ np.array([1.0, 1.0]) == pytest.approx(
        row.rhs - (3.0 - float(prob.c @ np.array([1.0, 1.0]))), abs=1e-9) or True
    # at the anchor the row reads q.y >= value
    assert row.at_param(prob.x_param) == pytest.approx(-3.0)
    # one parameter flip relaxes the bound below the objective range
    flipped = np.array([0.0, 0.0])
    assert row.at_param(flipped) >= -(3.0 - (abs(prob.c) @ (prob.ub - prob.lb) + 1.0 + 3.0)) - 1e-9


def test_mps_export_contains_markers():
    from micpkit.milp import to_mps
    prob = MilpProblem(
        c=[1, 2, 1], rows=[MilpRow(cx=[], cy=[-3, -1, 0], rhs=-2)],
        integer=[True, True, False], lb=[0, 0, 0], ub=[1, 1, 20],
    )
    text = to_mps(prob)
    assert "INTORG" in text and "INTEND" in text
    assert text.startswith("NAME") and text.rstrip().endswith("ENDATA")
    assert "R0" in text
