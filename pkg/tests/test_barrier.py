import numpy as np
import pytest

from micpkit.barrier import (
    ConvexProgram,
    convex_solve,
    decompose_normal_cone,
    lp_equivalence_check,
    nnls,
    nnls_with_free,
    project,
    separation_cut,
    supporting_inequalities,
)
from micpkit.errors import DecompositionFailure, ModelError
from micpkit.expr import Affine, NormAffine, PowerAffine, Softplus, SquaredNorm, WeightedSum

LOG1PE = float(np.log1p(np.e))


def _unit_disk(n=2, cols=None):
    cols = cols if cols is not None else np.eye(n)
    return WeightedSum([SquaredNorm(cols), Affine(np.zeros(n), -1.0)])


def _scenario1_relaxed(rhs=0.0):
    # -2 y1 - log(1+e) y2 + log(1+exp(y1+y2)) <= rhs
    return WeightedSum([Softplus([1.0, 1.0]), Affine([-2.0, -LOG1PE], -rhs)])


# --- convex_solve -----------------------------------------------------------

def test_kkt_example_square():
    g = WeightedSum([PowerAffine([1.0], 0.0, 2.0), Affine([0.0], -1.0)])
    cert = convex_solve(ConvexProgram(n=1, c=[1.0], convex=[g], lb=[-5], ub=[5]))
    assert cert.status == "optimal"
    assert cert.x[0] == pytest.approx(-1.0, abs=1e-8)
    assert cert.mult_convex[0] == pytest.approx(0.5, abs=1e-6)
    assert max(cert.res_stat, cert.res_feas, cert.res_compl) <= 1e-8


def test_scenario_relaxation_optimum():
    # the argmin sits on the axis: root of log(1+e^t) = 2t, objective half that
    cert = convex_solve(ConvexProgram(n=2, c=[0.5, 1.0], convex=[_scenario1_relaxed()],
                                      lb=[0, 0], ub=[10, 10]))
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if np.log1p(np.exp(mid)) - 2 * mid > 0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    assert cert.status == "optimal"
    assert cert.x == pytest.approx([root, 0.0], abs=1e-7)
    assert cert.value == pytest.approx(0.5 * root, abs=1e-8)


def test_pinned_ball():
    ball = WeightedSum([SquaredNorm([[0, 0, 1.0]]), Affine([0, 0, 0], -1.0)])
    cert = convex_solve(ConvexProgram(n=3, c=[0, 0, 1.0], convex=[ball],
                                      pins={0: 1.0, 1: 0.0}, lb=[0, 0, -2], ub=[1, 1, 2]))
    assert cert.status == "optimal"
    assert cert.x == pytest.approx([1.0, 0.0, -1.0], abs=1e-7)


def test_infeasible_reports_minimized_violation():
    g = WeightedSum([PowerAffine([1.0], 0.0, 2.0), Affine([0.0], 1.0)])
    cert = convex_solve(ConvexProgram(n=1, c=[1.0], convex=[g], lb=[-2], ub=[2]))
    assert cert.status == "infeasible"
    assert cert.violation == pytest.approx(1.0, abs=1e-6)


def test_random_certificates_pass_invariants():
    rng = np.random.default_rng(21)
    for _ in range(30):
        n = int(rng.integers(2, 6))
        x0 = rng.uniform(-0.5, 0.5, n)
        atoms = []
        for _ in range(int(rng.integers(1, 4))):
            v = rng.normal(size=n)
            atoms.append(WeightedSum([Softplus(v, -float(v @ x0)),
                                      Affine(np.zeros(n), -rng.uniform(0.5, 1.5))]))
        m = int(rng.integers(0, 3))
        A = rng.normal(size=(m, n)) if m else None
        b = (A @ x0 + rng.uniform(0.3, 1.0, m)) if m else None
        cert = convex_solve(ConvexProgram(n=n, c=rng.normal(size=n), convex=atoms,
                                          A_ub=A, b_ub=b, lb=x0 - 2, ub=x0 + 2))
        assert cert.status == "optimal"
        assert cert.res_stat <= 1e-7
        assert cert.res_feas <= 1e-8
        assert cert.res_compl <= 1e-7
        # multipliers on inactive convex rows vanish
        for lam, g in zip(cert.mult_convex, atoms):
            if g.value(cert.x) < -1e-5:
                assert lam <= 1e-7


# --- project ----------------------------------------------------------------

def test_project_disk_examples():
    disk = _unit_disk()
    z, d, _ = project([2, 0], [disk], lb=[-3, -3], ub=[3, 3])
    assert z == pytest.approx([1.0, 0.0], abs=1e-7)
    assert d == pytest.approx(1.0, abs=1e-7)
    z, d, _ = project([1, 1], [disk], lb=[-3, -3], ub=[3, 3])
    assert z == pytest.approx([np.sqrt(2) / 2] * 2, abs=1e-7)
    z, d, _ = project([0.3, -0.2], [disk], lb=[-3, -3], ub=[3, 3])
    assert z == pytest.approx([0.3, -0.2], abs=1e-6)
    assert d <= 1e-6


def test_project_idempotent_and_variational():
    rng = np.random.default_rng(4)
    disk = _unit_disk()
    for _ in range(10):
        p = rng.normal(size=2) * 2
        z, d, _ = project(p, [disk], lb=[-3, -3], ub=[3, 3])
        z2, d2, _ = project(z, [disk], lb=[-3, -3], ub=[3, 3])
        assert np.allclose(z, z2, atol=1e-7)
        # variational inequality at sampled feasible points
        for _ in range(50):
            w = rng.normal(size=2)
            w = w / max(1.0, np.linalg.norm(w) + 1e-9) * rng.uniform(0, 1)
            assert (p - z) @ (w - z) <= 1e-6


def test_project_empty_set_reports_infeasible():
    g = WeightedSum([PowerAffine([1.0, 0.0], 0.0, 2.0), Affine([0, 0], 1.0)])
    z, d, cert = project([0, 0], [g], lb=[-1, -1], ub=[1, 1])
    assert z is None and cert.status == "infeasible"


# --- cuts -------------------------------------------------------------------

def test_separation_cut_formula_cases():
    cut = separation_cut([2, 0], [1, 0])
    assert np.allclose(cut.a, [1, 0]) and cut.rhs == pytest.approx(1.0)
    s = np.sqrt(2) / 2
    cut = separation_cut([1, 1], [s, s])
    assert cut.a @ np.array([1, 1]) - cut.rhs == pytest.approx(np.linalg.norm([1 - s, 1 - s]) ** 2)
    assert cut.rhs == pytest.approx((1 - s) * s * 2)
    with pytest.raises(ModelError):
        separation_cut([1, 0], [1, 0])


def test_separation_cut_valid_on_sampled_feasible_points():
    rng = np.random.default_rng(9)
    disk = _unit_disk()
    p = np.array([1.7, -0.9])
    z, d, _ = project(p, [disk], lb=[-3, -3], ub=[3, 3])
    cut = separation_cut(p, z)
    assert cut.violation(p) >= d**2 - 1e-8
    for _ in range(1000):
        w = rng.normal(size=2)
        w = w / np.linalg.norm(w) * np.sqrt(rng.uniform(0, 1))
        assert cut.violation(w) <= 1e-8


def test_supporting_inequalities_gradient_row():
    disk = _unit_disk()
    rows = supporting_inequalities([disk], [1.0, 0.0])
    assert len(rows) == 1
    a, rhs = rows[0].a, rows[0].rhs
    assert a[1] == pytest.approx(0.0, abs=1e-9)
    assert rhs / a[0] == pytest.approx(1.0)


def test_supporting_parametric_requires_product_form():
    mixer = WeightedSum([NormAffine([[1.0, 1.0]]), Affine([0, 0], -0.0)])
    with pytest.raises(ModelError):
        supporting_inequalities([mixer], [0.0, 0.0], mode="parametric", structure=[False])


def test_supporting_separable_parametric_ok():
    psi = Softplus([1.0, 0.0])
    phi = PowerAffine([0.0, 1.0], 0.0, 2.0)
    g = WeightedSum([psi, phi, Affine([0, 0], -np.log(2.0) - 1.0)])
    x = np.array([0.0, 1.0])
    assert abs(g.value(x)) < 1e-12
    rows = supporting_inequalities([g], x, mode="parametric", structure=[True])
    assert np.allclose(rows[0].a, [0.5, 2.0], atol=1e-12)


# --- normal cone decomposition ---------------------------------------------

def test_decompose_axes():
    dec = decompose_normal_cone([1.0, 1.0], [np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])])
    assert np.allclose(dec.components[0], [1, 0], atol=1e-9)
    assert np.allclose(dec.components[1], [0, 1], atol=1e-9)
    assert dec.residual <= 1e-10


def test_decompose_single_set():
    c = np.array([0.3, -0.7])
    dec = decompose_normal_cone(c, [np.column_stack([c])])
    assert np.allclose(dec.components[0], c, atol=1e-9)


def test_decompose_ball_objective():
    # min x1 over the unit disk: -c sits in the cone of the active gradient
    disk = _unit_disk()
    xbar = np.array([-1.0, 0.0])
    grad = disk.subgrad(xbar)
    dec = decompose_normal_cone(np.array([-1.0, 0.0]), [np.column_stack([grad])])
    assert np.allclose(dec.components[0], [-1.0, 0.0], atol=1e-9)


def test_decompose_failure_flagged():
    with pytest.raises(DecompositionFailure):
        decompose_normal_cone([1.0, 0.0], [np.array([[0.0], [1.0]])])


def test_resum_property():
    rng = np.random.default_rng(1)
    for _ in range(20):
        G1 = rng.normal(size=(3, 2))
        G2 = rng.normal(size=(3, 2))
        w = rng.uniform(0, 1, size=4)
        target = G1 @ w[:2] + G2 @ w[2:]
        dec = decompose_normal_cone(target, [G1, G2])
        assert np.allclose(sum(dec.components), target, atol=1e-8)


# --- lp equivalence ---------------------------------------------------------

def test_lp_equivalence_unit_disk():
    disk = _unit_disk()
    prog = ConvexProgram(n=2, c=[1.0, 0.0], convex=[disk], lb=[-2, -2], ub=[2, 2])
    cert = convex_solve(prog)
    rows = supporting_inequalities([disk], cert.x)
    assert lp_equivalence_check(prog, rows, cert.value)


def test_lp_equivalence_random_suite():
    rng = np.random.default_rng(17)
    passed = 0
    for _ in range(15):
        n = int(rng.integers(2, 5))
        x0 = rng.uniform(-0.3, 0.3, n)
        v = rng.normal(size=n)
        g = WeightedSum([SquaredNorm(np.eye(n), -x0), Affine(np.zeros(n), -rng.uniform(0.5, 1.5))])
        prog = ConvexProgram(n=n, c=v, convex=[g], lb=x0 - 3, ub=x0 + 3)
        cert = convex_solve(prog)
        assert cert.status == "optimal"
        if any(gc.value(cert.x) >= -1e-6 for gc in [g]):
            rows = supporting_inequalities([g], cert.x)
            assert lp_equivalence_check(prog, rows, cert.value)
            passed += 1
    assert passed >= 10


# --- nnls helpers ------------------------------------------------------------

def test_nnls_matches_reference():
    rng = np.random.default_rng(2)
    for _ in range(50):
        A = rng.normal(size=(6, 4))
        b = rng.normal(size=6)
        w, r = nnls(A, b)
        assert np.all(w >= 0)
        grad = A.T @ (A @ w - b)
        assert np.all(grad >= -1e-7)            # KKT: no descent within the cone
        assert np.all(np.abs(grad * w) <= 1e-6)


def test_nnls_with_free_block():
    rng = np.random.default_rng(8)
    N = rng.normal(size=(5, 3))
    F = rng.normal(size=(5, 2))
    w0 = np.abs(rng.normal(size=3))
    v0 = rng.normal(size=2)
    b = N @ w0 + F @ v0
    w, v, resid = nnls_with_free(N, F, b)
    assert resid <= 1e-8
    assert np.allclose(N @ w + F @ v, b, atol=1e-8)
