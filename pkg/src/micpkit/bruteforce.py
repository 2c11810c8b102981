"""Brute-force verification oracle and the extensive-form cross-check.

Enumerates every integer assignment (capped), solves the continuous remainder
with the convex oracle, and reports the optimum with its argmin set.  This is
the independent reference the solver suites are checked against, so it shares
no logic with the cutting-plane path beyond the continuous kernel.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .barrier import ConvexProgram, convex_solve
from .errors import ModelError
from .model import LinearObjective, ModelInstance, VariableSpec, epigraph_reformulate
from .twostage import TwoStageInstance, worst_case_distribution

ENUM_CAP = 1 << 20


@dataclass
class BruteForceResult:
    status: str
    value: float | None = None
    argmins: list = field(default_factory=list)
    feasible_points: list = field(default_factory=list)   # (point, objective)
    enumerated: int = 0


def _integer_grid(model: ModelInstance):
    idx = model.integer_indices()
    sizes = [int(round(model.variables[i].ub - model.variables[i].lb)) + 1 for i in idx]
    count = 1
    for s in sizes:
        count *= s
        if count > ENUM_CAP:
            raise ModelError(f"integer lattice too large for brute force ({count}+ points)")
    ranges = [
        np.arange(model.variables[i].lb, model.variables[i].ub + 0.5) for i in idx
    ]
    return idx, ranges, count


def _cont_min(coeffs, lb, ub, cont):
    """min over the continuous box of coeffs restricted to those coordinates."""
    if not cont:
        return 0.0
    c = coeffs[cont]
    return float(np.minimum(c * lb[cont], c * ub[cont]).sum())


def _prunable(model, pins, cont, tol):
    """Cheap certificate that no feasible continuous completion exists.

    Linear rows are bounded below coordinatewise over the continuous box;
    convex rows through a subgradient minorant anchored at the box center.
    """
    x0 = 0.5 * (model.lb + model.ub)
    for i, v in pins.items():
        x0[i] = v
    for r in range(model.A_ub.shape[0]):
        row = model.A_ub[r]
        lo = float(row @ x0)
        if cont:
            lo += float(np.minimum(row[cont] * (model.lb[cont] - x0[cont]),
                                   row[cont] * (model.ub[cont] - x0[cont])).sum())
        if lo > model.b_ub[r] + tol:
            return True
    for g in model.convex:
        v0 = g.value(x0)
        s = g.subgrad(x0)
        lo = v0 + (
            float(np.minimum(s[cont] * (model.lb[cont] - x0[cont]), s[cont] * (model.ub[cont] - x0[cont])).sum())
            if cont else 0.0
        )
        if lo > tol:
            return True
    return False


def brute_force(model: ModelInstance, tol=1e-6, prune_objective=True) -> BruteForceResult:
    """Enumerate integer assignments; solve each continuous remainder exactly."""
    if not model.has_linear_objective():
        return brute_force(epigraph_reformulate(model), tol, prune_objective)
    idx, ranges, count = _integer_grid(model)
    cont = [i for i in range(model.n) if i not in set(idx)]
    c_cont_min = _cont_min(model.objective.c, model.lb, model.ub, cont)
    best = np.inf
    argmins = []
    feas = []
    n_enum = 0
    for combo in itertools.product(*ranges) if idx else [()]:
        n_enum += 1
        pins = {i: float(v) for i, v in zip(idx, combo)}
        if cont:
            if _prunable(model, pins, cont, tol):
                continue
            if prune_objective:
                obj_lo = (
                    sum(model.objective.c[i] * v for i, v in pins.items())
                    + c_cont_min + model.objective.const
                )
                if obj_lo > best + 1e-9:
                    continue
        if not cont:
            x = np.array([pins.get(i, 0.0) for i in range(model.n)])
            if not model.feasible(x, tol):
                continue
            val = model.objective_value(x)
            point = x
        else:
            prog = ConvexProgram(
                n=model.n, c=model.objective.c,
                A_ub=model.A_ub if model.A_ub.size else None,
                b_ub=model.b_ub if model.A_ub.size else None,
                A_eq=model.A_eq if model.A_eq.size else None,
                b_eq=model.b_eq if model.A_eq.size else None,
                convex=list(model.convex), pins=pins, lb=model.lb, ub=model.ub,
            )
            cert = convex_solve(prog)
            if cert.status != "optimal":
                continue
            val = cert.value + model.objective.const
            point = cert.x
        feas.append((point, val))
        if val < best - 1e-9:
            best = val
            argmins = [point]
        elif val <= best + 1e-9:
            argmins.append(point)
    if not feas:
        return BruteForceResult(status="infeasible", enumerated=n_enum)
    return BruteForceResult(status="optimal", value=best, argmins=argmins,
                            feasible_points=feas, enumerated=n_enum)


@dataclass
class DrBruteForceResult:
    status: str
    value: float | None = None
    argmins: list = field(default_factory=list)
    table: dict = field(default_factory=dict)   # x tuple -> dict with G, recourse values


def scenario_recourse(instance: TwoStageInstance, w, x, tol=1e-6):
    """Q(x, scenario w) by enumeration over the scenario's integer grid."""
    model = instance.scenario_model(w)
    pins = {i: float(x[i]) for i in range(instance.l1)}
    sub = ModelInstance(
        variables=model.variables,
        objective=model.objective,
        convex=model.convex,
        param_block=model.param_block,
    )
    # enumerate y grid with x pinned
    idx = [i for i in sub.integer_indices() if i >= instance.l1]
    ranges = [np.arange(sub.variables[i].lb, sub.variables[i].ub + 0.5) for i in idx]
    cont = [i for i in range(instance.l1, sub.n) if i not in set(idx)]
    best = np.inf
    best_y = None
    for combo in itertools.product(*ranges) if idx else [()]:
        p = dict(pins)
        p.update({i: float(v) for i, v in zip(idx, combo)})
        if not cont:
            xx = np.zeros(sub.n)
            for i, v in p.items():
                xx[i] = v
            if not sub.feasible(xx, tol):
                continue
            val = sub.objective_value(xx)
            point = xx
        else:
            prog = ConvexProgram(
                n=sub.n, c=sub.objective.c, convex=list(sub.convex),
                pins=p, lb=sub.lb, ub=sub.ub,
            )
            cert = convex_solve(prog)
            if cert.status != "optimal":
                continue
            val = cert.value
            point = cert.x
        if val < best:
            best = val
            best_y = point
    return best, best_y


def brute_force_two_stage(instance: TwoStageInstance, tol=1e-6) -> DrBruteForceResult:
    """Worst-case two-stage optimum by enumerating the binary first stage."""
    l1 = instance.l1
    if 2 ** l1 > ENUM_CAP:
        raise ModelError("first-stage lattice too large for brute force")
    best = np.inf
    argmins = []
    table = {}
    for bits in itertools.product((0.0, 1.0), repeat=l1):
        x = np.asarray(bits)
        if not instance.first_stage_feasible(x, tol):
            continue
        qs = []
        ok = True
        for w in range(len(instance.scenarios)):
            val, _ = scenario_recourse(instance, w, x, tol)
            if not np.isfinite(val):
                ok = False
                break
            qs.append(val)
        if not ok:
            continue
        p = worst_case_distribution(np.asarray(qs), instance.ambiguity)
        G = float(p @ np.asarray(qs))
        total = float(instance.c @ x) + G
        table[tuple(int(b) for b in bits)] = {"G": G, "recourse": qs, "p": [float(v) for v in p],
                                              "total": total}
        if total < best - 1e-9:
            best = total
            argmins = [x]
        elif total <= best + 1e-9:
            argmins.append(x)
    if not table:
        return DrBruteForceResult(status="infeasible")
    return DrBruteForceResult(status="optimal", value=best, argmins=argmins, table=table)


def validate_recourse(instance: TwoStageInstance, tol=1e-6):
    """Desk-scale enumeration check of relatively complete recourse.

    Returns (first-stage point, scenario index) pairs with an infeasible
    integer recourse; empty means every first-stage-feasible binary point
    admits a completion in every scenario.
    """
    bad = []
    for bits in itertools.product((0.0, 1.0), repeat=instance.l1):
        x = np.asarray(bits)
        if not instance.first_stage_feasible(x, tol):
            continue
        for w in range(len(instance.scenarios)):
            val, _ = scenario_recourse(instance, w, x, tol)
            if not np.isfinite(val):
                bad.append((tuple(int(b) for b in bits), w))
    return bad


def extensive_form(instance: TwoStageInstance) -> ModelInstance:
    """Deterministic-equivalent model for a singleton ambiguity set."""
    if not instance.ambiguity.is_singleton():
        raise ModelError("extensive form requires a singleton ambiguity set")
    p = worst_case_distribution(np.zeros(len(instance.scenarios)), instance.ambiguity)
    l1 = instance.l1
    total = l1 + sum(len(sc.y_vars) for sc in instance.scenarios)
    variables = [VariableSpec(nm, "binary", 0.0, 1.0) for nm in instance.x_names]
    c = np.zeros(total)
    c[:l1] = instance.c
    convex = [g.embed(total, list(range(l1))) for g in instance.first_convex]
    off = l1
    for w, sc in enumerate(instance.scenarios):
        ny = len(sc.y_vars)
        variables.extend(sc.y_vars)
        c[off : off + ny] = p[w] * sc.q
        positions = list(range(l1)) + list(range(off, off + ny))
        convex.extend(g.embed(total, positions) for g in sc.constraints)
        off += ny
    A_ub = None
    b_ub = None
    if instance.A_ub.size:
        A_ub = np.hstack([instance.A_ub, np.zeros((instance.A_ub.shape[0], total - l1))])
        b_ub = instance.b_ub
    return ModelInstance(
        variables=variables,
        objective=LinearObjective(c),
        A_ub=A_ub, b_ub=b_ub,
        convex=convex,
        param_block=list(range(l1)),
    )
