"""JSON model files: plain mixed-integer convex models and two-stage instances.

Atom trees serialize by kind tag plus coefficient arrays.  Numbers are parsed
as IEEE-754 doubles and written back through a 17-significant-digit round trip
so parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ModelError
from .expr import expr_from_dict
from .model import LinearObjective, ModelInstance, VariableSpec
from .twostage import AmbiguitySet, Scenario, TwoStageInstance


def _canon(obj):
    """Round floats through 17 significant digits (identity on doubles)."""
    if isinstance(obj, float):
        return float(f"{obj:.17g}")
    if isinstance(obj, (np.floating,)):
        return float(f"{float(obj):.17g}")
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canon(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    return obj


def dumps(document: dict) -> str:
    return json.dumps(_canon(document), sort_keys=True, indent=1) + "\n"


def _varspec_to_dict(v: VariableSpec):
    return {"name": v.name, "kind": v.kind, "lb": v.lb, "ub": v.ub}


def _varspec_from_dict(d):
    try:
        return VariableSpec(d["name"], d["kind"], d["lb"], d["ub"])
    except KeyError as exc:
        raise ModelError(f"variable entry missing field {exc}") from exc


def _rows_to_list(A_ub, b_ub, A_eq, b_eq):
    rows = []
    for i in range(A_ub.shape[0] if A_ub is not None and np.size(A_ub) else 0):
        rows.append({"coeffs": list(A_ub[i]), "rhs": float(b_ub[i]), "sense": "<="})
    for i in range(A_eq.shape[0] if A_eq is not None and np.size(A_eq) else 0):
        rows.append({"coeffs": list(A_eq[i]), "rhs": float(b_eq[i]), "sense": "="})
    return rows


def _rows_from_list(rows, n):
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for r in rows:
        coeffs = np.asarray(r["coeffs"], dtype=float)
        if coeffs.size != n:
            raise ModelError("linear row length mismatch")
        sense = r.get("sense", "<=")
        rhs = float(r["rhs"])
        if sense == "<=":
            A_ub.append(coeffs)
            b_ub.append(rhs)
        elif sense == ">=":
            A_ub.append(-coeffs)
            b_ub.append(-rhs)
        elif sense == "=":
            A_eq.append(coeffs)
            b_eq.append(rhs)
        else:
            raise ModelError(f"unknown row sense {sense!r}")
    return (
        np.vstack(A_ub) if A_ub else None, np.array(b_ub) if b_ub else None,
        np.vstack(A_eq) if A_eq else None, np.array(b_eq) if b_eq else None,
    )


def model_to_document(model: ModelInstance) -> dict:
    doc = {
        "variables": [_varspec_to_dict(v) for v in model.variables],
        "linear": _rows_to_list(model.A_ub, model.b_ub, model.A_eq, model.b_eq),
        "convex": [g.to_dict() for g in model.convex],
    }
    if model.has_linear_objective():
        doc["objective"] = {"linear": {"c": list(model.objective.c), "const": model.objective.const}}
    else:
        doc["objective"] = {"atom": model.objective.to_dict()}
    if model.param_block is not None:
        doc["param_block"] = [int(i) for i in model.param_block]
    return doc


def model_from_document(doc: dict) -> ModelInstance:
    variables = [_varspec_from_dict(d) for d in doc["variables"]]
    n = len(variables)
    A_ub, b_ub, A_eq, b_eq = _rows_from_list(doc.get("linear", []), n)
    convex = [expr_from_dict(d) for d in doc.get("convex", [])]
    obj = doc["objective"]
    if "linear" in obj:
        objective = LinearObjective(obj["linear"]["c"], obj["linear"].get("const", 0.0))
    else:
        objective = expr_from_dict(obj["atom"])
    return ModelInstance(
        variables=variables, objective=objective,
        A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
        convex=convex, param_block=doc.get("param_block"),
    )


def twostage_to_document(inst: TwoStageInstance) -> dict:
    return {
        "two_stage": {
            "c": list(inst.c),
            "x_names": list(inst.x_names),
            "linear": _rows_to_list(inst.A_ub, inst.b_ub, None, None),
            "first_convex": [g.to_dict() for g in inst.first_convex],
            "scenarios": [
                {
                    "name": sc.name,
                    "q": list(sc.q),
                    "y_vars": [_varspec_to_dict(v) for v in sc.y_vars],
                    "constraints": [g.to_dict() for g in sc.constraints],
                }
                for sc in inst.scenarios
            ],
            "ambiguity": {
                "A_ub": [list(r) for r in inst.ambiguity.A_ub],
                "b_ub": list(inst.ambiguity.b_ub),
            },
        }
    }


def twostage_from_document(doc: dict) -> TwoStageInstance:
    ts = doc["two_stage"]
    c = np.asarray(ts["c"], dtype=float)
    A_ub, b_ub, A_eq, _ = _rows_from_list(ts.get("linear", []), c.size)
    if A_eq is not None:
        raise ModelError("first-stage equality rows are not supported")
    scenarios = []
    for sd in ts["scenarios"]:
        scenarios.append(Scenario(
            name=sd["name"], q=sd["q"],
            y_vars=[_varspec_from_dict(v) for v in sd["y_vars"]],
            constraints=[expr_from_dict(g) for g in sd["constraints"]],
        ))
    amb = ts.get("ambiguity", {})
    ambiguity = AmbiguitySet(
        len(scenarios),
        np.asarray(amb.get("A_ub", []), dtype=float) if amb.get("A_ub") else None,
        np.asarray(amb.get("b_ub", []), dtype=float) if amb.get("b_ub") else None,
    )
    return TwoStageInstance(
        c=c, x_names=list(ts["x_names"]), scenarios=scenarios, ambiguity=ambiguity,
        A_ub=A_ub, b_ub=b_ub,
        first_convex=[expr_from_dict(g) for g in ts.get("first_convex", [])],
    )


def to_document(obj) -> dict:
    if isinstance(obj, TwoStageInstance):
        return twostage_to_document(obj)
    if isinstance(obj, ModelInstance):
        return model_to_document(obj)
    raise ModelError(f"cannot serialize {type(obj).__name__}")


def from_document(doc: dict):
    if "two_stage" in doc:
        return twostage_from_document(doc)
    return model_from_document(doc)


def save(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(to_document(obj)))


def load(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid model file: {exc}") from exc
    return from_document(doc)
