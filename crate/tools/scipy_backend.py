#!/usr/bin/env python3
"""JSON pipe adapter between sbpp's ProcessBackend and scipy's HiGHS wrappers.

Reads {kind, model, time_limit, rel_gap} on stdin, writes
{status, x, duals, reduced_costs, objective, bound, nodes} on stdout.
"""
import json
import sys

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp
from scipy.sparse import csr_matrix


def as_float(v):
    if v is None:
        return np.inf
    return float(v)


def main():
    req = json.load(sys.stdin)
    lp = req["model"]["lp"]
    sign = 1.0 if lp["sense"] == "Minimize" else -1.0
    c = sign * np.asarray(lp["objective"], dtype=float)
    n = len(c)
    lower = np.array([as_float(v) if v is not None else -np.inf for v in lp["lower"]])
    upper = np.array([as_float(v) for v in lp["upper"]])
    rows = lp["rows"]
    m = len(rows)
    data, ri, ci = [], [], []
    rhs = np.zeros(m)
    senses = []
    for i, row in enumerate(rows):
        for j, a in row["coeffs"]:
            ri.append(i)
            ci.append(j)
            data.append(a)
        rhs[i] = row["rhs"]
        senses.append(row["sense"])
    A = csr_matrix((data, (ri, ci)), shape=(m, n))

    if req["kind"] == "lp":
        le = [i for i, s in enumerate(senses) if s == "Le"]
        ge = [i for i, s in enumerate(senses) if s == "Ge"]
        eq = [i for i, s in enumerate(senses) if s == "Eq"]
        ub_rows = le + ge
        flip = np.array([1.0] * len(le) + [-1.0] * len(ge))
        A_ub = A[ub_rows] if ub_rows else None
        if A_ub is not None:
            A_ub = csr_matrix(A_ub.multiply(flip[:, None]))
        b_ub = rhs[ub_rows] * flip if ub_rows else None
        A_eq = A[eq] if eq else None
        b_eq = rhs[eq] if eq else None
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=list(zip(lower, upper)), method="highs")
        if res.status == 2:
            return {"status": "infeasible"}
        if res.status == 3:
            return {"status": "unbounded"}
        if res.status != 0:
            return {"status": "error", "message": res.message}
        duals = np.zeros(m)
        if ub_rows:
            duals[ub_rows] = res.ineqlin.marginals * flip
        if eq:
            duals[eq] = res.eqlin.marginals
        red = res.lower.marginals + res.upper.marginals
        return {
            "status": "optimal",
            "x": res.x.tolist(),
            "duals": (sign * duals).tolist(),
            "reduced_costs": (sign * red).tolist(),
            "objective": sign * res.fun,
        }

    lo = np.full(m, -np.inf)
    hi = np.full(m, np.inf)
    for i, s in enumerate(senses):
        if s in ("Le", "Eq"):
            hi[i] = rhs[i]
        if s in ("Ge", "Eq"):
            lo[i] = rhs[i]
    integrality = np.zeros(n)
    for j in req["model"]["binaries"]:
        integrality[j] = 1
    options = {"time_limit": req["time_limit"], "mip_rel_gap": req["rel_gap"]}
    constraints = [LinearConstraint(A, lo, hi)] if m else []
    res = milp(c, constraints=constraints, integrality=integrality,
               bounds=Bounds(lower, upper), options=options)
    offset = lp.get("objective_offset", 0.0)
    out = {"nodes": getattr(res, "mip_node_count", None)}
    bound = getattr(res, "mip_dual_bound", None)
    if bound is not None and np.isfinite(bound):
        out["bound"] = sign * bound + offset
    if res.x is not None:
        out["x"] = res.x.tolist()
    if res.status == 0:
        out["status"] = "optimal"
    elif res.status == 1:
        out["status"] = "time_limit" if res.x is not None else "no_solution"
    elif res.status == 2:
        out["status"] = "infeasible"
    elif res.status == 3:
        out["status"] = "unbounded"
    else:
        out = {"status": "error", "message": res.message}
    return out


if __name__ == "__main__":
    try:
        reply = main()
    except Exception as exc:  # report to the caller instead of a traceback
        reply = {"status": "error", "message": repr(exc)}
    json.dump(reply, sys.stdout)
