"""In-memory model of a mixed integer program and its JSON file format.

A problem is ``min/max c.x`` subject to ranged linear constraints
``lhs <= a.x <= rhs`` and variable bounds ``lb <= x <= ub``, with each
variable typed binary, integer, or continuous.  Everything downstream
(LP relaxation, branch and bound, labeling, feature extraction) works
on this representation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

FEAS_TOL = 1e-6
INT_TOL = 1e-6

BINARY = "binary"
INTEGER = "integer"
CONTINUOUS = "continuous"
VTYPES = (BINARY, INTEGER, CONTINUOUS)

MINIMIZE = "min"
MAXIMIZE = "max"


class InstanceFormatError(ValueError):
    """Raised when an instance file is malformed."""


@dataclass
class Variable:
    name: str
    vtype: str
    lb: float
    ub: float


@dataclass
class Constraint:
    """Ranged row ``lhs <= sum(coeffs[j] * x[j]) <= rhs``.

    ``coeffs`` maps variable index to coefficient; either side may be
    infinite but not both.
    """

    name: str
    coeffs: dict[int, float]
    lhs: float
    rhs: float


@dataclass
class MipInstance:
    name: str
    sense: str
    variables: list[Variable]
    constraints: list[Constraint]
    objective: dict[int, float]
    #: set by canonicalize() when the original sense was flipped to min;
    #: in-memory bookkeeping only, never serialized.
    sense_flipped: bool = field(default=False, compare=False)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def binary_indices(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if v.vtype == BINARY]

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(len(self.variables))
        for j, cj in self.objective.items():
            c[j] = cj
        return c


@dataclass
class Solution:
    values: np.ndarray
    objective: float
    feasible: bool
    max_violation: float


def validate_instance(inst: MipInstance) -> list[str]:
    """Check structural invariants; return a list of violation messages.

    An empty list means the instance is valid.  Checks: known sense and
    variable types, unique variable names, consistent bounds (binaries
    within [0, 1]), constraint indices in range with non-empty
    coefficients, and each row having lhs <= rhs with at least one
    finite side.
    """
    errs: list[str] = []
    if inst.sense not in (MINIMIZE, MAXIMIZE):
        errs.append(f"unknown sense {inst.sense!r}")
    seen: set[str] = set()
    for j, v in enumerate(inst.variables):
        if v.name in seen:
            errs.append(f"duplicate variable name {v.name!r}")
        seen.add(v.name)
        if v.vtype not in VTYPES:
            errs.append(f"variable {v.name!r}: unknown vtype {v.vtype!r}")
        if v.lb > v.ub:
            errs.append(f"variable {v.name!r}: lb {v.lb} > ub {v.ub}")
        if v.vtype == BINARY and (v.lb < 0.0 or v.ub > 1.0):
            errs.append(f"variable {v.name!r}: binary bounds outside [0, 1]")
    n = len(inst.variables)
    for con in inst.constraints:
        if not con.coeffs:
            errs.append(f"constraint {con.name!r}: empty coefficients")
        for j in con.coeffs:
            if not 0 <= j < n:
                errs.append(f"constraint {con.name!r}: variable index {j} out of range")
        if con.lhs > con.rhs:
            errs.append(f"constraint {con.name!r}: lhs {con.lhs} > rhs {con.rhs}")
        if math.isinf(con.lhs) and math.isinf(con.rhs):
            errs.append(f"constraint {con.name!r}: both sides infinite")
    for j in inst.objective:
        if not 0 <= j < n:
            errs.append(f"objective: variable index {j} out of range")
    return errs


def canonicalize(inst: MipInstance) -> MipInstance:
    """Return an equivalent minimization instance.

    A maximization objective is negated and ``sense_flipped`` is set so
    reported objectives can be un-negated by callers.  Minimization
    instances come back unchanged (same canonical form, flag False or
    preserved).  Raises ValueError on invalid instances.
    """
    errs = validate_instance(inst)
    if errs:
        raise ValueError("invalid instance: " + "; ".join(errs))
    if inst.sense == MINIMIZE:
        return inst
    return replace(
        inst,
        sense=MINIMIZE,
        objective={j: -c for j, c in inst.objective.items()},
        sense_flipped=True,
    )


def evaluate_solution(inst: MipInstance, x) -> Solution:
    """Evaluate a point against the instance exactly as stored.

    Returns objective c.x (in the instance's own sense), the maximum
    violation over constraints, bounds and integrality residuals, and a
    feasibility flag at tolerance 1e-6.  Raises ValueError on dimension
    mismatch.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (len(inst.variables),):
        raise ValueError(
            f"solution has shape {x.shape}, instance has {len(inst.variables)} variables"
        )
    obj = float(sum(c * x[j] for j, c in inst.objective.items()))
    viol = 0.0
    for con in inst.constraints:
        act = sum(a * x[j] for j, a in con.coeffs.items())
        if math.isfinite(con.lhs):
            viol = max(viol, con.lhs - act)
        if math.isfinite(con.rhs):
            viol = max(viol, act - con.rhs)
    int_resid = 0.0
    for j, v in enumerate(inst.variables):
        if math.isfinite(v.lb):
            viol = max(viol, v.lb - x[j])
        if math.isfinite(v.ub):
            viol = max(viol, x[j] - v.ub)
        if v.vtype in (BINARY, INTEGER):
            int_resid = max(int_resid, abs(x[j] - round(x[j])))
    feasible = viol <= FEAS_TOL and int_resid <= INT_TOL
    return Solution(
        values=x,
        objective=obj,
        feasible=feasible,
        max_violation=max(viol, int_resid),
    )


# ---------------------------------------------------------------------------
# JSON file format


def _num_out(v: float):
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return float(v)


def _num_in(raw, where: str) -> float:
    if isinstance(raw, str):
        if raw == "inf":
            return math.inf
        if raw == "-inf":
            return -math.inf
        raise InstanceFormatError(f"{where}: bad numeric string {raw!r}")
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise InstanceFormatError(f"{where}: expected number, got {type(raw).__name__}")
    return float(raw)


def _checked_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise InstanceFormatError(f"{where}: unknown keys {sorted(unknown)}")


def _pairs_hook(pairs):
    keys = [k for k, _ in pairs]
    if len(keys) != len(set(keys)):
        dup = sorted({k for k in keys if keys.count(k) > 1})
        raise InstanceFormatError(f"duplicate keys {dup} in object")
    return dict(pairs)


def instance_to_dict(inst: MipInstance) -> dict:
    names = [v.name for v in inst.variables]
    return {
        "name": inst.name,
        "sense": inst.sense,
        "variables": [
            {"name": v.name, "vtype": v.vtype, "lb": _num_out(v.lb), "ub": _num_out(v.ub)}
            for v in inst.variables
        ],
        "constraints": [
            {
                "name": con.name,
                "lhs": _num_out(con.lhs),
                "rhs": _num_out(con.rhs),
                "coeffs": {names[j]: float(a) for j, a in con.coeffs.items()},
            }
            for con in inst.constraints
        ],
        "objective": {names[j]: float(c) for j, c in inst.objective.items()},
    }


def instance_from_dict(data: dict) -> MipInstance:
    if not isinstance(data, dict):
        raise InstanceFormatError("top level must be an object")
    _checked_keys(data, {"name", "sense", "variables", "constraints", "objective"}, "top level")
    for key in ("name", "sense", "variables", "constraints", "objective"):
        if key not in data:
            raise InstanceFormatError(f"missing top-level key {key!r}")
    sense = data["sense"]
    if sense not in (MINIMIZE, MAXIMIZE):
        raise InstanceFormatError(f"sense must be 'min' or 'max', got {sense!r}")
    variables = []
    index: dict[str, int] = {}
    for k, raw in enumerate(data["variables"]):
        where = f"variables[{k}]"
        if not isinstance(raw, dict):
            raise InstanceFormatError(f"{where}: expected object")
        _checked_keys(raw, {"name", "vtype", "lb", "ub"}, where)
        try:
            name, vtype = raw["name"], raw["vtype"]
        except KeyError as exc:
            raise InstanceFormatError(f"{where}: missing key {exc}") from None
        if vtype not in VTYPES:
            raise InstanceFormatError(f"{where}: unknown vtype {vtype!r}")
        if name in index:
            raise InstanceFormatError(f"{where}: duplicate variable name {name!r}")
        index[name] = k
        variables.append(
            Variable(name, vtype, _num_in(raw["lb"], where), _num_in(raw["ub"], where))
        )

    def var_index(name, where):
        try:
            return index[name]
        except KeyError:
            raise InstanceFormatError(f"{where}: unknown variable {name!r}") from None

    constraints = []
    for k, raw in enumerate(data["constraints"]):
        where = f"constraints[{k}]"
        if not isinstance(raw, dict):
            raise InstanceFormatError(f"{where}: expected object")
        _checked_keys(raw, {"name", "lhs", "rhs", "coeffs"}, where)
        try:
            name, coeffs_raw = raw["name"], raw["coeffs"]
        except KeyError as exc:
            raise InstanceFormatError(f"{where}: missing key {exc}") from None
        coeffs = {
            var_index(vn, where): _num_in(a, f"{where}.coeffs[{vn!r}]")
            for vn, a in coeffs_raw.items()
        }
        constraints.append(
            Constraint(name, coeffs, _num_in(raw["lhs"], where), _num_in(raw["rhs"], where))
        )
    objective = {
        var_index(vn, "objective"): _num_in(c, f"objective[{vn!r}]")
        for vn, c in data["objective"].items()
    }
    inst = MipInstance(data["name"], sense, variables, constraints, objective)
    errs = validate_instance(inst)
    if errs:
        raise InstanceFormatError("; ".join(errs))
    return inst


def write_instance(inst: MipInstance, path) -> None:
    with open(path, "w") as f:
        json.dump(instance_to_dict(inst), f, indent=1)
        f.write("\n")


def read_instance(path) -> MipInstance:
    with open(path) as f:
        try:
            data = json.load(f, object_pairs_hook=_pairs_hook)
        except json.JSONDecodeError as exc:
            raise InstanceFormatError(f"{path}: {exc}") from None
    try:
        return instance_from_dict(data)
    except InstanceFormatError as exc:
        raise InstanceFormatError(f"{path}: {exc}") from None
