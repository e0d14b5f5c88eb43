"""Problem-file ingestion: JSON in, Problem + DEConfig out.

A problem file is pure data: input classes (support, optional mode,
moment/expression constraints), optional joint constraints over x1..xd,
a model reference, the QoI, and optimizer settings.  An optional "nominal"
entry per input names a baseline law; Sobol and Monte Carlo features need
it, plain bounds ignore it.
"""

from __future__ import annotations

import json
from typing import Optional

from .distributions import Gumbel, TruncatedNormal, UniformDist
from .expressions import ExpressionError, compile_expression, compile_joint_expression
from .measures import Constraint, Interval, MarginalClass, measure_from_dict
from .models import (ExternalCommandModel, ExternalTableModel,
                     HydraulicHeightModel, HydraulicLevelModel)
from .optimize import DEConfig, JointConstraint, Problem
from .quantities import QoISpec


class ProblemFormatError(ValueError):
    """The problem file does not match the schema."""


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ProblemFormatError(f"missing key {key!r} in {where}")
    return d[key]


def _constraint_from_dict(d: dict, where: str) -> Constraint:
    kind = _require(d, "kind", where)
    relation = _require(d, "relation", where)
    bound = float(_require(d, "bound", where))
    if relation not in ("eq", "leq"):
        raise ProblemFormatError(f"relation must be eq or leq in {where}")
    if kind == "raw_moment":
        order = _require(d, "order", where)
        if not isinstance(order, int) or order < 1:
            raise ProblemFormatError(f"order must be a positive integer in {where}")
        return Constraint.raw_moment(order, bound, relation)
    if kind == "expr":
        src = _require(d, "expr", where)
        try:
            fn = compile_expression(src)
        except ExpressionError as e:
            raise ProblemFormatError(f"bad expression in {where}: {e}") from e
        return Constraint.generalized(fn, bound, relation, label=src)
    raise ProblemFormatError(f"unknown constraint kind {kind!r} in {where}")


def _nominal_from_dict(d: Optional[dict], support: Interval, where: str):
    if d is None:
        return None
    kind = _require(d, "kind", where)
    if kind == "gumbel":
        return Gumbel(float(_require(d, "rho", where)),
                      float(_require(d, "beta", where)))
    if kind == "truncated_normal":
        return TruncatedNormal(float(_require(d, "mu", where)),
                               float(_require(d, "sigma", where)),
                               float(d.get("lo", support.lo)),
                               float(d.get("hi", support.hi)))
    if kind == "uniform":
        return UniformDist(float(d.get("lo", support.lo)),
                           float(d.get("hi", support.hi)))
    if kind in ("dirac_mixture", "uniform_mixture"):
        return measure_from_dict(d)
    raise ProblemFormatError(f"unknown nominal kind {kind!r} in {where}")


def _model_from_dict(d: dict, dims: int):
    kind = _require(d, "kind", "model")
    if kind == "hydraulic_height":
        model = HydraulicHeightModel()
    elif kind == "hydraulic_level":
        model = HydraulicLevelModel()
    elif kind == "external_table":
        model = ExternalTableModel(_require(d, "path", "model"))
    elif kind == "external_command":
        argv = _require(d, "argv", "model")
        if not isinstance(argv, list) or not argv:
            raise ProblemFormatError("model.argv must be a non-empty list")
        model = ExternalCommandModel(argv, dims=dims,
                                     sessions=int(d.get("sessions", 1)))
    else:
        raise ProblemFormatError(f"unknown model kind {kind!r}")
    model_dims = getattr(model, "dims", dims)
    if model_dims != dims:
        raise ProblemFormatError(
            f"model {kind!r} takes {model_dims} inputs but the problem "
            f"declares {dims}")
    return model


def _qoi_from_dict(d: dict) -> QoISpec:
    kind = _require(d, "kind", "qoi")
    data = d.get("data")
    try:
        return QoISpec(kind=kind, direction=d.get("direction", "sup"),
                       p=d.get("p"), h=d.get("h"), index=d.get("index"),
                       power=int(d.get("power", 1)),
                       data=tuple(data) if data is not None else None,
                       convention=d.get("convention", "height"))
    except ValueError as e:
        raise ProblemFormatError(f"bad qoi: {e}") from e


def _optimizer_from_dict(d: Optional[dict]) -> DEConfig:
    d = d or {}
    allowed = {"population", "F", "CR", "max_generations", "tol", "seed",
               "strategy", "workers"}
    unknown = set(d) - allowed
    if unknown:
        raise ProblemFormatError(f"unknown optimizer keys {sorted(unknown)}")
    try:
        return DEConfig(**d)
    except (TypeError, ValueError) as e:
        raise ProblemFormatError(f"bad optimizer config: {e}") from e


def problem_from_dict(doc: dict) -> tuple[Problem, DEConfig]:
    if not isinstance(doc, dict):
        raise ProblemFormatError("problem document must be a JSON object")
    inputs = _require(doc, "inputs", "problem")
    if not isinstance(inputs, list) or not inputs:
        raise ProblemFormatError("inputs must be a non-empty list")
    classes = []
    nominals = []
    for k, item in enumerate(inputs):
        where = f"inputs[{k}]"
        name = item.get("name", f"x{k + 1}")
        support = _require(item, "support", where)
        if (not isinstance(support, list) or len(support) != 2
                or not all(isinstance(v, (int, float)) for v in support)):
            raise ProblemFormatError(f"support must be [lo, hi] in {where}")
        interval = Interval(float(support[0]), float(support[1]))
        mode = item.get("mode")
        cons = tuple(_constraint_from_dict(c, f"{where}.constraints[{j}]")
                     for j, c in enumerate(item.get("constraints", [])))
        try:
            classes.append(MarginalClass(
                name=name, support=interval, constraints=cons,
                mode=None if mode is None else float(mode)))
        except ValueError as e:
            raise ProblemFormatError(f"bad class in {where}: {e}") from e
        nominals.append(_nominal_from_dict(item.get("nominal"), interval,
                                           f"{where}.nominal"))
    d = len(classes)
    joint = []
    for j, item in enumerate(doc.get("joint_constraints", [])):
        where = f"joint_constraints[{j}]"
        src = _require(item, "expr", where)
        relation = _require(item, "relation", where)
        bound = float(_require(item, "bound", where))
        if relation not in ("eq", "leq"):
            raise ProblemFormatError(f"relation must be eq or leq in {where}")
        try:
            fn = compile_joint_expression(src, d)
        except ExpressionError as e:
            raise ProblemFormatError(f"bad expression in {where}: {e}") from e
        joint.append(JointConstraint(fn=fn, relation=relation, bound=bound,
                                     scale=max(1.0, abs(bound)), label=src))
    model = _model_from_dict(_require(doc, "model", "problem"), d)
    spec = _qoi_from_dict(_require(doc, "qoi", "problem"))
    config = _optimizer_from_dict(doc.get("optimizer"))
    problem = Problem(classes=tuple(classes), model=model, spec=spec,
                      joint=tuple(joint), nominals=tuple(nominals))
    return problem, config


def load_problem(path: str) -> tuple[Problem, DEConfig]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ProblemFormatError(f"no such problem file: {path}") from None
    except json.JSONDecodeError as e:
        raise ProblemFormatError(
            f"malformed JSON in {path}: {e.msg} at line {e.lineno} "
            f"column {e.colno}") from e
    return problem_from_dict(doc)
