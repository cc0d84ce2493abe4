"""
Experiment descriptions for the command line.

An experiment is a JSON document naming the benchmark model, the cost, its
horizon, the nested design and the eta grid. Unknown keys are rejected with
the offending field and, where it can be found, its line in the file.
"""
import dataclasses
import json
import math
import re
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..config import Config, DefaultConfig
from ..cost import (
    CostSpec,
    FiniteLaw,
    GeometricLaw,
    HorizonSpec,
    RandomizedHorizonConfig,
    TimeLaw,
    iid_sum_tail,
    running_max_exceeds,
    table_cost,
)
from ..errors import ConfigError, ValidationError
from ..model import StochasticModel
from ..nestedmc import NestedDesign
from ..queueing import QueueConfig, queue_cost

COST_KINDS = ("iid-sum-tail", "running-max", "user-table", "queue-wait")
SENSES = ("max", "min", "both")

_MODEL_SCHEMA: Dict[str, Any] = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "finite": {
                    "type": "object",
                    "properties": {
                        "atoms": {"type": "array", "items": {"type": "number"}},
                        "probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    },
                    "required": ["atoms", "probs"],
                    "additionalProperties": False,
                }
            },
            "required": ["finite"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "family": {"enum": ["exponential", "gamma", "uniform", "normal"]},
                "params": {"type": "object", "additionalProperties": {"type": "number"}},
            },
            "required": ["family", "params"],
            "additionalProperties": False,
        },
    ]
}

EXPERIMENT_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "klsens experiment",
    "type": "object",
    "properties": {
        "model": _MODEL_SCHEMA,
        "cost": {
            "type": "object",
            "properties": {
                "kind": {"enum": list(COST_KINDS)},
                "y": {"type": "number"},
                "b": {"type": "number"},
                "table": {"type": "array"},
                "servers": {"type": "integer", "minimum": 1},
                "customers": {"type": "integer", "minimum": 1},
                "perturb": {"enum": ["service", "interarrival"]},
                "other": _MODEL_SCHEMA,
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "horizon": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["single", "fixed", "random"]},
                "T": {"type": "integer", "minimum": 1},
                "mode": {"enum": ["bounded", "independent"]},
                "t_max": {"type": "integer", "minimum": 1},
                "stop_above": {"type": "number"},
                "tau": {
                    "type": "object",
                    "properties": {
                        "geometric": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "pmf": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    },
                    "additionalProperties": False,
                },
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "design": {
            "type": "object",
            "properties": {
                "outer": {"type": "integer", "minimum": 2},
                "inner": {"type": "integer", "minimum": 2},
                "sections": {"type": "integer", "minimum": 2},
                "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "additionalProperties": False,
        },
        "eta": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "sense": {"enum": list(SENSES)},
        "order": {"enum": [1, 2]},
        "seed": {"type": ["integer", "null"], "minimum": 0},
        "samples": {"type": "integer", "minimum": 2},
        "output": {
            "type": "object",
            "properties": {"report": {"type": "string"}, "sweep": {"type": "string"}},
            "additionalProperties": False,
        },
        "runtime": {"type": "object"},
        "randomized_horizon": {
            "type": "object",
            "properties": {
                "success": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "t_cut": {"type": "integer", "minimum": 1},
                "tail_tolerance": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "required": ["model", "cost"],
    "additionalProperties": False,
}


def _properties(schema: Mapping[str, Any]) -> List[str]:
    return list(schema.get("properties", {}))


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if text is None:
        return None
    match = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if match is None:
        return None
    return text.count("\n", 0, match.start()) + 1


def _check_keys(
    data: Any, allowed: Sequence[str], where: str, text: Optional[str], required: Sequence[str] = ()
) -> Dict[str, Any]:
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'experiment'} must be a JSON object", field=where or None)
    for key in data:
        if key not in allowed:
            field = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown field {field!r}", field=field, line=_line_of(text, key))
    for key in required:
        if key not in data:
            field = f"{where}.{key}" if where else key
            raise ConfigError(f"missing required field {field!r}", field=field)
    return dict(data)


def _is_type(value: Any, kind: Any) -> bool:
    if isinstance(kind, list):
        return any(_is_type(value, k) for k in kind)
    if kind == "null":
        return value is None
    if kind == "object":
        return isinstance(value, Mapping)
    if kind == "array":
        return isinstance(value, list)
    if kind == "string":
        return isinstance(value, str)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False
    if kind == "integer":
        return isinstance(value, int)
    return math.isfinite(value)


def _validate(value: Any, schema: Mapping[str, Any], field: str, text: Optional[str]):
    """
    Check ``value`` against the types, enums and bounds of ``schema``. Array
    items are reported under the field of their array.
    """
    where = field or "experiment"
    line = _line_of(text, field.rsplit(".", 1)[-1]) if field else None
    if "oneOf" in schema:
        for option in schema["oneOf"]:
            if isinstance(value, Mapping) and all(key in value for key in option.get("required", ())):
                _validate(value, option, field, text)
                return
        layouts = " or ".join(str(option.get("required", [])) for option in schema["oneOf"])
        raise ConfigError(f"{where} needs the fields {layouts}", field=field or None, line=line)
    if "enum" in schema and (isinstance(value, bool) or value not in schema["enum"]):
        raise ConfigError(f"{where} must be one of {schema['enum']}, got {value!r}", field=field, line=line)
    kind = schema.get("type")
    if kind is not None and not _is_type(value, kind):
        raise ConfigError(f"{where} must be of type {kind}, got {value!r}", field=field or None, line=line)
    bounds = [
        ("minimum", lambda v, b: v >= b, ">="),
        ("exclusiveMinimum", lambda v, b: v > b, ">"),
        ("maximum", lambda v, b: v <= b, "<="),
        ("exclusiveMaximum", lambda v, b: v < b, "<"),
    ]
    for key, holds, op in bounds:
        if key in schema and value is not None and not holds(value, schema[key]):
            raise ConfigError(f"{where} must be {op} {schema[key]}, got {value!r}", field=field, line=line)
    if kind == "array" and "items" in schema:
        for i, item in enumerate(value):
            try:
                _validate(item, schema["items"], field, text)
            except ConfigError as exc:
                raise ConfigError(f"item {i} of {exc}", field=exc.field, line=exc.line) from exc
    if kind == "object":
        properties = schema.get("properties", {})
        extra = schema.get("additionalProperties")
        for key, item in value.items():
            child = f"{field}.{key}" if field else key
            if key in properties:
                _validate(item, properties[key], child, text)
            elif isinstance(extra, Mapping):
                _validate(item, extra, child, text)


def _model_keys(data: Any, where: str, text: Optional[str]) -> Dict[str, Any]:
    data = _check_keys(data, ["finite", "family", "params"], where, text)
    if "finite" in data:
        _check_keys(data["finite"], ["atoms", "probs"], f"{where}.finite", text, required=["atoms", "probs"])
    return data


def _model(data: Any, where: str, text: Optional[str]) -> StochasticModel:
    data = _model_keys(data, where, text)
    try:
        return StochasticModel.from_dict(data)
    except ValidationError as exc:
        raise ConfigError(str(exc), field=where, line=_line_of(text, where.split(".")[-1])) from exc


def _time_law(data: Any, text: Optional[str]) -> TimeLaw:
    data = _check_keys(data, ["geometric", "pmf"], "horizon.tau", text)
    if len(data) != 1:
        raise ConfigError("tau takes exactly one of 'geometric' or 'pmf'", field="horizon.tau")
    if "geometric" in data:
        return GeometricLaw(float(data["geometric"]))
    return FiniteLaw(np.asarray(data["pmf"], dtype=np.float64))


@dataclasses.dataclass
class ExperimentConfig:
    model: StochasticModel
    cost: Dict[str, Any]
    horizon: Optional[Dict[str, Any]] = None
    design: NestedDesign = NestedDesign()
    eta: List[float] = dataclasses.field(default_factory=lambda: [0.0])
    sense: str = "max"
    order: int = 1
    seed: Optional[int] = None
    samples: int = 10_000
    output: Dict[str, str] = dataclasses.field(default_factory=dict)
    runtime: Dict[str, Any] = dataclasses.field(default_factory=dict)
    randomized_horizon: Dict[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ConfigError(f"sense must be one of {SENSES}, got {self.sense!r}", field="sense")
        if self.order not in (1, 2):
            raise ConfigError(f"order must be 1 or 2, got {self.order}", field="order")
        if any(not np.isfinite(e) or e < 0 for e in self.eta):
            raise ConfigError("eta values must be finite and nonnegative", field="eta")
        if self.samples < 2:
            raise ConfigError(f"samples must be at least 2, got {self.samples}", field="samples")
        unknown = set(self.runtime) - set(DefaultConfig.__dict__)
        if unknown:
            raise ConfigError(f"unknown runtime fields {sorted(unknown)}", field="runtime")
        for key, value in self.runtime.items():
            current = getattr(DefaultConfig, key)
            if isinstance(current, str):
                valid = isinstance(value, str)
            elif isinstance(current, int):
                valid = isinstance(value, int) and not isinstance(value, bool)
            else:
                valid = _is_type(value, "number")
            if not valid:
                raise ConfigError(
                    f"runtime.{key} must be of type {type(current).__name__}, got {value!r}", field=f"runtime.{key}"
                )

    @classmethod
    def from_dict(cls, data: Any, text: Optional[str] = None) -> "ExperimentConfig":
        data = _check_keys(data, _properties(EXPERIMENT_SCHEMA), "", text, required=EXPERIMENT_SCHEMA["required"])
        properties = EXPERIMENT_SCHEMA["properties"]
        cost = _check_keys(data["cost"], _properties(properties["cost"]), "cost", text, required=["kind"])
        if cost["kind"] not in COST_KINDS:
            raise ConfigError(f"unknown cost kind {cost['kind']!r}", field="cost.kind", line=_line_of(text, "kind"))
        horizon = None
        if "horizon" in data:
            horizon = _check_keys(data["horizon"], _properties(properties["horizon"]), "horizon", text, ["kind"])
        design = _check_keys(data.get("design", {}), _properties(properties["design"]), "design", text)
        _check_keys(data.get("output", {}), _properties(properties["output"]), "output", text)
        randomized = _check_keys(
            data.get("randomized_horizon", {}),
            _properties(properties["randomized_horizon"]),
            "randomized_horizon",
            text,
        )
        _model_keys(data["model"], "model", text)
        if "other" in cost:
            _model_keys(cost["other"], "cost.other", text)
        _validate(data, EXPERIMENT_SCHEMA, "", text)
        try:
            nested = NestedDesign(
                K=int(design.get("outer", 30)),
                n=int(design.get("inner", 10)),
                N=int(design.get("sections", 20)),
                confidence=float(design.get("confidence", 0.95)),
            )
        except ValidationError as exc:
            raise ConfigError(str(exc), field="design", line=_line_of(text, "design")) from exc
        return cls(
            model=_model(data["model"], "model", text),
            cost=cost,
            horizon=horizon,
            design=nested,
            eta=[float(e) for e in data.get("eta", [0.0])],
            sense=data.get("sense", "max"),
            order=int(data.get("order", 1)),
            seed=None if data.get("seed") is None else int(data["seed"]),
            samples=int(data.get("samples", 10_000)),
            output=dict(data.get("output", {})),
            runtime=dict(data.get("runtime", {})),
            randomized_horizon=randomized,
        )

    @classmethod
    def from_json(cls, in_file: str) -> "ExperimentConfig":
        with open(in_file, "r", encoding="utf-8") as f:
            text = f.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {in_file}: {exc.msg}", line=exc.lineno) from exc
        return cls.from_dict(data, text)

    def runtime_config(self) -> Config:
        return DefaultConfig.replace(**self.runtime)

    def horizon_config(self) -> RandomizedHorizonConfig:
        data = self.randomized_horizon
        success = data.get("success", DefaultConfig.randomized_horizon_success)
        return RandomizedHorizonConfig(
            law=GeometricLaw(float(success)),
            t_cut=data.get("t_cut"),
            tail_tolerance=data.get("tail_tolerance"),
        )

    def build_horizon(self) -> HorizonSpec:
        data = self.horizon or {"kind": "single"}
        kind = data["kind"]
        try:
            if kind == "single":
                return HorizonSpec.single()
            if kind == "fixed":
                if "T" not in data:
                    raise ConfigError("a fixed horizon needs 'T'", field="horizon.T")
                return HorizonSpec.fixed(int(data["T"]))
            if kind != "random":
                raise ConfigError(f"unknown horizon kind {kind!r}", field="horizon.kind")
            if data.get("mode") == "bounded":
                if "t_max" not in data:
                    raise ConfigError("a bounded random horizon needs 't_max'", field="horizon.t_max")
                if "stop_above" in data:
                    level = float(data["stop_above"])
                    return HorizonSpec.bounded(int(data["t_max"]), stop=lambda state: bool(state > level))
                return HorizonSpec.bounded(int(data["t_max"]))
            if data.get("mode") == "independent":
                if "tau" not in data:
                    raise ConfigError("an independent random horizon needs 'tau'", field="horizon.tau")
                return HorizonSpec.independent(_time_law(data["tau"], None))
            raise ConfigError(f"unknown random horizon mode {data.get('mode')!r}", field="horizon.mode")
        except ConfigError:
            raise
        except ValidationError as exc:
            raise ConfigError(str(exc), field="horizon") from exc

    def queue_config(self) -> QueueConfig:
        data = self.cost
        if data["kind"] != "queue-wait":
            raise ConfigError("only queue-wait costs describe a queue", field="cost.kind")
        for key in ("servers", "other"):
            if key not in data:
                raise ConfigError(f"queue-wait cost needs {key!r}", field=f"cost.{key}")
        other = _model(data["other"], "cost.other", None)
        perturb = data.get("perturb", "service")
        service, interarrival = (self.model, other) if perturb == "service" else (other, self.model)
        try:
            return QueueConfig(
                servers=int(data["servers"]),
                interarrival=interarrival,
                service=service,
                customers=int(data.get("customers", 100)),
                perturb=perturb,
            )
        except ValidationError as exc:
            raise ConfigError(str(exc), field="cost") from exc

    def build_cost(self) -> CostSpec:
        """
        The cost with its horizon. queue-wait and user-table costs carry their
        own horizon and reject a separate one.
        """
        data = self.cost
        kind = data["kind"]
        needs = {"iid-sum-tail": "y", "running-max": "b", "user-table": "table"}
        if kind in needs and needs[kind] not in data:
            raise ConfigError(f"{kind} cost needs {needs[kind]!r}", field=f"cost.{needs[kind]}")
        if kind in ("queue-wait", "user-table") and self.horizon is not None:
            raise ConfigError(f"a {kind} cost fixes its own horizon", field="horizon")
        if kind == "iid-sum-tail":
            return iid_sum_tail(float(data["y"]), self.build_horizon())
        if kind == "running-max":
            return running_max_exceeds(float(data["b"]), self.build_horizon())
        if kind == "user-table":
            if self.model.exact is None:
                raise ConfigError("a user-table cost needs a finite model", field="model")
            try:
                return table_cost(self.model.exact, data["table"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc), field="cost.table") from exc
        return queue_cost(self.queue_config())
