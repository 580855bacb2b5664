"""JSON model files and the built-in reference models.

A model file looks like::

    {
      "d": 1,
      "environments": [{"C": [[3.0]], "D": [1.0]},
                       {"C": [[0.5]], "D": [1.0]}],
      "Q": [[-1.0, 1.0], [1.0, -1.0]],
      "group_fractions": [1.0]
    }

``Q`` is either a constant rate matrix or a named state-dependent form,
currently only ``{"builtin": "affine_prevalence", "base": ..., "slope": ...}``
meaning ``Q(x) = base + (sum_i alpha_i x_i) * slope``.  Diagonals of rate
matrices are ignored and recomputed so that rows sum to zero.
"""

import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import ModelError
from .model import AffineSwitch, ModelSpec

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["d", "environments", "Q"],
    "properties": {
        "d": {"type": "integer", "minimum": 1},
        "environments": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["C", "D"],
                "properties": {"C": _matrix, "D": {"type": "array", "items": {"type": "number"}}},
            },
        },
        "Q": {
            "oneOf": [
                _matrix,
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["builtin", "base", "slope"],
                    "properties": {
                        "builtin": {"enum": ["affine_prevalence"]},
                        "base": _matrix,
                        "slope": _matrix,
                    },
                },
            ]
        },
        "group_fractions": {"type": "array", "items": {"type": "number"}},
        "name": {"type": "string"},
    },
}


def model_from_dict(doc) -> ModelSpec:
    try:
        jsonschema.validate(doc, MODEL_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ModelError(f"invalid model file: {exc.message}") from None
    d = doc["d"]
    envs = doc["environments"]
    C = [e["C"] for e in envs]
    D = [e["D"] for e in envs]
    for k, (c, dd) in enumerate(zip(C, D)):
        if len(c) != d or any(len(row) != d for row in c) or len(dd) != d:
            raise ModelError(f"environment {k}: C must be {d}x{d} and D of length {d}")
    Q = doc["Q"]
    if isinstance(Q, dict):
        Q = AffineSwitch(Q["base"], Q["slope"])
    return ModelSpec(infection=C, cure=D, switch=Q, group_fractions=doc.get("group_fractions"), d=d,
                     num_env=len(envs))


def model_to_dict(spec: ModelSpec) -> dict:
    if not spec.compiled:
        raise ModelError("only array-form models can be serialised")
    doc = {
        "d": spec.d,
        "environments": [{"C": spec.infection[e].tolist(), "D": spec.cure[e].tolist()}
                         for e in range(spec.num_env)],
        "group_fractions": spec.group_fractions.tolist(),
    }
    if isinstance(spec.switch, AffineSwitch):
        doc["Q"] = {"builtin": "affine_prevalence", "base": spec.switch.base.tolist(),
                    "slope": spec.switch.slope.tolist()}
    else:
        doc["Q"] = spec.switch.tolist()
    return doc


def load_model(path) -> ModelSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def two_env_model(b1, b2, cure=1.0, q1=1.0, q2=1.0) -> ModelSpec:
    """One-group model switching between infection rates ``b1`` and ``b2``.

    ``q1`` is the rate 0 -> 1 and ``q2`` the rate 1 -> 0.
    """
    return ModelSpec.lajmanovich_yorke(
        C=[[[b1]], [[b2]]], D=[[cure], [cure]], Q=[[-q1, q1], [q2, -q2]])


REFERENCE = {
    # weakly supercritical: Lyapunov exponent 0.75, threshold exponent 1.5
    "B": dict(d=1, environments=[{"C": [[3.0]], "D": [1.0]}, {"C": [[0.5]], "D": [1.0]}],
              Q=[[-1.0, 1.0], [1.0, -1.0]]),
    # strongly supercritical: both environments favour the disease
    "S": dict(d=1, environments=[{"C": [[3.0]], "D": [1.0]}, {"C": [[2.0]], "D": [1.0]}],
              Q=[[-1.0, 1.0], [1.0, -1.0]]),
    # non-persistent: Lyapunov exponent -0.2
    "N": dict(d=1, environments=[{"C": [[0.4]], "D": [1.0]}, {"C": [[1.2]], "D": [1.0]}],
              Q=[[-1.0, 1.0], [1.0, -1.0]]),
    # two groups, fixed environment, linearisation [[-1, 2], [2, -1]]
    "const2": dict(d=2, environments=[{"C": [[0.0, 2.0], [2.0, 0.0]], "D": [1.0, 1.0]}],
                   Q=[[0.0]]),
    # one group, fixed environment, endemic equilibrium 0.5
    "const1": dict(d=1, environments=[{"C": [[2.0]], "D": [1.0]}], Q=[[0.0]]),
}


def reference_model(name) -> ModelSpec:
    try:
        return model_from_dict(REFERENCE[name])
    except KeyError:
        raise ModelError(f"unknown reference model {name!r}; choose from {sorted(REFERENCE)}") from None
