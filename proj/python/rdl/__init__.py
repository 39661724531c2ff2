"""Python bindings for the rdl core library.

Functions taking or returning ``*_json`` strings use the archspec/1,
traincfg/1 and matrix/1 documents of the command-line tool. The helpers
here decode them to dicts.
"""

import json

from . import _core
from ._core import (
    accuracy_drop,
    build_spec,
    distillation_gain,
    evaluate,
    format_millions,
    project_2d,
    report,
    run_matrix,
    set_deterministic,
    train,
    validate_spec,
)

Error = _core.Error
Error.code = property(lambda self: self.args[0])
Error.__str__ = lambda self: f"{self.args[0]}: {self.args[1]}" if len(self.args) == 2 else super(Error, self).__str__()


def analyze(spec_json, input="3x32x32", format="json"):
    """Cost report of an archspec/1 document; a dict for format="json"."""
    out = _core.analyze(spec_json, input, format)
    return json.loads(out) if format == "json" else out


def cost_table(family, depth=22, widen=2, policies=("g=2", "g=4", "g=8", "g=16"), residual_modes=(True, False),
               input="3x32x32", num_classes=100, format="json"):
    """FLOPs and parameters of every (residual mode, policy) cell."""
    out = _core.cost_table(family, depth, widen, list(policies), list(residual_modes), input, num_classes, format)
    return json.loads(out) if format == "json" else out


__all__ = [
    "Error",
    "accuracy_drop",
    "analyze",
    "build_spec",
    "cost_table",
    "distillation_gain",
    "evaluate",
    "format_millions",
    "project_2d",
    "report",
    "run_matrix",
    "set_deterministic",
    "train",
    "validate_spec",
]
