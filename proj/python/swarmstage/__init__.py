"""Python access to the swarmstage simulator core."""

import json as _json

from ._core import (
    Error,
    Script,
    Simulation,
    Trace,
    calibrate_anchors,
    diffdrive_step,
    export_figure,
    gray_encode,
    library_programs,
    load_script,
    load_trace,
    program_fingerprint,
    run,
)

__all__ = [
    "Error",
    "Script",
    "Simulation",
    "Trace",
    "calibrate_anchors",
    "diffdrive_step",
    "export_figure",
    "gray_encode",
    "library_programs",
    "load_script",
    "load_trace",
    "program_fingerprint",
    "run",
    "script_from_dict",
]


def script_from_dict(doc, base_dir="."):
    """Builds a Script from a plain dict, validating it like a script file."""
    return Script.from_json(_json.dumps(doc), base_dir)
