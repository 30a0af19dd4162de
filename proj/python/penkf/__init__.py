"""Penalized ensemble Kalman filter toolkit (C++ core)."""

import json as _json

from ._penkf import (
    PenkfError,
    build_taper,
    ebic,
    gaspari_cohn,
    glasso,
    glasso_objective,
    kkt_residual,
    lorenz96_derivative,
    lorenz96_evolve,
    normalize_config,
    precision_form_gain,
    rmse,
    sample_covariance,
    sample_gain,
    sample_mean,
    select_penalty,
)
from ._penkf import run_experiment as _run_experiment

__all__ = [
    "PenkfError",
    "build_taper",
    "ebic",
    "gaspari_cohn",
    "glasso",
    "glasso_objective",
    "kkt_residual",
    "lorenz96_derivative",
    "lorenz96_evolve",
    "normalize_config",
    "precision_form_gain",
    "rmse",
    "run_experiment",
    "sample_covariance",
    "sample_gain",
    "sample_mean",
    "select_penalty",
]


def run_experiment(config, workers=0):
    """Run an experiment from a config dict or JSON string."""
    text = config if isinstance(config, str) else _json.dumps(config)
    out = _run_experiment(text, workers)
    out["metadata"] = _json.loads(out["metadata"])
    return out
