"""Python bindings for the tpld library."""

import json

from ._tpld import (
    Config,
    DataError,
    NumericError,
    ShapeError,
    UsageError,
    Vocabulary,
    acl_loss,
    bleu,
    build_id,
    canonicalize_acts,
    combined,
    delexicalize,
    gamma_sweep,
    linearize,
)
from . import _tpld


def synthesize(n_sessions=300, seed=7, revision_prob=0.2):
    """Synthetic corpus as a list of session dicts."""
    return [json.loads(s) for s in _tpld.synthesize(n_sessions, seed, revision_prob)]


def load_corpus(path):
    return [json.loads(s) for s in _tpld.load_corpus(str(path))]


def run_experiment(config, out=None):
    r = _tpld.run_experiment(config, None if out is None else str(out))
    r["report"] = json.loads(r["report"])
    return r
