"""Contextual neural language models for dialogue ASR rescoring."""

import json

from ._core import (
    DataError,
    Error,
    Model,
    UsageError,
    align,
    align_text,
    content_align,
    load_stopwords,
    mapsswe,
    normalize_dialogue_act,
    relative_reduction,
    tokenize,
)
from . import _core

__all__ = [
    "DataError", "Error", "Model", "UsageError", "align", "align_text", "content_align",
    "generate_dialogues", "load_stopwords", "mapsswe", "normalize_dialogue_act",
    "relative_reduction", "run_cli", "tokenize",
]


def generate_dialogues(dialogues=2000, seed=1, min_turns=4, max_turns=8, domains=("bank", "travel")):
    """Synthetic dialogues as a list of dicts."""
    text = _core.generate_dialogues(dialogues, seed, min_turns, max_turns, list(domains))
    return [json.loads(line) for line in text.splitlines()]


def run_cli(*args):
    """Runs a subcommand in-process.

    Returns (exit_code, parsed stdout, stderr); stdout that is not JSON
    (help text) comes back as the raw string, and None on failure.
    """
    if not hasattr(_core, "run_cli"):
        raise RuntimeError("built without the command-line tool")
    code, out, err = _core.run_cli([str(a) for a in args])
    if code != 0 or not out.strip():
        return code, None, err
    try:
        return code, json.loads(out), err
    except json.JSONDecodeError:
        return code, out, err
