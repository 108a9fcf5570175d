"""Python surface for the scene parsing toolkit.

The heavy lifting lives in the compiled ``_pscene`` extension; this package
re-exports it and adds a small helper for driving the command-line tool.
"""

import os
import subprocess

from _pscene import (
    UNLABELED,
    ArgumentError,
    DataError,
    EvalReport,
    evaluate,
    load_image,
    load_labels,
    save_image,
    save_labels,
    synthesize,
)

__all__ = [
    "UNLABELED",
    "ArgumentError",
    "DataError",
    "EvalReport",
    "evaluate",
    "load_image",
    "load_labels",
    "save_image",
    "save_labels",
    "synthesize",
    "run_cli",
]


def run_cli(*args, check=True):
    """Run the ``pscene`` binary (path taken from ``PSCENE_CLI``, falling back
    to the PATH) and return the completed process."""
    exe = os.environ.get("PSCENE_CLI", "pscene")
    return subprocess.run([exe, *map(str, args)], check=check,
                          capture_output=True, text=True)
