"""Textual checkpoint files.

Layout::

    izaber-catt-checkpoint 1
    param <name> <ndim> <dim> ...
    <values, row-major, 17 significant digits>
    ...

Each Parameter object is written once even when it is reachable under
several roles (shared IS-ATT/CS-ATT weights).
"""

import os
import tempfile
from typing import Dict, Iterable, List

import numpy as np
from izaber.log import log

from .errors import CheckpointError, ParseError
from .tensor import Parameter

FORMAT_TAG = "izaber-catt-checkpoint"
FORMAT_VERSION = 1


def unique_parameters(params: Iterable[Parameter]) -> List[Parameter]:
    """Drop repeated Parameter objects (by identity), keeping first-seen order."""
    seen = {}
    for p in params:
        seen.setdefault(id(p), p)
    return list(seen.values())


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and ``os.replace``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def format_values(values: np.ndarray) -> str:
    return " ".join("{:.17g}".format(v) for v in values.ravel())


def save_checkpoint(path: str, params: Iterable[Parameter]) -> None:
    params = unique_parameters(params)
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate parameter names in checkpoint")
    lines = ["{} {}".format(FORMAT_TAG, FORMAT_VERSION)]
    for p in params:
        lines.append(" ".join(["param", p.name, str(p.value.ndim)] + [str(s) for s in p.shape]))
        lines.append(format_values(p.value))
    atomic_write_text(path, "\n".join(lines) + "\n")
    log.info("Wrote checkpoint {} ({} tensors)".format(path, len(params)))


def read_checkpoint(path: str) -> Dict[str, np.ndarray]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].split() != [FORMAT_TAG, str(FORMAT_VERSION)]:
        raise ParseError("not a {} v{} file".format(FORMAT_TAG, FORMAT_VERSION), line=1)
    tensors: Dict[str, np.ndarray] = {}
    lineno = 1
    while lineno < len(lines):
        header = lines[lineno].split()
        if not header:
            lineno += 1
            continue
        if header[0] != "param" or len(header) < 3:
            raise ParseError("expected a 'param' header", line=lineno + 1)
        try:
            ndim = int(header[2])
            shape = tuple(int(s) for s in header[3:3 + ndim])
        except ValueError:
            raise ParseError("malformed shape in header", line=lineno + 1)
        if len(shape) != ndim:
            raise ParseError("shape has fewer than {} dimensions".format(ndim), line=lineno + 1)
        if lineno + 1 >= len(lines):
            raise ParseError("missing values for {}".format(header[1]), line=lineno + 2)
        try:
            values = np.array([float(v) for v in lines[lineno + 1].split()], dtype=np.float64)
        except ValueError:
            raise ParseError("non-numeric value", line=lineno + 2)
        if values.size != int(np.prod(shape)):
            raise ParseError("{} values for shape {}".format(values.size, list(shape)), line=lineno + 2)
        tensors[header[1]] = values.reshape(shape)
        lineno += 2
    return tensors


def load_checkpoint(path: str, params: Iterable[Parameter]) -> None:
    """Overwrite ``params`` in place with the values stored at ``path``."""
    stored = read_checkpoint(path)
    params = unique_parameters(params)
    expected = {p.name for p in params}
    extra = sorted(set(stored) - expected)
    if extra:
        raise CheckpointError("checkpoint has unknown tensors: {}".format(", ".join(extra)))
    for p in params:
        if p.name not in stored:
            raise CheckpointError("checkpoint is missing {}".format(p.name))
        value = stored[p.name]
        if value.shape != p.shape:
            raise CheckpointError("{}: checkpoint shape {} does not match model shape {}".format(
                p.name, list(value.shape), list(p.shape)))
        p.value[...] = value
    log.info("Loaded checkpoint {} ({} tensors)".format(path, len(params)))
