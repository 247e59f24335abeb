"""Line-oriented text format shared by models, embeddings and checkpoints.

Grammar (one record per line, tokens separated by single spaces)::

    file     := line*
    line     := comment | blank | record
    comment  := "#" <anything>
    record   := key (" " token)*

Every document starts with ``schema_version 1`` followed by ``kind <name>``.
Further records depend on the kind:

``kind ising``
    ``n <int>``, ``h <float>*n``, then one ``edge <i> <j> <J>`` per coupling.

``kind embedding``
    ``chain_coupling <float>``, then ``chain <var> : <node> <node> ...`` per
    logical variable, in variable order.

``kind <other>`` (array bundles: rbm, qahm, dataset, ...)
    ``scalar <name> <value>`` for strings/numbers and
    ``array <name> <dim>* : <value>*`` for row-major numeric arrays.

Floats are written with ``repr`` so finite doubles round-trip exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class FormatError(ValueError):
    pass


def _fmt(x) -> str:
    x = float(x)
    if not np.isfinite(x):
        raise FormatError("only finite values can be serialized")
    return repr(x)


def parse_records(text: str) -> tuple[str, list[tuple[str, list[str]]]]:
    records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *tokens = line.split()
        records.append((key, tokens))
    if not records or records[0] != ("schema_version", [str(SCHEMA_VERSION)]):
        raise FormatError(f"expected 'schema_version {SCHEMA_VERSION}' as first record")
    if len(records) < 2 or records[1][0] != "kind" or len(records[1][1]) != 1:
        raise FormatError("expected 'kind <name>' as second record")
    return records[1][1][0], records[2:]


def header(kind: str) -> list[str]:
    return [f"schema_version {SCHEMA_VERSION}", f"kind {kind}"]


# --- Ising models ----------------------------------------------------------


def dumps_ising(model) -> str:
    lines = header("ising")
    lines.append(f"n {model.n}")
    lines.append(" ".join(["h"] + [_fmt(v) for v in model.h]))
    for (i, j), v in zip(model.edges, model.J):
        lines.append(f"edge {int(i)} {int(j)} {_fmt(v)}")
    return "\n".join(lines) + "\n"


def loads_ising(text: str):
    from .ising import IsingModel

    kind, records = parse_records(text)
    if kind != "ising":
        raise FormatError(f"expected kind ising, got {kind}")
    n, h, edges, J = None, None, [], []
    for key, tok in records:
        if key == "n":
            n = int(tok[0])
        elif key == "h":
            h = [float(t) for t in tok]
        elif key == "edge":
            edges.append((int(tok[0]), int(tok[1])))
            J.append(float(tok[2]))
        else:
            raise FormatError(f"unknown record {key!r} in ising model")
    if n is None:
        raise FormatError("missing 'n' record")
    h = [] if h is None and n == 0 else h
    if h is None or len(h) != n:
        raise FormatError("'h' record must hold exactly n values")
    return IsingModel(h, np.array(edges, dtype=np.int64).reshape(-1, 2), J)


# --- embeddings ------------------------------------------------------------


def dumps_embedding(emb) -> str:
    lines = header("embedding")
    lines.append(f"chain_coupling {_fmt(emb.chain_coupling)}")
    for var, chain in enumerate(emb.chains):
        lines.append(f"chain {var} : " + " ".join(str(int(q)) for q in chain))
    return "\n".join(lines) + "\n"


def loads_embedding(text: str):
    from .hardware import EmbeddingMap

    kind, records = parse_records(text)
    if kind != "embedding":
        raise FormatError(f"expected kind embedding, got {kind}")
    coupling, chains = None, []
    for key, tok in records:
        if key == "chain_coupling":
            coupling = float(tok[0])
        elif key == "chain":
            if len(tok) < 2 or tok[1] != ":" or int(tok[0]) != len(chains):
                raise FormatError("chains must be listed as 'chain <var> : nodes' in variable order")
            chains.append(tuple(int(t) for t in tok[2:]))
        else:
            raise FormatError(f"unknown record {key!r} in embedding")
    if coupling is None:
        raise FormatError("missing 'chain_coupling' record")
    return EmbeddingMap(tuple(chains), coupling)


# --- array bundles ---------------------------------------------------------


def dumps_bundle(kind: str, scalars: dict, arrays: dict) -> str:
    lines = header(kind)
    for name, value in scalars.items():
        if isinstance(value, (bool, np.bool_)):
            tok = "true" if value else "false"
        elif isinstance(value, (int, np.integer)):
            tok = str(int(value))
        elif isinstance(value, (float, np.floating)):
            tok = _fmt(value)
        else:
            tok = str(value)
            if not tok or any(c.isspace() for c in tok):
                raise FormatError(f"scalar {name!r} must be a non-empty token without whitespace")
        lines.append(f"scalar {name} {tok}")
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dims = " ".join(str(d) for d in arr.shape)
        if np.issubdtype(arr.dtype, np.integer):
            vals = " ".join(str(int(v)) for v in arr.ravel())
        else:
            vals = " ".join(_fmt(v) for v in arr.ravel())
        lines.append(f"array {name} {dims} : {vals}".replace("  ", " "))
    return "\n".join(lines) + "\n"


def _scalar(tok: str):
    if tok in ("true", "false"):
        return tok == "true"
    for conv in (int, float):
        try:
            return conv(tok)
        except ValueError:
            pass
    return tok


def loads_bundle(text: str, kind: str | None = None) -> tuple[str, dict, dict]:
    got, records = parse_records(text)
    if kind is not None and got != kind:
        raise FormatError(f"expected kind {kind}, got {got}")
    scalars, arrays = {}, {}
    for key, tok in records:
        if key == "scalar":
            scalars[tok[0]] = _scalar(tok[1])
        elif key == "array":
            sep = tok.index(":")
            name, dims = tok[0], tuple(int(d) for d in tok[1:sep])
            raw = tok[sep + 1 :]
            is_int = all(("." not in t and "e" not in t and "n" not in t) for t in raw)
            vals = np.array([int(t) for t in raw] if is_int and raw else [float(t) for t in raw])
            if vals.size != int(np.prod(dims)):
                raise FormatError(f"array {name!r} has {vals.size} values for shape {dims}")
            arrays[name] = vals.reshape(dims)
        else:
            raise FormatError(f"unknown record {key!r}")
    return got, scalars, arrays


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
