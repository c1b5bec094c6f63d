"""Plain-text model files.

Layout::

    kneesynergy <Kind> 1
    <key> <value>                 # zero or more scalar/str fields
    matrix <name> <rows> <cols>
    <row-major values, one matrix row per line, %.17g>
    ...

Blank lines and lines starting with ``#`` are ignored.  Every float is
written with 17 significant digits so a write/read cycle is lossless.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .adaptive import AdaptiveRegressor, CadenceEstimator
from .errors import DataError
from .synergy import LinearKneeMap, SynergyModel

MAGIC = "kneesynergy"
VERSION = "1"


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _dump(kind: str, fields: dict[str, str], matrices: dict[str, np.ndarray]) -> str:
    lines = [f"{MAGIC} {kind} {VERSION}"]
    for k, v in fields.items():
        lines.append(f"{k} {v}")
    for name, M in matrices.items():
        M = np.atleast_2d(np.asarray(M, dtype=float))
        lines.append(f"matrix {name} {M.shape[0]} {M.shape[1]}")
        lines.extend(" ".join(_fmt(x) for x in row) for row in M)
    return "\n".join(lines) + "\n"


def _parse(text: str, source: str) -> tuple[str, dict[str, str], dict[str, np.ndarray]]:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{source}: empty model file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != MAGIC:
        raise DataError(f"{source}: not a model file (header {lines[0]!r})")
    if head[2] != VERSION:
        raise DataError(f"{source}: unsupported format version {head[2]}")
    fields: dict[str, str] = {}
    matrices: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "matrix":
            if len(parts) != 4:
                raise DataError(f"{source}: bad matrix header {lines[i]!r}")
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            body = lines[i + 1:i + 1 + rows]
            if len(body) != rows:
                raise DataError(f"{source}: matrix {name} is truncated")
            try:
                cells = [[float(x) for x in ln.split()] for ln in body]
            except ValueError:
                raise DataError(f"{source}: matrix {name} has a non-numeric entry") from None
            if any(len(row) != cols for row in cells):
                raise DataError(f"{source}: matrix {name} should be {rows}x{cols}, got a row of another width")
            M = np.array(cells, dtype=float).reshape(rows, cols)
            if M.shape != (rows, cols):
                raise DataError(f"{source}: matrix {name} should be {rows}x{cols}, got {M.shape}")
            matrices[name] = M
            i += 1 + rows
        else:
            fields[parts[0]] = " ".join(parts[1:])
            i += 1
    return head[1], fields, matrices


def _need(matrices: dict, name: str, source: str) -> np.ndarray:
    if name not in matrices:
        raise DataError(f"{source}: missing matrix {name}")
    return matrices[name]


def dumps(obj) -> str:
    if isinstance(obj, SynergyModel):
        mats = {"U": obj.U, "s": obj.s[None, :], "V": obj.V, "x0": obj.x0[None, :]}
        if obj.scale is not None:
            mats["scale"] = obj.scale[None, :]
        return _dump("SynergyModel", {"r": str(obj.r)}, mats)
    if isinstance(obj, LinearKneeMap):
        mats = {"A": obj.A}
        if obj.residual_rms is not None:
            mats["residual_rms"] = np.asarray(obj.residual_rms)[None, :]
        return _dump("LinearKneeMap", {}, mats)
    if isinstance(obj, AdaptiveRegressor):
        fields = {"mode": obj.mode, "cadences": ",".join(_fmt(c) for c in obj.cadences)}
        # beta[i, j, k] stored as a 10 x 5 block: row 5*i + j holds beta_ij
        return _dump("AdaptiveRegressor", fields, {"beta": obj.beta.reshape(10, 5)})
    if isinstance(obj, CadenceEstimator):
        return _dump("CadenceEstimator", {}, {"c": obj.c[None, :]})
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def loads(text: str, source: str = "<string>"):
    kind, fields, mats = _parse(text, source)
    if kind == "SynergyModel":
        scale = mats["scale"][0] if "scale" in mats else None
        return SynergyModel(U=_need(mats, "U", source), s=_need(mats, "s", source)[0],
                            V=_need(mats, "V", source), x0=_need(mats, "x0", source)[0],
                            r=int(fields.get("r", 4)), scale=scale)
    if kind == "LinearKneeMap":
        rr = mats["residual_rms"][0] if "residual_rms" in mats else None
        return LinearKneeMap(A=_need(mats, "A", source), residual_rms=rr)
    if kind == "AdaptiveRegressor":
        cad = fields.get("cadences", "")
        cadences = tuple(float(c) for c in cad.split(",") if c)
        return AdaptiveRegressor(beta=_need(mats, "beta", source).reshape(2, 5, 5),
                                 cadences=cadences, mode=fields.get("mode", "joint"))
    if kind == "CadenceEstimator":
        return CadenceEstimator(_need(mats, "c", source)[0])
    raise DataError(f"{source}: unknown model kind {kind!r}")


def save(path: str | Path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def load(path: str | Path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return loads(text, str(path))
