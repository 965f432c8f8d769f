"""Structured-text artifacts (JSON) and trajectory CSV files.

Every JSON artifact is an object ``{"kind": ..., "version": ..., "data": ...}``.
Trajectory CSV files start with a ``#`` metadata line
(``# n=4 m=2 T=100 seed=0 model=<hash> version=<v>``), a column header
``t,x0,...,u0,...`` and one row per time step; the final row (``t = T``)
has empty input fields.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math

import numpy as np

from . import __version__
from .bootstrap import BootstrapResult
from .plant import PlantModel, Trajectory
from .synthesis import SynthesisProblem, SynthesisSolution
from .sysid import LassoEstimate


class ArtifactParseError(ValueError):
    """Malformed artifact; the message names the file and line."""


KINDS = {
    "plant": PlantModel,
    "estimate": LassoEstimate,
    "bootstrap": BootstrapResult,
    "problem": SynthesisProblem,
    "solution": SynthesisSolution,
}


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _restore(obj):
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    return obj


def dumps(kind, obj, extra=None):
    payload = obj if isinstance(obj, dict) else obj.to_dict()
    doc = {"kind": kind, "version": __version__, "data": _clean(payload)}
    if extra:
        doc["meta"] = _clean(extra)
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save(path, kind, obj, extra=None):
    with open(path, "w") as fh:
        fh.write(dumps(kind, obj, extra))


def loads(text, source="<string>", expect=None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArtifactParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or "kind" not in doc or "data" not in doc:
        raise ArtifactParseError(f"{source}:1: expected an object with 'kind' and 'data'")
    kind = doc["kind"]
    if expect is not None and kind not in (expect if isinstance(expect, tuple) else (expect,)):
        raise ArtifactParseError(f"{source}:1: expected a {expect} artifact, got {kind!r}")
    if kind not in KINDS:
        return kind, _restore(doc["data"])
    try:
        return kind, KINDS[kind].from_dict(_restore(doc["data"]))
    except (KeyError, TypeError, ValueError) as exc:
        line = _locate(text, exc)
        raise ArtifactParseError(f"{source}:{line}: invalid {kind} artifact: {exc}") from None


def _locate(text, exc):
    # best effort: first line mentioning the offending key
    key = exc.args[0] if exc.args and isinstance(exc.args[0], str) else None
    if key:
        for i, line in enumerate(text.splitlines(), start=1):
            if f'"{key}"' in line:
                return i
    return 1


def load(path, expect=None):
    with open(path) as fh:
        return loads(fh.read(), str(path), expect)


def write_trajectory(path, traj):
    n, m, T = traj.n, traj.m, traj.T
    cols = ["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
    lines = [f"# n={n} m={m} T={T} seed={traj.seed} model={traj.model_id or '-'} "
             f"version={__version__}", ",".join(cols)]
    for t in range(T + 1):
        xs = [repr(float(v)) for v in traj.states[t]]
        us = [repr(float(v)) for v in traj.inputs[t]] if t < T else [""] * m
        lines.append(",".join([str(t)] + xs + us))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ArtifactParseError(f"{path}:1: missing '# n=.. m=.. T=..' metadata line")
    meta = {}
    for tok in lines[0][1:].split():
        if "=" not in tok:
            raise ArtifactParseError(f"{path}:1: bad metadata token {tok!r}")
        k, v = tok.split("=", 1)
        meta[k] = v
    try:
        n, m, T = int(meta["n"]), int(meta["m"]), int(meta["T"])
        seed = int(meta.get("seed", 0))
    except (KeyError, ValueError) as exc:
        raise ArtifactParseError(f"{path}:1: metadata needs integer n, m, T ({exc})") from None
    if len(lines) < T + 3:
        raise ArtifactParseError(f"{path}:{len(lines)}: expected {T + 1} data rows, "
                                 f"found {max(len(lines) - 2, 0)}")
    X = np.empty((T + 1, n))
    U = np.empty((T, m))
    for t in range(T + 1):
        lineno = t + 3
        parts = lines[t + 2].split(",")
        if len(parts) != 1 + n + m:
            raise ArtifactParseError(f"{path}:{lineno}: expected {1 + n + m} fields, "
                                     f"got {len(parts)}")
        try:
            if int(parts[0]) != t:
                raise ValueError(f"time index {parts[0]} (expected {t})")
            X[t] = [float(v) for v in parts[1:1 + n]]
            if t < T:
                U[t] = [float(v) for v in parts[1 + n:]]
        except ValueError as exc:
            raise ArtifactParseError(f"{path}:{lineno}: {exc}") from None
    model = meta.get("model", "")
    return Trajectory(X, U, seed, "" if model == "-" else model)


# keys that choose where results go, not what they are
OUTPUT_KEYS = ("out", "summary_out", "errors_out", "cache_dir", "workers")


def config_hash(cfg):
    cfg = {k: v for k, v in cfg.items() if k not in OUTPUT_KEYS}
    blob = json.dumps(_clean(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def write_csv(path, header, rows, cfg):
    """CSV with a leading ``# config=<hash> version=<v>`` line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config={config_hash(cfg)} version={__version__}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
