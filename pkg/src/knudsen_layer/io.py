"""Flat binary files for operator caches and solutions, and CSV writers.

Layout (all integers little-endian):

    bytes 0-7    magic  b"KNLAYER\\0"
    bytes 8-11   uint32 format version
    bytes 12-15  uint32 kind (1 = collision operator, 2 = slab solution)
    bytes 16-23  uint64 header length H
    next H bytes UTF-8 JSON header: grid parameters, gas state, scalars and
                 the ordered list of arrays with their shapes
    body         the arrays in header order, row-major float64 little-endian
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import struct
from pathlib import Path

import numpy as np

from .collision import (CollisionOperator, GasState, VelocityGrid, orthonormal_null_basis,
                        relative_asymmetry)
from .errors import KnudsenError

MAGIC = b"KNLAYER\0"
VERSION = 1
KIND_OPERATOR = 1
KIND_SOLUTION = 2


class CacheFormatError(KnudsenError):
    pass


def _write(path, kind: int, header: dict, arrays: dict):
    header = dict(header)
    header["arrays"] = [[name, list(a.shape)] for name, a in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, kind, len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read(path, kind: int):
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CacheFormatError(f"{path}: bad magic")
        version, k, hlen = struct.unpack("<IIQ", fh.read(16))
        if version != VERSION:
            raise CacheFormatError(f"{path}: unsupported version {version}")
        if k != kind:
            raise CacheFormatError(f"{path}: kind {k}, expected {kind}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise CacheFormatError(f"{path}: truncated array {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(float)
    return header, arrays


def _gas_dict(gas: GasState) -> dict:
    return dataclasses.asdict(gas)


def save_operator(path, op: CollisionOperator) -> None:
    header = {"gas": _gas_dict(op.gas), "n_per_axis": op.grid.n_per_axis,
              "v_max": op.grid.v_max, "n_omega": op.n_omega,
              "conservative": op.conservative, "clipped_mass": op.clipped_mass}
    _write(path, KIND_OPERATOR, header,
           {"nu": op.nu, "k_matrix": op.k_matrix, "raw_null_residual": op.raw_null_residual})


def load_operator(path) -> CollisionOperator:
    header, arrays = _read(path, KIND_OPERATOR)
    gas = GasState(**header["gas"])
    grid = VelocityGrid.uniform(header["n_per_axis"], header["v_max"])
    K = arrays["k_matrix"]
    basis = orthonormal_null_basis(gas, grid)
    for a in (arrays["nu"], K, basis, arrays["raw_null_residual"]):
        a.setflags(write=False)
    return CollisionOperator(gas=gas, grid=grid, nu=arrays["nu"], k_matrix=K,
                             p0_basis=basis, raw_null_residual=arrays["raw_null_residual"],
                             symmetry_defect=relative_asymmetry(K),
                             clipped_mass=header["clipped_mass"],
                             conservative=header["conservative"], n_omega=header["n_omega"])


def save_solution(path, solution) -> None:
    pr = solution.problem
    header = {"gas": _gas_dict(pr.gas), "n_per_axis": pr.grid.n_per_axis,
              "v_max": pr.grid.v_max, "epsilon": pr.geom.epsilon, "a_exp": pr.geom.a_exp,
              "d": pr.geom.d, "lam": pr.lam,
              "n_damp": None if math.isinf(pr.n_damp) else pr.n_damp,
              "residual": solution.residual, "iterations": solution.iterations,
              "method": solution.method}
    _write(path, KIND_SOLUTION, header, {"eta": pr.eta, "h": solution.h, "f": solution.f})


def load_solution(path) -> tuple[dict, dict]:
    return _read(path, KIND_SOLUTION)


def fmt(x) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def write_summary(path, items: dict) -> Path:
    """Machine-readable ``key=value`` lines in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k}={fmt(v)}\n")
    return path


def read_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out
