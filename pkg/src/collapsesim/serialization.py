"""On-disk formats for states and event logs.

State files (``.cstate``)::

    bytes 0..7    magic b"CSIMSTAT"
    bytes 8..11   header length L, uint32 little-endian
    next L bytes  UTF-8 JSON header
    remainder     complex128 little-endian values, column-major (Fortran) order

The header holds ``kind`` ("wavefunction" or "density"), ``grid``
(``x_min``, ``x_max``, ``n_points``), ``n_particles``, ``shape``, ``dtype``
("<c16") and ``order`` ("F").

Event logs are JSON lines, one event per line: ``{"time", "index",
"outcome"}`` for GRW jumps and ``{"time", "index", "k"}`` for kicks.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import DensityMatrix, SpatialGrid, WaveFunction
from .errors import DomainError

MAGIC = b"CSIMSTAT"
FORMAT_VERSION = 1


def state_to_bytes(state) -> bytes:
    if isinstance(state, WaveFunction):
        kind, data, n_particles = "wavefunction", state.amplitudes, state.n_particles
    elif isinstance(state, DensityMatrix):
        kind, data, n_particles = "density", state.elements, 1
    else:
        raise DomainError(f"cannot serialize {type(state).__name__}")
    header = {
        "format": "collapsesim-state",
        "version": FORMAT_VERSION,
        "kind": kind,
        "grid": state.grid.to_dict(),
        "n_particles": n_particles,
        "shape": list(data.shape),
        "dtype": "<c16",
        "order": "F",
    }
    head = json.dumps(header, sort_keys=True).encode()
    payload = np.asarray(data, dtype="<c16").tobytes(order="F")
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def state_from_bytes(blob: bytes):
    if blob[:8] != MAGIC:
        raise DomainError("not a collapsesim state file")
    (length,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + length].decode())
    shape = tuple(header["shape"])
    data = np.frombuffer(blob[12 + length :], dtype=header["dtype"])
    data = data.reshape(shape, order=header["order"])
    grid = SpatialGrid.from_dict(header["grid"])
    if header["kind"] == "wavefunction":
        return WaveFunction(grid, data, header["n_particles"])
    if header["kind"] == "density":
        return DensityMatrix(grid, data)
    raise DomainError(f"unknown state kind {header['kind']!r}")


def save_state(path, state):
    Path(path).write_bytes(state_to_bytes(state))


def load_state(path):
    return state_from_bytes(Path(path).read_bytes())


def events_to_jsonl(events) -> str:
    return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in events)


def write_events(path, events):
    Path(path).write_text(events_to_jsonl(events))


def read_events(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
