"""Binary container and CSV exports for datasets and trajectories.

Container layout (all integers unsigned little-endian, floats IEEE-754
little-endian float64, matrices row-major)::

    magic   4s   b"FSIM"
    version u16  1
    kind    u8   1 = dataset, 2 = trajectory
    task    u8   0 = regression, 1 = classification, 255 = none

    dataset:     M u32, d u32, flags u8 (bit 0: ground truth present),
                 N_i u32 x M, then per node X (N_i*d), y (N_i), [w* (d)]
    trajectory:  n u32, d u32, fingerprint 16s (ascii, NUL padded),
                 round index u32 x n, then n*d model entries
"""
from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from fedsim.datagen import CLASSIFICATION, REGRESSION, FederatedDataset, NodeDataset
from fedsim.protocols import Trajectory

MAGIC = b"FSIM"
VERSION = 1
KIND_DATASET = 1
KIND_TRAJECTORY = 2
_TASK_CODES = {REGRESSION: 0, CLASSIFICATION: 1, None: 255}
_TASKS = {v: k for k, v in _TASK_CODES.items()}
_F8 = np.dtype("<f8")


class FormatError(ValueError):
    pass


def _header(kind: int, task) -> bytes:
    return struct.pack("<4sHBB", MAGIC, VERSION, kind, _TASK_CODES[task])


def _read_header(buf: memoryview, kind: int):
    if len(buf) < 8:
        raise FormatError("truncated header")
    magic, version, got_kind, task = struct.unpack_from("<4sHBB", buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if got_kind != kind:
        raise FormatError(f"container holds kind {got_kind}, expected {kind}")
    if task not in _TASKS:
        raise FormatError(f"unknown task code {task}")
    return _TASKS[task], 8


def _floats(buf, offset, count):
    end = offset + 8 * count
    if end > len(buf):
        raise FormatError("truncated payload")
    return np.frombuffer(buf, dtype=_F8, count=count, offset=offset).astype(np.float64), end


def dataset_bytes(fed: FederatedDataset) -> bytes:
    has_truth = all(n.w_star is not None for n in fed.nodes)
    parts = [
        _header(KIND_DATASET, fed.task),
        struct.pack("<IIB", fed.M, fed.dim, 1 if has_truth else 0),
        struct.pack(f"<{fed.M}I", *fed.sample_counts),
    ]
    for node in fed.nodes:
        parts.append(np.ascontiguousarray(node.X, dtype=_F8).tobytes())
        parts.append(np.ascontiguousarray(node.y, dtype=_F8).tobytes())
        if has_truth:
            parts.append(np.ascontiguousarray(node.w_star, dtype=_F8).tobytes())
    return b"".join(parts)


def dataset_from_bytes(data: bytes) -> FederatedDataset:
    buf = memoryview(data)
    task, off = _read_header(buf, KIND_DATASET)
    M, d, flags = struct.unpack_from("<IIB", buf, off)
    off += 9
    counts = struct.unpack_from(f"<{M}I", buf, off)
    off += 4 * M
    nodes = []
    for n in counts:
        X, off = _floats(buf, off, n * d)
        y, off = _floats(buf, off, n)
        w = None
        if flags & 1:
            w, off = _floats(buf, off, d)
        nodes.append(NodeDataset(X.reshape(n, d), y, w))
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes")
    return FederatedDataset(nodes, d, task)


def trajectory_bytes(traj: Trajectory) -> bytes:
    G = np.ascontiguousarray(traj.as_array(), dtype=_F8)
    n, d = G.shape
    fp = traj.config_fingerprint.encode("ascii")[:16]
    return b"".join([
        _header(KIND_TRAJECTORY, None),
        struct.pack("<II16s", n, d, fp),
        struct.pack(f"<{n}I", *traj.round_indices),
        G.tobytes(),
    ])


def trajectory_from_bytes(data: bytes) -> Trajectory:
    buf = memoryview(data)
    _, off = _read_header(buf, KIND_TRAJECTORY)
    n, d, fp = struct.unpack_from("<II16s", buf, off)
    off += 24
    rounds = list(struct.unpack_from(f"<{n}I", buf, off))
    off += 4 * n
    G, off = _floats(buf, off, n * d)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes")
    G = G.reshape(n, d)
    return Trajectory([row.copy() for row in G], rounds, [[] for _ in rounds],
                      fp.rstrip(b"\0").decode("ascii"))


def save_dataset(fed: FederatedDataset, path) -> Path:
    path = Path(path)
    path.write_bytes(dataset_bytes(fed))
    return path


def load_dataset(path) -> FederatedDataset:
    return dataset_from_bytes(Path(path).read_bytes())


def save_trajectory(traj: Trajectory, path) -> Path:
    path = Path(path)
    path.write_bytes(trajectory_bytes(traj))
    return path


def load_trajectory(path) -> Trajectory:
    return trajectory_from_bytes(Path(path).read_bytes())


def fmt(x) -> str:
    """Shortest text that round-trips a float64 (17 significant digits)."""
    return format(float(x), ".17g")


def export_dataset_csv(fed: FederatedDataset, path) -> Path:
    """One sample per line: node index, features, label last."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node"] + [f"x{j}" for j in range(fed.dim)] + ["y"])
        for i, node in enumerate(fed.nodes):
            for row, label in zip(node.X, node.y):
                w.writerow([i] + [fmt(v) for v in row] + [fmt(label)])
    return path


def model_hash(w) -> str:
    return hashlib.sha256(np.ascontiguousarray(w, dtype=_F8).tobytes()).hexdigest()[:16]


def export_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "node_steps", "node_grad_norms", "any_clamped", "global_sha256"])
        for k, g, diag in zip(traj.round_indices, traj.globals, traj.diagnostics):
            steps = ";".join(str(d.get("steps", d.get("iterations", ""))) for d in diag)
            norms = ";".join(fmt(d["grad_norm"]) for d in diag if "grad_norm" in d)
            clamped = int(any(d.get("clamped", False) for d in diag))
            w.writerow([k, steps, norms, clamped, model_hash(g)])
    return path
