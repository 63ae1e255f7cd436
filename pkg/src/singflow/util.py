"""Small shared helpers: bounded parallel map and a rotation onto +z."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def max_threads() -> int:
    """Worker cap from ``SINGFLOW_THREADS`` (default 1, i.e. sequential)."""
    try:
        return max(1, int(os.environ.get("SINGFLOW_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    items = list(items)
    n = min(max_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def rotation_to_z(direction) -> np.ndarray:
    """Proper rotation R with ``R @ direction = (0, 0, 1)`` (Rodrigues formula)."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    ez = np.array([0.0, 0.0, 1.0])
    c = float(d @ ez)
    if c > 1 - 1e-15:
        return np.eye(3)
    if c < -1 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    k = np.cross(d, ez)
    s = np.linalg.norm(k)
    k = k / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def unwrap_continuous(phi):
    """Nearest-angle lift of an angle sequence."""
    return np.unwrap(np.asarray(phi, dtype=float))
