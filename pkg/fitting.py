# fitting.py
from __future__ import annotations

from typing import Callable, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import stats


class LineFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    stderr: float
    points: int


def line_fit(x: Sequence[float], y: Sequence[float]) -> LineFit:
    """Least-squares line through (x, y); needs at least two distinct x values."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0.0:
        raise ValueError("line fit needs at least two distinct abscissae")
    if x.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return LineFit(float(slope), float(y[0] - slope * x[0]), 1.0, 0.0, 2)
    res = stats.linregress(x, y)
    return LineFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2),
                   float(res.stderr), int(x.size))


def loglog_fit(x: Sequence[float], y: Sequence[float]) -> LineFit:
    """Line fit in log-log coordinates over the strictly positive pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    return line_fit(np.log(x[keep]), np.log(y[keep]))


def observed_order(steps: Sequence[float], errors: Sequence[float]) -> float:
    """Convergence order p in error ~ C * step^p."""
    return loglog_fit(steps, errors).slope


def is_nonincreasing(values: Sequence[float], atol: float = 0.0) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= atol))


def running_sup(values: Sequence[float]) -> np.ndarray:
    return np.maximum.accumulate(np.asarray(values, dtype=float))


def block_maxima(times: Sequence[float], values: Sequence[float],
                 blocks: int) -> Tuple[np.ndarray, np.ndarray]:
    """Split the series into ``blocks`` equal index windows; return (block start, max)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    edges = np.linspace(0, t.size, blocks + 1).astype(int)
    starts, maxima = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            starts.append(t[a])
            maxima.append(float(np.max(v[a:b])))
    return np.array(starts), np.array(maxima)


def first_passing(predicate: Callable[[float], bool], candidates: Sequence[float]) -> float:
    """Smallest candidate with predicate(c) true; makes no monotonicity assumption."""
    for c in sorted(float(x) for x in candidates):
        if predicate(c):
            return c
    raise ValueError(f"predicate fails on all {len(candidates)} candidates")
