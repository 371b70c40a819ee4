"""Server-side aggregation rules (AGRs) and the global model update.

FedAVG is sample-count weighted; Trimmed Mean and Multi-Krum are unweighted,
as in their original definitions. The unweighted means are computed exactly
in rational arithmetic and rounded once, so they do not depend on summation
order and a set of identical updates averages back to that update.
"""
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError, FLSimError

AGR_KINDS = ("fedavg", "trimmed_mean", "multi_krum")


@dataclass(frozen=True)
class AgrRule:
    kind: str = "fedavg"
    # None means "derive from the number of updates" (10% rule below).
    trim_k: Optional[int] = None
    f: Optional[int] = None
    m: Optional[int] = None
    uniform_weights: bool = False

    def __post_init__(self):
        if self.kind not in AGR_KINDS:
            raise ConfigError(f"unknown AGR {self.kind!r}; expected one of {AGR_KINDS}", "kind")
        for name in ("trim_k", "f"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError("must be >= 0", name)
        if self.m is not None and self.m < 1:
            raise ConfigError("must be >= 1", "m")


def default_trim_k(n):
    return math.ceil(0.1 * n)


def default_krum_params(n):
    f = math.ceil(0.1 * n)
    return f, n - f


def _stack(updates):
    if not updates:
        raise FLSimError("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    dims = {u.delta.shape[0] for u in ordered}
    if len(dims) != 1:
        raise DimensionError(f"updates have differing dimensions {sorted(dims)}")
    return ordered, np.vstack([u.delta for u in ordered])


def _exact_column_mean(rows):
    n = rows.shape[0]
    return np.array([float(sum(map(Fraction, col.tolist())) / n) for col in rows.T])


def fedavg(updates, uniform=False):
    """Weighted mean of deltas, summed in ascending client_id order."""
    ordered, deltas = _stack(updates)
    counts = np.array([1 if uniform else u.sample_count for u in ordered], dtype=np.float64)
    weights = counts / counts.sum()
    out = np.zeros(deltas.shape[1])
    for w, d in zip(weights, deltas):
        out += w * d
    return out


def trimmed_mean(updates, trim_k):
    """Per-coordinate mean after dropping the ``trim_k`` lowest and highest values."""
    _, deltas = _stack(updates)
    n = deltas.shape[0]
    if trim_k < 0 or n <= 2 * trim_k:
        raise FLSimError(f"trimmed mean needs n > 2 * trim_k (n={n}, trim_k={trim_k})")
    # Rows are in client_id order and the sort is stable, so equal values
    # keep client_id order.
    kept = np.sort(deltas, axis=0, kind="stable")[trim_k : n - trim_k]
    return _exact_column_mean(kept)


def krum_scores(deltas, f):
    """Sum of squared distances from each row to its n - f - 2 nearest other rows."""
    n = deltas.shape[0]
    n_near = n - f - 2
    d2 = np.empty((n, n))
    for i in range(n):
        d2[i, i] = 0.0
        for j in range(i + 1, n):
            d2[i, j] = d2[j, i] = math.fsum((deltas[i] - deltas[j]) ** 2)
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(d2[i], i))
        scores[i] = math.fsum(others[:n_near])
    return scores


def multi_krum_select(updates, f, m):
    """Client ids of the ``m`` lowest-scoring updates (single pass, client_id tie-break)."""
    ordered, deltas = _stack(updates)
    n = deltas.shape[0]
    if n - f - 2 < 1:
        raise FLSimError(f"Multi-Krum needs n - f - 2 >= 1 (n={n}, f={f})")
    if not 1 <= m <= n - f:
        raise FLSimError(f"Multi-Krum needs 1 <= m <= n - f (n={n}, f={f}, m={m})")
    scores = krum_scores(deltas, f)
    chosen = np.argsort(scores, kind="stable")[:m]
    return [ordered[i].client_id for i in sorted(chosen)], scores


def multi_krum(updates, f, m):
    selected, _ = multi_krum_select(updates, f, m)
    keep = set(selected)
    rows = np.vstack([u.delta for u in sorted(updates, key=lambda u: u.client_id) if u.client_id in keep])
    return _exact_column_mean(rows)


def aggregate(rule, updates):
    """Apply ``rule`` with its 10%-of-n defaults filled in."""
    n = len(updates)
    if rule.kind == "fedavg":
        return fedavg(updates, uniform=rule.uniform_weights)
    if rule.kind == "trimmed_mean":
        k = default_trim_k(n) if rule.trim_k is None else rule.trim_k
        # Small rounds cannot honour the configured trim; keep at least one value.
        k = min(k, (n - 1) // 2)
        return trimmed_mean(updates, k)
    f_def, m_def = default_krum_params(n)
    f = f_def if rule.f is None else rule.f
    f = max(0, min(f, n - 3))
    m = n - f if rule.m is None else min(rule.m, n - f)
    if n < 3:
        # Krum scores are undefined below three updates.
        return fedavg(updates, uniform=True)
    return multi_krum(updates, f, m)


def apply_update(global_params, agg_delta, server_lr):
    g = np.asarray(global_params, dtype=np.float64)
    d = np.asarray(agg_delta, dtype=np.float64)
    if g.shape != d.shape:
        raise DimensionError(f"global has shape {g.shape}, update has {d.shape}")
    return g + server_lr * d
