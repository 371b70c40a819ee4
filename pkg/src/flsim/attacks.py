"""Untargeted poisoning: static label flipping and AGR-agnostic model poisoning.

Model poisoning attackers only see the benign updates of the clients they
control. All compromised clients selected in a round submit one shared
(colluded) malicious update.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from statistics import NormalDist
from typing import Optional

import numpy as np

from .errors import ConfigError, FLSimError
from .seeding import rng_for

log = logging.getLogger(__name__)

MODES = ("none", "data_poison", "model_poison")
ALGORITHMS = ("lie", "min_max", "min_sum")
PERTURBATIONS = ("inverse_unit", "inverse_sign", "inverse_std")


@dataclass(frozen=True)
class AttackConfig:
    mode: str = "none"
    M: float = 0.0
    p: float = 1.0
    algorithm: str = "min_max"
    perturbation: str = "inverse_unit"
    tau: float = 1e-5
    gamma_init: float = 10.0
    max_steps: int = 50
    # Forces the LIE z value instead of deriving it from n and m.
    z: Optional[float] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}", "mode")
        if not 0 <= self.M <= 1:
            raise ConfigError("must lie in [0, 1]", "M")
        if not 0 <= self.p <= 1:
            raise ConfigError("must lie in [0, 1]", "p")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}", "algorithm")
        if self.perturbation not in PERTURBATIONS:
            raise ConfigError(f"unknown perturbation {self.perturbation!r}", "perturbation")
        if not self.tau > 0:
            raise ConfigError("must be > 0", "tau")
        if not self.gamma_init > 0:
            raise ConfigError("must be > 0", "gamma_init")

    @property
    def active(self):
        return self.mode != "none" and self.M > 0


def select_compromised(N, M, seed):
    """round(N * M) distinct client ids, fixed for the whole experiment."""
    if not 0 <= M <= 1:
        raise FLSimError("M must lie in [0, 1]")
    # Half-up rounding on the exact product (N=20, M=0.05 gives 1, not banker's 0 or 2).
    count = math.floor(Fraction(N) * Fraction(M) + Fraction(1, 2))
    if count == 0:
        return frozenset()
    rng = rng_for(seed, "compromised")
    return frozenset(int(c) for c in rng.choice(N, size=count, replace=False))


def flip_labels(data, p, seed):
    """Flip exactly ceil(p * |data|) labels chosen uniformly without replacement."""
    if not 0 <= p <= 1:
        raise FLSimError("p must lie in [0, 1]")
    n = len(data)
    count = math.ceil(Fraction(p) * n)
    if count == 0:
        return data
    rng = rng_for(seed, "flip")
    idx = rng.choice(n, size=count, replace=False)
    y = data.y.copy()
    y[idx] = 1 - y[idx]
    return data.with_labels(y)


def _as_matrix(updates):
    if len(updates) == 0:
        raise FLSimError("attack needs at least one benign update")
    return np.vstack([np.asarray(u, dtype=np.float64) for u in updates])


def lie_z(n_selected, n_compromised):
    n, m = n_selected, n_compromised
    if n - m < 2:
        return 0.0
    s = n // 2 + 1 - m
    # s <= 0 (attackers already a majority) falls back to s = 1; s is also
    # capped so the quantile argument stays inside (0, 1).
    s = min(max(s, 1), n - m - 1)
    return NormalDist().inv_cdf((n - m - s) / (n - m))


def lie_attack(benign, n_selected, n_compromised, z=None):
    """mean - z * std over the compromised clients' own benign updates."""
    U = _as_matrix(benign)
    mu = U.mean(axis=0)
    sigma = U.std(axis=0)
    if z is None:
        z = lie_z(n_selected, n_compromised)
    return mu - z * sigma


def perturbation_direction(kind, benign, seed=0):
    U = _as_matrix(benign)
    mu = U.mean(axis=0)
    if kind == "inverse_unit":
        v = -mu
    elif kind == "inverse_sign":
        v = -np.sign(mu)
    elif kind == "inverse_std":
        v = -U.std(axis=0)
    else:
        raise FLSimError(f"unknown perturbation {kind!r}")
    norm = np.linalg.norm(v)
    if norm == 0:
        log.info("%s direction has zero norm; using a random unit vector", kind)
        v = rng_for(seed, "perturbation", kind).normal(size=U.shape[1])
        norm = np.linalg.norm(v)
    return v / norm


def minmax_objective(candidate, U):
    """Largest distance from ``candidate`` to any benign update."""
    return float(np.max(np.linalg.norm(U - candidate, axis=1)))


def minmax_bound(U):
    n = U.shape[0]
    best = 0.0
    for i in range(n):
        best = max(best, float(np.max(np.linalg.norm(U - U[i], axis=1))))
    return best


def minsum_objective(candidate, U):
    """Sum of squared distances from ``candidate`` to the benign updates."""
    return float(np.sum((U - candidate) ** 2))


def minsum_bound(U):
    return max(minsum_objective(U[i], U) for i in range(U.shape[0]))


def search_gamma(feasible, gamma_init, tau, max_steps=50):
    """Largest gamma >= 0 with ``feasible(gamma)``, to within ``tau``.

    Assumes the feasible set is an interval [0, g*] (true for both attacks,
    whose objectives are convex in gamma and feasible at 0). The upper end is
    doubled until infeasible, then the bracket is halved until narrower than
    ``tau``. The result is feasible and ``result + tau`` is not.
    """
    lo, hi = 0.0, float(gamma_init)
    steps = 0
    while feasible(hi):
        lo, hi = hi, 2.0 * hi
        steps += 1
        if steps >= max_steps:
            log.warning("gamma search hit the expansion cap at %g", lo)
            return lo
    steps = 0
    while hi - lo >= tau and steps < max_steps:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
        steps += 1
    return lo


def _optimised_attack(benign, perturbation, tau, gamma_init, objective, bound_fn, max_steps, seed):
    U = _as_matrix(benign)
    mu = U.mean(axis=0)
    bound = bound_fn(U)
    if bound == 0.0:
        return mu.copy(), 0.0
    direction = perturbation_direction(perturbation, U, seed)
    gamma = search_gamma(
        lambda g: objective(mu + g * direction, U) <= bound, gamma_init, tau, max_steps
    )
    return mu + gamma * direction, gamma


def minmax_attack(benign, perturbation="inverse_unit", tau=1e-5, gamma_init=10.0, max_steps=50, seed=0, return_gamma=False):
    out, gamma = _optimised_attack(
        benign, perturbation, tau, gamma_init, minmax_objective, minmax_bound, max_steps, seed
    )
    return (out, gamma) if return_gamma else out


def minsum_attack(benign, perturbation="inverse_unit", tau=1e-5, gamma_init=10.0, max_steps=50, seed=0, return_gamma=False):
    out, gamma = _optimised_attack(
        benign, perturbation, tau, gamma_init, minsum_objective, minsum_bound, max_steps, seed
    )
    return (out, gamma) if return_gamma else out


def craft_malicious(config, benign, n_selected, seed=0):
    """The colluded update for this round, per ``config.algorithm``."""
    if config.algorithm == "lie":
        return lie_attack(benign, n_selected, len(benign), z=config.z)
    fn = minmax_attack if config.algorithm == "min_max" else minsum_attack
    return fn(benign, config.perturbation, config.tau, config.gamma_init, config.max_steps, seed)
