"""Client data assignment for the non-IID regimes.

Four schemes are supported:

* ``quantity``  - client dataset sizes follow Dirichlet(alpha) weights, labels
  follow the pool mix only through shuffling.
* ``label``     - positives and negatives are each spread with their own
  Dirichlet(alpha) weight sequence.
* ``cli``       - consistent label imbalance at a fixed positive:negative ratio
  (PNR). The majority ("anchor") class is spread with Dirichlet(1); each client
  then draws ceil(anchor * PNR) or ceil(anchor / PNR) samples of the other class
  with replacement.
* ``attribute`` - each client may only hold samples of k attribute values
  (language, malware family); each value is spread over its qualifying clients
  with Dirichlet(1).

Real-valued weights are turned into integer counts by largest-remainder
rounding so that counts always sum to the class or pool size.
"""
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil

import numpy as np

from .errors import ConfigError, FLSimError
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

SCHEMES = ("quantity", "label", "cli", "attribute")


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "quantity"
    n_clients: int = 200
    alpha: float = 1.0
    pnr: float = 1.0
    k: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}", "scheme")
        if self.n_clients < 1:
            raise ConfigError("must be >= 1", "n_clients")
        if not self.alpha > 0:
            raise ConfigError("must be > 0", "alpha")
        if not self.pnr > 0:
            raise ConfigError("must be > 0", "pnr")
        if self.k < 1:
            raise ConfigError("must be >= 1", "k")


@dataclass
class PartitionPlan:
    assignments: list
    # Attribute values that no client qualified for, with the client that got them.
    orphans: dict = field(default_factory=dict)

    @property
    def n_clients(self):
        return len(self.assignments)

    def sizes(self):
        return [len(a) for a in self.assignments]

    def to_json(self):
        return json.dumps(
            {
                "n_clients": self.n_clients,
                "assignments": {str(i): [int(j) for j in a] for i, a in enumerate(self.assignments)},
                "orphans": {str(k): int(v) for k, v in self.orphans.items()},
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        n = obj["n_clients"]
        assignments = [np.array(obj["assignments"][str(i)], dtype=np.int64) for i in range(n)]
        orphans = {int(k): int(v) for k, v in obj.get("orphans", {}).items()}
        return cls(assignments, orphans)


def dirichlet_weights(alpha, n, seed):
    """``n`` normalised Gamma(alpha, 1) draws."""
    if not alpha > 0:
        raise FLSimError(f"Dirichlet alpha must be > 0, got {alpha}")
    if n < 1:
        raise FLSimError("need at least one weight")
    rng = rng_for(seed, "dirichlet", float(alpha), int(n))
    g = rng.gamma(alpha, 1.0, size=n)
    total = g.sum()
    if not (total > 0 and np.isfinite(total)):
        # Tiny alpha underflows every draw to 0; redo in log space using
        # Gamma(a) = Gamma(a + 1) * U ** (1 / a).
        logs = np.log(rng.gamma(alpha + 1.0, 1.0, size=n)) + np.log(rng.uniform(size=n)) / alpha
        g = np.exp(logs - logs.max())
        total = g.sum()
    return g / total


def largest_remainder(weights, total, min_count=0):
    """Integer counts proportional to ``weights`` that sum exactly to ``total``.

    With ``min_count`` > 0, clients below it are topped up one sample at a time
    from the currently largest client (lowest index on ties).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not w.sum() > 0:
        raise FLSimError("weights must be a non-empty, nonnegative vector with positive sum")
    if min_count * w.size > total:
        raise FLSimError(f"cannot give {w.size} clients at least {min_count} of {total} samples")
    raw = w / w.sum() * total
    counts = np.floor(raw).astype(np.int64)
    short = int(total - counts.sum())
    if short > 0:
        # Stable sort on negative remainder: ties go to the lower index.
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    elif short < 0:
        order = np.argsort(raw - counts, kind="stable")
        for i in order[: -short]:
            counts[i] -= 1
    for i in range(w.size):
        while counts[i] < min_count:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def _split(indices, counts):
    bounds = np.concatenate([[0], np.cumsum(counts)])
    return [indices[bounds[i] : bounds[i + 1]] for i in range(len(counts))]


def cli_sampled_count(anchor_count, pnr):
    """Number of non-anchor samples a client draws for a given anchor count.

    Uses exact rational arithmetic so e.g. 10 * 0.3 does not round up to 4.
    """
    r = Fraction(pnr)
    if r <= 1:
        return ceil(Fraction(int(anchor_count)) * r)
    return ceil(Fraction(int(anchor_count)) / r)


def partition_quantity(dataset, spec, weights=None):
    n = len(dataset)
    N = spec.n_clients
    if n < N:
        raise FLSimError(f"pool of {n} samples cannot cover {N} clients")
    if weights is None:
        weights = dirichlet_weights(spec.alpha, N, derive_seed(spec.seed, "quantity"))
    counts = largest_remainder(weights, n, min_count=1)
    pool = rng_for(spec.seed, "quantity-shuffle").permutation(n)
    return PartitionPlan([np.sort(a) for a in _split(pool, counts)])


def _class_pools(dataset, seed, tag):
    rng = rng_for(seed, tag)
    pos = rng.permutation(np.flatnonzero(dataset.y == 1))
    neg = rng.permutation(np.flatnonzero(dataset.y == 0))
    return pos, neg


def partition_label(dataset, spec, pos_weights=None, neg_weights=None):
    N = spec.n_clients
    pos, neg = _class_pools(dataset, spec.seed, "label-shuffle")
    if pos.size == 0 or neg.size == 0:
        raise FLSimError("label partitioning needs both classes in the pool")
    if pos_weights is None:
        pos_weights = dirichlet_weights(spec.alpha, N, derive_seed(spec.seed, "pos"))
    if neg_weights is None:
        neg_weights = dirichlet_weights(spec.alpha, N, derive_seed(spec.seed, "neg"))
    pos_parts = _split(pos, largest_remainder(pos_weights, pos.size))
    neg_parts = _split(neg, largest_remainder(neg_weights, neg.size))
    return PartitionPlan([np.sort(np.concatenate([p, q])) for p, q in zip(pos_parts, neg_parts)])


def partition_cli(dataset, spec, anchor_weights=None):
    N = spec.n_clients
    pos, neg = _class_pools(dataset, spec.seed, "cli-shuffle")
    if pos.size == 0 or neg.size == 0:
        raise FLSimError("consistent label imbalance needs both classes in the pool")
    anchor, other = (neg, pos) if spec.pnr <= 1 else (pos, neg)
    if anchor_weights is None:
        anchor_weights = dirichlet_weights(1.0, N, derive_seed(spec.seed, "cli-anchor"))
    min_count = 1 if anchor.size >= N else 0
    anchor_counts = largest_remainder(anchor_weights, anchor.size, min_count=min_count)
    rng = rng_for(spec.seed, "cli-sample")
    assignments = []
    for part, a in zip(_split(anchor, anchor_counts), anchor_counts):
        drawn = rng.choice(other, size=cli_sampled_count(a, spec.pnr), replace=True)
        assignments.append(np.concatenate([np.sort(part), np.sort(drawn)]))
    return PartitionPlan(assignments)


def partition_attribute(dataset, spec, client_attributes=None):
    if dataset.attributes is None:
        raise FLSimError("attribute partitioning needs attribute tags on every sample")
    domain = dataset.attribute_domain
    N, k = spec.n_clients, spec.k
    if k > domain:
        raise FLSimError(f"k={k} exceeds the attribute domain of {domain}")
    if client_attributes is None:
        rng = rng_for(spec.seed, "attr-assign")
        client_attributes = [rng.choice(domain, size=k, replace=False) for _ in range(N)]
    qualifying = {a: [] for a in range(domain)}
    for cid, attrs in enumerate(client_attributes):
        for a in attrs:
            qualifying[int(a)].append(cid)

    buckets = [[] for _ in range(N)]
    orphans = {}
    shuffle_rng = rng_for(spec.seed, "attr-shuffle")
    orphan_rng = rng_for(spec.seed, "attr-orphan")
    for a in range(domain):
        members = shuffle_rng.permutation(np.flatnonzero(dataset.attributes == a))
        if members.size == 0:
            continue
        clients = qualifying[a]
        if not clients:
            target = int(orphan_rng.integers(N))
            orphans[a] = target
            log.info("attribute %d has no qualifying client; reassigned to client %d", a, target)
            buckets[target].append(members)
            continue
        w = dirichlet_weights(1.0, len(clients), derive_seed(spec.seed, "attr", a))
        for cid, part in zip(clients, _split(members, largest_remainder(w, members.size))):
            buckets[cid].append(part)
    assignments = [
        np.sort(np.concatenate(b)) if b else np.zeros(0, dtype=np.int64) for b in buckets
    ]
    return PartitionPlan(assignments, orphans)


def partition(dataset, spec):
    """Dispatch on ``spec.scheme``."""
    return {
        "quantity": partition_quantity,
        "label": partition_label,
        "cli": partition_cli,
        "attribute": partition_attribute,
    }[spec.scheme](dataset, spec)
