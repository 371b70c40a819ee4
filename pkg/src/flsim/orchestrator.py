"""The federated training loop and its run-level analyses."""
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import models
from .aggregation import aggregate, apply_update
from .attacks import craft_malicious, flip_labels, select_compromised
from .config import FLConfig, to_dict
from .data import SynthSpec, holdout_split, load_csv, synth_generate, train_test_split
from .errors import ConfigError, EmptyDatasetError, FLSimError
from .models import ClientUpdate, Metrics, ModelSpec
from .partition import PartitionSpec, partition
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

IMPROVEMENT_EPS = 1e-4
METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    selected: tuple
    metrics: Optional[Metrics]
    attack_active: bool
    n_malicious: int
    wall_time_ms: float

    def to_row(self, include_timing=True):
        m = self.metrics
        vals = [self.round]
        vals += [getattr(m, k) for k in METRIC_NAMES] if m is not None else [""] * 4
        vals += [len(self.selected), self.n_malicious]
        vals.append(round(self.wall_time_ms, 3) if include_timing else "")
        return vals


@dataclass
class ExperimentResult:
    records: list
    converged_at: Optional[int]
    final: Optional[Metrics]
    last_mean: dict
    last_std: dict
    instability: tuple
    window_short: bool
    wall_time_ms: float
    compromised: tuple = ()
    config: dict = field(default_factory=dict)

    @property
    def evaluated(self):
        return [r for r in self.records if r.metrics is not None]

    @property
    def accuracy_history(self):
        return [r.metrics.accuracy for r in self.evaluated]

    def summary(self, include_timing=False):
        """JSON-ready summary; timing is opt-in because it is not reproducible."""
        out = {
            "n_rounds": self.records[-1].round if self.records else 0,
            "converged_at": self.converged_at,
            "final": None if self.final is None else {k: getattr(self.final, k) for k in METRIC_NAMES},
            "last10_mean": self.last_mean,
            "last10_std": self.last_std,
            "instability": dict(zip(("ACC_STD", "PRE_STD", "REC_STD"), self.instability)),
            "last10_window_short": self.window_short,
            "compromised": list(self.compromised),
        }
        if include_timing:
            out["wall_time_ms"] = self.wall_time_ms
        return out


def detect_convergence(history, patience, eps=IMPROVEMENT_EPS):
    """Index of the first evaluation whose running best is not beaten by more
    than ``eps`` in the next ``patience`` evaluations, else None."""
    if patience < 1:
        raise FLSimError("patience must be >= 1")
    best = -np.inf
    for r in range(len(history) - patience):
        best = max(best, history[r])
        window = history[r + 1 : r + 1 + patience]
        if all(v <= best + eps for v in window):
            return r
    return None


def _population_std(values):
    return float(np.std(np.asarray(values, dtype=np.float64)))


def instability_metrics(records, window=10):
    """(ACC_STD, PRE_STD, REC_STD): population std over the last ``window`` evaluations."""
    evaluated = [r.metrics if isinstance(r, RoundRecord) else r for r in records]
    evaluated = [m for m in evaluated if m is not None]
    if len(evaluated) < 2:
        raise FLSimError("instability needs at least two evaluated rounds")
    tail = evaluated[-window:]
    return tuple(_population_std([getattr(m, k) for m in tail]) for k in ("accuracy", "precision", "recall"))


def attack_impact(baseline, attacked):
    """Baseline minus attacked last-10 mean accuracy; negative values are kept."""
    return baseline.last_mean["accuracy"] - attacked.last_mean["accuracy"]


def bootstrap_pretrain(model_spec, server_data, epochs, lr, seed, batch_size=32):
    """Centrally pre-train the initial global model on server-held data."""
    if len(server_data) == 0:
        raise EmptyDatasetError("bootstrap needs a non-empty server dataset")
    return models.train_centralized(model_spec, server_data, epochs, batch_size, lr, seed)


def server_dataset(cfg, input_dim, class_separation, noise_std, seed):
    """Shifted synthetic pre-training set standing in for a public corpus."""
    spec = SynthSpec(
        cfg.n_pos, cfg.n_neg, input_dim, class_separation, noise_std, center_shift=cfg.center_shift
    )
    return synth_generate(spec, derive_seed(seed, "bootstrap-data"))


class Simulation:
    """Mutable state of one FL run: global params, shards, compromised set."""

    def __init__(self, config, train, test, model_spec=None, init_params=None, server_data=None):
        if not isinstance(config, FLConfig):
            raise FLSimError("config must be an FLConfig")
        if len(test) == 0:
            raise EmptyDatasetError("the server test split is empty")
        self.config = config
        self.train = train
        self.test = test
        self.spec = model_spec or ModelSpec("logistic", train.input_dim)
        seed = config.seed
        pc = config.partition
        self.partition_spec = PartitionSpec(
            pc.scheme, config.n_clients, pc.alpha, pc.pnr, pc.k, derive_seed(seed, "partition")
        )
        self.plan = partition(train, self.partition_spec)

        attack = config.attack
        self.compromised = (
            select_compromised(config.n_clients, attack.M, derive_seed(seed, "attack"))
            if attack.active
            else frozenset()
        )
        self.shards = []
        for cid, idx in enumerate(self.plan.assignments):
            shard = train.subset(idx)
            if attack.mode == "data_poison" and cid in self.compromised and len(shard):
                shard = flip_labels(shard, attack.p, derive_seed(seed, "flip", cid))
            self.shards.append(shard)

        if init_params is not None:
            params = models.as_params(init_params, self.spec.n_params)
        elif config.bootstrap is not None:
            if server_data is None:
                raise FLSimError("bootstrap is configured but no server dataset was given")
            b = config.bootstrap
            params = bootstrap_pretrain(self.spec, server_data, b.epochs, b.lr, seed, b.batch_size)
        else:
            params = models.init_params(self.spec, seed)
        self.global_params = params
        self.records = []

    def select_clients(self, round_index):
        cfg = self.config
        if cfg.clients_per_round >= cfg.n_clients:
            return tuple(range(cfg.n_clients))
        rng = rng_for(cfg.seed, "select", round_index)
        return tuple(sorted(int(c) for c in rng.choice(cfg.n_clients, cfg.clients_per_round, replace=False)))

    def _local_update(self, cid, round_index):
        cfg = self.config
        return models.local_train(
            self.global_params,
            self.spec,
            self.shards[cid],
            cfg.local_epochs,
            cfg.batch_size,
            cfg.client_lr,
            derive_seed(cfg.seed, "train", round_index, cid),
            client_id=cid,
        )

    def evaluate(self):
        return models.evaluate(self.global_params, self.spec, self.test)

    def initial_record(self):
        start = time.perf_counter()
        metrics = self.evaluate()
        rec = RoundRecord(0, (), metrics, False, 0, (time.perf_counter() - start) * 1000.0)
        self.records.append(rec)
        return rec

    def run_round(self, round_index, evaluate=True):
        start = time.perf_counter()
        cfg = self.config
        attack = cfg.attack
        selected = self.select_clients(round_index)
        updates = []
        hostile = []
        try:
            for cid in selected:
                if len(self.shards[cid]) == 0:
                    continue
                update = self._local_update(cid, round_index)
                if attack.mode == "model_poison" and cid in self.compromised:
                    hostile.append(update)
                else:
                    updates.append(update)
            n_malicious = len(hostile)
            if hostile:
                malicious = craft_malicious(
                    attack,
                    [u.delta for u in hostile],
                    len(selected),
                    derive_seed(cfg.seed, "craft", round_index),
                )
                count = max(1, int(round(np.mean([u.sample_count for u in hostile]))))
                updates += [ClientUpdate(u.client_id, malicious.copy(), count) for u in hostile]
            elif attack.mode == "data_poison":
                n_malicious = sum(1 for c in selected if c in self.compromised and len(self.shards[c]))
            if updates:
                agg = aggregate(cfg.agr, updates)
                self.global_params = apply_update(self.global_params, agg, cfg.server_lr)
        except FLSimError as exc:
            raise FLSimError(f"round {round_index}: {exc}") from exc
        metrics = self.evaluate() if evaluate else None
        if not np.all(np.isfinite(self.global_params)):
            raise FLSimError(f"round {round_index}: global model diverged to non-finite values")
        rec = RoundRecord(
            round_index,
            selected,
            metrics,
            attack.active,
            n_malicious,
            (time.perf_counter() - start) * 1000.0,
        )
        self.records.append(rec)
        return rec


def run_round(state, round_index):
    return state.run_round(round_index)


def summarize(records, patience, window=10, wall_time_ms=0.0, compromised=(), config=None):
    evaluated = [r for r in records if r.metrics is not None]
    history = [r.metrics.accuracy for r in evaluated]
    idx = detect_convergence(history, patience)
    converged_at = None if idx is None else evaluated[idx].round
    tail = evaluated[-window:]
    last_mean = {k: float(np.mean([getattr(r.metrics, k) for r in tail])) for k in METRIC_NAMES}
    last_std = {k: _population_std([getattr(r.metrics, k) for r in tail]) for k in METRIC_NAMES}
    instability = instability_metrics(evaluated, window) if len(evaluated) >= 2 else (0.0, 0.0, 0.0)
    return ExperimentResult(
        records=list(records),
        converged_at=converged_at,
        final=evaluated[-1].metrics if evaluated else None,
        last_mean=last_mean,
        last_std=last_std,
        instability=instability,
        window_short=len(tail) < window,
        wall_time_ms=wall_time_ms,
        compromised=tuple(sorted(compromised)),
        config=config or {},
    )


def run_experiment(config, train, test, model_spec=None, server_data=None, init_params=None, on_record=None):
    """Run rounds until ``max_rounds`` or convergence; deterministic given inputs."""
    sim = Simulation(config, train, test, model_spec, init_params=init_params, server_data=server_data)
    start = time.perf_counter()
    emit = on_record or (lambda rec: None)
    emit(sim.initial_record())
    history = [sim.records[0].metrics.accuracy]
    for r in range(1, config.max_rounds + 1):
        do_eval = r % config.eval_every == 0 or r == config.max_rounds
        rec = sim.run_round(r, evaluate=do_eval)
        emit(rec)
        if rec.metrics is not None:
            history.append(rec.metrics.accuracy)
            if config.stop_at_convergence and detect_convergence(history, config.patience) is not None:
                break
    wall = (time.perf_counter() - start) * 1000.0
    return summarize(sim.records, config.patience, 10, wall, sim.compromised, to_dict(config))


# ---------------------------------------------------------------------------
# experiment files


def _load_csv_source(dc, path):
    return load_csv(
        path,
        label_column=dc.label_column,
        text_column=dc.text_column,
        feature_columns=dc.feature_columns,
        attribute_column=dc.attribute_column,
        hash_dim=dc.hash_dim,
        attribute_domain=dc.attribute_domain,
    )


def build_datasets(dc):
    """(train, test) for a DataConfig; the test split is never partitioned."""
    if dc.source == "synthetic":
        spec = SynthSpec(
            dc.n_pos + dc.n_test_pos,
            dc.n_neg + dc.n_test_neg,
            dc.input_dim,
            dc.class_separation,
            dc.noise_std,
            dc.attribute_domain,
            center_shift=dc.center_shift,
        )
        full = synth_generate(spec, dc.data_seed)
        return holdout_split(full, dc.n_test_pos, dc.n_test_neg, dc.data_seed)
    return train_test_split(_load_csv_source(dc, dc.path), dc.test_fraction, dc.data_seed)


def build_server_data(exp, input_dim):
    b = exp.fl.bootstrap
    if b is None:
        return None
    if b.path is not None:
        return _load_csv_source(exp.data, b.path)
    dc = exp.data
    if dc.source != "synthetic":
        raise ConfigError("a csv data source needs a server dataset path", "fl.bootstrap.path")
    return server_dataset(b, input_dim, dc.class_separation, dc.noise_std, exp.fl.seed)


def model_spec_for(exp, input_dim):
    m = exp.model
    return ModelSpec(m.kind, input_dim, m.hidden_dim if m.kind == "mlp1" else 0)


def run_file(exp, on_record=None):
    """Build data, model and server set for an ExperimentFile and run it."""
    train, test = build_datasets(exp.data)
    spec = model_spec_for(exp, train.input_dim)
    server = build_server_data(exp, train.input_dim)
    return run_experiment(exp.fl, train, test, spec, server_data=server, on_record=on_record)
