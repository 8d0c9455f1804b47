"""SGD training with per-epoch learning-rate annealing and shard-parallel parameter averaging."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import os
import time

import numpy as np

from . import kernels
from .data import DyadicDataset, SessionDataset
from .errors import ConfigError, MissingEntityError, WrongLossError
from .model import init_params
from .objectives import DyadObservation, Loss, LossKind, check_record
from .model import Session

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    loss: LossKind = field(default_factory=lambda: LossKind(Loss.SOFTMAX))
    dim: int = 10
    reg_user: float = 1e-4
    reg_item: float = 1e-4
    lr0: float = 0.05
    anneal: float = 0.9
    epochs: int = 10
    shards: int = 1
    seed: int = 0
    hash_bits: int = None
    init_scale: float = 0.01
    # CF baselines only: also train on the non-chosen offers as negatives
    cf_negatives: bool = False

    def __post_init__(self):
        if not isinstance(self.loss, LossKind):
            self.loss = LossKind(Loss(self.loss))
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if not self.lr0 > 0:
            raise ConfigError("learning rate must be > 0")
        if not 0 < self.anneal <= 1:
            raise ConfigError("anneal factor must be in (0, 1]")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.shards < 1:
            raise ConfigError("shards must be >= 1")
        if self.reg_user < 0 or self.reg_item < 0:
            raise ConfigError("regularization weights must be >= 0")

    def lr_at(self, epoch):
        return self.lr0 * self.anneal ** epoch


@dataclass
class TrainReport:
    objectives: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    initial_objective: float = None

    @property
    def final_lr(self):
        return self.lrs[-1] if self.lrs else None


@dataclass
class Packed:
    rec_user: np.ndarray
    ptr: np.ndarray
    rec_items: np.ndarray
    rec_y: np.ndarray

    def __len__(self):
        return len(self.rec_user)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        lens = self.ptr[idx + 1] - self.ptr[idx]
        ptr = np.zeros(len(idx) + 1, dtype=np.int64)
        np.cumsum(lens, out=ptr[1:])
        take = np.concatenate([np.arange(self.ptr[t], self.ptr[t + 1]) for t in idx]) if len(idx) else np.zeros(0, np.int64)
        return Packed(self.rec_user[idx], ptr, self.rec_items[take], self.rec_y[take])


def training_records(data, config):
    """Turn a dataset into the record list the configured loss consumes."""
    tag = config.loss.tag
    if isinstance(data, (SessionDataset, DyadicDataset)):
        dataset = data
    else:
        data = list(data)
        if data and isinstance(data[0], DyadObservation):
            return data
        dataset = SessionDataset(data)
    if tag.is_dyadic:
        pos, neg = (1.0, 0.0) if tag is Loss.CF_L2 else (1.0, -1.0)
        if isinstance(dataset, DyadicDataset):
            return [DyadObservation(u, i, pos) for u, i in dataset.dyads]
        recs = [DyadObservation(u, i, pos) for u, i in dataset.positives().dyads]
        if config.cf_negatives:
            for s in dataset.sessions:
                chosen = set(s.decision_set)
                recs.extend(DyadObservation(s.user, i, neg) for i in s.offer_set if i not in chosen)
        return recs
    if isinstance(dataset, DyadicDataset):
        raise WrongLossError("%s loss needs sessions; simulate offer sets from the dyads first" % tag.value)
    return list(dataset.sessions)


def _universe(data, records):
    if isinstance(data, (SessionDataset, DyadicDataset)):
        return data.users, data.items
    users, items = set(), set()
    for r in records:
        users.add(r.user)
        if isinstance(r, Session):
            items.update(r.offer_set)
        else:
            items.add(r.item)
    return users, items


def pack(records, store, tag):
    n = len(records)
    rec_user = np.empty(n, dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    items, ys = [], []
    urows, irows = store.user_rows, store.item_rows
    try:
        for t, rec in enumerate(records):
            check_record(rec, tag)
            rec_user[t] = urows[rec.user]
            if isinstance(rec, Session):
                chosen = set(rec.decision_set)
                for i in rec.offer_set:
                    items.append(irows[i])
                    ys.append(1.0 if i in chosen else 0.0)
            else:
                items.append(irows[rec.item])
                ys.append(float(rec.label))
            ptr[t + 1] = len(items)
    except KeyError as e:
        raise MissingEntityError("entity %r is not in the parameter store" % (e.args[0],)) from None
    return Packed(rec_user, ptr, np.array(items, dtype=np.int64), np.array(ys, dtype=np.float64))


def _check_store(store, config):
    if config.loss.tag.uses_thresholds and not store.has_thresholds:
        raise ConfigError("%s loss needs a store with action thresholds" % config.loss.tag.value)


def _run(store, packed, order, config, lr, use_numba=None):
    k = config.loss
    kernels.run_epoch(store.table, store.user_slots, store.item_slots,
                      store.threshold_slots if k.tag.uses_thresholds else None,
                      packed.rec_user, packed.ptr, packed.rec_items, packed.rec_y, order,
                      k.tag.code, lr, config.reg_user, config.reg_item, k.C, k.smooth_slope, use_numba)


def objective(store, records_or_packed, config, use_numba=None):
    """Exact data loss over all records plus lambda_U sum ||phi_u||^2 + lambda_I sum ||phi_i||^2."""
    k = config.loss
    packed = records_or_packed
    if not isinstance(packed, Packed):
        packed = pack(list(packed), store, k.tag)
    losses = kernels.record_losses(store.table, store.user_slots, store.item_slots,
                                   store.threshold_slots if k.tag.uses_thresholds else None,
                                   packed.rec_user, packed.ptr, packed.rec_items, packed.rec_y,
                                   k.tag.code, k.C, k.smooth_slope, use_numba)
    reg = config.reg_user * float(np.sum(store.user_matrix() ** 2))
    reg += config.reg_item * float(np.sum(store.item_matrix() ** 2))
    return float(np.sum(losses)) + reg


def sgd_step(record, store, config, lr, use_numba=None):
    """Single SGD update from one session or dyad; gradients use pre-step values."""
    if not lr > 0:
        raise ConfigError("learning rate must be > 0")
    _check_store(store, config)
    packed = pack([record], store, config.loss.tag)
    _run(store, packed, np.zeros(1, dtype=np.int64), config, lr, use_numba)


def train_epoch(records, store, config, lr, rng, use_numba=None):
    """Visit every record once in an order drawn from ``rng``."""
    if not isinstance(records, Packed):
        records = list(records)
        if not records:
            raise ConfigError("cannot train on an empty record list")
        _check_store(store, config)
        records = pack(records, store, config.loss.tag)
    order = rng.permutation(len(records))
    _run(store, records, order, config, lr, use_numba)


def _setup(data, config, store):
    records = training_records(data, config)
    if not records:
        raise ConfigError("no training records")
    if store is None:
        users, items = _universe(data, records)
        store = init_params(users, items, config.dim, config.init_scale, config.seed,
                            thresholds=config.loss.tag.uses_thresholds, hash_bits=config.hash_bits)
    _check_store(store, config)
    packed = pack(records, store, config.loss.tag)
    rng = np.random.default_rng([config.seed, 1])
    return store, packed, rng


def train(data, config, store=None, use_numba=None):
    """Sequential SGD for ``config.epochs`` epochs; epoch e uses lr0 * anneal**e."""
    store, packed, rng = _setup(data, config, store)
    report = TrainReport(initial_objective=objective(store, packed, config, use_numba))
    for e in range(config.epochs):
        lr = config.lr_at(e)
        t0 = time.perf_counter()
        train_epoch(packed, store, config, lr, rng, use_numba)
        report.epoch_seconds.append(time.perf_counter() - t0)
        report.lrs.append(lr)
        report.objectives.append(objective(store, packed, config, use_numba))
        log.info("epoch %d lr %.6g objective %.6f", e, lr, report.objectives[-1])
    return store, report


def shard_blocks(n, shards):
    """Round-robin assignment: record j goes to shard j % shards."""
    if shards > n:
        raise ConfigError("cannot split %d records into %d shards" % (n, shards))
    return [np.arange(s, n, shards, dtype=np.int64) for s in range(shards)]


def average_tables(tables):
    if len(tables) == 1:
        return tables[0].copy()
    out = np.zeros_like(tables[0])
    for t in tables:
        out += t
    return out / len(tables)


def sharded_train(data, config, store=None, use_numba=None, max_workers=None):
    """Each epoch every shard runs SGD over its block on a private copy of the
    parameters; the copies are then averaged element-wise into the master store."""
    store, packed, rng = _setup(data, config, store)
    blocks = [packed.subset(b) for b in shard_blocks(len(packed), config.shards)]
    workers = max_workers or min(config.shards, os.cpu_count() or 1)
    report = TrainReport(initial_objective=objective(store, packed, config, use_numba))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for e in range(config.epochs):
            lr = config.lr_at(e)
            t0 = time.perf_counter()
            # orders are drawn up front so results do not depend on scheduling
            orders = [rng.permutation(len(b)) for b in blocks]
            copies = [store.copy() for _ in blocks]
            futures = [pool.submit(_run, c, b, o, config, lr, use_numba)
                       for c, b, o in zip(copies, blocks, orders)]
            for f in futures:
                f.result()
            store.table[:] = average_tables([c.table for c in copies])
            report.epoch_seconds.append(time.perf_counter() - t0)
            report.lrs.append(lr)
            report.objectives.append(objective(store, packed, config, use_numba))
            log.info("epoch %d lr %.6g objective %.6f (%d shards)", e, lr, report.objectives[-1], config.shards)
    return store, report


def fit(data, config, use_numba=None):
    """``train`` for one shard, ``sharded_train`` otherwise."""
    if config.shards == 1:
        return train(data, config, use_numba=use_numba)
    return sharded_train(data, config, use_numba=use_numba)
