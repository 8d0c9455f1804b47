import numpy as np
import pytest

from ccf.data import DyadicDataset, SessionDataset, SynthConfig, synth_generate
from ccf.errors import ConfigError, MissingEntityError, WrongLossError
from ccf.model import ParameterStore, Session, init_params
from ccf.objectives import DyadObservation, Loss, LossKind
from ccf.trainer import (TrainConfig, average_tables, objective, pack, sgd_step, shard_blocks, sharded_train,
                         train, train_epoch, training_records)

import oracles


def fixture50(thresholds=False, seed=11):
    """50 sessions: 10 users x 5 sessions, 20 items, |O| = 5."""
    _, ds = synth_generate(SynthConfig(dim=3, n_users=10, n_items=20, sessions_per_user=5, offer_size=5,
                                       seed=seed, thresholds=thresholds, utility_std=2.0))
    assert len(ds) == 50
    return ds


def cfg(loss="softmax", **kw):
    kw.setdefault("dim", 3)
    C = kw.pop("C", 1.0)
    return TrainConfig(loss=LossKind(Loss(loss), C=C), **kw)


class TestConfig:
    @pytest.mark.parametrize("bad", [dict(epochs=0), dict(lr0=0.0), dict(anneal=0.0), dict(anneal=1.5),
                                     dict(shards=0), dict(reg_user=-1.0), dict(dim=0)])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)

    def test_lr_schedule(self):
        c = TrainConfig(lr0=0.1, anneal=0.9, epochs=3)
        assert [c.lr_at(e) for e in range(3)] == pytest.approx([0.1, 0.09, 0.081], rel=1e-15, abs=0)


class TestSgdStep:
    def test_inactive_hinge_no_decay_is_noop(self, backend):
        s = ParameterStore.from_factors({0: [2.0, 0.0]}, {0: [2.0, 0.0], 1: [0.0, 1.0], 2: [0.0, -1.0]})
        before = s.table.copy()
        sgd_step(Session(0, [0, 1, 2], [0]), s, cfg("hinge", dim=2, reg_user=0.0, reg_item=0.0), 0.5)
        np.testing.assert_allclose(s.table, before, atol=1e-10, rtol=0)

    def test_pure_weight_decay(self, backend):
        s = ParameterStore.from_factors({0: [2.0, 0.0]}, {0: [2.0, 0.0], 1: [0.0, 1.0], 2: [0.0, -1.0],
                                                         3: [5.0, 5.0]})
        before = {k: v.copy() for k, v in s.item_factors.items()}
        u_before = s.user_vector(0).copy()
        sgd_step(Session(0, [0, 1, 2], [0]), s, cfg("hinge", dim=2, reg_user=1.0, reg_item=1.0), 0.1)
        for i in (0, 1, 2):
            np.testing.assert_allclose(s.item_vector(i), 0.9 * before[i], atol=1e-12)
        np.testing.assert_allclose(s.user_vector(0), 0.9 * u_before, atol=1e-12)
        # untouched item
        assert np.array_equal(s.item_vector(3), before[3])

    def test_softmax_step_matches_update_equations(self, backend):
        rng = np.random.default_rng(5)
        s = oracles.random_store(rng, 2, 6, 4)
        sess = Session(1, [4, 0, 2], [0])
        new_u, new_items = oracles.sgd_update_oracle(sess, s, lr=0.3, reg_u=0.01, reg_i=0.02)
        untouched = {i: s.item_vector(i).copy() for i in (1, 3, 5)}
        other_user = s.user_vector(0).copy()
        sgd_step(sess, s, cfg("softmax", dim=4, reg_user=0.01, reg_item=0.02), 0.3)
        np.testing.assert_allclose(s.user_vector(1), new_u, atol=1e-12, rtol=0)
        for i, v in new_items.items():
            np.testing.assert_allclose(s.item_vector(i), v, atol=1e-12, rtol=0)
        for i, v in untouched.items():
            assert np.array_equal(s.item_vector(i), v)
        assert np.array_equal(s.user_vector(0), other_user)

    def test_threshold_moves_only_for_ext_losses(self, backend):
        rng = np.random.default_rng(1)
        s = oracles.random_store(rng, 1, 4, 3, thresholds=True)
        th = s.threshold(0)
        sgd_step(Session(0, [0, 1, 2], []), s, cfg("softmax-ext"), 0.1)
        assert s.threshold(0) != th

    def test_cf_dyad_step(self, backend):
        s = ParameterStore.from_factors({0: [0.5]}, {0: [0.5]})
        sgd_step(DyadObservation(0, 0, 1.0), s, cfg("l2", dim=1, reg_user=0.0, reg_item=0.0), 0.1)
        # dl/dr = 2 (r - y) = -1.5 -> each factor += 0.1 * 1.5 * 0.5
        assert s.user_vector(0)[0] == pytest.approx(0.575)
        assert s.item_vector(0)[0] == pytest.approx(0.575)

    def test_incompatible_record(self):
        s = ParameterStore.from_factors({0: [0.5]}, {0: [0.5], 1: [0.1]})
        with pytest.raises(WrongLossError):
            sgd_step(Session(0, [0, 1], []), s, cfg("softmax", dim=1), 0.1)
        with pytest.raises(WrongLossError):
            sgd_step(DyadObservation(0, 0, 1.0), s, cfg("softmax", dim=1), 0.1)

    def test_missing_thresholds(self):
        s = ParameterStore.from_factors({0: [0.5]}, {0: [0.5], 1: [0.1]})
        with pytest.raises(ConfigError):
            sgd_step(Session(0, [0, 1], [0]), s, cfg("hinge-ext", dim=1), 0.1)


class TestTrainEpoch:
    def test_satisfied_margins_leave_store_unchanged(self, backend):
        s = ParameterStore.from_factors({0: [3.0], 1: [-3.0]}, {0: [1.0], 1: [-1.0], 2: [0.0]})
        data = [Session(0, [0, 1, 2], [0]), Session(1, [0, 1], [1]), Session(1, [1, 2], [1])]
        before = s.table.copy()
        train_epoch(data, s, cfg("hinge", dim=1, reg_user=0.0, reg_item=0.0), 0.1, np.random.default_rng(0))
        np.testing.assert_allclose(s.table, before, atol=1e-10, rtol=0)

    def test_deterministic(self, backend):
        ds = fixture50()
        c = cfg()
        a = init_params(ds.users, ds.items, 3, scale=0.1, seed=2)
        b = init_params(ds.users, ds.items, 3, scale=0.1, seed=2)
        train_epoch(ds.sessions, a, c, 0.05, np.random.default_rng(9))
        train_epoch(ds.sessions, b, c, 0.05, np.random.default_rng(9))
        assert a.table.tobytes() == b.table.tobytes()

    @pytest.mark.parametrize("loss", list(Loss))
    def test_first_epoch_decreases_objective(self, backend, loss):
        ds = fixture50(thresholds=loss.uses_thresholds)
        c = cfg(loss.value, C=1.0)
        recs = training_records(ds, c)
        s = init_params(ds.users, ds.items, 3, scale=0.01, seed=0, thresholds=loss.uses_thresholds)
        before = objective(s, recs, c)
        train_epoch(recs, s, c, 0.01, np.random.default_rng(0))
        assert objective(s, recs, c) < before

    def test_softmax_objective_matches_oracle_sum(self):
        ds = fixture50()
        c = cfg(reg_user=0.1, reg_item=0.2)
        s = init_params(ds.users, ds.items, 3, scale=0.5, seed=4)
        expect = sum(oracles.softmax_nll(x, s) for x in ds.sessions)
        expect += 0.1 * sum(float(v @ v) for v in s.user_factors.values())
        expect += 0.2 * sum(float(v @ v) for v in s.item_factors.values())
        assert objective(s, ds.sessions, c) == pytest.approx(expect, rel=1e-12)

    def test_empty_rejected(self):
        s = init_params([0], [0], 1)
        with pytest.raises(ConfigError):
            train_epoch([], s, cfg(dim=1), 0.1, np.random.default_rng(0))


class TestTrain:
    def test_reported_lr_sequence(self):
        _, rep = train(fixture50(), cfg(lr0=0.1, anneal=0.9, epochs=3))
        assert rep.lrs == [0.1 * 0.9 ** e for e in range(3)]
        assert rep.final_lr == rep.lrs[-1]
        assert len(rep.objectives) == len(rep.epoch_seconds) == 3

    def test_objective_mostly_monotone(self, backend):
        _, rep = train(fixture50(), cfg(lr0=0.05, epochs=20))
        trace = [rep.initial_objective] + rep.objectives
        steps = sum(b <= a for a, b in zip(trace, trace[1:]))
        assert steps >= 18
        assert trace[-1] < trace[0]

    def test_deterministic(self):
        a, _ = train(fixture50(), cfg(epochs=3, seed=5))
        b, _ = train(fixture50(), cfg(epochs=3, seed=5))
        assert a.table.tobytes() == b.table.tobytes()

    def test_unseen_entities_only_decay(self):
        ds = fixture50()
        extra = SessionDataset(ds.sessions, list(ds.users) + ["ghost"], list(ds.items) + ["spare"])
        s, _ = train(extra, cfg(epochs=2, reg_user=0.0, reg_item=0.0, init_scale=0.1))
        fresh = init_params(extra.users, extra.items, 3, 0.1, 0)
        assert np.array_equal(s.user_vector("ghost"), fresh.user_vector("ghost"))
        assert np.array_equal(s.item_vector("spare"), fresh.item_vector("spare"))

    def test_dyadic_data_needs_cf_loss(self):
        dy = DyadicDataset([(0, 1), (1, 2)])
        with pytest.raises(WrongLossError):
            train(dy, cfg())
        store, rep = train(dy, cfg("logistic", epochs=2))
        assert len(rep.objectives) == 2

    def test_cf_records_from_sessions(self):
        ds = SessionDataset([Session(0, [1, 2, 3], [2]), Session(0, [2, 4], [2]), Session(1, [1, 4], [])])
        pos = training_records(ds, cfg("logistic"))
        assert [(r.user, r.item, r.label) for r in pos] == [(0, 2, 1.0)]
        both = training_records(ds, cfg("logistic", cf_negatives=True))
        assert sum(r.label == -1.0 for r in both) == 5
        l2 = training_records(ds, cfg("l2", cf_negatives=True))
        assert {r.label for r in l2} == {0.0, 1.0}

    def test_hashed_training(self, backend):
        ds = fixture50()
        s, rep = train(ds, cfg(epochs=5, hash_bits=10, lr0=0.1))
        assert len(s.table) == 1024
        assert rep.objectives[-1] < rep.initial_objective

    def test_ext_losses_train(self):
        ds = fixture50(thresholds=True)
        assert any(not x.decision_set for x in ds.sessions)
        for loss in ("softmax-ext", "hinge-ext"):
            s, rep = train(ds, cfg(loss, epochs=5, lr0=0.1))
            assert s.has_thresholds
            assert rep.objectives[-1] < rep.initial_objective

    def test_store_must_cover_records(self):
        s = init_params([0], [0, 1], 3)
        with pytest.raises(MissingEntityError):
            pack([Session(0, [0, 7], [0])], s, Loss.SOFTMAX)


class TestSharded:
    def test_single_shard_bit_identical(self, backend):
        ds = fixture50()
        c = cfg(epochs=4, seed=3)
        a, ra = train(ds, c)
        b, rb = sharded_train(ds, c)
        assert a.table.tobytes() == b.table.tobytes()
        assert ra.objectives == rb.objectives

    def test_average_of_identical_copies(self):
        t = np.random.default_rng(0).normal(size=37)
        assert np.array_equal(average_tables([t.copy(), t.copy(), t.copy(), t.copy()]), t)

    def test_blocks_partition(self):
        blocks = shard_blocks(10, 3)
        assert sorted(np.concatenate(blocks).tolist()) == list(range(10))
        assert [b.tolist() for b in blocks] == [[0, 3, 6, 9], [1, 4, 7], [2, 5, 8]]

    def test_too_many_shards(self):
        with pytest.raises(ConfigError):
            sharded_train(fixture50(), cfg(shards=51))

    def test_four_shards_deterministic_and_complete(self):
        ds = fixture50()
        c = cfg(epochs=3, shards=4, lr0=0.2)
        a, ra = sharded_train(ds, c)
        b, _ = sharded_train(ds, c, max_workers=1)
        assert a.table.tobytes() == b.table.tobytes()
        assert set(a.users) == set(ds.users) and set(a.items) == set(ds.items)
        assert a.user_matrix().shape == (10, 3)
        assert ra.objectives[-1] < ra.initial_objective
