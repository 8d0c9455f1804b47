"""Time one SGD epoch with the numba kernel against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--loss softmax] [--repeats 3]

The same packed records, visiting order and starting table go to both backends,
and the resulting tables are compared before any timings are printed.
"""
import argparse
import time

import numpy as np

from ccf import kernels
from ccf._jit import HAVE_NUMBA
from ccf.data import SynthConfig, synth_generate
from ccf.model import init_params
from ccf.objectives import Loss, LossKind
from ccf.trainer import TrainConfig, pack, training_records


def epoch_seconds(store, packed, order, config, use_numba, repeats):
    k = config.loss
    best, table = float("inf"), None
    for _ in range(repeats):
        table = store.table.copy()
        t0 = time.perf_counter()
        kernels.run_epoch(table, store.user_slots, store.item_slots,
                          store.threshold_slots if k.tag.uses_thresholds else None,
                          packed.rec_user, packed.ptr, packed.rec_items, packed.rec_y, order,
                          k.tag.code, config.lr0, config.reg_user, config.reg_item, k.C, k.smooth_slope,
                          use_numba=use_numba)
        best = min(best, time.perf_counter() - t0)
    return best, table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--loss", choices=[x.value for x in Loss], default="softmax")
    ap.add_argument("--users", type=int, default=500)
    ap.add_argument("--items", type=int, default=100)
    ap.add_argument("--sessions-per-user", type=int, default=20)
    ap.add_argument("--offer-size", type=int, default=10)
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    tag = Loss(args.loss)
    _, ds = synth_generate(SynthConfig(dim=5, n_users=args.users, n_items=args.items,
                                       sessions_per_user=args.sessions_per_user, offer_size=args.offer_size,
                                       thresholds=tag.uses_thresholds))
    config = TrainConfig(loss=LossKind(tag), dim=args.dim)
    records = training_records(ds, config)
    store = init_params(ds.users, ds.items, args.dim, seed=0, thresholds=tag.uses_thresholds)
    packed = pack(records, store, tag)
    order = np.random.default_rng(0).permutation(len(packed))

    print("loss=%s records=%d dim=%d" % (tag.value, len(packed), args.dim))
    t_np, table_np = epoch_seconds(store, packed, order, config, False, args.repeats)
    print("numpy  epoch %.4fs" % t_np)
    if not HAVE_NUMBA:
        print("numba not installed; skipping the compiled kernel")
        return
    epoch_seconds(store, packed, order, config, True, 1)  # compile / load cache
    t_nb, table_nb = epoch_seconds(store, packed, order, config, True, args.repeats)
    print("numba  epoch %.4fs" % t_nb)
    print("speedup %.1fx, max table difference %.2e" % (t_np / t_nb, np.max(np.abs(table_np - table_nb))))


if __name__ == "__main__":
    main()
