"""``ccf`` command line: simulate, generate, split, train, evaluate, predict.

Exit codes: 0 success, 1 runtime/data error, 2 usage error.
Settings resolve as command-line flag > ``--config`` file (``key=value`` lines) > default.
"""
import argparse
import logging
import os
import sys

from . import data as D
from .errors import CCFError, WrongLossError
from .evaluation import EvalReport, evaluate_offline, online_accuracy, rank_top_n, sample_dyads, score_histogram
from .model import load_checkpoint, parse_id, save_checkpoint
from .objectives import Loss, LossKind
from .trainer import TrainConfig, fit

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("ccf")


class UsageError(Exception):
    pass


def read_config_file(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError("%s:%d: expected key=value" % (path, lineno))
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _ratios(text):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("ratios must be comma-separated numbers") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("need exactly three ratios")
    return vals


def _add_common(p):
    p.add_argument("--config", help="key=value file with defaults for this subcommand")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="ccf", description="Collaborative competitive filtering toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    cmds = {}

    p = cmds["simulate"] = sub.add_parser("simulate", help="build pseudo offer sets from action dyads")
    p.add_argument("input", help="dyadic file (user<TAB>item)")
    p.add_argument("--neg-samples", "-m", type=int, default=9, help="pseudo non-choices per positive")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = cmds["generate"] = sub.add_parser("generate", help="sample sessions from a synthetic logit world")
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--sessions-per-user", type=int, default=20)
    p.add_argument("--offer-size", type=int, default=10)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--utility-std", type=float, default=1.0)
    p.add_argument("--thresholds", action="store_true", help="include no-response outcomes")
    p.add_argument("--threshold-loc", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", help="write the true factors as a checkpoint")
    _add_common(p)

    p = cmds["split"] = sub.add_parser("split", help="random train/valid/test split")
    p.add_argument("input")
    p.add_argument("--ratios", type=_ratios, default=(0.6, 0.2, 0.2))
    p.add_argument("--out-prefix", required=True, help="writes PREFIX.train, PREFIX.valid, PREFIX.test")
    _add_common(p)

    p = cmds["train"] = sub.add_parser("train", help="fit a model and write a checkpoint")
    p.add_argument("input", help="session file (any loss) or dyadic file (l2/logistic only)")
    p.add_argument("--loss", choices=[x.value for x in Loss], default="softmax")
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--reg-user", type=float, default=1e-4)
    p.add_argument("--reg-item", type=float, default=1e-4)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--anneal", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--hash-bits", type=int, default=None)
    p.add_argument("--tradeoff-c", type=float, default=1.0, help="C for hinge-ext")
    p.add_argument("--smooth-slope", type=float, default=100.0)
    p.add_argument("--init-scale", type=float, default=0.01)
    p.add_argument("--cf-negatives", action="store_true",
                   help="l2/logistic on sessions: also use non-chosen offers as negatives")
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_common(p)

    p = cmds["evaluate"] = sub.add_parser("evaluate", help="offline top-n or online click prediction")
    p.add_argument("checkpoint")
    p.add_argument("test", help="held-out sessions or dyads")
    p.add_argument("-n", type=int, default=None, help="cutoff (default 4 for |O|=4 sessions, else 5)")
    p.add_argument("--online", action="store_true", help="predict the chosen offer per session")
    p.add_argument("--train", dest="train_data", help="training data whose positives are excluded")
    p.add_argument("--exclude-train", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--histogram-buckets", type=int, default=None)
    p.add_argument("--histogram-samples", type=int, default=10000)
    p.add_argument("--transform", choices=["sigmoid", "raw"], default="sigmoid")
    p.add_argument("--histogram-out", help="CSV path for the score histogram")
    p.add_argument("--out", help="write metric<TAB>value records here")
    p.add_argument("--dim", type=int, default=None, help="expected checkpoint dimensionality")
    _add_common(p)

    p = cmds["predict"] = sub.add_parser("predict", help="top-n items for a user")
    p.add_argument("checkpoint")
    p.add_argument("--user", required=True)
    p.add_argument("--candidates", help="comma-separated item ids (default: every item)")
    p.add_argument("-n", type=int, default=10)
    _add_common(p)
    return parser, cmds


def _apply_config(sub_parser, path):
    cfg = read_config_file(path)
    actions = {a.dest: a for a in sub_parser._actions}
    defaults = {}
    for key, val in cfg.items():
        act = actions.get(key)
        if act is None or key in ("config", "help"):
            raise UsageError("unknown config key %r" % key)
        if isinstance(act, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
            low = val.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise UsageError("config key %s expects a boolean" % key)
            defaults[key] = low in ("1", "true", "yes", "on")
        else:
            if act.choices is not None and val not in act.choices:
                raise UsageError("config key %s must be one of %s" % (key, ", ".join(act.choices)))
            defaults[key] = val  # argparse runs type conversion on string defaults
    sub_parser.set_defaults(**defaults)


def parse_args(argv):
    parser, cmds = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        if not os.path.isfile(args.config):
            raise UsageError("config file not found: %s" % args.config)
        _apply_config(cmds[args.command], args.config)
        args = parser.parse_args(argv)
    return args


def _need_file(path):
    if not os.path.isfile(path):
        raise UsageError("input not found: %s" % path)


def cmd_simulate(args):
    _need_file(args.input)
    dyads = D.parse_dyadic(args.input)
    sessions = D.simulate_contexts(dyads, args.neg_samples, args.seed)
    D.write_sessions(sessions, args.out)
    print("sessions=%d users=%d items=%d" % (len(sessions), len(sessions.users), len(sessions.items)))


def cmd_generate(args):
    cfg = D.SynthConfig(dim=args.dim, n_users=args.users, n_items=args.items,
                        sessions_per_user=args.sessions_per_user, offer_size=args.offer_size, seed=args.seed,
                        thresholds=args.thresholds, threshold_loc=args.threshold_loc, utility_std=args.utility_std)
    truth, ds = D.synth_generate(cfg)
    D.write_sessions(ds, args.out)
    if args.truth_out:
        save_checkpoint(truth.to_store(), args.truth_out)
    print("sessions=%d users=%d items=%d" % (len(ds), len(ds.users), len(ds.items)))


def cmd_split(args):
    _need_file(args.input)
    ds = D.load_any(args.input)
    parts = D.split(ds, args.ratios, args.seed)
    write = D.write_sessions if isinstance(ds, D.SessionDataset) else D.write_dyadic
    for name, part in zip(("train", "valid", "test"), parts):
        write(part, "%s.%s" % (args.out_prefix, name))
        print("%s=%d" % (name, len(part)))


def train_config_from_args(args):
    return TrainConfig(
        loss=LossKind(Loss(args.loss), C=args.tradeoff_c, smooth_slope=args.smooth_slope),
        dim=args.dim, reg_user=args.reg_user, reg_item=args.reg_item, lr0=args.lr, anneal=args.anneal,
        epochs=args.epochs, shards=args.shards, seed=args.seed, hash_bits=args.hash_bits,
        init_scale=args.init_scale, cf_negatives=args.cf_negatives,
    )


def cmd_train(args):
    _need_file(args.input)
    config = train_config_from_args(args)
    ds = D.load_any(args.input)
    if isinstance(ds, D.DyadicDataset) and not config.loss.tag.is_dyadic:
        raise UsageError("--loss %s needs session data; run 'ccf simulate' on the dyadic file first" % args.loss)
    store, report = fit(ds, config)
    save_checkpoint(store, args.out)
    for e, (lr, obj) in enumerate(zip(report.lrs, report.objectives)):
        print("epoch=%d lr=%.17g objective=%.17g" % (e, lr, obj))


def _default_n(ds):
    if isinstance(ds, D.SessionDataset) and ds.sessions and all(len(s.offer_set) == 4 for s in ds.sessions):
        return 4
    return 5


def cmd_evaluate(args):
    _need_file(args.checkpoint)
    _need_file(args.test)
    if args.train_data:
        _need_file(args.train_data)
    store = load_checkpoint(args.checkpoint)
    if args.dim is not None and args.dim != store.dim:
        raise CCFError("checkpoint has dim=%d but --dim %d was requested" % (store.dim, args.dim))
    test = D.load_any(args.test)
    report = EvalReport()
    if args.online:
        if not isinstance(test, D.SessionDataset):
            raise UsageError("--online needs a session file")
        report.online_accuracy = online_accuracy(store, test)
        report.sessions_evaluated = len(test)
    else:
        n = args.n or _default_n(test)
        truth = test.positives() if isinstance(test, D.SessionDataset) else test
        train_truth = None
        if args.train_data:
            tr = D.load_any(args.train_data)
            train_truth = tr.positives() if isinstance(tr, D.SessionDataset) else tr
        r = evaluate_offline(store, truth, n, train_truth, args.exclude_train)
        report.ap, report.ar, report.ndcg, report.n = r.ap, r.ar, r.ndcg, r.n
        report.users_evaluated = r.users_evaluated
    if args.histogram_buckets:
        dy = sample_dyads(store.users, store.items, args.histogram_samples, args.seed)
        report.histogram = score_histogram(store, dy, args.transform, args.histogram_buckets)
        if args.histogram_out:
            with open(args.histogram_out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(report.histogram_csv())
    sys.stdout.write(report.to_text())
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_records())


def cmd_predict(args):
    _need_file(args.checkpoint)
    store = load_checkpoint(args.checkpoint)
    user = parse_id(args.user)
    if args.candidates:
        cands = [parse_id(t.strip()) for t in args.candidates.split(",") if t.strip()]
    else:
        cands = list(store.items)
    top = rank_top_n(store, user, cands, args.n)
    phi_u = store.user_vector(user)
    for i in top:
        print("%s\t%.17g" % (i, float(phi_u @ store.item_vector(i))))


COMMANDS = {
    "simulate": cmd_simulate,
    "generate": cmd_generate,
    "split": cmd_split,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except UsageError as e:
        print("ccf: error: %s" % e, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, WrongLossError) as e:
        print("ccf: error: %s" % e, file=sys.stderr)
        return EXIT_USAGE
    except (CCFError, OSError) as e:
        print("ccf: error: %s" % e, file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
