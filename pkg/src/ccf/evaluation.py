"""Top-n ranking metrics, online click prediction and predicted-score histograms."""
from dataclasses import dataclass
import math

import numpy as np

from .errors import CCFError, ConfigError, WrongLossError
from .model import id_sort_key


@dataclass
class EvalReport:
    ap: float = None
    ar: float = None
    ndcg: float = None
    n: int = None
    users_evaluated: int = 0
    users_skipped: int = 0
    online_accuracy: float = None
    sessions_evaluated: int = 0
    histogram: list = None

    def metrics(self):
        out = []
        if self.ap is not None:
            out += [("AP@%d" % self.n, self.ap), ("AR@%d" % self.n, self.ar), ("nDCG@%d" % self.n, self.ndcg),
                    ("users_evaluated", self.users_evaluated)]
        if self.online_accuracy is not None:
            out += [("accuracy", self.online_accuracy), ("sessions_evaluated", self.sessions_evaluated)]
        return out

    def to_text(self):
        return "".join("%s=%s\n" % (k, _fmt(v)) for k, v in self.metrics())

    def to_records(self):
        return "".join("%s\t%s\n" % (k, _fmt(v)) for k, v in self.metrics())

    def histogram_csv(self):
        lines = ["bucket_low,count"] + ["%s,%d" % (_fmt(lo), c) for lo, c in self.histogram or ()]
        return "\n".join(lines) + "\n"


def _fmt(v):
    return "%.17g" % v if isinstance(v, float) else str(v)


def _order(scores, ids):
    # descending score, ascending id on ties
    keys = [id_sort_key(i) for i in ids]
    return sorted(range(len(ids)), key=lambda j: (-scores[j], keys[j]))


def rank_top_n(store, u, candidates, n):
    if n < 1:
        raise ConfigError("n must be >= 1")
    candidates = list(candidates)
    if not candidates:
        raise ConfigError("candidate list is empty")
    phi_u = store.user_vector(u)
    scores = [float(phi_u @ store.item_vector(i)) for i in candidates]
    return [candidates[j] for j in _order(scores, candidates)[:n]]


def rank_all(store, users, n, exclude=None):
    """Top-n over the store's whole item universe for each user, minus ``exclude[u]``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    exclude = exclude or {}
    items = store.items
    # store.items is kept in ascending id order, so a stable sort settles ties
    I = store.item_matrix()
    out = {}
    for u in users:
        scores = I @ store.user_vector(u)
        ex = exclude.get(u)
        if ex:
            rows = [store.item_rows[i] for i in ex if i in store.item_rows]
            scores[rows] = -np.inf
        idx = np.argsort(-scores, kind="stable")[:n]
        out[u] = [items[j] for j in idx if scores[j] != -np.inf]
    return out


def _per_user(rankings, truth, n, fn):
    vals = []
    for u in sorted(truth, key=id_sort_key):
        rel = truth[u]
        if not rel:
            continue
        vals.append(fn(list(rankings.get(u, ()))[:n], set(rel), n))
    if not vals:
        raise CCFError("no user with a non-empty ground-truth set")
    return math.fsum(vals) / len(vals)


def _precision(top, rel, n):
    return sum(1 for i in top if i in rel) / n


def _recall(top, rel, n):
    return sum(1 for i in top if i in rel) / len(rel)


def dcg(top, rel):
    return sum(1.0 / math.log2(p + 2) for p, i in enumerate(top) if i in rel)


def _ndcg(top, rel, n):
    ideal = sum(1.0 / math.log2(p + 2) for p in range(min(len(rel), n)))
    return dcg(top, rel) / ideal


def ap_at_n(rankings, ground_truth, n):
    """Mean over users of precision@n (users with empty truth skipped)."""
    return _per_user(rankings, ground_truth, n, _precision)


def ar_at_n(rankings, ground_truth, n):
    return _per_user(rankings, ground_truth, n, _recall)


def ndcg_at_n(rankings, ground_truth, n):
    """Binary-gain DCG with a log2(p+1) discount, normalized by the ideal ordering."""
    return _per_user(rankings, ground_truth, n, _ndcg)


def evaluate_offline(store, test_truth, n, train_truth=None, exclude_train=True):
    """Rank every item for each test user and score against the held-out positives.

    ``test_truth`` / ``train_truth`` map user -> set of items (a DyadicDataset works too).
    """
    test_truth = _as_truth(test_truth)
    exclude = _as_truth(train_truth) if (exclude_train and train_truth is not None) else {}
    users = [u for u in sorted(test_truth, key=id_sort_key) if test_truth[u]]
    rankings = rank_all(store, users, n, exclude)
    return EvalReport(
        ap=ap_at_n(rankings, test_truth, n),
        ar=ar_at_n(rankings, test_truth, n),
        ndcg=ndcg_at_n(rankings, test_truth, n),
        n=n,
        users_evaluated=len(users),
        users_skipped=len(test_truth) - len(users),
    )


def _as_truth(x):
    if x is None:
        return {}
    if hasattr(x, "by_user"):
        return x.by_user()
    return {u: set(v) for u, v in x.items()}


def predict_choice(store, session):
    """Item with the highest utility (ties: lowest id); ``None`` means predicted no-response,
    which happens only with thresholds and theta_u above every offer's utility."""
    phi_u = store.user_vector(session.user)
    offers = list(session.offer_set)
    scores = [float(phi_u @ store.item_vector(i)) for i in offers]
    best = _order(scores, offers)[0]
    if store.has_thresholds and store.threshold(session.user) > scores[best]:
        return None
    return offers[best]


def online_accuracy(store, sessions):
    sessions = getattr(sessions, "sessions", sessions)
    if not sessions:
        raise ConfigError("no sessions to evaluate")
    hits = 0
    for s in sessions:
        if len(s.decision_set) > 1:
            raise WrongLossError("online accuracy needs at most one decision per session")
        if not s.decision_set and not store.has_thresholds:
            raise WrongLossError("no-response session needs a model with action thresholds")
        truth = s.decision_set[0] if s.decision_set else None
        hits += predict_choice(store, s) == truth
    return hits / len(sessions)


def dyad_scores(store, dyads, transform="sigmoid"):
    r = np.array([store.user_vector(u) @ store.item_vector(i) for u, i in dyads], dtype=np.float64)
    if transform == "raw":
        return r
    if transform == "sigmoid":
        e = np.exp(-np.abs(r))
        return np.where(r >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    raise ConfigError("unknown transform %r" % (transform,))


def score_histogram(store, dyads, transform="sigmoid", buckets=10):
    """Equal-width bucket counts of (transformed) predicted scores as [(lower_bound, count)].

    Sigmoid scores use the range [0, 1]; raw scores span their observed min..max.
    """
    if buckets < 2:
        raise ConfigError("need at least 2 buckets")
    dyads = list(dyads)
    if not dyads:
        raise ConfigError("empty dyad sample")
    s = dyad_scores(store, dyads, transform)
    if transform == "sigmoid":
        lo, hi = 0.0, 1.0
    else:
        lo, hi = float(s.min()), float(s.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(s, bins=buckets, range=(lo, hi))
    return [(float(edges[b]), int(counts[b])) for b in range(buckets)]


def fraction_above(store, dyads, threshold=0.5, transform="sigmoid"):
    s = dyad_scores(store, list(dyads), transform)
    return float(np.mean(s > threshold))


def sample_dyads(users, items, size, seed=0):
    rng = np.random.default_rng(seed)
    users, items = list(users), list(items)
    us = rng.integers(len(users), size=size)
    it = rng.integers(len(items), size=size)
    return [(users[a], items[b]) for a, b in zip(us, it)]
