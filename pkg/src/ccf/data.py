"""Datasets, file formats, pseudo offer-set simulation, splitting and the synthetic logit world.

Dyadic file: one ``user<TAB>item`` action dyad per line.
Session file: ``user<TAB>offer,ids<TAB>decision,ids`` with ``-`` for no response.
Blank lines and lines starting with ``#`` are skipped in both.
"""
from collections import defaultdict
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError, DataValidationError, InsufficientNegativesError, ParseError, ShapeError
from .model import ParameterStore, Session, parse_id, sorted_ids

NO_RESPONSE = "-"


@dataclass
class DyadicDataset:
    dyads: list
    users: list = None
    items: list = None

    def __post_init__(self):
        self.dyads = [tuple(d) for d in self.dyads]
        seen = set()
        for d in self.dyads:
            if d in seen:
                raise DataValidationError("duplicate dyad %r" % (d,))
            seen.add(d)
        self.users = sorted_ids(list(self.users or ()) + [u for u, _ in self.dyads])
        self.items = sorted_ids(list(self.items or ()) + [i for _, i in self.dyads])

    @property
    def records(self):
        return self.dyads

    def __len__(self):
        return len(self.dyads)

    def by_user(self):
        out = defaultdict(set)
        for u, i in self.dyads:
            out[u].add(i)
        return dict(out)


@dataclass
class SessionDataset:
    sessions: list
    users: list = None
    items: list = None

    def __post_init__(self):
        self.sessions = list(self.sessions)
        self.users = sorted_ids(list(self.users or ()) + [s.user for s in self.sessions])
        self.items = sorted_ids(list(self.items or ()) + [i for s in self.sessions for i in s.offer_set])

    @property
    def records(self):
        return self.sessions

    def __len__(self):
        return len(self.sessions)

    def positives(self):
        """Distinct (user, chosen item) dyads, keeping the full universes."""
        seen = {}
        for s in self.sessions:
            for i in s.decision_set:
                seen.setdefault((s.user, i), None)
        return DyadicDataset(list(seen), self.users, self.items)


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def parse_dyadic(path):
    dyads = []
    where = {}
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2 or not all(p.strip() for p in parts):
            raise ParseError("expected 'user<TAB>item', got %r" % line, lineno)
        d = (parse_id(parts[0].strip()), parse_id(parts[1].strip()))
        if d in where:
            raise DataValidationError("duplicate dyad %s (first seen on line %d)" % (line.strip(), where[d]), lineno)
        where[d] = lineno
        dyads.append(d)
    return DyadicDataset(dyads)


def _id_list(field_, lineno, what):
    toks = [t.strip() for t in field_.split(",")]
    if any(not t for t in toks):
        raise ParseError("empty id in %s list %r" % (what, field_), lineno)
    return [parse_id(t) for t in toks]


def parse_sessions(path):
    sessions = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError("expected 'user<TAB>offers<TAB>decisions', got %r" % line, lineno)
        user = parse_id(parts[0].strip())
        offers = _id_list(parts[1], lineno, "offer")
        dec_field = parts[2].strip()
        decisions = [] if dec_field == NO_RESPONSE else _id_list(dec_field, lineno, "decision")
        try:
            sessions.append(Session(user, offers, decisions))
        except ShapeError as e:
            raise DataValidationError(str(e), lineno) from None
    return SessionDataset(sessions)


def sniff_format(path):
    """'sessions' or 'dyadic', judged from the first data line."""
    for lineno, line in _data_lines(path):
        n = len(line.split("\t"))
        if n == 3:
            return "sessions"
        if n == 2:
            return "dyadic"
        raise ParseError("cannot tell the file format from %r" % line, lineno)
    return "dyadic"


def load_any(path):
    return parse_sessions(path) if sniff_format(path) == "sessions" else parse_dyadic(path)


def format_session(s):
    dec = ",".join(map(str, s.decision_set)) if s.decision_set else NO_RESPONSE
    return "%s\t%s\t%s" % (s.user, ",".join(map(str, s.offer_set)), dec)


def write_sessions(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in dataset.sessions:
            fh.write(format_session(s) + "\n")


def write_dyadic(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in dataset.dyads:
            fh.write("%s\t%s\n" % (u, i))


def simulate_contexts(dyads, m, seed=0):
    """One session per positive dyad: the positive plus ``m`` sampled unobserved items, shuffled.

    Negatives for a user are drawn without replacement from items that user has
    no positive for anywhere in ``dyads``.
    """
    if m < 0:
        raise ConfigError("number of pseudo non-choices must be >= 0")
    rng = np.random.default_rng(seed)
    positives = dyads.by_user()
    pools = {}
    sessions = []
    for u, chosen in dyads.dyads:
        pool = pools.get(u)
        if pool is None:
            pool = [i for i in dyads.items if i not in positives[u]]
            if len(pool) < m:
                raise InsufficientNegativesError(
                    "user %r has only %d unobserved items, need %d" % (u, len(pool), m))
            pools[u] = pool
        picks = rng.choice(len(pool), size=m, replace=False) if m else []
        offers = [chosen] + [pool[j] for j in picks]
        offers = [offers[j] for j in rng.permutation(m + 1)]
        sessions.append(Session(u, offers, (chosen,)))
    return SessionDataset(sessions, dyads.users, dyads.items)


def split(dataset, ratios, seed=0):
    """Record-level random partition into (train, valid, test)."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 or not math.isfinite(r) for r in ratios):
        raise ConfigError("need three non-negative split ratios, got %r" % (ratios,))
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split ratios must sum to 1, got %r" % (sum(ratios),))
    records = dataset.records
    n = len(records)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_valid = min(int(round(ratios[1] * n)), n - n_train)
    parts = (perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:])
    cls = type(dataset)
    return tuple(cls([records[j] for j in sorted(p)], dataset.users, dataset.items) for p in parts)


@dataclass
class SynthConfig:
    dim: int = 5
    n_users: int = 500
    n_items: int = 100
    sessions_per_user: int = 20
    offer_size: int = 10
    seed: int = 0
    thresholds: bool = False
    threshold_loc: float = 0.0
    # std of a true utility r = <phi_u, phi_i>; factors get variance utility_std / sqrt(k)
    utility_std: float = 1.0

    def __post_init__(self):
        if min(self.dim, self.n_users, self.n_items, self.sessions_per_user, self.offer_size) < 1:
            raise ConfigError("synthetic sizes must all be >= 1")
        if not self.utility_std >= 0:
            raise ConfigError("utility_std must be >= 0")
        if self.offer_size > self.n_items:
            raise ConfigError("offer size %d exceeds the item count %d" % (self.offer_size, self.n_items))

    @property
    def std(self):
        return math.sqrt(self.utility_std) * self.dim ** -0.25


@dataclass
class SyntheticGroundTruth:
    user_factors: np.ndarray
    item_factors: np.ndarray
    thresholds: np.ndarray = None
    config: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        c = self.config
        if self.user_factors.shape != (c.n_users, c.dim) or self.item_factors.shape != (c.n_items, c.dim):
            raise ShapeError("true factor shapes do not match the generator config")

    def to_store(self):
        uf = {u: self.user_factors[u] for u in range(self.config.n_users)}
        itf = {i: self.item_factors[i] for i in range(self.config.n_items)}
        th = None
        if self.thresholds is not None:
            th = {u: float(self.thresholds[u]) for u in range(self.config.n_users)}
        return ParameterStore.from_factors(uf, itf, th)


def draw_truth(config, rng):
    U = rng.normal(0.0, config.std, size=(config.n_users, config.dim))
    V = rng.normal(0.0, config.std, size=(config.n_items, config.dim))
    th = rng.normal(config.threshold_loc, 1.0, size=config.n_users) if config.thresholds else None
    return SyntheticGroundTruth(U, V, th, config)


def synth_generate(config, truth=None):
    """Logit-world sessions: uniform random offer sets, choices drawn from the softmax
    over offer utilities (plus the no-response outcome when thresholds are on).
    Users are 0..n_users-1 and items 0..n_items-1."""
    rng = np.random.default_rng(config.seed)
    if truth is None:
        truth = draw_truth(config, rng)
    c = config
    S = c.n_users * c.sessions_per_user
    users = np.repeat(np.arange(c.n_users), c.sessions_per_user)
    offers = np.argsort(rng.random((S, c.n_items)), axis=1)[:, :c.offer_size]
    r = np.einsum("sk,sok->so", truth.user_factors[users], truth.item_factors[offers])
    if truth.thresholds is not None:
        r = np.concatenate([r, truth.thresholds[users][:, None]], axis=1)
    p = np.exp(r - r.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    cdf = np.cumsum(p, axis=1)
    draws = rng.random(S)
    pick = np.minimum((cdf < draws[:, None] * cdf[:, -1:]).sum(axis=1), r.shape[1] - 1)

    sessions = []
    for t in range(S):
        offer = [int(x) for x in offers[t]]
        dec = (offer[pick[t]],) if pick[t] < c.offer_size else ()
        sessions.append(Session(int(users[t]), offer, dec))
    return truth, SessionDataset(sessions, range(c.n_users), range(c.n_items))
