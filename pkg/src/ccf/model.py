"""Latent factor parameter storage, hashing and the utility function.

All learnable values live in one flat float64 ``table``. Every user/item owns a
row of ``dim`` slot indices into that table (and, when action thresholds are
enabled, every user owns one more slot). Without hashing the slots are a
contiguous layout; with hashing they are FNV-1a hashes of (kind, id, component)
masked to ``hash_bits`` bits, so distinct entities may share slots.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import CheckpointError, ConfigError, MissingEntityError, ShapeError

USER, ITEM, THRESHOLD = "user-factor", "item-factor", "threshold"
_KIND_TAGS = {USER: b"U", ITEM: b"I", THRESHOLD: b"T"}

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

MAX_TABLE_BITS = 30
CHECKPOINT_MAGIC = "ccf-model"
CHECKPOINT_VERSION = "v1"


def parse_id(token):
    """Entity ids are ints when the token is plain decimal, opaque strings otherwise."""
    if token.isascii() and token.isdigit():
        return int(token)
    return token


def id_sort_key(x):
    # ints before strings; ints numerically
    if isinstance(x, (int, np.integer)):
        return (0, int(x), "")
    return (1, 0, str(x))


def sorted_ids(ids):
    return sorted(set(ids), key=id_sort_key)


def fnv1a64(data):
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def _encode_key(kind, ent_id, component):
    if isinstance(ent_id, (int, np.integer)):
        ident = b"i" + str(int(ent_id)).encode("ascii")
    else:
        ident = b"s" + str(ent_id).encode("utf-8")
    return _KIND_TAGS[kind] + b"\x1f" + ident + b"\x1f" + str(int(component)).encode("ascii")


def hash_index(kind, ent_id, component, bits):
    """Slot of one parameter in a hashed table of size ``2**bits``.

    The key is the byte string ``tag 0x1F ('i'|'s') id 0x1F component`` where
    tag is ``U``/``I``/``T``, ints are written in decimal and strings in UTF-8.
    The 64-bit FNV-1a hash of that key is masked to its low ``bits`` bits.
    """
    if kind not in _KIND_TAGS:
        raise ConfigError("unknown parameter kind %r" % (kind,))
    if not 1 <= bits <= 40:
        raise ConfigError("hash bits must be in [1, 40], got %r" % (bits,))
    return fnv1a64(_encode_key(kind, ent_id, component)) & ((1 << bits) - 1)


def _hashed_slots(kind, ent_id, dim, bits):
    return np.array([hash_index(kind, ent_id, c, bits) for c in range(dim)], dtype=np.int64)


@dataclass(frozen=True)
class Session:
    """One interaction: the user, the items offered and the subset acted on."""

    user: object
    offer_set: tuple
    decision_set: tuple = ()

    def __post_init__(self):
        offers = tuple(self.offer_set)
        decisions = tuple(self.decision_set)
        object.__setattr__(self, "offer_set", offers)
        object.__setattr__(self, "decision_set", decisions)
        if not offers:
            raise ShapeError("offer set must contain at least one item")
        if len(set(offers)) != len(offers):
            raise ShapeError("duplicate item in offer set %r" % (offers,))
        if len(set(decisions)) != len(decisions):
            raise ShapeError("duplicate item in decision set %r" % (decisions,))
        missing = set(decisions) - set(offers)
        if missing:
            raise ShapeError("decision(s) %r not in offer set" % (sorted(missing, key=id_sort_key),))

    @property
    def responded(self):
        return bool(self.decision_set)


@dataclass
class ContentFeatures:
    user_features: dict
    item_features: dict

    def __post_init__(self):
        self.user_features = {u: np.asarray(v, dtype=np.float64) for u, v in self.user_features.items()}
        self.item_features = {i: np.asarray(v, dtype=np.float64) for i, v in self.item_features.items()}
        for name, feats in (("user", self.user_features), ("item", self.item_features)):
            lengths = {len(v) for v in feats.values()}
            if len(lengths) > 1:
                raise ShapeError("%s feature vectors have mixed lengths %s" % (name, sorted(lengths)))


@dataclass
class ParameterStore:
    dim: int
    table: np.ndarray
    users: list
    items: list
    user_slots: np.ndarray
    item_slots: np.ndarray
    threshold_slots: np.ndarray = None
    content_matrix: np.ndarray = None
    hash_bits: int = None
    user_rows: dict = field(init=False, repr=False)
    item_rows: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.user_rows = {u: r for r, u in enumerate(self.users)}
        self.item_rows = {i: r for r, i in enumerate(self.items)}
        if self.user_slots.shape != (len(self.users), self.dim):
            raise ShapeError("user slot matrix has shape %s" % (self.user_slots.shape,))
        if self.item_slots.shape != (len(self.items), self.dim):
            raise ShapeError("item slot matrix has shape %s" % (self.item_slots.shape,))

    @property
    def hashed(self):
        return self.hash_bits is not None

    @property
    def has_thresholds(self):
        return self.threshold_slots is not None

    # slot resolution

    def user_row_slots(self, u):
        row = self.user_rows.get(u)
        if row is not None:
            return self.user_slots[row]
        if self.hashed:
            return _hashed_slots(USER, u, self.dim, self.hash_bits)
        raise MissingEntityError("unknown user %r" % (u,))

    def item_row_slots(self, i):
        row = self.item_rows.get(i)
        if row is not None:
            return self.item_slots[row]
        if self.hashed:
            return _hashed_slots(ITEM, i, self.dim, self.hash_bits)
        raise MissingEntityError("unknown item %r" % (i,))

    def threshold_slot(self, u):
        if not self.has_thresholds:
            raise ConfigError("store has no action thresholds")
        row = self.user_rows.get(u)
        if row is not None:
            return int(self.threshold_slots[row])
        if self.hashed:
            return hash_index(THRESHOLD, u, 0, self.hash_bits)
        raise MissingEntityError("unknown user %r" % (u,))

    # value access

    def user_vector(self, u):
        return self.table[self.user_row_slots(u)]

    def item_vector(self, i):
        return self.table[self.item_row_slots(i)]

    def threshold(self, u):
        return float(self.table[self.threshold_slot(u)])

    def set_user_vector(self, u, v):
        self._set(self.user_row_slots(u), v)

    def set_item_vector(self, i, v):
        self._set(self.item_row_slots(i), v)

    def set_threshold(self, u, value):
        self.table[self.threshold_slot(u)] = float(value)

    def _set(self, slots, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ShapeError("expected a vector of length %d, got shape %s" % (self.dim, v.shape))
        self.table[slots] = v

    def user_matrix(self):
        return self.table[self.user_slots]

    def item_matrix(self):
        return self.table[self.item_slots]

    @property
    def user_factors(self):
        return {u: self.table[self.user_slots[r]].copy() for r, u in enumerate(self.users)}

    @property
    def item_factors(self):
        return {i: self.table[self.item_slots[r]].copy() for r, i in enumerate(self.items)}

    @property
    def action_thresholds(self):
        if not self.has_thresholds:
            return {}
        return {u: float(self.table[self.threshold_slots[r]]) for r, u in enumerate(self.users)}

    def copy(self):
        return ParameterStore(
            dim=self.dim,
            table=self.table.copy(),
            users=list(self.users),
            items=list(self.items),
            user_slots=self.user_slots,
            item_slots=self.item_slots,
            threshold_slots=self.threshold_slots,
            content_matrix=None if self.content_matrix is None else self.content_matrix.copy(),
            hash_bits=self.hash_bits,
        )

    def scaled_users(self, alpha):
        """Copy whose user factors are multiplied by ``alpha`` (unhashed stores only)."""
        if self.hashed:
            raise ConfigError("cannot scale user factors independently in a hashed table")
        out = self.copy()
        out.table[self.user_slots] *= alpha
        return out

    @classmethod
    def from_factors(cls, user_factors, item_factors, thresholds=None, content_matrix=None):
        """Unhashed store holding exactly the given vectors (ids keep sorted order)."""
        users = sorted_ids(user_factors)
        items = sorted_ids(item_factors)
        if not users or not items:
            raise ConfigError("need at least one user and one item")
        dims = {len(np.ravel(v)) for v in user_factors.values()} | {len(np.ravel(v)) for v in item_factors.values()}
        if len(dims) != 1:
            raise ShapeError("factor vectors have mixed lengths %s" % sorted(dims))
        dim = dims.pop()
        store = _contiguous_store(users, items, dim, thresholds is not None)
        for u in users:
            store.set_user_vector(u, np.ravel(user_factors[u]))
        for i in items:
            store.set_item_vector(i, np.ravel(item_factors[i]))
        if thresholds is not None:
            for u in users:
                store.set_threshold(u, thresholds.get(u, 0.0))
        if content_matrix is not None:
            store.content_matrix = np.array(content_matrix, dtype=np.float64, ndmin=2)
        return store


def _contiguous_store(users, items, dim, thresholds):
    nu, ni = len(users), len(items)
    n = (nu + ni) * dim + (nu if thresholds else 0)
    user_slots = np.arange(nu * dim, dtype=np.int64).reshape(nu, dim)
    item_slots = (nu * dim + np.arange(ni * dim, dtype=np.int64)).reshape(ni, dim)
    tslots = (nu + ni) * dim + np.arange(nu, dtype=np.int64) if thresholds else None
    return ParameterStore(dim, np.zeros(n), list(users), list(items), user_slots, item_slots, tslots)


def init_params(users, items, dim, scale=0.01, seed=0, thresholds=False, hash_bits=None, content_shape=None):
    """Fresh store with every factor component uniform in [-scale, scale] and thresholds at 0."""
    users = sorted_ids(users)
    items = sorted_ids(items)
    if not users or not items:
        raise ConfigError("user and item sets must be non-empty")
    if int(dim) != dim or dim < 1:
        raise ConfigError("dim must be a positive integer, got %r" % (dim,))
    if scale < 0 or not math.isfinite(scale):
        raise ConfigError("init scale must be finite and >= 0, got %r" % (scale,))
    dim = int(dim)
    rng = np.random.default_rng(seed)

    if hash_bits is None:
        store = _contiguous_store(users, items, dim, thresholds)
        n_factor = (len(users) + len(items)) * dim
        store.table[:n_factor] = rng.uniform(-scale, scale, size=n_factor)
    else:
        if not 1 <= hash_bits <= MAX_TABLE_BITS:
            raise ConfigError("hash_bits must be in [1, %d] for an in-memory table" % MAX_TABLE_BITS)
        user_slots = np.stack([_hashed_slots(USER, u, dim, hash_bits) for u in users])
        item_slots = np.stack([_hashed_slots(ITEM, i, dim, hash_bits) for i in items])
        tslots = None
        if thresholds:
            tslots = np.array([hash_index(THRESHOLD, u, 0, hash_bits) for u in users], dtype=np.int64)
        table = rng.uniform(-scale, scale, size=1 << hash_bits)
        if tslots is not None:
            table[tslots] = 0.0
        store = ParameterStore(dim, table, users, items, user_slots, item_slots, tslots, hash_bits=hash_bits)

    if content_shape is not None:
        m, n = content_shape
        store.content_matrix = np.zeros((int(m), int(n)))
    return store


def utility(store, u, i):
    return float(np.dot(store.user_vector(u), store.item_vector(i)))


def utility_with_content(store, feats, u, i):
    M = store.content_matrix
    if M is None:
        raise ConfigError("store has no content matrix")
    try:
        xu = feats.user_features[u]
        xi = feats.item_features[i]
    except KeyError as e:
        raise MissingEntityError("no content features for %r" % (e.args[0],)) from None
    if M.shape != (len(xu), len(xi)):
        raise ShapeError("content matrix %s incompatible with features (%d, %d)" % (M.shape, len(xu), len(xi)))
    return utility(store, u, i) + float(xu @ M @ xi)


# checkpoint I/O

def _fmt(x):
    return "%.17g" % x


def dump_checkpoint(store, fh):
    bits = "none" if store.hash_bits is None else str(store.hash_bits)
    fh.write("%s %s dim=%d hash_bits=%s\n" % (CHECKPOINT_MAGIC, CHECKPOINT_VERSION, store.dim, bits))
    for r, u in enumerate(store.users):
        fh.write("U %s %s\n" % (u, " ".join(map(_fmt, store.table[store.user_slots[r]]))))
    for r, i in enumerate(store.items):
        fh.write("I %s %s\n" % (i, " ".join(map(_fmt, store.table[store.item_slots[r]]))))
    if store.has_thresholds:
        for r, u in enumerate(store.users):
            fh.write("T %s %s\n" % (u, _fmt(store.table[store.threshold_slots[r]])))
    if store.content_matrix is not None:
        for a, row in enumerate(store.content_matrix):
            fh.write("M %d %s\n" % (a, " ".join(map(_fmt, row))))
    if store.hashed:
        # entity lines do not cover unused / cold-start slots; the raw table does
        for idx, v in enumerate(store.table):
            fh.write("H %d %s\n" % (idx, _fmt(v)))


def save_checkpoint(store, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_checkpoint(store, fh)


def _parse_header(line):
    parts = line.split()
    if len(parts) != 4 or parts[0] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a ccf checkpoint header: %r" % line.strip())
    if parts[1] != CHECKPOINT_VERSION:
        raise CheckpointError("unsupported checkpoint version %s" % parts[1])
    try:
        key, val = parts[2].split("=")
        assert key == "dim"
        dim = int(val)
        key, val = parts[3].split("=")
        assert key == "hash_bits"
        bits = None if val == "none" else int(val)
    except (ValueError, AssertionError):
        raise CheckpointError("malformed checkpoint header: %r" % line.strip()) from None
    return dim, bits


def load_checkpoint_lines(lines):
    lines = iter(lines)
    try:
        dim, bits = _parse_header(next(lines))
    except StopIteration:
        raise CheckpointError("empty checkpoint") from None
    users, items, thresholds, mrows, hvals = {}, {}, {}, {}, {}
    for lineno, line in enumerate(lines, start=2):
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag in ("U", "I"):
                vec = np.array([float(x) for x in parts[2:]])
                if len(vec) != dim:
                    raise CheckpointError("line %d: expected %d values, got %d" % (lineno, dim, len(vec)))
                (users if tag == "U" else items)[parse_id(parts[1])] = vec
            elif tag == "T":
                thresholds[parse_id(parts[1])] = float(parts[2])
            elif tag == "M":
                mrows[int(parts[1])] = [float(x) for x in parts[2:]]
            elif tag == "H":
                hvals[int(parts[1])] = float(parts[2])
            else:
                raise CheckpointError("line %d: unknown record tag %r" % (lineno, tag))
        except (ValueError, IndexError):
            raise CheckpointError("line %d: malformed record" % lineno) from None

    content = None
    if mrows:
        if sorted(mrows) != list(range(len(mrows))):
            raise CheckpointError("content matrix rows are not contiguous")
        content = np.array([mrows[a] for a in range(len(mrows))], dtype=np.float64, ndmin=2)

    if bits is None:
        store = ParameterStore.from_factors(users, items, thresholds if thresholds else None, content)
        return store

    store = init_params(users, items, dim, scale=0.0, hash_bits=bits, thresholds=bool(thresholds))
    if len(hvals) != 1 << bits:
        raise CheckpointError("hashed checkpoint must list all %d table slots" % (1 << bits))
    for idx, v in hvals.items():
        store.table[idx] = v
    store.content_matrix = content
    return store


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return load_checkpoint_lines(fh)
