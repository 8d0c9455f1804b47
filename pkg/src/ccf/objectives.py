"""Session and dyad losses with their analytic gradients.

Losses here are data terms only; the L2 penalties belong to the trainer.
Gradients come back as a :class:`GradientAccumulator` keyed by logical
parameter ``(kind, entity_id, component)``.
"""
from dataclasses import dataclass
import enum
import math

import numpy as np

from . import kernels
from .errors import ConfigError, DegenerateSessionError, WrongLossError
from .model import ITEM, THRESHOLD, USER, Session


class Loss(enum.Enum):
    SOFTMAX = "softmax"
    HINGE = "hinge"
    SOFTMAX_EXT = "softmax-ext"
    HINGE_EXT = "hinge-ext"
    CF_L2 = "l2"
    CF_LOGISTIC = "logistic"

    @property
    def code(self):
        return _CODES[self]

    @property
    def uses_thresholds(self):
        return self in (Loss.SOFTMAX_EXT, Loss.HINGE_EXT)

    @property
    def is_dyadic(self):
        return self in (Loss.CF_L2, Loss.CF_LOGISTIC)


_CODES = {
    Loss.SOFTMAX: kernels.SOFTMAX,
    Loss.HINGE: kernels.HINGE,
    Loss.SOFTMAX_EXT: kernels.SOFTMAX_EXT,
    Loss.HINGE_EXT: kernels.HINGE_EXT,
    Loss.CF_L2: kernels.CF_L2,
    Loss.CF_LOGISTIC: kernels.CF_LOGISTIC,
}


@dataclass(frozen=True)
class LossKind:
    tag: Loss
    C: float = 1.0
    smooth_slope: float = 100.0

    def __post_init__(self):
        if not isinstance(self.tag, Loss):
            object.__setattr__(self, "tag", Loss(self.tag))
        if self.C < 0:
            raise ConfigError("trade-off constant C must be >= 0")
        if self.smooth_slope <= 0:
            raise ConfigError("Heaviside smoothing slope must be > 0")


@dataclass(frozen=True)
class DyadObservation:
    user: object
    item: object
    label: float


class GradientAccumulator(dict):
    """Sparse gradient: ``(kind, entity_id, component) -> partial``; absent means zero."""

    def vector(self, kind, ent_id, dim):
        return np.array([self.get((kind, ent_id, c), 0.0) for c in range(dim)])

    def add_vector(self, kind, ent_id, vec):
        for c, v in enumerate(vec):
            key = (kind, ent_id, c)
            self[key] = self.get(key, 0.0) + float(v)

    def entities(self, kind):
        return {key[1] for key in self if key[0] == kind}


def softmax_probs(utilities):
    r = np.asarray(utilities, dtype=np.float64)
    e = np.exp(r - r.max())
    return e / e.sum()


def softmax_prob(utilities, chosen_index):
    r = np.asarray(utilities, dtype=np.float64)
    if not 0 <= chosen_index < len(r):
        raise IndexError("chosen index %d outside offer set of size %d" % (chosen_index, len(r)))
    return float(softmax_probs(r)[chosen_index])


def session_utilities(session, store):
    phi_u = store.user_vector(session.user)
    return np.array([phi_u @ store.item_vector(i) for i in session.offer_set])


def _labels(session):
    chosen = set(session.decision_set)
    return np.array([1.0 if i in chosen else 0.0 for i in session.offer_set])


def check_record(record, tag):
    """Raise if ``record`` cannot be scored under loss ``tag``."""
    if tag.is_dyadic:
        if not isinstance(record, DyadObservation):
            raise WrongLossError("%s loss needs dyad observations, got %s" % (tag.value, type(record).__name__))
        ok = (0.0, 1.0) if tag is Loss.CF_L2 else (-1.0, 1.0)
        if record.label not in ok:
            raise WrongLossError("%s loss needs labels in %s, got %r" % (tag.value, ok, record.label))
        return
    if not isinstance(record, Session):
        raise WrongLossError("%s loss needs sessions, got %s" % (tag.value, type(record).__name__))
    if not record.decision_set and not tag.uses_thresholds:
        raise WrongLossError("no-response session needs a threshold loss (softmax-ext / hinge-ext)")
    if tag in (Loss.HINGE, Loss.HINGE_EXT) and record.decision_set and len(record.offer_set) < 2:
        raise DegenerateSessionError("hinge loss needs at least one non-chosen offer")


def _accumulate(session, store, dr, dth, with_theta):
    grad = GradientAccumulator()
    phi_u = store.user_vector(session.user)
    g_u = np.zeros(store.dim)
    for i, d in zip(session.offer_set, dr):
        phi_i = store.item_vector(i)
        grad.add_vector(ITEM, i, d * phi_u)
        g_u += d * phi_i
    grad.add_vector(USER, session.user, g_u)
    if with_theta:
        grad[(THRESHOLD, session.user, 0)] = float(dth)
    return grad


def _session_coeffs(session, store, tag, C=1.0, slope=100.0, smooth=False):
    check_record(session, tag)
    theta = store.threshold(session.user) if tag.uses_thresholds else 0.0
    return kernels.record_coeffs(tag.code, session_utilities(session, store), _labels(session),
                                 theta, C, slope, smooth)


def softmax_loss(session, store):
    return _session_coeffs(session, store, Loss.SOFTMAX)[0]


def softmax_grad(session, store):
    _, dr, _ = _session_coeffs(session, store, Loss.SOFTMAX)
    return _accumulate(session, store, dr, 0.0, False)


def hinge_loss(session, store, smooth_slope=None):
    """Slack of the averaged pairwise margin constraint.

    With ``smooth_slope`` set, returns the softplus surrogate whose derivative
    is the sigmoid used by :func:`hinge_grad` instead of the exact hinge.
    """
    smooth = smooth_slope is not None
    return _session_coeffs(session, store, Loss.HINGE, slope=smooth_slope or 100.0, smooth=smooth)[0]


def hinge_grad(session, store, smooth_slope=100.0):
    _, dr, _ = _session_coeffs(session, store, Loss.HINGE, slope=smooth_slope)
    return _accumulate(session, store, dr, 0.0, False)


def _need_thresholds(store):
    if not store.has_thresholds:
        raise ConfigError("threshold losses need a store with action thresholds")


def softmax_ext_probs(session, store):
    """Choice probabilities over the offer set and the no-response probability."""
    _need_thresholds(store)
    r = session_utilities(session, store)
    z = np.append(r, store.threshold(session.user))
    p = softmax_probs(z)
    return p[:-1], float(p[-1])


def softmax_ext_loss_grad(session, store):
    _need_thresholds(store)
    loss, dr, dth = _session_coeffs(session, store, Loss.SOFTMAX_EXT)
    return loss, _accumulate(session, store, dr, dth, True)


def hinge_ext_loss_grad(session, store, C=1.0, smooth_slope=100.0, smooth_loss=False):
    """Responded: slack on chosen minus mean-other minus theta >= 1.
    No response: C times the summed per-item slacks on theta - r_ui >= 1."""
    _need_thresholds(store)
    if C < 0:
        raise ConfigError("C must be >= 0")
    loss, dr, dth = _session_coeffs(session, store, Loss.HINGE_EXT, C, smooth_slope, smooth_loss)
    return loss, _accumulate(session, store, dr, dth, True)


def _dyad_loss_grad(obs, store, tag):
    check_record(obs, tag)
    phi_u = store.user_vector(obs.user)
    phi_i = store.item_vector(obs.item)
    loss, dr, _ = kernels.record_coeffs(tag.code, [phi_u @ phi_i], [obs.label])
    grad = GradientAccumulator()
    grad.add_vector(USER, obs.user, dr[0] * phi_i)
    grad.add_vector(ITEM, obs.item, dr[0] * phi_u)
    return loss, grad


def cf_l2_loss_grad(obs, store):
    return _dyad_loss_grad(obs, store, Loss.CF_L2)


def cf_logistic_loss_grad(obs, store):
    return _dyad_loss_grad(obs, store, Loss.CF_LOGISTIC)


def loss_and_grad(record, store, kind, smooth_loss=False):
    """Dispatch on ``kind.tag``. Hinge variants report the smoothed loss when
    ``smooth_loss`` is set (the loss whose exact gradient is returned)."""
    tag = kind.tag
    if tag is Loss.SOFTMAX:
        return softmax_loss(record, store), softmax_grad(record, store)
    if tag is Loss.HINGE:
        loss = hinge_loss(record, store, kind.smooth_slope if smooth_loss else None)
        return loss, hinge_grad(record, store, kind.smooth_slope)
    if tag is Loss.SOFTMAX_EXT:
        return softmax_ext_loss_grad(record, store)
    if tag is Loss.HINGE_EXT:
        return hinge_ext_loss_grad(record, store, kind.C, kind.smooth_slope, smooth_loss)
    if tag is Loss.CF_L2:
        return cf_l2_loss_grad(record, store)
    return cf_logistic_loss_grad(record, store)


def record_loss(record, store, kind, smooth_loss=False):
    return loss_and_grad(record, store, kind, smooth_loss)[0]


def logit_loss_direct(session, store):
    """-log of the enumerated choice probability, summed over decisions (no max shift)."""
    r = session_utilities(session, store)
    total = sum(math.exp(x) for x in r)
    idx = {i: j for j, i in enumerate(session.offer_set)}
    return sum(-math.log(math.exp(r[idx[d]]) / total) for d in session.decision_set)
