"""Per-record loss coefficients and SGD epoch kernels.

Two interchangeable backends:

* numba: scalar loops compiled with ``@njit``; the default when numba imports.
* numpy: the same math, vectorized within a record; used when numba is absent
  or ``CCF_DISABLE_NUMBA=1``.

A *record* is either a session (an offer list with 0/1 labels marking the
decisions) or a dyad (a one-item "offer list" whose label is y_ui). Records are
packed CSR-style: ``rec_user[t]`` is the user row, ``rec_items[ptr[t]:ptr[t+1]]``
the item rows and ``rec_y`` the aligned labels.

Everything here speaks in terms of the utilities ``r`` of the record's items:
``record_coeffs`` returns the record loss, d loss / d r and d loss / d theta.
Chain rule onto the factors happens in the epoch kernels.
"""
import math

import numpy as np

from ._jit import njit, numba_enabled

SOFTMAX, HINGE, SOFTMAX_EXT, HINGE_EXT, CF_L2, CF_LOGISTIC = range(6)
THRESHOLD_KINDS = (SOFTMAX_EXT, HINGE_EXT)
DYAD_KINDS = (CF_L2, CF_LOGISTIC)


# numpy backend

def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(z):
    return np.logaddexp(0.0, z)


def _hinge_part(x, slope, smooth):
    if smooth:
        return softplus(slope * x) / slope
    return np.maximum(0.0, x)


def record_coeffs_np(kind, r, y, theta, C, slope, smooth):
    r = np.asarray(r, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = r.shape[0]
    dr = np.zeros(n)
    dth = 0.0
    if kind == SOFTMAX or kind == SOFTMAX_EXT:
        chosen = y > 0
        nd = int(chosen.sum())
        if kind == SOFTMAX_EXT:
            m = max(r.max(), theta)
            e = np.exp(r - m)
            eth = math.exp(theta - m)
            Z = e.sum() + eth
            p, pth = e / Z, eth / Z
        else:
            m = r.max()
            e = np.exp(r - m)
            Z = e.sum()
            p, pth = e / Z, 0.0
        lse = m + math.log(Z)
        if nd == 0:
            # no response: -log p(none) = lse - theta
            return lse - theta, p, pth - 1.0
        loss = float(np.sum(lse - r[chosen]))
        dr = nd * p - chosen
        dth = nd * pth
        return loss, dr, dth
    if kind == HINGE or kind == HINGE_EXT:
        chosen = np.flatnonzero(y > 0)
        if kind == HINGE_EXT and chosen.size == 0:
            x = 1.0 - theta + r
            H = sigmoid(slope * x)
            loss = C * float(np.sum(_hinge_part(x, slope, smooth)))
            return loss, C * H, -C * float(H.sum())
        S = r.sum()
        rbar = (S - r[chosen]) / (n - 1)
        x = 1.0 - r[chosen] + rbar
        if kind == HINGE_EXT:
            x = x + theta
        H = sigmoid(slope * x)
        loss = float(np.sum(_hinge_part(x, slope, smooth)))
        dr[:] = H.sum() / (n - 1)
        dr[chosen] -= H + H / (n - 1)
        if kind == HINGE_EXT:
            dth = float(H.sum())
        return loss, dr, dth
    if kind == CF_L2:
        diff = r[0] - y[0]
        dr[0] = 2.0 * diff
        return diff * diff, dr, 0.0
    if kind == CF_LOGISTIC:
        z = -y[0] * r[0]
        dr[0] = -y[0] * float(sigmoid(z))
        return float(softplus(z)), dr, 0.0
    raise ValueError("unknown loss kind %r" % (kind,))


def _epoch_np(table, uslots, islots, tslots, has_theta, rec_user, ptr, rec_items, rec_y,
              order, kind, lr, reg_u, reg_i, C, slope):
    for t in order:
        a, b = ptr[t], ptr[t + 1]
        us = uslots[rec_user[t]]
        isl = islots[rec_items[a:b]]
        phi_u = table[us]
        Phi = table[isl]
        r = Phi @ phi_u
        th = table[tslots[rec_user[t]]] if has_theta else 0.0
        _, dr, dth = record_coeffs_np(kind, r, rec_y[a:b], th, C, slope, False)
        g_u = dr @ Phi + reg_u * phi_u
        g_i = np.outer(dr, phi_u) + reg_i * Phi
        # ufunc.at so colliding hashed slots accumulate
        np.subtract.at(table, us, lr * g_u)
        np.subtract.at(table, isl.ravel(), (lr * g_i).ravel())
        if has_theta:
            table[tslots[rec_user[t]]] -= lr * dth


def _losses_np(table, uslots, islots, tslots, has_theta, rec_user, ptr, rec_items, rec_y, kind, C, slope):
    out = np.empty(len(rec_user))
    for t in range(len(rec_user)):
        a, b = ptr[t], ptr[t + 1]
        r = table[islots[rec_items[a:b]]] @ table[uslots[rec_user[t]]]
        th = table[tslots[rec_user[t]]] if has_theta else 0.0
        out[t] = record_coeffs_np(kind, r, rec_y[a:b], th, C, slope, False)[0]
    return out


# numba backend

@njit(cache=True)
def _sigmoid_nb(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _softplus_nb(z):
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@njit(cache=True)
def _hinge_part_nb(x, slope, smooth):
    if smooth:
        return _softplus_nb(slope * x) / slope
    return x if x > 0.0 else 0.0


@njit(cache=True)
def record_coeffs_nb(kind, r, y, theta, C, slope, smooth):
    n = r.shape[0]
    dr = np.zeros(n)
    dth = 0.0
    loss = 0.0
    nd = 0
    for j in range(n):
        if y[j] > 0.0:
            nd += 1
    if kind == 0 or kind == 2:
        m = r[0]
        for j in range(1, n):
            if r[j] > m:
                m = r[j]
        if kind == 2 and theta > m:
            m = theta
        Z = 0.0
        for j in range(n):
            dr[j] = math.exp(r[j] - m)
            Z += dr[j]
        eth = math.exp(theta - m) if kind == 2 else 0.0
        Z += eth
        lse = m + math.log(Z)
        for j in range(n):
            dr[j] /= Z
        pth = eth / Z
        if nd == 0:
            return lse - theta, dr, pth - 1.0
        for j in range(n):
            if y[j] > 0.0:
                loss += lse - r[j]
            dr[j] = nd * dr[j] - (1.0 if y[j] > 0.0 else 0.0)
        return loss, dr, nd * pth
    if kind == 1 or kind == 3:
        if kind == 3 and nd == 0:
            for j in range(n):
                x = 1.0 - theta + r[j]
                H = _sigmoid_nb(slope * x)
                loss += C * _hinge_part_nb(x, slope, smooth)
                dr[j] = C * H
                dth -= C * H
            return loss, dr, dth
        S = 0.0
        for j in range(n):
            S += r[j]
        for c in range(n):
            if y[c] <= 0.0:
                continue
            x = 1.0 - r[c] + (S - r[c]) / (n - 1)
            if kind == 3:
                x += theta
            H = _sigmoid_nb(slope * x)
            loss += _hinge_part_nb(x, slope, smooth)
            share = H / (n - 1)
            for j in range(n):
                if j == c:
                    dr[j] -= H
                else:
                    dr[j] += share
            if kind == 3:
                dth += H
        return loss, dr, dth
    if kind == 4:
        diff = r[0] - y[0]
        dr[0] = 2.0 * diff
        return diff * diff, dr, 0.0
    # kind == 5
    z = -y[0] * r[0]
    dr[0] = -y[0] * _sigmoid_nb(z)
    return _softplus_nb(z), dr, 0.0


@njit(cache=True, nogil=True)
def _epoch_nb(table, uslots, islots, tslots, has_theta, rec_user, ptr, rec_items, rec_y,
              order, kind, lr, reg_u, reg_i, C, slope):
    k = uslots.shape[1]
    max_n = 0
    for t in range(len(rec_user)):
        if ptr[t + 1] - ptr[t] > max_n:
            max_n = ptr[t + 1] - ptr[t]
    phi_u = np.empty(k)
    Phi = np.empty((max_n, k))
    r = np.empty(max_n)
    g_u = np.empty(k)
    for t in order:
        a = ptr[t]
        n = ptr[t + 1] - a
        u = rec_user[t]
        for c in range(k):
            phi_u[c] = table[uslots[u, c]]
        for j in range(n):
            it = rec_items[a + j]
            acc = 0.0
            for c in range(k):
                v = table[islots[it, c]]
                Phi[j, c] = v
                acc += v * phi_u[c]
            r[j] = acc
        th = table[tslots[u]] if has_theta else 0.0
        _, dr, dth = record_coeffs_nb(kind, r[:n], rec_y[a:a + n], th, C, slope, False)
        # all gradients from pre-step values, then apply
        for c in range(k):
            acc = reg_u * phi_u[c]
            for j in range(n):
                acc += dr[j] * Phi[j, c]
            g_u[c] = acc
        for c in range(k):
            table[uslots[u, c]] -= lr * g_u[c]
        for j in range(n):
            it = rec_items[a + j]
            for c in range(k):
                table[islots[it, c]] -= lr * (dr[j] * phi_u[c] + reg_i * Phi[j, c])
        if has_theta:
            table[tslots[u]] -= lr * dth


@njit(cache=True)
def _losses_nb(table, uslots, islots, tslots, has_theta, rec_user, ptr, rec_items, rec_y, kind, C, slope):
    k = uslots.shape[1]
    out = np.empty(len(rec_user))
    for t in range(len(rec_user)):
        a = ptr[t]
        n = ptr[t + 1] - a
        u = rec_user[t]
        r = np.empty(n)
        for j in range(n):
            acc = 0.0
            for c in range(k):
                acc += table[islots[rec_items[a + j], c]] * table[uslots[u, c]]
            r[j] = acc
        th = table[tslots[u]] if has_theta else 0.0
        out[t] = record_coeffs_nb(kind, r, rec_y[a:a + n], th, C, slope, False)[0]
    return out


# dispatch

def _backend(use_numba):
    return numba_enabled() if use_numba is None else (use_numba and numba_enabled())


def record_coeffs(kind, r, y, theta=0.0, C=1.0, slope=100.0, smooth=False, use_numba=None):
    """(loss, dloss/dr, dloss/dtheta) for one record given its item utilities."""
    if _backend(use_numba):
        r = np.ascontiguousarray(r, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        loss, dr, dth = record_coeffs_nb(int(kind), r, y, float(theta), float(C), float(slope), bool(smooth))
        return float(loss), dr, float(dth)
    return record_coeffs_np(int(kind), r, y, float(theta), float(C), float(slope), bool(smooth))


def run_epoch(table, uslots, islots, tslots, rec_user, ptr, rec_items, rec_y, order,
              kind, lr, reg_u, reg_i, C, slope, use_numba=None):
    """One pass of SGD over ``order``; mutates ``table`` in place."""
    has_theta = tslots is not None
    if tslots is None:
        tslots = np.zeros(0, dtype=np.int64)
    args = (table, uslots, islots, tslots, has_theta, rec_user, ptr, rec_items, rec_y,
            np.asarray(order, dtype=np.int64), int(kind), float(lr), float(reg_u), float(reg_i),
            float(C), float(slope))
    if _backend(use_numba):
        _epoch_nb(*args)
    else:
        _epoch_np(*args)


def record_losses(table, uslots, islots, tslots, rec_user, ptr, rec_items, rec_y, kind, C, slope,
                  use_numba=None):
    """Exact (unsmoothed) data loss of every record."""
    has_theta = tslots is not None
    if tslots is None:
        tslots = np.zeros(0, dtype=np.int64)
    args = (table, uslots, islots, tslots, has_theta, rec_user, ptr, rec_items, rec_y,
            int(kind), float(C), float(slope))
    if _backend(use_numba):
        return _losses_nb(*args)
    return _losses_np(*args)
