"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Both implementations are always importable as ``NUMBA`` and ``NUMPY`` (the
former is ``None`` when numba is unavailable). The package-wide default is
chosen once at import time: numba unless ``DKGUIDE_NO_NUMBA`` is set to a
truthy value.
"""

import os
from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ENV_FLAG = "DKGUIDE_NO_NUMBA"


def _env_disabled():
    return os.environ.get(ENV_FLAG, "").strip().lower() not in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _np_popcount(n_players):
    idx = np.arange(1 << n_players, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n_players, dtype=np.int64)) & 1
    return bits.sum(axis=1)


def np_shapley_from_table(values, n_players, weights):
    """phi_j = sum over S without j of weights[|S|] * (v[S + j] - v[S])."""
    sizes = _np_popcount(n_players)
    idx = np.arange(1 << n_players, dtype=np.int64)
    phi = np.zeros(n_players)
    for j in range(n_players):
        bit = np.int64(1) << j
        without = idx[(idx & bit) == 0]
        phi[j] = np.sum(weights[sizes[without]] * (values[without | bit] - values[without]))
    return phi


def np_prefix_masks(perms):
    # masks[r, k, j] is True iff j is among the first k entries of perms[r]
    n_rows, n_players = perms.shape
    pos = np.empty_like(perms)
    np.put_along_axis(pos, perms, np.arange(n_players)[None, :].repeat(n_rows, 0), axis=1)
    k = np.arange(n_players + 1)[None, :, None]
    return pos[:, None, :] < k


def np_permutation_marginals(values, perms):
    diffs = values[:, 1:] - values[:, :-1]
    out = np.empty(perms.shape, dtype=np.float64)
    np.put_along_axis(out, perms, diffs, axis=1)
    return out


def np_scatter_marginal_grad(dcontrib, perms):
    # adjoint of np_permutation_marginals w.r.t. values
    d_at_step = np.take_along_axis(dcontrib, perms, axis=1)
    out = np.zeros((perms.shape[0], perms.shape[1] + 1))
    out[:, 1:] += d_at_step
    out[:, :-1] -= d_at_step
    return out


def np_concordance_counts(pos_a, pos_b):
    da = np.sign(pos_a[:, None] - pos_a[None, :])
    db = np.sign(pos_b[:, None] - pos_b[None, :])
    prod = np.triu(da * db, k=1)
    return int(np.sum(prod > 0)), int(np.sum(prod < 0))


def np_conv1d_forward(x, w, b, pad_left):
    n, c_in, length = x.shape
    k = w.shape[2]
    xp = np.zeros((n, c_in, length + k - 1))
    xp[:, :, pad_left:pad_left + length] = x
    win = sliding_window_view(xp, k, axis=2)  # (n, c_in, length, k)
    win = win.transpose(0, 2, 1, 3).reshape(n, length, c_in * k)
    out = win @ w.reshape(w.shape[0], c_in * k).T + b
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def np_conv1d_backward(x, w, dout, pad_left):
    n, c_in, length = x.shape
    c_out, _, k = w.shape
    xp = np.zeros((n, c_in, length + k - 1))
    xp[:, :, pad_left:pad_left + length] = x
    win = sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3).reshape(n * length, c_in * k)
    d2 = dout.transpose(0, 2, 1).reshape(n * length, c_out)
    dw = (d2.T @ win).reshape(c_out, c_in, k)
    db = d2.sum(axis=0)
    dwin = (d2 @ w.reshape(c_out, c_in * k)).reshape(n, length, c_in, k)
    dxp = np.zeros_like(xp)
    for t in range(k):
        dxp[:, :, t:t + length] += dwin[:, :, :, t].transpose(0, 2, 1)
    return dxp[:, :, pad_left:pad_left + length], dw, db


NUMPY = SimpleNamespace(
    name="numpy",
    shapley_from_table=np_shapley_from_table,
    prefix_masks=np_prefix_masks,
    permutation_marginals=np_permutation_marginals,
    scatter_marginal_grad=np_scatter_marginal_grad,
    concordance_counts=np_concordance_counts,
    conv1d_forward=np_conv1d_forward,
    conv1d_backward=np_conv1d_backward,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True, nogil=True)
    def nb_shapley_from_table(values, n_players, weights):
        phi = np.zeros(n_players)
        for s_mask in range(1 << n_players):
            size = 0
            m = s_mask
            while m:
                m &= m - 1
                size += 1
            v_s = values[s_mask]
            w = weights[size]
            for j in range(n_players):
                if not (s_mask >> j) & 1:
                    phi[j] += w * (values[s_mask | (1 << j)] - v_s)
        return phi

    @njit(cache=True, nogil=True)
    def nb_prefix_masks(perms):
        n_rows, n_players = perms.shape
        out = np.zeros((n_rows, n_players + 1, n_players), dtype=np.bool_)
        for r in range(n_rows):
            for k in range(1, n_players + 1):
                for t in range(n_players):
                    out[r, k, t] = out[r, k - 1, t]
                out[r, k, perms[r, k - 1]] = True
        return out

    @njit(cache=True, nogil=True)
    def nb_permutation_marginals(values, perms):
        n_rows, n_players = perms.shape
        out = np.empty((n_rows, n_players))
        for r in range(n_rows):
            for k in range(n_players):
                out[r, perms[r, k]] = values[r, k + 1] - values[r, k]
        return out

    @njit(cache=True, nogil=True)
    def nb_scatter_marginal_grad(dcontrib, perms):
        n_rows, n_players = perms.shape
        out = np.zeros((n_rows, n_players + 1))
        for r in range(n_rows):
            for k in range(n_players):
                d = dcontrib[r, perms[r, k]]
                out[r, k + 1] += d
                out[r, k] -= d
        return out

    @njit(cache=True, nogil=True)
    def nb_concordance_counts(pos_a, pos_b):
        n = pos_a.shape[0]
        conc = 0
        disc = 0
        for i in range(n):
            for j in range(i + 1, n):
                s = (pos_a[i] - pos_a[j]) * (pos_b[i] - pos_b[j])
                if s > 0:
                    conc += 1
                elif s < 0:
                    disc += 1
        return conc, disc

    @njit(cache=True, nogil=True)
    def nb_conv1d_forward(x, w, b, pad_left):
        n, c_in, length = x.shape
        c_out, _, k = w.shape
        out = np.empty((n, c_out, length))
        for s in range(n):
            for o in range(c_out):
                for t in range(length):
                    acc = b[o]
                    for c in range(c_in):
                        for q in range(k):
                            src = t + q - pad_left
                            if 0 <= src < length:
                                acc += w[o, c, q] * x[s, c, src]
                    out[s, o, t] = acc
        return out

    @njit(cache=True, nogil=True)
    def nb_conv1d_backward(x, w, dout, pad_left):
        n, c_in, length = x.shape
        c_out, _, k = w.shape
        dx = np.zeros((n, c_in, length))
        dw = np.zeros((c_out, c_in, k))
        db = np.zeros(c_out)
        for s in range(n):
            for o in range(c_out):
                for t in range(length):
                    g = dout[s, o, t]
                    db[o] += g
                    for c in range(c_in):
                        for q in range(k):
                            src = t + q - pad_left
                            if 0 <= src < length:
                                dw[o, c, q] += g * x[s, c, src]
                                dx[s, c, src] += g * w[o, c, q]
        return dx, dw, db

    def conv1d_forward(x, w, b, pad_left):
        return nb_conv1d_forward(np.ascontiguousarray(x), np.ascontiguousarray(w),
                                 np.ascontiguousarray(b), pad_left)

    def conv1d_backward(x, w, dout, pad_left):
        return nb_conv1d_backward(np.ascontiguousarray(x), np.ascontiguousarray(w),
                                  np.ascontiguousarray(dout), pad_left)

    def concordance_counts(pos_a, pos_b):
        c, d = nb_concordance_counts(np.asarray(pos_a, dtype=np.int64),
                                     np.asarray(pos_b, dtype=np.int64))
        return int(c), int(d)

    return SimpleNamespace(
        name="numba",
        shapley_from_table=lambda v, n, w: nb_shapley_from_table(
            np.ascontiguousarray(v, dtype=np.float64), n, np.ascontiguousarray(w, dtype=np.float64)),
        prefix_masks=lambda p: nb_prefix_masks(np.ascontiguousarray(p, dtype=np.int64)),
        permutation_marginals=lambda v, p: nb_permutation_marginals(
            np.ascontiguousarray(v, dtype=np.float64), np.ascontiguousarray(p, dtype=np.int64)),
        scatter_marginal_grad=lambda d, p: nb_scatter_marginal_grad(
            np.ascontiguousarray(d, dtype=np.float64), np.ascontiguousarray(p, dtype=np.int64)),
        concordance_counts=concordance_counts,
        conv1d_forward=conv1d_forward,
        conv1d_backward=conv1d_backward,
    )


try:
    NUMBA = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA = None

active = NUMPY if (NUMBA is None or _env_disabled()) else NUMBA


def backend_name():
    return active.name
