"""Compiled minibatch loop for the dense networks in :mod:`uwauth.nn`.

The networks trained here have a few dozen parameters, so explicit loops
compiled with numba beat vectorized numpy by a wide margin: numpy spends
nearly all of its time in per-call overhead at these sizes.

Layout rows (one per layer): weight offset, bias offset, fan_out, fan_in,
activation code, activation offset of the layer input, activation offset of
the layer output.
"""
import numpy as np
from numba import njit

RELU, SIGMOID, LINEAR = 0, 1, 2


@njit(cache=True)
def batch_gradient(params, lay, X, T, rows, acts, delta_a, delta_b, grad):
    """Average-MSE gradient over ``X[rows]`` written into ``grad``; returns the loss.

    Works layer by layer across the whole batch; ``acts`` is (batch, n_acts)
    and the two delta buffers are (batch, max width).
    """
    nb = rows.shape[0]
    n_layers = lay.shape[0]
    in_dim = lay[0, 3]
    for r in range(nb):
        k = rows[r]
        for i in range(in_dim):
            acts[r, i] = X[k, i]
    for p in range(n_layers):
        w_off, b_off, fo, fi, act, a_in, a_out = lay[p, 0], lay[p, 1], lay[p, 2], lay[p, 3], lay[p, 4], lay[p, 5], lay[p, 6]
        for j in range(fo):
            b = params[b_off + j]
            row = w_off + j * fi
            for r in range(nb):
                z = b
                for i in range(fi):
                    z += params[row + i] * acts[r, a_in + i]
                if act == RELU:
                    z = max(z, 0.0)
                elif act == SIGMOID:
                    if z >= 0.0:
                        z = 1.0 / (1.0 + np.exp(-z))
                    else:
                        e = np.exp(z)
                        z = e / (1.0 + e)
                acts[r, a_out + j] = z

    last = n_layers - 1
    out_off = lay[last, 6]
    out_dim = lay[last, 2]
    scale = 2.0 / (nb * out_dim)
    loss = 0.0
    for r in range(nb):
        k = rows[r]
        for j in range(out_dim):
            d = acts[r, out_off + j] - T[k, j]
            loss += d * d
            delta_a[r, j] = scale * d

    cur = delta_a
    nxt = delta_b
    for p in range(last, -1, -1):
        w_off, b_off, fo, fi, act, a_in, a_out = lay[p, 0], lay[p, 1], lay[p, 2], lay[p, 3], lay[p, 4], lay[p, 5], lay[p, 6]
        for j in range(fo):
            gb = 0.0
            for r in range(nb):
                a = acts[r, a_out + j]
                if act == RELU:
                    if a <= 0.0:
                        cur[r, j] = 0.0
                elif act == SIGMOID:
                    cur[r, j] *= a * (1.0 - a)
                gb += cur[r, j]
            grad[b_off + j] = gb
            row = w_off + j * fi
            for i in range(fi):
                s = 0.0
                for r in range(nb):
                    s += cur[r, j] * acts[r, a_in + i]
                grad[row + i] = s
        if p > 0:
            for r in range(nb):
                for i in range(fi):
                    s = 0.0
                    for j in range(fo):
                        s += params[w_off + j * fi + i] * cur[r, j]
                    nxt[r, i] = s
            tmp = cur
            cur = nxt
            nxt = tmp
    return loss / (nb * out_dim)


@njit(cache=True)
def dataset_loss(params, lay, X, T, acts):
    """Mean squared error of the network over all rows of ``X``."""
    n = X.shape[0]
    chunk = acts.shape[0]
    n_layers = lay.shape[0]
    in_dim = lay[0, 3]
    last = n_layers - 1
    out_off = lay[last, 6]
    out_dim = lay[last, 2]
    total = 0.0
    start = 0
    while start < n:
        nb = min(chunk, n - start)
        for r in range(nb):
            for i in range(in_dim):
                acts[r, i] = X[start + r, i]
        for p in range(n_layers):
            w_off, b_off, fo, fi, act, a_in, a_out = lay[p, 0], lay[p, 1], lay[p, 2], lay[p, 3], lay[p, 4], lay[p, 5], lay[p, 6]
            for j in range(fo):
                b = params[b_off + j]
                row = w_off + j * fi
                for r in range(nb):
                    z = b
                    for i in range(fi):
                        z += params[row + i] * acts[r, a_in + i]
                    if act == RELU:
                        z = max(z, 0.0)
                    elif act == SIGMOID:
                        if z >= 0.0:
                            z = 1.0 / (1.0 + np.exp(-z))
                        else:
                            e = np.exp(z)
                            z = e / (1.0 + e)
                    acts[r, a_out + j] = z
        for r in range(nb):
            for j in range(out_dim):
                d = acts[r, out_off + j] - T[start + r, j]
                total += d * d
        start += nb
    return total / (n * out_dim)


@njit(cache=True)
def run_epoch(params, gmask, lay, X, T, perm, batch_size, use_adam, lr, beta1, beta2, eps,
              m, v, step, acts, d_a, d_b, grad):
    """One pass over ``X`` in the order ``perm``.

    Returns ``(mean batch loss, optimizer step count)``; the loss is NaN if any
    batch produced a non-finite loss, in which case the epoch stops early.
    """
    n = perm.shape[0]
    size = params.shape[0]
    total = 0.0
    n_batches = 0
    start = 0
    while start < n:
        stop = min(start + batch_size, n)
        loss = batch_gradient(params, lay, X, T, perm[start:stop], acts, d_a, d_b, grad)
        if not np.isfinite(loss):
            return np.nan, step
        total += loss
        n_batches += 1
        step += 1
        if use_adam:
            c1 = 1.0 - beta1 ** step
            c2 = 1.0 - beta2 ** step
            lr_t = lr * np.sqrt(c2) / c1
            for q in range(size):
                g = grad[q] * gmask[q]
                m[q] = beta1 * m[q] + (1.0 - beta1) * g
                v[q] = beta2 * v[q] + (1.0 - beta2) * g * g
                params[q] -= lr_t * m[q] / (np.sqrt(v[q]) + eps)
        else:
            for q in range(size):
                params[q] -= lr * grad[q] * gmask[q]
        start = stop
    return total / n_batches, step


def layout(net):
    """Layout table for ``net`` plus the activation buffer size and max width."""
    codes = {"relu": RELU, "sigmoid": SIGMOID, "linear": LINEAR}
    rows = []
    pos = 0
    a_in = 0
    a_out = net.input_dim
    for (fo, fi), spec in zip(net.shapes, net.layers):
        rows.append((pos, pos + fo * fi, fo, fi, codes[spec.activation.value], a_in, a_out))
        pos += fo * fi + fo
        a_in = a_out
        a_out += fo
    width = max([net.input_dim] + [s.width for s in net.layers])
    return np.array(rows, dtype=np.int64), a_out, width
