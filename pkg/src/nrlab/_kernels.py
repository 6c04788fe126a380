"""Compiled inner loops for gradient-descent training.

The kernels operate on the neuron-major flat layout (a_1, w_1, a_2, w_2, ...)
and dispatch on an integer activation code so the hot loop stays free of
Python callbacks. Only the built-in activations have codes; user-registered
activations fall back to a numpy path in :mod:`nrlab.dynamics`.
"""

import math

import numpy as np
from numba import njit

ACT_CODES = {"tanh": 0, "softsign_square": 1}

# chunk exit statuses
RAN_ALL = 0
HIT_STOP = 1
DIVERGED = 2


@njit(cache=True, nogil=True)
def loss_kernel(theta, X, y, code):
    n, d_aug = X.shape
    blk = d_aug + 1
    m = theta.shape[0] // blk
    loss = 0.0
    for j in range(n):
        fj = 0.0
        for k in range(m):
            z = 0.0
            for t in range(d_aug):
                z += theta[k * blk + 1 + t] * X[j, t]
            if code == 0:
                s = math.tanh(z)
            else:
                s = z / (1.0 + z * z)
            fj += theta[k * blk] * s
        r = fj - y[j]
        loss += r * r
    return 0.5 * loss


@njit(cache=True, nogil=True)
def gd_chunk(theta, X, y, code, eta, max_steps, stop_loss):
    """Apply up to max_steps in-place GD updates.

    Returns (steps_done, status). On exit theta holds the state after
    steps_done updates and is guaranteed finite with finite loss; a step that
    would leave a non-finite state is rolled back and reported as DIVERGED.
    HIT_STOP means the *current* state already has loss <= stop_loss.
    """
    n, d_aug = X.shape
    blk = d_aug + 1
    m = theta.shape[0] // blk
    p = theta.shape[0]

    s = np.empty((n, m))
    sp = np.empty((n, m))
    res = np.empty(n)
    grad = np.empty(p)
    bak = np.empty(p)

    steps_done = 0
    for _ in range(max_steps):
        loss = 0.0
        for j in range(n):
            fj = 0.0
            for k in range(m):
                z = 0.0
                for t in range(d_aug):
                    z += theta[k * blk + 1 + t] * X[j, t]
                if code == 0:
                    e = math.tanh(z)
                    s[j, k] = e
                    sp[j, k] = 1.0 - e * e
                else:
                    u = 1.0 + z * z
                    s[j, k] = z / u
                    sp[j, k] = (1.0 - z * z) / (u * u)
                fj += theta[k * blk] * s[j, k]
            res[j] = fj - y[j]
            loss += res[j] * res[j]
        loss *= 0.5

        if not math.isfinite(loss):
            # roll back to the state before the previous update
            if steps_done > 0:
                for i in range(p):
                    theta[i] = bak[i]
                steps_done -= 1
            return steps_done, DIVERGED
        if loss <= stop_loss:
            return steps_done, HIT_STOP

        for i in range(p):
            grad[i] = 0.0
        for j in range(n):
            r = res[j]
            for k in range(m):
                grad[k * blk] += r * s[j, k]
                c = r * theta[k * blk] * sp[j, k]
                for t in range(d_aug):
                    grad[k * blk + 1 + t] += c * X[j, t]

        ok = True
        for i in range(p):
            bak[i] = theta[i]
            theta[i] = theta[i] - eta * grad[i]
            if not math.isfinite(theta[i]):
                ok = False
        if not ok:
            for i in range(p):
                theta[i] = bak[i]
            return steps_done, DIVERGED
        steps_done += 1

    # the last update was applied without a follow-up loss check; make sure
    # the exit state is not already past the finite range
    if steps_done > 0:
        final_loss = loss_kernel(theta, X, y, code)
        if not math.isfinite(final_loss):
            for i in range(p):
                theta[i] = bak[i]
            return steps_done - 1, DIVERGED
    return steps_done, RAN_ALL
