"""Hand-derived reference computations shared by the trainer and acceptance tests.

The scalar network is x -> tanh(w1 x + b1) -> w2 h + b2 with squared error,
split one layer per stage over two stages. Gradients are written out by hand
so they do not share code with the package's backward pass.
"""

from __future__ import annotations

import math

import numpy as np

from nf1bsim.train import partition_model

LR = 0.3
XS = np.array([[0.3], [-0.8], [1.1], [0.25]])
TS = np.array([[0.5], [-0.2], [0.9], [0.0]])


def scalar_forward(p, x):
    w1, b1, w2, b2 = p
    h = math.tanh(w1 * x + b1)
    return h, w2 * h + b2


def scalar_grads(xs, ts, fwd_params, bwd_w2):
    """Mean squared error gradient (w1, b1, w2, b2) over the samples.

    Forward values come from ``fwd_params``; the delta reaching the first
    layer is carried back through ``bwd_w2``.
    """
    n = len(xs)
    g = [0.0, 0.0, 0.0, 0.0]
    for x, t in zip(xs, ts):
        h, y = scalar_forward(fwd_params, x)
        dy = 2.0 * (y - t) / n
        g[2] += dy * h
        g[3] += dy
        dz = dy * bwd_w2 * (1.0 - h * h)
        g[0] += dz * x
        g[1] += dz
    return g


def sgd(p, g, lr=LR):
    return tuple(a - lr * b for a, b in zip(p, g))


def flat_scalar(stages):
    (w1, b1), = stages[0].params()
    (w2, b2), = stages[1].params()
    return (w1[0, 0], b1[0], w2[0, 0], b2[0])


def scalar_model():
    stages = partition_model([1, 1, 1], 2, ["tanh", "linear"], seed=7, loss="mse")
    return stages, flat_scalar(stages)


def timeprest_w2_n2_m2(p0, x, t):
    # mini-batch 2 pins version 0 on both micro-batches, backpropagates through
    # version 1's weights and updates version 1
    p1 = sgd(p0, scalar_grads(x[:2], t[:2], p0, p0[2]))
    return sgd(p1, scalar_grads(x[2:4], t[2:4], p0, p1[2]))


def sequential_m2(p0, x, t):
    p1 = sgd(p0, scalar_grads(x[:2], t[:2], p0, p0[2]))
    return sgd(p1, scalar_grads(x[2:4], t[2:4], p1, p1[2]))


def pipedream_w2_m3(p0, x, t):
    # stashed versions 0, 0, 1 for mini-batches 1, 2, 3; updates land on the newest weights
    p1 = sgd(p0, scalar_grads(x[0:1], t[0:1], p0, p0[2]))
    p2 = sgd(p1, scalar_grads(x[1:2], t[1:2], p0, p0[2]))
    return sgd(p2, scalar_grads(x[2:3], t[2:3], p1, p1[2]))


def synchronous_m2_makespans(S=1.0, beta=2.0):
    """W=4, N=4, M=2 with no transfer cost, traced by hand.

    nF1B: the first 7 slots and slot 12 hold only S/4-sample forwards; the
    other 8 slots each hold a backward.  1F1B: 4 warm-up slots of S-sample
    forwards, then 6 slots each holding a backward.
    """
    return 8 * S / 4 + 8 * beta * S, 4 * S + 6 * beta * S
