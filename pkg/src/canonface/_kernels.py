"""Hot inner loops compiled with numba.

Only code whose numpy formulation is memory-bound lives here: the
patch-gradient scatter of the locally-connected backward pass, the fused
SGD momentum update, and the checkpoint checksum. Everything else in the
package is plain numpy.
"""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def col2im_add(g6, gxpad, u, v, k):
    """Scatter-add patch gradients into the padded input gradient.

    g6 is (U, V, N, P, k, k); gxpad is (N, P, H+2pad, W+2pad), written in
    place. Patch (uu, vv) covers gxpad rows uu..uu+k-1, cols vv..vv+k-1.
    """
    n_, p_ = gxpad.shape[0], gxpad.shape[1]
    for n in range(n_):
        for p in range(p_):
            for uu in range(u):
                for i in range(k):
                    row = gxpad[n, p, uu + i]
                    for vv in range(v):
                        for j in range(k):
                            row[vv + j] += g6[uu, vv, n, p, i, j]


@numba.njit(cache=True, fastmath=True)
def sgd_momentum(w, vel, g, mu, lr):
    """One fused momentum step over flat views.

    Dampened form: v = mu*v + (1-mu)*g; w -= lr*v. The velocity is an
    exponential average of gradients, so a constant gradient moves w at
    lr*g per step regardless of mu; the undampened form would amplify it
    by 1/(1-mu), which at mu=0.9 drives early summed-loss steps far past
    the activation scale.
    """
    for i in range(w.size):
        vi = mu * vel[i] + (1.0 - mu) * g[i]
        vel[i] = vi
        w[i] -= lr * vi


FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


@numba.njit(cache=True)
def _fnv1a64_jit(data, state):
    h = state
    for i in range(data.size):
        h = np.uint64(h ^ np.uint64(data[i]))
        h = np.uint64(h * _FNV_PRIME)
    return h


def fnv1a64(data: np.ndarray, state) -> np.uint64:
    """FNV-1a 64-bit hash of a uint8 array, continuing from ``state``.

    Start from FNV_OFFSET; feed consecutive chunks to hash a stream. The
    jit boundary boxes uint64 results as Python ints, which would re-type
    as float64 once past 2**63, so the state is coerced here.
    """
    return np.uint64(_fnv1a64_jit(data, np.uint64(state)))
