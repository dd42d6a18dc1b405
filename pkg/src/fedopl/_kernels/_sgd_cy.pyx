# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled sequential-SGD kernel for per-action cost regression.

Operation order (intercept first in the prediction sum, left-to-right over
the feature block, half-squared loss accumulated before the update) is the
contract shared with the pure-Python twin: both backends must produce
bit-identical results.
"""


def sgd_run(double[:, ::1] weights, double[::1] intercepts,
            const double[:, ::1] contexts, const double[:, ::1] costs,
            const long long[::1] order, double eta0, double decay, long long t0):
    """Run one SGD step per entry of ``order`` (a stream of sample indices),
    updating ``weights``/``intercepts`` in place.

    Returns (final step count, accumulated half-squared prediction loss).
    """
    cdef Py_ssize_t d = weights.shape[0]
    cdef Py_ssize_t q = weights.shape[1]
    cdef Py_ssize_t m = order.shape[0]
    cdef Py_ssize_t s, i, a, j, base
    cdef double lr, pred, g, gl
    cdef double sse = 0.0
    cdef long long t = t0
    for s in range(m):
        i = order[s]
        lr = eta0 / (1.0 + decay * t)
        for a in range(d):
            base = a * q
            pred = intercepts[a]
            for j in range(q):
                pred = pred + weights[a, j] * contexts[i, base + j]
            g = pred - costs[i, a]
            sse += 0.5 * g * g
            gl = lr * g
            for j in range(q):
                weights[a, j] = weights[a, j] - gl * contexts[i, base + j]
            intercepts[a] = intercepts[a] - gl
        t += 1
    return t, sse
