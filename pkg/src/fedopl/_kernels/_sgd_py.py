"""Pure-Python twin of the compiled SGD kernel.

Mirrors _sgd_cy.pyx operation for operation (same accumulation order, same
update order) so the two backends produce bit-identical trajectories;
Python floats are IEEE doubles, so matching the op order is sufficient.
Roughly two orders of magnitude slower; see benchmarks/sgd_kernel_bench.py.
"""

from __future__ import annotations

import numpy as np


def sgd_run(
    weights: np.ndarray,
    intercepts: np.ndarray,
    contexts: np.ndarray,
    costs: np.ndarray,
    order: np.ndarray,
    eta0: float,
    decay: float,
    t0: int,
) -> tuple[int, float]:
    d, q = weights.shape
    w = weights.tolist()
    b = intercepts.tolist()
    ctx = contexts.tolist()
    cost = costs.tolist()
    idx = order.tolist()
    sse = 0.0
    t = int(t0)
    for i in idx:
        lr = eta0 / (1.0 + decay * t)
        row = ctx[i]
        crow = cost[i]
        for a in range(d):
            base = a * q
            wa = w[a]
            pred = b[a]
            for j in range(q):
                pred = pred + wa[j] * row[base + j]
            g = pred - crow[a]
            sse += 0.5 * g * g
            gl = lr * g
            for j in range(q):
                wa[j] = wa[j] - gl * row[base + j]
            b[a] = b[a] - gl
        t += 1
    weights[:] = w
    intercepts[:] = b
    return t, sse
