"""Pure-numpy implementations of the per-iteration arithmetic kernels.

Every reduction accumulates strictly left to right (``np.cumsum``), which is
the same order the compiled kernels use, so both backends agree bit for bit.
"""

import numpy as np


def seq_sum(a):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.cumsum(a.ravel())[-1])


def norm(v):
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(seq_sum(v * v)))


def matvec(A, v):
    """``A @ v`` with sequential accumulation over the columns of ``A``."""
    A = np.asarray(A, dtype=float)
    v = np.asarray(v, dtype=float)
    if A.shape[1] == 0:
        return np.zeros(A.shape[0])
    return np.cumsum(A * v[None, :], axis=1)[:, -1].copy()


def rmatvec(A, v):
    """``A.T @ v`` with sequential accumulation over the rows of ``A``."""
    A = np.asarray(A, dtype=float)
    v = np.asarray(v, dtype=float)
    if A.shape[0] == 0:
        return np.zeros(A.shape[1])
    return np.cumsum(A * v[:, None], axis=0)[-1].copy()


def chain_product(jacobians):
    """Return ``J_T J_{T-1} ... J_1`` for ``jacobians = [J_1, ..., J_T]``.

    ``J_1`` has a single column, so the product is a vector of length d_T.
    """
    v = np.array(jacobians[0][:, 0], dtype=float)
    for J in jacobians[1:]:
        v = matvec(J, v)
    return v


def batch_mean(rows):
    rows = np.asarray(rows, dtype=float)
    return np.cumsum(rows, axis=0)[-1] / rows.shape[0]


def moving_average(old, new, tau):
    return (1.0 - tau) * old + tau * new


def nested_average(ws, gbars, tau):
    return [moving_average(w, g, tau) for w, g in zip(ws, gbars)]


def linearized_average(ws, gs, js, delta_top, tau):
    """Linearized moving average, levels processed from T down to 1.

    ``delta_top`` is the change of the outermost argument (x' - x). Returns
    the new estimates in ascending level order.
    """
    T = len(ws)
    out = [None] * T
    delta = np.asarray(delta_top, dtype=float)
    for i in range(T - 1, -1, -1):
        new = (1.0 - tau) * ws[i] + tau * gs[i] + rmatvec(js[i], delta)
        delta = new - ws[i]
        out[i] = new
    return out


def project_box(p, lower, upper):
    return np.minimum(np.maximum(p, lower), upper)


def project_ball(p, center, radius):
    d = p - center
    n = norm(d)
    if n <= radius:
        return np.array(p, dtype=float)
    return center + d * (radius / n)
