"""Pure-NumPy kernels for the operational correlation and its adjoint.

This is the fallback backend; the compiled extension in ``_kernels.pyx``
implements the same contract and must stay numerically in lock-step
(cross-checked by the test suite).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..operators import POOL_SUM, nodal_eval, nodal_grad_w, nodal_grad_y

NAME = "python"


def pair_forward(w, ypad, nodal, pool, consts):
    """Operational correlation of one (kernel, padded input map) pair.

    For every output pixel the kernel-window nodal terms are pooled.  Returns
    ``(out, argmed)`` where ``argmed`` is None for sum pools and otherwise the
    int32 map of selected tap indices (row-major within the window); the
    median is the lower middle of the sorted window, ties resolving to the
    smallest tap index.
    """
    kx, ky = w.shape
    H = ypad.shape[0] - kx + 1
    W = ypad.shape[1] - ky + 1
    win = sliding_window_view(ypad, (kx, ky))  # (H, W, kx, ky)
    terms = nodal_eval(nodal, w[None, None], win, consts)
    flat = np.ascontiguousarray(terms).reshape(H, W, kx * ky)
    if pool == POOL_SUM:
        return flat.sum(axis=-1), None
    q = (kx * ky - 1) // 2
    value = np.sort(flat, axis=-1)[..., q]
    argmed = np.argmax(flat == value[..., None], axis=-1).astype(np.int32)
    return value, argmed


def pair_backward(w, ypad, dx, argmed, nodal, pool, consts, need_input_grad=True):
    """Adjoint of :func:`pair_forward`.

    Returns ``(dw, dypad)``: the kernel gradient and the gradient with
    respect to the padded input map (the caller crops the padding).  Median
    pools route each pixel's delta through the selected tap only.
    """
    kx, ky = w.shape
    H, W = dx.shape
    win = sliding_window_view(ypad, (kx, ky))
    if pool == POOL_SUM:
        coef = dx[..., None, None]
    else:
        mask = argmed[..., None] == np.arange(kx * ky, dtype=np.int32)
        coef = (dx[..., None] * mask).reshape(H, W, kx, ky)
    gw = nodal_grad_w(nodal, w[None, None], win, consts)
    dw = (coef * gw).sum(axis=(0, 1))
    dypad = np.zeros_like(ypad)
    if need_input_grad:
        cg = np.broadcast_to(
            coef * nodal_grad_y(nodal, w[None, None], win, consts), (H, W, kx, ky)
        )
        for r in range(kx):
            for t in range(ky):
                dypad[r:r + H, t:t + W] += cg[:, :, r, t]
    return dw, dypad
