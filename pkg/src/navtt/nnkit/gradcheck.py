"""Finite-difference validation of analytic gradients."""

import numpy as np

from .losses import bce_loss


def _network_loss(network, x, labels, mask=None):
    out, caches = network.forward(x, mask=mask)
    loss, dlogits = bce_loss(out.reshape(-1), np.broadcast_to(labels, out.reshape(-1).shape))
    return loss, dlogits.reshape(out.shape), caches


def finite_difference_grads(loss_fn, params, h=1e-4):
    """Central-difference gradient of loss_fn() wrt every entry of params.

    loss_fn takes no arguments and reads params by reference, so the
    perturbation is visible to it.
    """
    fd = {}
    for key, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
        fd[key] = g
    return fd


def grad_check(network, x, labels, h=1e-4, mask=None):
    """Max relative error between analytic and finite-difference gradients
    of the mean BCE loss over all network parameters."""
    loss, dlogits, caches = _network_loss(network, x, labels, mask=mask)
    _, analytic = network.backward(dlogits, caches)

    def loss_only():
        out, _ = network.forward(x, mask=mask)
        flat = out.reshape(-1)
        return bce_loss(flat, np.broadcast_to(labels, flat.shape))[0]

    fd = finite_difference_grads(loss_only, network.params(), h=h)
    worst = 0.0
    for key, a in analytic.items():
        n = fd[key]
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-6)
        err = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
        worst = max(worst, err)
    return worst
