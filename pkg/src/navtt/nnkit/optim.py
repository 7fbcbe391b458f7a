"""Adam optimizer with bias correction."""

import numpy as np


class AdamState:
    """First/second moment accumulators for a named parameter set."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)


def adam_step(params, grads, state):
    """Update params in place from grads; advances state.t. Returns params."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for key, g in grads.items():
        p = params[key]
        if g.shape != p.shape:
            raise ValueError(
                f"grad shape {g.shape} != param shape {p.shape} for {key!r}"
            )
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / bias1
        vhat = v / bias2
        p -= state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)
    return params
