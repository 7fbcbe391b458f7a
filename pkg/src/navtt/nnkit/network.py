"""Sequential network container over nnkit layers."""

import numpy as np

from .layers import GRULayer


class Network:
    """Ordered stack of layers. Forward caches everything backward needs.

    ``forward`` is pure given (network, input); repeated calls return
    byte-identical outputs.
    """

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, mask=None):
        """Run all layers; returns (output, caches). The mask, if given,
        is consumed by GRU layers only."""
        caches = []
        for layer in self.layers:
            if isinstance(layer, GRULayer):
                x, cache = layer.forward(x, mask=mask)
            else:
                x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def predict(self, x, mask=None):
        return self.forward(x, mask=mask)[0]

    def backward(self, dout, caches):
        """Backpropagate dout; returns (dinput, grads) with grads keyed
        '<layer index>.<param name>'."""
        grads = {}
        dx = dout
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            dx, layer_grads = layer.backward(dx, caches[idx])
            for name, g in layer_grads.items():
                grads[f"{idx}.{name}"] = g
        return dx, grads

    def params(self):
        """Flat view of all parameters, keyed like backward()'s grads."""
        out = {}
        for idx, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                out[f"{idx}.{name}"] = value
        return out

    def set_params(self, flat):
        for key, value in flat.items():
            idx, name = key.split(".", 1)
            layer = self.layers[int(idx)]
            layer.params[name] = np.array(value, dtype=layer.params[name].dtype)

    def astype(self, dtype):
        for layer in self.layers:
            for name in layer.params:
                layer.params[name] = layer.params[name].astype(dtype)
        return self
