"""Layer implementations with hand-written forward/backward passes.

Layer protocol: ``forward(x) -> (y, cache)`` and
``backward(dy, cache) -> (dx, grads)`` where ``grads`` has the same keys as
``layer.params``. Parameters live in ``layer.params`` (name -> ndarray) and
are updated in place by the optimizer.
"""

import numpy as np


class ShapeError(ValueError):
    """Input shape incompatible with a layer; message names both shapes."""


def _uniform_fan_in(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def relu(x):
    return np.maximum(x, 0.0)


def _apply_activation(name, z):
    if name == "linear":
        return z
    if name == "relu":
        return relu(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.clip(z, -36.0, 36.0)))
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, z, y, dy):
    # y is the cached activation output for z
    if name == "linear":
        return dy
    if name == "relu":
        return dy * (z > 0.0)
    if name == "tanh":
        return dy * (1.0 - y * y)
    if name == "sigmoid":
        return dy * y * (1.0 - y)
    raise ValueError(f"unknown activation {name!r}")


class Dense:
    """Fully connected layer: y = act(x @ W + b)."""

    def __init__(self, n_in, n_out, activation="linear", rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.activation = activation
        self.params = {
            "W": _uniform_fan_in(rng, n_in, (n_in, n_out), dtype),
            "b": np.zeros(n_out, dtype=dtype),
        }

    def forward(self, x):
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(
                f"Dense expects input shape (N, {self.n_in}), got {x.shape}"
            )
        z = x @ self.params["W"] + self.params["b"]
        y = _apply_activation(self.activation, z)
        return y, (x, z, y)

    def backward(self, dy, cache):
        x, z, y = cache
        dz = _activation_grad(self.activation, z, y, dy)
        grads = {"W": x.T @ dz, "b": dz.sum(axis=0)}
        dx = dz @ self.params["W"].T
        return dx, grads


class Flatten:
    """Collapse all non-batch dimensions."""

    params: dict = {}

    def forward(self, x):
        x = np.asarray(x)
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), {}


class FourierFeatures:
    """Fixed sinusoidal expansion of the trailing axis.

    Maps (..., D) to (..., D + 2*D*octaves): the input followed by
    sin(2^k pi x) and cos(2^k pi x) for k = 0..octaves-1. Low-dimensional
    coordinates (positions in [0,1]) otherwise starve gradient descent of
    high-frequency structure; the octave basis makes fine spatial decision
    boundaries learnable by the dense layers above. No parameters.
    """

    params: dict = {}

    def __init__(self, n_in, octaves=6):
        if octaves < 1:
            raise ValueError(f"octaves must be >= 1, got {octaves}")
        self.n_in = int(n_in)
        self.octaves = int(octaves)
        self.n_out = self.n_in * (1 + 2 * self.octaves)

    def forward(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.n_in:
            raise ShapeError(
                f"FourierFeatures expects trailing dim {self.n_in}, "
                f"got {x.shape}")
        pieces = [x]
        for k in range(self.octaves):
            w = (2.0 ** k) * np.pi
            pieces.append(np.sin(w * x))
            pieces.append(np.cos(w * x))
        return np.concatenate(pieces, axis=-1), x

    def backward(self, dy, cache):
        x = cache
        d = self.n_in
        dx = dy[..., :d].copy()
        for k in range(self.octaves):
            w = (2.0 ** k) * np.pi
            lo = d * (1 + 2 * k)
            dx += dy[..., lo:lo + d] * w * np.cos(w * x)
            dx -= dy[..., lo + d:lo + 2 * d] * w * np.sin(w * x)
        return dx, {}


def _im2col(x, k, stride):
    # x: (N, C, H, W) -> columns (N, Hout, Wout, C*k*k), valid padding
    n, c, h, w = x.shape
    hout = (h - k) // stride + 1
    wout = (w - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, hout, wout, k, k),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, hout, wout, c * k * k)
    return cols, hout, wout


class Conv2D:
    """2D convolution (valid padding) via im2col, optional activation."""

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, activation="linear",
                 rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.activation = activation
        fan_in = in_ch * kernel * kernel
        self.params = {
            "W": _uniform_fan_in(rng, fan_in, (fan_in, out_ch), dtype),
            "b": np.zeros(out_ch, dtype=dtype),
        }

    def forward(self, x):
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(
                f"Conv2D expects input shape (N, {self.in_ch}, H, W), got {x.shape}"
            )
        if x.shape[2] < self.kernel or x.shape[3] < self.kernel:
            raise ShapeError(
                f"Conv2D kernel {self.kernel}x{self.kernel} larger than input {x.shape}"
            )
        cols, hout, wout = _im2col(x, self.kernel, self.stride)
        z = cols @ self.params["W"] + self.params["b"]  # (N, Hout, Wout, out_ch)
        z = z.transpose(0, 3, 1, 2)
        y = _apply_activation(self.activation, z)
        return y, (x.shape, cols, z, y)

    def backward(self, dy, cache):
        x_shape, cols, z, y = cache
        n, _, h, w = x_shape
        k, s = self.kernel, self.stride
        dz = _activation_grad(self.activation, z, y, dy)
        dz_cols = dz.transpose(0, 2, 3, 1)  # (N, Hout, Wout, out_ch)
        flat_cols = cols.reshape(-1, cols.shape[-1])
        flat_dz = dz_cols.reshape(-1, self.out_ch)
        grads = {"W": flat_cols.T @ flat_dz, "b": flat_dz.sum(axis=0)}
        dcols = flat_dz @ self.params["W"].T
        dcols = dcols.reshape(n, dz.shape[2], dz.shape[3], self.in_ch, k, k)
        dx = np.zeros(x_shape, dtype=dcols.dtype)
        # scatter-add each kernel offset back onto the input grid
        hout, wout = dz.shape[2], dz.shape[3]
        for di in range(k):
            for dj in range(k):
                dx[:, :, di:di + hout * s:s, dj:dj + wout * s:s] += (
                    dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
                )
        return dx, grads


class MaxPool2D:
    """Max pooling with square window, stride = window (input cropped to fit)."""

    params: dict = {}

    def __init__(self, size=2):
        self.size = int(size)

    def forward(self, x):
        x = np.asarray(x)
        if x.ndim != 4:
            raise ShapeError(f"MaxPool2D expects (N, C, H, W), got {x.shape}")
        n, c, h, w = x.shape
        s = self.size
        hc, wc = (h // s) * s, (w // s) * s
        xc = x[:, :, :hc, :wc]
        win = xc.reshape(n, c, hc // s, s, wc // s, s)
        flat = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hc // s, wc // s, s * s)
        amax = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, amax[..., None], axis=-1)[..., 0]
        return y, (x.shape, amax)

    def backward(self, dy, cache):
        x_shape, amax = cache
        n, c, h, w = x_shape
        s = self.size
        hp, wp = amax.shape[2], amax.shape[3]
        dflat = np.zeros((n, c, hp, wp, s * s), dtype=dy.dtype)
        np.put_along_axis(dflat, amax[..., None], dy[..., None], axis=-1)
        dxc = dflat.reshape(n, c, hp, wp, s, s).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, :hp * s, :wp * s] = dxc.reshape(n, c, hp * s, wp * s)
        return dx, {}


def gru_cell_forward(params, x, h):
    """One GRU step.

    Gates follow the standard formulation: update gate z, reset gate r,
    candidate state computed through tanh, new state z*h + (1-z)*htilde.
    Returns (h_new, cache).
    """
    z = _apply_activation("sigmoid", x @ params["Wz"] + h @ params["Uz"] + params["bz"])
    r = _apply_activation("sigmoid", x @ params["Wr"] + h @ params["Ur"] + params["br"])
    a = x @ params["Wh"] + (r * h) @ params["Uh"] + params["bh"]
    htilde = np.tanh(a)
    h_new = z * h + (1.0 - z) * htilde
    return h_new, (x, h, z, r, htilde)


def gru_cell_backward(params, dh_new, cache):
    x, h, z, r, htilde = cache
    dz = dh_new * (h - htilde)
    dhtilde = dh_new * (1.0 - z)
    dh = dh_new * z
    da = dhtilde * (1.0 - htilde * htilde)
    drh = da @ params["Uh"].T
    dr = drh * h
    dh = dh + drh * r
    dsz = dz * z * (1.0 - z)
    dsr = dr * r * (1.0 - r)
    grads = {
        "Wz": x.T @ dsz, "Uz": h.T @ dsz, "bz": dsz.sum(axis=0),
        "Wr": x.T @ dsr, "Ur": h.T @ dsr, "br": dsr.sum(axis=0),
        "Wh": x.T @ da, "Uh": (r * h).T @ da, "bh": da.sum(axis=0),
    }
    dh = dh + dsz @ params["Uz"].T + dsr @ params["Ur"].T
    dx = dsz @ params["Wz"].T + dsr @ params["Wr"].T + da @ params["Wh"].T
    return dx, dh, grads


class GRULayer:
    """GRU unrolled over a (N, T, F) sequence; outputs the final hidden state.

    An optional (N, T) mask freezes the hidden state where mask == 0, so
    padded steps contribute nothing.
    """

    def __init__(self, n_in, n_hidden, rng=None, dtype=np.float64):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_in = int(n_in)
        self.n_hidden = int(n_hidden)
        self.params = {}
        for gate in ("z", "r", "h"):
            self.params["W" + gate] = _uniform_fan_in(rng, n_in, (n_in, n_hidden), dtype)
            self.params["U" + gate] = _uniform_fan_in(rng, n_hidden, (n_hidden, n_hidden), dtype)
            self.params["b" + gate] = np.zeros(n_hidden, dtype=dtype)

    def forward(self, x, mask=None):
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeError(
                f"GRULayer expects input shape (N, T, {self.n_in}), got {x.shape}"
            )
        n, t, _ = x.shape
        h = np.zeros((n, self.n_hidden), dtype=x.dtype)
        caches = []
        for step in range(t):
            h_next, cache = gru_cell_forward(self.params, x[:, step, :], h)
            if mask is not None:
                m = mask[:, step][:, None]
                h_next = m * h_next + (1.0 - m) * h
            caches.append(cache)
            h = h_next
        return h, (x.shape, mask, caches)

    def backward(self, dh, cache):
        x_shape, mask, caches = cache
        n, t, _ = x_shape
        dx = np.zeros(x_shape, dtype=dh.dtype)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        for step in range(t - 1, -1, -1):
            if mask is not None:
                m = mask[:, step][:, None]
                dh_gate = dh * m
                dh_skip = dh * (1.0 - m)
            else:
                dh_gate, dh_skip = dh, 0.0
            dx_t, dh_prev, g = gru_cell_backward(self.params, dh_gate, caches[step])
            dx[:, step, :] = dx_t
            for k in grads:
                grads[k] += g[k]
            dh = dh_prev + dh_skip
        return dx, grads
