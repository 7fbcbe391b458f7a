"""Policy and value networks for the navigation agents.

Two families share one calling convention: the symbolic net consumes the
6-feature vector (rel_goal_angle, rel_goal_distance, position, mean depth);
the hybrid net additionally pushes the 32x32 depth buffer through a small
conv stack and concatenates its features with the symbolic branch.

Policy and value use separate networks of the same architecture (no shared
trunk), which keeps gradients independently checkable.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import nnkit
from ..navsim.env import DEPTH_SIZE, N_ACTIONS
from ..nnkit import Conv2D, Dense, Flatten, Network

N_SYMBOLIC_FEATURES = 6


def feature_scales(spec) -> np.ndarray:
    """Per-feature divisors that bring symbolic features to roughly [-1, 1]."""
    width = spec.width * spec.cell_size
    height = spec.height * spec.cell_size
    diag = float(np.hypot(width, height))
    elev = float(max(1.0, np.max(np.abs(spec.elevations)) or 1.0))
    return np.array([np.pi, diag, width, height, elev, 1.0], dtype=np.float64)


@dataclass
class PolicyNetSpec:
    """Architecture descriptor stored alongside checkpoint weights."""
    kind: str                                   # "symbolic" | "hybrid"
    hidden: tuple = (64, 64)
    conv_channels: int = 8
    conv_kernel: int = 8
    conv_stride: int = 4
    action_count: int = N_ACTIONS
    feature_scales: Optional[list] = field(default=None)

    def __post_init__(self):
        if self.kind not in ("symbolic", "hybrid"):
            raise ValueError(f"unknown net kind {self.kind!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def for_map(cls, spec, kind: str, **kwargs):
        return cls(kind=kind, feature_scales=feature_scales(spec).tolist(),
                   **kwargs)

    def to_meta(self) -> dict:
        return {
            "kind": self.kind,
            "hidden": list(self.hidden),
            "conv_channels": self.conv_channels,
            "conv_kernel": self.conv_kernel,
            "conv_stride": self.conv_stride,
            "action_count": self.action_count,
            "feature_scales": list(self.feature_scales or []),
        }

    @classmethod
    def from_meta(cls, meta: dict):
        return cls(
            kind=meta["kind"], hidden=tuple(meta["hidden"]),
            conv_channels=int(meta["conv_channels"]),
            conv_kernel=int(meta["conv_kernel"]),
            conv_stride=int(meta["conv_stride"]),
            action_count=int(meta["action_count"]),
            feature_scales=list(meta["feature_scales"]) or None,
        )


class SymbolicNet:
    """MLP over the normalized symbolic features."""

    def __init__(self, net_spec: PolicyNetSpec, n_out: int, rng,
                 dtype=np.float32):
        self.net_spec = net_spec
        scales = net_spec.feature_scales
        self.scales = np.asarray(scales if scales else np.ones(6), dtype=np.float64)
        sizes = (N_SYMBOLIC_FEATURES,) + net_spec.hidden
        layers = [Dense(a, b, activation="relu", rng=rng, dtype=dtype)
                  for a, b in zip(sizes, sizes[1:])]
        layers.append(Dense(sizes[-1], n_out, rng=rng, dtype=dtype))
        self.net = Network(layers)
        self.dtype = dtype

    def _inputs(self, batch):
        feats = np.asarray(batch["features"], dtype=np.float64)
        return (feats / self.scales).astype(self.dtype)

    def forward(self, batch):
        return self.net.forward(self._inputs(batch))

    def predict(self, batch):
        return self.forward(batch)[0]

    def backward(self, dout, caches):
        _, grads = self.net.backward(dout.astype(self.dtype), caches)
        return grads

    def params(self):
        return self.net.params()

    def set_params(self, flat):
        self.net.set_params(flat)


class HybridNet:
    """Conv stack over the depth buffer concatenated with the symbolic MLP
    input, then dense mixing layers. Input batch needs "features" (N, 6)
    and "depth" (N, 32, 32) or (N, 1, 32, 32)."""

    def __init__(self, net_spec: PolicyNetSpec, n_out: int, rng,
                 dtype=np.float32):
        self.net_spec = net_spec
        scales = net_spec.feature_scales
        self.scales = np.asarray(scales if scales else np.ones(6), dtype=np.float64)
        self.conv = Network([
            Conv2D(1, net_spec.conv_channels, kernel=net_spec.conv_kernel,
                   stride=net_spec.conv_stride, activation="relu",
                   rng=rng, dtype=dtype),
            Flatten(),
        ])
        side = (DEPTH_SIZE - net_spec.conv_kernel) // net_spec.conv_stride + 1
        self.conv_features = net_spec.conv_channels * side * side
        sizes = (self.conv_features + N_SYMBOLIC_FEATURES,) + net_spec.hidden
        layers = [Dense(a, b, activation="relu", rng=rng, dtype=dtype)
                  for a, b in zip(sizes, sizes[1:])]
        layers.append(Dense(sizes[-1], n_out, rng=rng, dtype=dtype))
        self.mix = Network(layers)
        self.dtype = dtype

    def forward(self, batch):
        feats = np.asarray(batch["features"], dtype=np.float64)
        feats = (feats / self.scales).astype(self.dtype)
        depth = np.asarray(batch["depth"], dtype=self.dtype)
        if depth.ndim == 3:
            depth = depth[:, None, :, :]
        z, conv_caches = self.conv.forward(depth)
        mixed = np.concatenate([z, feats], axis=1)
        out, mix_caches = self.mix.forward(mixed)
        return out, (conv_caches, mix_caches)

    def predict(self, batch):
        return self.forward(batch)[0]

    def backward(self, dout, caches):
        conv_caches, mix_caches = caches
        dmixed, mix_grads = self.mix.backward(dout.astype(self.dtype), mix_caches)
        dz = dmixed[:, :self.conv_features]
        _, conv_grads = self.conv.backward(dz, conv_caches)
        grads = {f"conv.{k}": v for k, v in conv_grads.items()}
        grads.update({f"mix.{k}": v for k, v in mix_grads.items()})
        return grads

    def params(self):
        out = {f"conv.{k}": v for k, v in self.conv.params().items()}
        out.update({f"mix.{k}": v for k, v in self.mix.params().items()})
        return out

    def set_params(self, flat):
        conv = {k[5:]: v for k, v in flat.items() if k.startswith("conv.")}
        mix = {k[4:]: v for k, v in flat.items() if k.startswith("mix.")}
        self.conv.set_params(conv)
        self.mix.set_params(mix)


def build_net(net_spec: PolicyNetSpec, n_out: int, rng, dtype=np.float32):
    cls = SymbolicNet if net_spec.kind == "symbolic" else HybridNet
    return cls(net_spec, n_out, rng, dtype=dtype)


class ActorCritic:
    """Paired policy and value networks plus checkpoint (de)serialization."""

    def __init__(self, net_spec: PolicyNetSpec, seed: int = 0,
                 dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.net_spec = net_spec
        self.policy = build_net(net_spec, net_spec.action_count, rng, dtype)
        self.value = build_net(net_spec, 1, rng, dtype)
        self.needs_depth = net_spec.kind == "hybrid"

    def action_logits(self, batch):
        return self.policy.predict(batch)

    def state_values(self, batch):
        return self.value.predict(batch)[:, 0]

    def save(self, path, meta=None):
        arrays = {f"policy/{k}": v for k, v in self.policy.params().items()}
        arrays.update({f"value/{k}": v for k, v in self.value.params().items()})
        meta = dict(meta or {})
        meta["net_spec"] = self.net_spec.to_meta()
        meta["checkpoint_kind"] = "actor_critic"
        nnkit.save_params(path, arrays, meta=meta)

    @classmethod
    def load(cls, path):
        arrays, meta = nnkit.load_params(path)
        if meta.get("checkpoint_kind") != "actor_critic":
            raise ValueError(f"{path} is not a policy checkpoint")
        net_spec = PolicyNetSpec.from_meta(meta["net_spec"])
        model = cls(net_spec)
        policy = {k[7:]: v for k, v in arrays.items() if k.startswith("policy/")}
        value = {k[6:]: v for k, v in arrays.items() if k.startswith("value/")}
        for loaded, net in ((policy, model.policy), (value, model.value)):
            current = net.params()
            if set(loaded) != set(current) or any(
                    loaded[k].shape != current[k].shape for k in current):
                raise ValueError(
                    f"checkpoint {path} does not match net spec {net_spec.kind!r}")
        model.policy.set_params(policy)
        model.value.set_params(value)
        return model, meta
