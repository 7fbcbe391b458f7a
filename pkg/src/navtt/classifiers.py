"""The six ANTT models: proxy-label training, trajectory-level
aggregation, and generator-grouped cross-validation.

Model kinds pair an input space with an encoder family:

    SYM-FF   symbolic positions, per-step feedforward
    SYM-GRU  symbolic positions, recurrent over windows
    VIS-FF   rendered frames, per-frame conv + dense
    VIS-GRU  rendered frames, conv features + recurrent
    TD-CNN   top-down path raster, whole-image conv
    BC-CNN   bar-code image, whole-image conv

Encodings arrive raw (see encoders); every normalization and resize is a
classifier-side transform so datasets stay bit-exact. Proxy labels stand
in for human judgments: human = 1, agent = 0.
"""

import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
from scipy import ndimage

from .encoders import encode_barcode, encode_topdown, render_frames
from .nnkit.layers import (Conv2D, Dense, Flatten, FourierFeatures, GRULayer,
                           MaxPool2D)
from .nnkit.losses import bce_loss, sigmoid
from .nnkit.network import Network
from .nnkit.optim import AdamState, adam_step
from .nnkit.serialize import load_params, save_params

MODEL_KINDS = ("SYM-FF", "SYM-GRU", "VIS-FF", "VIS-GRU", "TD-CNN", "BC-CNN")

INPUT_SPACE = {
    "SYM-FF": "symbolic", "SYM-GRU": "symbolic",
    "VIS-FF": "visual", "VIS-GRU": "visual",
    "TD-CNN": "topdown", "BC-CNN": "barcode",
}

# classifier-boundary transforms (encoders stay raw)
CNN_INPUT_SIZE = 128        # TD/BC images resized to 128x128
VIS_DOWNSAMPLE = 4          # 320x200 frames block-averaged to 80x50
VIS_HEIGHT = 200 // VIS_DOWNSAMPLE
VIS_WIDTH = 320 // VIS_DOWNSAMPLE

_SEED_TAG = 0x414e5454


class ClassifierError(ValueError):
    pass


# --------------------------------------------------------------- transforms


def bilinear_resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resample to (out_h, out_w), float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ClassifierError(f"expected 2D image, got shape {img.shape}")
    h, w = img.shape
    rows = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    grid = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(img, grid, order=1, mode="nearest")


def downsample_frames(frames, factor: int = VIS_DOWNSAMPLE) -> np.ndarray:
    """Block-average (T, H, W) frames by an integer factor; uint8 out."""
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise ClassifierError(f"expected (T, H, W) frames, got {frames.shape}")
    t, h, w = frames.shape
    if h % factor or w % factor:
        raise ClassifierError(f"frame size {h}x{w} not divisible by {factor}")
    blocks = frames.reshape(t, h // factor, factor, w // factor, factor)
    means = blocks.astype(np.float64).mean(axis=(2, 4))
    return np.floor(means + 0.5).clip(0, 255).astype(np.uint8)


def normalize_positions(positions, bounds) -> np.ndarray:
    """Map world x, y onto [0, 1] by the map rectangle; z passes through
    (the built-in worlds are flat, so z carries no scale of its own)."""
    pos = np.asarray(positions, dtype=np.float64)
    x0, y0, x1, y1 = bounds
    out = pos.copy()
    out[..., 0] = (pos[..., 0] - x0) / (x1 - x0)
    out[..., 1] = (pos[..., 1] - y0) / (y1 - y0)
    return out


# ------------------------------------------------------------------ dataset


@dataclass
class DatasetItem:
    trajectory_id: str
    label: int                  # 1 human, 0 agent
    source: str
    generator_id: str
    payload: np.ndarray


@dataclass
class ClassifierDataset:
    input_space: str
    items: List[DatasetItem]
    bounds: tuple               # world rectangle for symbolic normalization

    def __len__(self):
        return len(self.items)

    def labels(self):
        return np.array([it.label for it in self.items], dtype=np.float64)

    def generator_ids(self):
        return {it.generator_id for it in self.items}

    def subset(self, indices):
        return ClassifierDataset(self.input_space,
                                 [self.items[i] for i in indices], self.bounds)

    def shuffle_labels(self, seed: int):
        """Label-permuted copy (for no-signal baselines)."""
        rng = np.random.default_rng(seed)
        labels = [it.label for it in self.items]
        perm = rng.permutation(len(labels))
        items = [replace(it, label=labels[perm[i]])
                 for i, it in enumerate(self.items)]
        return ClassifierDataset(self.input_space, items, self.bounds)


def build_dataset(space: str, trajectories, spec, frames: Optional[dict] = None,
                  frame_stride: int = 1) -> ClassifierDataset:
    """Encode trajectories for one input space; labels from source.

    frames maps trajectory id -> (T, 200, 320) uint8 for the visual and
    bar-code spaces; anything missing is rendered on the fly (slow).
    """
    if space in INPUT_SPACE:
        space = INPUT_SPACE[space]
    if space not in ("symbolic", "visual", "topdown", "barcode"):
        raise ClassifierError(f"unknown input space {space!r}")
    frames = frames or {}
    items = []
    for traj in trajectories:
        if space == "symbolic":
            payload = traj.positions()
        elif space == "topdown":
            payload = encode_topdown(traj, spec.bounds)
        else:
            raw = frames.get(traj.id)
            if raw is None:
                raw = render_frames(traj, spec, stride=frame_stride)
            if space == "visual":
                payload = downsample_frames(raw)
            else:
                payload = encode_barcode(raw)
        items.append(DatasetItem(
            trajectory_id=traj.id,
            label=1 if traj.source == "human" else 0,
            source=traj.source, generator_id=traj.generator_id,
            payload=payload))
    return ClassifierDataset(space, items, tuple(spec.bounds))


def assert_disjoint_generators(train_like: ClassifierDataset,
                               test: ClassifierDataset):
    """Leakage guard between a training pool and held-out data."""
    overlap = train_like.generator_ids() & test.generator_ids()
    if overlap:
        raise ClassifierError(
            f"generators appear on both sides of the split: {sorted(overlap)}")


def split_by_generator(dataset: ClassifierDataset, val_generators=None,
                       val_fraction: float = 0.25, seed: int = 0):
    """(train, val) datasets with disjoint generator sets, stratified by
    source. Explicit val_generators wins over the sampled fraction."""
    by_gen: Dict[str, list] = {}
    source_of = {}
    for i, it in enumerate(dataset.items):
        by_gen.setdefault(it.generator_id, []).append(i)
        source_of[it.generator_id] = it.source
    if val_generators is None:
        rng = np.random.default_rng(seed)
        val_generators = set()
        by_source: Dict[str, list] = {}
        for g in sorted(by_gen):
            by_source.setdefault(source_of[g], []).append(g)
        for source in sorted(by_source):
            gens = by_source[source]
            n_val = max(1, int(round(len(gens) * val_fraction)))
            if n_val >= len(gens):
                raise ClassifierError(
                    f"source {source!r} has too few generators to hold "
                    f"out a validation set")
            picks = rng.permutation(len(gens))[:n_val]
            val_generators.update(gens[p] for p in picks)
    val_generators = set(val_generators)
    train_idx = [i for i, it in enumerate(dataset.items)
                 if it.generator_id not in val_generators]
    val_idx = [i for i, it in enumerate(dataset.items)
               if it.generator_id in val_generators]
    if not train_idx or not val_idx:
        raise ClassifierError("generator split left an empty train or val set")
    return dataset.subset(train_idx), dataset.subset(val_idx)


# -------------------------------------------------------------- hyperparams


@dataclass
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    patience: int = 6
    min_delta: float = 1e-4
    hidden: int = 64
    window: int = 32            # GRU subsequence length
    feature_dim: int = 32       # VIS-GRU per-frame feature size
    octaves: int = 6            # SYM positional encoding depth, 0 disables
    steps_per_epoch: Optional[int] = None

    def validate(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ClassifierError(f"invalid hyperparameters: {self}")
        if self.window < 1 or self.hidden < 1 or self.feature_dim < 1:
            raise ClassifierError(f"invalid hyperparameters: {self}")
        if self.octaves < 0:
            raise ClassifierError(f"invalid hyperparameters: {self}")
        return self

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "epochs": self.epochs, "patience": self.patience,
            "min_delta": self.min_delta, "hidden": self.hidden,
            "window": self.window, "feature_dim": self.feature_dim,
            "octaves": self.octaves,
            "steps_per_epoch": self.steps_per_epoch,
        }

    @classmethod
    def from_json(cls, blob: dict):
        return cls(**blob).validate()


# ------------------------------------------------------------------- models


def _conv_out(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


class ClassifierModel:
    """One ANTT model: named sub-networks plus preprocessing metadata.

    forward consumes a prepared batch (see _UnitView) and yields one logit
    per sample; backward mirrors it exactly.
    """

    def __init__(self, kind: str, hyperparams: Hyperparams, bounds,
                 nets: Dict[str, Network]):
        self.kind = kind
        self.hyperparams = hyperparams
        self.bounds = tuple(bounds)
        self.nets = nets

    @property
    def input_space(self):
        return INPUT_SPACE[self.kind]

    def forward(self, x, mask=None):
        if self.kind == "VIS-GRU":
            n, t = x.shape[0], x.shape[1]
            flat = x.reshape(n * t, 1, x.shape[2], x.shape[3])
            feats, frame_cache = self.nets["frame"].forward(flat)
            seq = feats.reshape(n, t, -1)
            logits, seq_cache = self.nets["seq"].forward(seq, mask=mask)
            return logits[:, 0], (frame_cache, seq_cache, (n, t))
        logits, cache = self.nets["net"].forward(x, mask=mask)
        return logits[:, 0], cache

    def backward(self, dlogits, cache):
        dout = np.asarray(dlogits, dtype=np.float64)[:, None]
        if self.kind == "VIS-GRU":
            frame_cache, seq_cache, (n, t) = cache
            dseq, seq_grads = self.nets["seq"].backward(dout, seq_cache)
            dfeats = dseq.reshape(n * t, -1)
            _, frame_grads = self.nets["frame"].backward(dfeats, frame_cache)
            grads = {f"seq.{k}": v for k, v in seq_grads.items()}
            grads.update({f"frame.{k}": v for k, v in frame_grads.items()})
            return grads
        _, net_grads = self.nets["net"].backward(dout, cache)
        return {f"net.{k}": v for k, v in net_grads.items()}

    def predict_logits(self, x, mask=None):
        return self.forward(x, mask=mask)[0]

    def params(self) -> dict:
        out = {}
        for name, net in self.nets.items():
            for key, value in net.params().items():
                out[f"{name}.{key}"] = value
        return out

    def set_params(self, flat: dict):
        for name, net in self.nets.items():
            prefix = f"{name}."
            sub = {k[len(prefix):]: v for k, v in flat.items()
                   if k.startswith(prefix)}
            net.set_params(sub)

    def save(self, path):
        meta = {
            "checkpoint_kind": "antt_classifier",
            "model_kind": self.kind,
            "hyperparams": self.hyperparams.to_json(),
            "bounds": list(self.bounds),
        }
        save_params(path, self.params(), meta=meta)

    @classmethod
    def load(cls, path):
        arrays, meta = load_params(path)
        if meta.get("checkpoint_kind") != "antt_classifier":
            raise ClassifierError(f"{path} is not a classifier checkpoint")
        model = build_model(meta["model_kind"],
                            Hyperparams.from_json(meta["hyperparams"]),
                            meta["bounds"], seed=0)
        want = model.params()
        if set(want) != set(arrays):
            raise ClassifierError("checkpoint keys do not match model kind")
        for key, value in arrays.items():
            if want[key].shape != value.shape:
                raise ClassifierError(
                    f"checkpoint array {key!r} has shape {value.shape}, "
                    f"model expects {want[key].shape}")
        model.set_params(arrays)
        return model


def build_model(kind: str, hyperparams: Optional[Hyperparams] = None,
                bounds=(0.0, 0.0, 1.0, 1.0), seed: int = 0) -> ClassifierModel:
    if kind not in MODEL_KINDS:
        raise ClassifierError(f"unknown model kind {kind!r}")
    hp = (hyperparams or Hyperparams()).validate()
    rng = np.random.default_rng([seed, _SEED_TAG])
    h = hp.hidden
    if kind == "SYM-FF":
        front = [FourierFeatures(3, hp.octaves)] if hp.octaves else []
        width = front[0].n_out if front else 3
        nets = {"net": Network(front + [
            Dense(width, h, activation="relu", rng=rng),
            Dense(h, h, activation="relu", rng=rng),
            Dense(h, 1, rng=rng),
        ])}
    elif kind == "SYM-GRU":
        front = [FourierFeatures(3, hp.octaves)] if hp.octaves else []
        width = front[0].n_out if front else 3
        nets = {"net": Network(front + [
            GRULayer(width, h, rng=rng),
            Dense(h, 1, rng=rng),
        ])}
    elif kind in ("VIS-FF", "VIS-GRU"):
        h1 = _conv_out(VIS_HEIGHT, 5, 2)
        w1 = _conv_out(VIS_WIDTH, 5, 2)
        h2 = _conv_out(h1, 5, 2)
        w2 = _conv_out(w1, 5, 2)
        flat = 16 * h2 * w2
        conv = [
            Conv2D(1, 8, kernel=5, stride=2, activation="relu", rng=rng),
            Conv2D(8, 16, kernel=5, stride=2, activation="relu", rng=rng),
            Flatten(),
        ]
        if kind == "VIS-FF":
            nets = {"net": Network(conv + [
                Dense(flat, h, activation="relu", rng=rng),
                Dense(h, 1, rng=rng),
            ])}
        else:
            nets = {
                "frame": Network(conv + [
                    Dense(flat, hp.feature_dim, activation="relu", rng=rng),
                ]),
                "seq": Network([
                    GRULayer(hp.feature_dim, h, rng=rng),
                    Dense(h, 1, rng=rng),
                ]),
            }
    else:  # TD-CNN, BC-CNN
        s1 = _conv_out(CNN_INPUT_SIZE, 8, 4)
        s2 = _conv_out(s1, 5, 2) // 2
        flat = 16 * s2 * s2
        nets = {"net": Network([
            Conv2D(1, 8, kernel=8, stride=4, activation="relu", rng=rng),
            Conv2D(8, 16, kernel=5, stride=2, activation="relu", rng=rng),
            MaxPool2D(2),
            Flatten(),
            Dense(flat, h, activation="relu", rng=rng),
            Dense(h, 1, rng=rng),
        ])}
    return ClassifierModel(kind, hp, bounds, nets)


# ------------------------------------------------------------ unit sampling


class _UnitView:
    """Model-ready view of a dataset: the pool of sampling units.

    FF kinds use one unit per step/frame, GRU kinds one per fixed-length
    window (stride 1; short trajectories give a single padded window),
    CNN kinds one per trajectory image.
    """

    def __init__(self, dataset: ClassifierDataset, kind: str,
                 hyperparams: Hyperparams):
        if INPUT_SPACE[kind] != dataset.input_space:
            raise ClassifierError(
                f"model kind {kind} expects {INPUT_SPACE[kind]!r} input, "
                f"dataset holds {dataset.input_space!r}")
        if not dataset.items:
            raise ClassifierError("empty dataset")
        self.kind = kind
        self.window = hyperparams.window
        self.dataset = dataset
        self.labels_by_item = dataset.labels()
        family = kind.split("-")[1]
        self.family = family

        if dataset.input_space == "symbolic":
            self.series = [normalize_positions(it.payload, dataset.bounds)
                           for it in dataset.items]
        elif dataset.input_space == "visual":
            self.series = [it.payload for it in dataset.items]
        else:
            imgs = [bilinear_resize(it.payload, CNN_INPUT_SIZE, CNN_INPUT_SIZE)
                    / 255.0 for it in dataset.items]
            self.images = np.stack(imgs)[:, None, :, :]

        if family == "FF":
            self.unit_item = np.concatenate([
                np.full(len(s), i, dtype=np.int64)
                for i, s in enumerate(self.series)])
            self.unit_step = np.concatenate([
                np.arange(len(s), dtype=np.int64) for s in self.series])
        elif family == "GRU":
            items, starts = [], []
            for i, s in enumerate(self.series):
                n = max(1, len(s) - self.window + 1)
                items.append(np.full(n, i, dtype=np.int64))
                starts.append(np.arange(n, dtype=np.int64))
            self.unit_item = np.concatenate(items)
            self.unit_step = np.concatenate(starts)
        else:
            self.unit_item = np.arange(len(dataset.items), dtype=np.int64)
            self.unit_step = np.zeros(len(dataset.items), dtype=np.int64)

    @property
    def n_units(self):
        return len(self.unit_item)

    def gather(self, unit_indices):
        """Batch dict {x, mask, y, item} for the given unit indices."""
        idx = np.asarray(unit_indices, dtype=np.int64)
        items = self.unit_item[idx]
        y = self.labels_by_item[items]
        mask = None
        if self.family == "CNN":
            x = self.images[items]
        elif self.family == "FF":
            rows = [self.series[i][t] for i, t in zip(items, self.unit_step[idx])]
            x = np.asarray(rows, dtype=np.float64)
            if self.dataset.input_space == "visual":
                x = x[:, None, :, :] / 255.0
        else:
            L = self.window
            sample_shape = self.series[0].shape[1:]
            x = np.zeros((len(idx), L) + sample_shape, dtype=np.float64)
            mask = np.zeros((len(idx), L), dtype=np.float64)
            for row, (i, t) in enumerate(zip(items, self.unit_step[idx])):
                chunk = self.series[i][t:t + L]
                x[row, :len(chunk)] = chunk
                mask[row, :len(chunk)] = 1.0
            if self.dataset.input_space == "visual":
                x = x / 255.0
        return {"x": x, "mask": mask, "y": y, "item": items}

def sample_batches(dataset: ClassifierDataset, kind: str, batch_size: int,
                   seed: int, hyperparams: Optional[Hyperparams] = None):
    """Endless uniform batch stream over the dataset's sampling units."""
    hp = hyperparams or Hyperparams()
    view = _UnitView(dataset, kind, hp)
    rng = np.random.default_rng([seed, _SEED_TAG, 1])
    while True:
        yield view.gather(rng.integers(0, view.n_units, size=batch_size))


# -------------------------------------------------------------- aggregation


@dataclass
class TrajectoryVerdict:
    trajectory_id: str
    probabilities: np.ndarray   # per sample: step, window, or single image
    majority_label: int         # 1 human, 0 agent; ties resolve to agent
    trajectory_logit: float     # mean per-sample logit


def majority_label(probabilities) -> int:
    """Mode of thresholded predictions; a tie is not demonstrably human."""
    probs = np.asarray(probabilities, dtype=np.float64)
    votes = probs > 0.5
    return int(votes.sum() * 2 > len(votes))


def verdict_from_logits(trajectory_id: str, logits) -> TrajectoryVerdict:
    logits = np.asarray(logits, dtype=np.float64)
    probs = sigmoid(logits)
    return TrajectoryVerdict(
        trajectory_id=trajectory_id, probabilities=probs,
        majority_label=majority_label(probs),
        trajectory_logit=float(logits.mean()))


def _payload_for(model: ClassifierModel, sample) -> DatasetItem:
    space = model.input_space
    if hasattr(sample, "positions"):
        traj_id = getattr(sample, "id", "")
        if space == "symbolic":
            return DatasetItem(traj_id, 0, "", "", sample.positions())
        if space == "topdown":
            return DatasetItem(traj_id, 0, "", "",
                               encode_topdown(sample, model.bounds))
        raise ClassifierError(
            f"{model.kind} needs a {space!r} encoding, not a raw "
            f"trajectory; render and encode it first")
    payload = np.asarray(sample)
    expect_dims = {"symbolic": 2, "visual": 3, "topdown": 2, "barcode": 2}
    if payload.ndim != expect_dims[space]:
        raise ClassifierError(
            f"{model.kind} expects a {space!r} encoding with "
            f"{expect_dims[space]} dims, got shape {payload.shape}")
    if space == "symbolic" and payload.shape[1] != 3:
        raise ClassifierError(f"symbolic encoding must be (T, 3), "
                              f"got {payload.shape}")
    if space == "visual" and payload.shape[1:] != (VIS_HEIGHT, VIS_WIDTH):
        payload = downsample_frames(payload)
    return DatasetItem("", 0, "", "", payload)


def predict_trajectory(model: ClassifierModel, sample) -> TrajectoryVerdict:
    """Per-sample probabilities at stride 1, aggregated per trajectory."""
    item = _payload_for(model, sample)
    dataset = ClassifierDataset(model.input_space, [item], model.bounds)
    view = _UnitView(dataset, model.kind, model.hyperparams)
    logits = _view_logits(model, view)
    return verdict_from_logits(item.trajectory_id, logits)


def _view_logits(model, view, unit_indices=None, chunk: Optional[int] = None):
    if unit_indices is None:
        unit_indices = np.arange(view.n_units)
    if len(unit_indices) == 0:
        return np.empty(0, dtype=np.float64)
    if chunk is None:
        # cap working-set size; window units of frames get small chunks
        probe = view.gather(unit_indices[:1])
        chunk = int(np.clip(4_000_000 // max(probe["x"].size, 1), 16, 512))
    out = np.empty(len(unit_indices), dtype=np.float64)
    for lo in range(0, len(unit_indices), chunk):
        batch = view.gather(unit_indices[lo:lo + chunk])
        out[lo:lo + chunk] = model.predict_logits(batch["x"], batch["mask"])
    return out


def predict_dataset(model: ClassifierModel,
                    dataset: ClassifierDataset) -> List[TrajectoryVerdict]:
    """One verdict per dataset trajectory (shared view, chunked forward)."""
    view = _UnitView(dataset, model.kind, model.hyperparams)
    logits = _view_logits(model, view)
    out = []
    for i, it in enumerate(dataset.items):
        out.append(verdict_from_logits(
            it.trajectory_id, logits[view.unit_item == i]))
    return out


# ----------------------------------------------------------------- training


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    val_acc: Optional[float]

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss,
                "train_acc": self.train_acc, "val_acc": self.val_acc}


@dataclass
class TrainRun:
    kind: str
    hyperparams: Hyperparams
    seed: int
    history: List[EpochStats]
    model: ClassifierModel
    best_epoch: int
    val_accuracy: Optional[float]
    fold: Optional[int] = None
    fold_assignments: Optional[Dict[str, int]] = None

    def run_log(self) -> str:
        """JSON Lines, one record per epoch."""
        return "\n".join(json.dumps(e.to_json()) for e in self.history) + "\n"


def _sample_accuracy(logits, labels) -> float:
    preds = np.asarray(logits) > 0.0
    return float((preds == (np.asarray(labels) > 0.5)).mean())


def train_classifier(kind: str, train_set: ClassifierDataset,
                     val_set: Optional[ClassifierDataset] = None,
                     hyperparams: Optional[Hyperparams] = None,
                     seed: int = 0) -> TrainRun:
    """Minimize BCE over uniform unit batches; early-stop on the
    validation plateau and keep the best-validation parameters.

    Train and validation generator sets must be disjoint (the
    within-study analogue of the held-out-player rule).
    """
    hp = (hyperparams or Hyperparams()).validate()
    if val_set is not None:
        overlap = train_set.generator_ids() & val_set.generator_ids()
        if overlap:
            raise ClassifierError(
                f"train and val share generators: {sorted(overlap)}")
    view = _UnitView(train_set, kind, hp)
    val_view = _UnitView(val_set, kind, hp) if val_set is not None else None
    model = build_model(kind, hp, train_set.bounds, seed=seed)
    params = model.params()
    adam = AdamState(params, learning_rate=hp.learning_rate)
    rng = np.random.default_rng([seed, _SEED_TAG, 1])

    steps = hp.steps_per_epoch or max(
        1, int(np.ceil(view.n_units / hp.batch_size)))
    history: List[EpochStats] = []
    best_acc, best_epoch, best_params, stale = -np.inf, 0, None, 0
    for epoch in range(hp.epochs):
        losses, correct, seen = [], 0, 0
        for _ in range(steps):
            batch = view.gather(rng.integers(0, view.n_units,
                                             size=hp.batch_size))
            logits, cache = model.forward(batch["x"], batch["mask"])
            loss, dlogits = bce_loss(logits, batch["y"])
            if not np.isfinite(loss):
                run = TrainRun(kind, hp, seed, history, model, best_epoch,
                               None)
                raise ClassifierError(
                    f"non-finite loss at epoch {epoch}; run log:\n"
                    f"{run.run_log()}")
            grads = model.backward(dlogits, cache)
            adam_step(params, grads, adam)
            losses.append(loss)
            correct += int(((logits > 0) == (batch["y"] > 0.5)).sum())
            seen += len(logits)

        val_acc = None
        if val_view is not None:
            val_logits = _view_logits(model, val_view)
            val_acc = _sample_accuracy(val_logits,
                                       val_view.labels_by_item[val_view.unit_item])
        history.append(EpochStats(epoch, float(np.mean(losses)),
                                  correct / max(seen, 1), val_acc))
        if val_view is None:
            continue
        if val_acc > best_acc + hp.min_delta:
            best_acc, best_epoch, stale = val_acc, epoch, 0
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale >= hp.patience:
                break

    if best_params is not None:
        model.set_params(best_params)
    return TrainRun(kind, hp, seed, history, model, best_epoch,
                    None if best_acc == -np.inf else float(best_acc))


# --------------------------------------------------------- cross-validation


@dataclass
class CVResult:
    kind: str
    best_hyperparams: Hyperparams
    fold_assignments: Dict[str, int]          # trajectory id -> fold
    accuracies: List[List[float]]             # [grid point][fold]
    final_run: TrainRun


def _fold_generators(dataset: ClassifierDataset, k: int, seed: int):
    source_of = {}
    for it in dataset.items:
        source_of[it.generator_id] = it.source
    groups = sorted(source_of)
    if len(groups) < k:
        raise ClassifierError(
            f"{len(groups)} generator groups cannot fill {k} folds")
    rng = np.random.default_rng([seed, _SEED_TAG, 2])
    by_source: Dict[str, list] = {}
    for g in groups:
        by_source.setdefault(source_of[g], []).append(g)
    fold_of: Dict[str, int] = {}
    cursor = 0
    for source in sorted(by_source):
        gens = by_source[source]
        for p in rng.permutation(len(gens)):
            fold_of[gens[p]] = cursor % k
            cursor += 1
    return fold_of


def kfold_cv(kind: str, dataset: ClassifierDataset, k: int = 5,
             grid: Optional[List[Hyperparams]] = None,
             seed: int = 0) -> CVResult:
    """Generator-grouped k-fold CV over a hyperparameter grid.

    Folds partition trajectories by generator groups, stratified by
    source, so every fold's validation generators are unseen in its
    training folds. The winning grid point maximizes mean validation
    accuracy; the final model retrains on the full dataset with it.
    """
    if k < 2:
        raise ClassifierError(f"k must be >= 2, got {k}")
    grid = list(grid) if grid else [Hyperparams()]
    fold_of_gen = _fold_generators(dataset, k, seed)
    fold_assignments = {it.trajectory_id: fold_of_gen[it.generator_id]
                        for it in dataset.items}

    accuracies: List[List[float]] = []
    for hp in grid:
        fold_accs = []
        for fold in range(k):
            val_idx = [i for i, it in enumerate(dataset.items)
                       if fold_of_gen[it.generator_id] == fold]
            train_idx = [i for i, it in enumerate(dataset.items)
                         if fold_of_gen[it.generator_id] != fold]
            if not val_idx or not train_idx:
                raise ClassifierError(f"fold {fold} is degenerate")
            run = train_classifier(kind, dataset.subset(train_idx),
                                   dataset.subset(val_idx), hp,
                                   seed=seed + fold)
            run.fold = fold
            fold_accs.append(run.val_accuracy)
        accuracies.append(fold_accs)

    means = [float(np.mean(a)) for a in accuracies]
    best = int(np.argmax(means))
    final = train_classifier(kind, dataset, None, grid[best], seed=seed)
    final.fold_assignments = fold_assignments
    return CVResult(kind=kind, best_hyperparams=grid[best],
                    fold_assignments=fold_assignments,
                    accuracies=accuracies, final_run=final)
