"""Training loop: Adam with bias correction, cosine learning rate, resume.

Reproducibility rule: the batch order at step s is a pure function of
(seed, epoch), never of mutable generator state. A checkpoint therefore only
needs parameters, moments, and the step counter to resume bit-exactly.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, TrainingAborted, UsageError
from .losses import DEFAULT_WEIGHTS, loss_breakdown
from .rng import Xoshiro256StarStar, derive_seed
from .tensor import Tape, backward, scale

CKPT_MAGIC = b"HSK1"


@dataclass
class TrainConfig:
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    total_steps: int = 500
    batch_size: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_weights: tuple = DEFAULT_WEIGHTS
    seed: int = 7

    def validate(self):
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigError(
                f"need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}"
            )
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= beta < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {beta}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        return self


def cosine_lr(step, cfg):
    """lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi * step / total_steps))."""
    step = int(step)
    if not 0 <= step <= cfg.total_steps:
        raise UsageError(
            f"cosine_lr: step {step} outside [0, {cfg.total_steps}]"
        )
    span = cfg.lr_max - cfg.lr_min
    return cfg.lr_min + 0.5 * span * (1.0 + np.cos(np.pi * step / cfg.total_steps))


class ParamStore:
    """Named parameters plus their Adam moment buffers and the step counter."""

    def __init__(self, named_params):
        self.entries = []
        seen = set()
        for name, tensor in named_params:
            if name in seen:
                raise UsageError(f"duplicate parameter name {name!r}")
            seen.add(name)
            self.entries.append(
                (name, tensor, np.zeros_like(tensor.data), np.zeros_like(tensor.data))
            )
        self.step = 0

    @classmethod
    def from_model(cls, model):
        return cls(model.named_params())

    def names(self):
        return [name for name, _, _, _ in self.entries]

    def zero_grads(self):
        for _, tensor, _, _ in self.entries:
            tensor.grad = None

    def grads(self):
        """Current gradients by name; a parameter untouched by backward gets zeros."""
        out = {}
        for name, tensor, _, _ in self.entries:
            g = tensor.grad
            out[name] = np.zeros_like(tensor.data) if g is None else g
        return out


def adam_step(store, grads, lr, cfg):
    """One Adam update over every entry, in store order, in place."""
    t = store.step + 1
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, tensor, m, v in store.entries:
        if name not in grads:
            raise UsageError(f"adam_step: no gradient supplied for {name!r}")
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise UsageError(
                f"adam_step: gradient for {name!r} has shape {g.shape},"
                f" parameter has {tensor.data.shape}"
            )
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        tensor.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.step = t


def batch_indices(seed, n_scenes, batch_size, step):
    """Scene indices for one step: pure in (seed, step), stateless.

    Each epoch shuffles range(n_scenes) with a stream derived from the epoch
    number; steps walk that order in batch_size chunks (the last chunk of an
    epoch may be short).
    """
    n_scenes, batch_size, step = int(n_scenes), int(batch_size), int(step)
    if n_scenes < 1:
        raise UsageError("batch_indices: empty dataset")
    per_epoch = (n_scenes + batch_size - 1) // batch_size
    epoch, pos = divmod(step, per_epoch)
    order = Xoshiro256StarStar(derive_seed(seed, epoch)).permutation(n_scenes)
    return order[pos * batch_size:(pos + 1) * batch_size]


def train(model, dataset, cfg, store=None, log=None, stop_at=None):
    """Run (or resume) training; returns (store, history).

    history rows are dicts with step, loss, l1, sam, swt, lr. A non-finite
    loss raises TrainingAborted naming the step; parameters keep their last
    finite state. ``store`` continues a previous run from its step counter.
    ``stop_at`` pauses before cfg.total_steps without touching the lr
    schedule; resuming from the checkpoint replays the run bit-exactly.
    """
    cfg.validate()
    if not dataset:
        raise UsageError("train: dataset is empty")
    if store is None:
        store = ParamStore.from_model(model)
    last = cfg.total_steps if stop_at is None else min(int(stop_at), cfg.total_steps)
    history = []
    for step in range(store.step, last):
        lr = cosine_lr(step, cfg)
        picks = batch_indices(cfg.seed, len(dataset), cfg.batch_size, step)
        store.zero_grads()
        with Tape():
            total = None
            parts = {"l1": 0.0, "sam": 0.0, "swt": 0.0}
            for i in picks:
                scene = dataset[i]
                pred = model.forward(scene.lr_hsi, scene.hr_msi)
                pieces = loss_breakdown(pred, scene.hr_hsi, cfg.loss_weights)
                total = pieces["total"] if total is None else total + pieces["total"]
                for key in parts:
                    parts[key] += pieces[key].item()
            loss = scale(total, 1.0 / len(picks))
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingAborted(f"non-finite loss at step {step}")
            backward(loss)
        adam_step(store, store.grads(), lr, cfg)
        row = {
            "step": step,
            "loss": loss_val,
            "l1": parts["l1"] / len(picks),
            "sam": parts["sam"] / len(picks),
            "swt": parts["swt"] / len(picks),
            "lr": lr,
        }
        history.append(row)
        if log is not None:
            log(row)
    return store, history


# ---------------------------------------------------------------- checkpoints

def _blob(name, arr):
    enc = name.encode("utf-8")
    head = struct.pack("<I", len(enc)) + enc + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + np.ascontiguousarray(arr).astype("<f8").tobytes()


def save_checkpoint(path, store):
    """Parameters, both moment buffers, and the step counter, one file."""
    blobs = []
    for name, tensor, m, v in store.entries:
        blobs.append(_blob(name, tensor.data))
        blobs.append(_blob(name + ".m", m))
        blobs.append(_blob(name + ".v", v))
    header = CKPT_MAGIC + struct.pack("<IQ", len(blobs), store.step)
    Path(path).write_bytes(header + b"".join(blobs))


def _parse_checkpoint(raw, path):
    if len(raw) < 16 or raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad or short magic)")
    n_blobs, step = struct.unpack_from("<IQ", raw, 4)
    offset = 16
    blobs = {}
    for _ in range(n_blobs):
        try:
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, offset) if ndim else ()
            offset += 4 * ndim
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt blob at offset {offset}: {exc}")
        if name in blobs:
            raise CheckpointError(f"{path}: duplicate blob {name!r}")
        blobs[name] = arr.astype(np.float64).reshape(shape)
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return step, blobs


def load_checkpoint(path, store):
    """Restore a store in place. The blob set must match exactly.

    Any missing, extra, or shape-mismatched entry raises CheckpointError
    before anything is modified.
    """
    raw = Path(path).read_bytes()
    step, blobs = _parse_checkpoint(raw, path)
    wanted = {}
    for name, tensor, m, v in store.entries:
        wanted[name] = tensor.data
        wanted[name + ".m"] = m
        wanted[name + ".v"] = v
    missing = sorted(set(wanted) - set(blobs))
    extra = sorted(set(blobs) - set(wanted))
    if missing or extra:
        raise CheckpointError(
            f"{path}: blob set mismatch; missing {missing[:4]}, extra {extra[:4]}"
        )
    for name, arr in blobs.items():
        if arr.shape != wanted[name].shape:
            raise CheckpointError(
                f"{path}: {name!r} has shape {arr.shape}, store expects"
                f" {wanted[name].shape}"
            )
    for name, arr in blobs.items():
        wanted[name][...] = arr
    store.step = int(step)
    return store
