"""Training loop, Adam optimizer, class-balanced sampling, checkpoints.

The protocol defaults are batches of 128 windows drawn with replacement
(each sample weighted inversely to its class frequency), learning rate
1e-4, 20 epochs, where one epoch is ceil(n_samples / batch_size) steps.
Runs are bitwise reproducible for a fixed seed: initialization and batch
sampling draw from independent child streams of one seed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels, network
from .core import Rng
from .errors import FormatError, NumericError, TrainingDiverged
from .network import ModelConfig

CHECKPOINT_MAGIC = b"TLNB"
CHECKPOINT_VERSION = 1

LOG_SCALE_FLOOR = math.log(1e-6)  # keeps c_u, c_s >= 1e-6


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-4


def init_adam(params: dict[str, np.ndarray], names: list[str], lr: float = 1e-4) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(params[k]) for k in names},
        v={k: np.zeros_like(params[k]) for k in names},
        lr=lr,
    )


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place, for the keys in ``grads``."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for k, g in grads.items():
        if k not in state.m:
            raise ValueError(f"gradient for unknown parameter {k!r}")
        if np.shape(g) != params[k].shape:
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {k!r} "
                             f"of shape {params[k].shape}")
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        params[k] -= state.lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + state.eps)
    return params, state


def balanced_batch(
    labels: np.ndarray, batch_size: int, rng: Rng, n_classes: int | None = None
) -> np.ndarray:
    """Sample indices with replacement, weighting each sample by 1/count(its class).

    With ``n_classes`` given, every class id in range must occur at least
    once; otherwise the weights come from whichever classes are present.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot sample from an empty label set")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    counts = np.bincount(labels, minlength=n_classes or 0)
    if n_classes is not None and np.any(counts[:n_classes] == 0):
        missing = int(np.argmin(counts[:n_classes]))
        raise ValueError(f"class {missing} has no samples")
    weights = 1.0 / counts[labels]
    weights /= weights.sum()
    return rng.choice(labels.size, size=batch_size, p=weights)


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 20
    lr: float = 1e-4
    seed: int = 0
    # architecture
    arch: str = network.ARCH_TLONBOF
    n_codewords: int = 256
    conv_filters: int = 256
    conv_kernel: int = 5
    hidden: int = 512
    n_regions: int = 3
    # ablation axes
    deep_features: bool = True
    temporal_modeling: bool = True
    kernel_param_learning: bool = True
    adaptive_scaling: str = network.SCALING_LEARNED
    kernel: str = kernels.LOGISTIC
    nested_regions: bool = False
    # instrumentation
    record_grad_norm: bool = True

    def model_config(self, d_in: int, avg_seq_len: float, n_classes: int = 3) -> ModelConfig:
        return ModelConfig(
            arch=self.arch,
            d_in=d_in,
            conv_filters=self.conv_filters,
            conv_kernel=self.conv_kernel,
            n_codewords=self.n_codewords,
            n_regions=self.n_regions if self.temporal_modeling else 1,
            hidden=self.hidden,
            n_classes=n_classes,
            kernel=self.kernel,
            deep_features=self.deep_features,
            nested_regions=self.nested_regions,
            kernel_param_learning=self.kernel_param_learning,
            adaptive_scaling=self.adaptive_scaling,
            avg_seq_len=avg_seq_len,
        )


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    grad_norm_conv: list[float] = field(default_factory=list)
    val: list[dict[str, float]] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.loss)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    model_cfg: ModelConfig
    adam_state: AdamState
    history: TrainHistory


def _snapshot(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def train(config: TrainConfig, dataset, valset=None) -> TrainResult:
    """Run the full training protocol on a window dataset.

    ``dataset`` needs ``labels``, ``feature_dim``, ``window`` and a
    ``gather(indices) -> (X, y)`` method (see ``data.WindowDataset``).
    Aborts with :class:`TrainingDiverged` if the batch loss goes
    non-finite or a forward pass fails numerically, carrying the last
    end-of-epoch parameter snapshot.
    """
    if dataset.n_samples == 0:
        raise ValueError("training dataset is empty")
    rng_init, rng_batch = Rng.from_seed(config.seed).split(2)
    cfg = config.model_config(d_in=dataset.feature_dim, avg_seq_len=float(dataset.window))
    params = network.init_params(cfg, rng_init)
    trainable = network.trainable_names(cfg)
    state = init_adam(params, trainable, lr=config.lr)
    history = TrainHistory()
    labels = dataset.labels
    steps_per_epoch = math.ceil(dataset.n_samples / config.batch_size)
    last_good = _snapshot(params)
    step = 0
    for _epoch in range(config.epochs):
        for _ in range(steps_per_epoch):
            # weight by the classes actually present; a degenerate day with a
            # single label is trainable, it just cannot teach other classes
            idx = balanced_batch(labels, config.batch_size, rng_batch)
            x, y = dataset.gather(idx)
            try:
                _, ctx = network.forward_batch(x, params, cfg)
                loss = network.batch_loss(ctx, y)
            except TrainingDiverged:
                raise
            except NumericError as exc:
                raise TrainingDiverged(step, last_good) from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(step, last_good)
            grads = network.backward_batch(ctx, y)
            updates = {k: grads[k] for k in trainable if k in grads}
            adam_step(params, updates, state)
            for k in ("log_cu", "log_cs"):
                if k in params and params[k] < LOG_SCALE_FLOOR:
                    params[k] = np.array(LOG_SCALE_FLOOR)
            history.loss.append(float(loss))
            if config.record_grad_norm:
                g = grads.get("conv_w")
                history.grad_norm_conv.append(
                    float(np.linalg.norm(g)) if g is not None else float("nan")
                )
            step += 1
        if valset is not None and valset.n_samples > 0:
            from . import metrics  # local import to avoid a cycle at module load

            cm = metrics.confusion(valset.labels, predict(params, cfg, valset), cfg.n_classes)
            p, r, f1 = metrics.macro_prf(cm)
            history.val.append(
                {"precision": p, "recall": r, "f1": f1, "kappa": metrics.cohens_kappa(cm)}
            )
        last_good = _snapshot(params)
    return TrainResult(params=params, model_cfg=cfg, adam_state=state, history=history)


def predict(
    params: dict[str, np.ndarray], cfg: ModelConfig, dataset, chunk: int = 512
) -> np.ndarray:
    """Argmax class predictions over a whole dataset, evaluated in chunks."""
    preds = np.empty(dataset.n_samples, dtype=np.int64)
    for start in range(0, dataset.n_samples, chunk):
        idx = np.arange(start, min(start + chunk, dataset.n_samples))
        x, _ = dataset.gather(idx)
        probs, _ = network.forward_batch(x, params, cfg)
        preds[idx] = probs.argmax(axis=1)
    return preds


# ---------------------------------------------------------------------------
# checkpoint format: magic "TLNB", version u32 LE, tensor count u32 LE, then
# per tensor: name length u16 LE + UTF-8 name, rank u8, dims u32 LE each,
# payload f32 LE row-major. Model shape/flags travel as rank-0 "meta.*"
# entries, optimizer moments as "adam.*" entries.

_ARCHS = [network.ARCH_TLONBOF, network.ARCH_CNN_GAP]
_KERNELS = [kernels.LOGISTIC, kernels.GAUSSIAN]
_SCALINGS = [network.SCALING_OFF, network.SCALING_FROZEN, network.SCALING_LEARNED]


def _config_meta(cfg: ModelConfig) -> dict[str, float]:
    return {
        "meta.arch": _ARCHS.index(cfg.arch),
        "meta.d_in": cfg.d_in,
        "meta.conv_filters": cfg.conv_filters,
        "meta.conv_kernel": cfg.conv_kernel,
        "meta.n_codewords": cfg.n_codewords,
        "meta.n_regions": cfg.n_regions,
        "meta.hidden": cfg.hidden,
        "meta.n_classes": cfg.n_classes,
        "meta.kernel": _KERNELS.index(cfg.kernel),
        "meta.deep_features": int(cfg.deep_features),
        "meta.nested_regions": int(cfg.nested_regions),
        "meta.kernel_param_learning": int(cfg.kernel_param_learning),
        "meta.adaptive_scaling": _SCALINGS.index(cfg.adaptive_scaling),
        "meta.avg_seq_len": cfg.avg_seq_len,
    }


def _config_from_meta(meta: dict[str, float]) -> ModelConfig:
    try:
        return ModelConfig(
            arch=_ARCHS[int(meta["meta.arch"])],
            d_in=int(meta["meta.d_in"]),
            conv_filters=int(meta["meta.conv_filters"]),
            conv_kernel=int(meta["meta.conv_kernel"]),
            n_codewords=int(meta["meta.n_codewords"]),
            n_regions=int(meta["meta.n_regions"]),
            hidden=int(meta["meta.hidden"]),
            n_classes=int(meta["meta.n_classes"]),
            kernel=_KERNELS[int(meta["meta.kernel"])],
            deep_features=bool(int(meta["meta.deep_features"])),
            nested_regions=bool(int(meta["meta.nested_regions"])),
            kernel_param_learning=bool(int(meta["meta.kernel_param_learning"])),
            adaptive_scaling=_SCALINGS[int(meta["meta.adaptive_scaling"])],
            avg_seq_len=float(meta["meta.avg_seq_len"]),
        )
    except (KeyError, IndexError) as exc:
        raise FormatError(f"checkpoint is missing model metadata: {exc}") from exc


def _encode_tensors(entries: list[tuple[str, np.ndarray]]) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        # asarray, not ascontiguousarray: the latter silently promotes 0-d
        # scalars to shape (1,), which would corrupt the stored rank
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def serialize_checkpoint(
    params: dict[str, np.ndarray], cfg: ModelConfig, state: AdamState | None = None
) -> bytes:
    entries = [(k, np.asarray(v)) for k, v in sorted(params.items())]
    entries += [(k, np.array(v)) for k, v in sorted(_config_meta(cfg).items())]
    if state is not None:
        entries.append(("adam.t", np.array(float(state.t))))
        entries.append(("adam.lr", np.array(state.lr)))
        entries.append(("adam.beta1", np.array(state.beta1)))
        entries.append(("adam.beta2", np.array(state.beta2)))
        entries.append(("adam.eps", np.array(state.eps)))
        entries += [(f"adam.m.{k}", v) for k, v in sorted(state.m.items())]
        entries += [(f"adam.v.{k}", v) for k, v in sorted(state.v.items())]
    return _encode_tensors(entries)


def save_checkpoint(
    path, params: dict[str, np.ndarray], cfg: ModelConfig, state: AdamState | None = None
) -> None:
    from .config import write_atomic  # shared atomic-write helper

    write_atomic(path, serialize_checkpoint(params, cfg, state))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError(f"truncated checkpoint while reading {what}", location=f"byte {self.off}")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def deserialize_checkpoint(blob: bytes):
    reader = _Reader(blob)
    if reader.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("bad magic, not a TLNB checkpoint", location="byte 0")
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", location="byte 4")
    count = reader.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = struct.unpack("<H", reader.take(2, f"name length of tensor {i}"))[0]
        name = reader.take(name_len, f"name of tensor {i}").decode("utf-8")
        rank = reader.take(1, f"rank of {name}")[0]
        dims = [
            struct.unpack("<I", reader.take(4, f"dim {d} of {name}"))[0] for d in range(rank)
        ]
        n_values = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = reader.take(4 * n_values, f"payload of {name}")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
        tensors[name] = arr
    if reader.off != len(blob):
        raise FormatError("trailing bytes after last tensor", location=f"byte {reader.off}")

    params, meta = {}, {}
    adam_m, adam_v, adam_scalar = {}, {}, {}
    for name, arr in tensors.items():
        if name.startswith("meta."):
            meta[name] = float(arr)
        elif name.startswith("adam.m."):
            adam_m[name[len("adam.m.") :]] = arr
        elif name.startswith("adam.v."):
            adam_v[name[len("adam.v.") :]] = arr
        elif name.startswith("adam."):
            adam_scalar[name] = float(arr)
        else:
            params[name] = arr
    cfg = _config_from_meta(meta)
    state = None
    if adam_scalar:
        state = AdamState(
            m=adam_m,
            v=adam_v,
            t=int(adam_scalar["adam.t"]),
            beta1=adam_scalar["adam.beta1"],
            beta2=adam_scalar["adam.beta2"],
            eps=adam_scalar["adam.eps"],
            lr=adam_scalar["adam.lr"],
        )
    return params, cfg, state


def load_checkpoint(path):
    """Read a checkpoint; returns (params, model_cfg, adam_state_or_None)."""
    with open(path, "rb") as fh:
        return deserialize_checkpoint(fh.read())
