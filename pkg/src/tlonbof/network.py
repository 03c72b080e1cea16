"""Full classification network around the bag-of-features pooling layer.

Default architecture for 15-step windows of 144-dim feature vectors:

    input (N, 144)
    -> same-length 1-D convolution, 256 filters, kernel 5, ReLU
    -> temporal bag-of-features pooling (256 codewords, 3 regions)
    -> fully connected 512, ReLU
    -> fully connected 3, softmax

A global-average-pooling variant ("cnn_gap") replaces the pooling layer
with a timestep mean and serves as the ablation baseline. Parameters live
in a flat name -> array dict so the optimizer, the checkpoint format and
the gradient checks all see one enumeration. The two scale factors are
stored in log space (keys ``log_cu``/``log_cs``) so they stay positive
without projection; gradients are mapped accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import bof, kernels
from .bof import ScalingParams
from .core import Rng, glorot_uniform
from .kernels import KernelParams

ARCH_TLONBOF = "tlonbof"
ARCH_CNN_GAP = "cnn_gap"

SCALING_OFF = "off"  # c_u = c_s = 1, frozen
SCALING_FROZEN = "frozen"  # protocol init, not trained
SCALING_LEARNED = "learned"  # protocol init, trained


@dataclass
class ModelConfig:
    arch: str = ARCH_TLONBOF
    d_in: int = 144
    conv_filters: int = 256
    conv_kernel: int = 5
    n_codewords: int = 256
    n_regions: int = 3
    hidden: int = 512
    n_classes: int = 3
    kernel: str = kernels.LOGISTIC
    deep_features: bool = True
    nested_regions: bool = False
    kernel_param_learning: bool = True
    adaptive_scaling: str = SCALING_LEARNED
    avg_seq_len: float = 15.0
    sigma: float | None = None  # Gaussian width; derived from the codebook if left unset

    def __post_init__(self):
        if self.arch not in (ARCH_TLONBOF, ARCH_CNN_GAP):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.arch == ARCH_CNN_GAP and not self.deep_features:
            raise ValueError(
                "the global-average-pooling baseline requires the convolutional extractor"
            )

    @property
    def feature_dim(self) -> int:
        """Dimension the pooling layer (or GAP) consumes."""
        return self.conv_filters if self.deep_features else self.d_in

    @property
    def pooled_dim(self) -> int:
        if self.arch == ARCH_CNN_GAP:
            return self.feature_dim
        return self.n_regions * self.n_codewords


def init_params(cfg: ModelConfig, rng: Rng) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, protocol-initialized scales."""
    params: dict[str, np.ndarray] = {}
    if cfg.deep_features:
        fan_in = cfg.conv_kernel * cfg.d_in
        params["conv_w"] = glorot_uniform(
            (cfg.conv_kernel, cfg.d_in, cfg.conv_filters), fan_in, cfg.conv_filters, rng
        )
        params["conv_b"] = np.zeros(cfg.conv_filters)
    if cfg.arch == ARCH_TLONBOF:
        d_feat = cfg.feature_dim
        params["codebook"] = glorot_uniform((cfg.n_codewords, d_feat), d_feat, cfg.n_codewords, rng)
    params["fc1_w"] = glorot_uniform((cfg.pooled_dim, cfg.hidden), cfg.pooled_dim, cfg.hidden, rng)
    params["fc1_b"] = np.zeros(cfg.hidden)
    params["fc2_w"] = glorot_uniform((cfg.hidden, cfg.n_classes), cfg.hidden, cfg.n_classes, rng)
    params["fc2_b"] = np.zeros(cfg.n_classes)
    if cfg.arch == ARCH_TLONBOF:
        if cfg.adaptive_scaling == SCALING_OFF:
            scaling = ScalingParams.disabled()
        else:
            scaling = ScalingParams.protocol_init(cfg.n_codewords, cfg.avg_seq_len)
        params["log_cu"] = np.array(np.log(scaling.c_u))
        params["log_cs"] = np.array(np.log(scaling.c_s))
        if cfg.kernel == kernels.LOGISTIC:
            params["alpha"] = np.array(1.0)
            params["beta"] = np.array(0.0)
        else:
            sigma = cfg.sigma if cfg.sigma is not None else kernels.default_sigma(params["codebook"])
            params["sigma"] = np.array(float(sigma))
    return params


def trainable_names(cfg: ModelConfig) -> list[str]:
    names = []
    if cfg.deep_features:
        names += ["conv_w", "conv_b"]
    if cfg.arch == ARCH_TLONBOF:
        names.append("codebook")
    names += ["fc1_w", "fc1_b", "fc2_w", "fc2_b"]
    if cfg.arch == ARCH_TLONBOF:
        if cfg.adaptive_scaling == SCALING_LEARNED:
            names += ["log_cu", "log_cs"]
        if cfg.kernel_param_learning and cfg.kernel == kernels.LOGISTIC:
            names += ["alpha", "beta"]
    return names


def _scaling_from(params: dict[str, np.ndarray], cfg: ModelConfig) -> ScalingParams:
    return ScalingParams(
        c_u=float(np.exp(params["log_cu"])),
        c_s=float(np.exp(params["log_cs"])),
        trainable=cfg.adaptive_scaling == SCALING_LEARNED,
    )


def _kernel_params_from(params: dict[str, np.ndarray], cfg: ModelConfig) -> KernelParams:
    if cfg.kernel == kernels.LOGISTIC:
        return KernelParams(alpha=float(params["alpha"]), beta=float(params["beta"]))
    return KernelParams(sigma=float(params["sigma"]))


# ---------------------------------------------------------------------------
# primitive layers


def conv1d_same_batch(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded same-length 1-D convolution over the time axis.

    ``x`` is (batch, steps, d_in), ``weights`` is (kernel, d_in, d_out).
    """
    taps, d_in, d_out = weights.shape
    if taps % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {taps}")
    if x.shape[-1] != d_in:
        raise ValueError(f"input dim {x.shape[-1]} does not match kernel dim {d_in}")
    n = x.shape[1]
    center = taps // 2
    out = np.broadcast_to(bias, x.shape[:2] + (d_out,)).copy()
    for k in range(taps):
        off = k - center
        lo, hi = max(0, -off), n - max(0, off)
        if lo < hi:
            out[:, lo:hi] += x[:, lo + off : hi + off] @ weights[k]
    return out


def conv1d_same(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Single-sequence convolution; ``x`` is (steps, d_in)."""
    return conv1d_same_batch(np.asarray(x, dtype=np.float64)[None], weights, bias)[0]


def conv1d_same_backward(
    x: np.ndarray, weights: np.ndarray, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    taps = weights.shape[0]
    n = x.shape[1]
    center = taps // 2
    d_x = np.zeros_like(x)
    d_w = np.zeros_like(weights)
    for k in range(taps):
        off = k - center
        lo, hi = max(0, -off), n - max(0, off)
        if lo < hi:
            d_x[:, lo + off : hi + off] += d_out[:, lo:hi] @ weights[k].T
            d_w[k] = np.einsum("bti,bto->io", x[:, lo + off : hi + off], d_out[:, lo:hi])
    d_b = d_out.sum(axis=(0, 1))
    return d_x, d_w, d_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.shape[-1] != weights.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} does not match weight rows {weights.shape[0]}")
    return x @ weights + bias


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_xent(logits: np.ndarray, label: int) -> tuple[np.ndarray, float]:
    """Class probabilities and cross-entropy loss for one logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    logp = log_softmax(logits)
    return np.exp(logp), float(-logp[label])


# ---------------------------------------------------------------------------
# composed model


@dataclass
class NetworkContext:
    cfg: ModelConfig
    params: dict[str, np.ndarray]
    x: np.ndarray  # (B, N, d_in)
    conv_pre: np.ndarray | None  # pre-ReLU conv output
    feats: np.ndarray  # what the pooling stage consumed
    bof_ctx: bof.BofContext | None
    pooled: np.ndarray  # (B, pooled_dim) histogram or GAP output
    fc1_pre: np.ndarray
    fc1_act: np.ndarray
    logp: np.ndarray  # (B, n_classes)
    probs: np.ndarray
    squeeze: bool = False


def forward_batch(
    x: np.ndarray, params: dict[str, np.ndarray], cfg: ModelConfig
) -> tuple[np.ndarray, NetworkContext]:
    """Class probabilities for a batch of equal-length windows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (batch, steps, dim) input, got shape {x.shape}")
    if x.shape[-1] != cfg.d_in:
        raise ValueError(f"feature dim {x.shape[-1]} does not match configured d_in={cfg.d_in}")

    conv_pre = None
    feats = x
    if cfg.deep_features:
        conv_pre = conv1d_same_batch(x, params["conv_w"], params["conv_b"])
        feats = relu(conv_pre)

    bof_ctx = None
    if cfg.arch == ARCH_TLONBOF:
        pooled, bof_ctx = bof.forward_batch(
            feats,
            params["codebook"],
            cfg.kernel,
            _kernel_params_from(params, cfg),
            _scaling_from(params, cfg),
            cfg.n_regions,
            cfg.nested_regions,
        )
    elif cfg.arch == ARCH_CNN_GAP:
        pooled = feats.mean(axis=1)
    else:
        raise ValueError(f"unknown architecture {cfg.arch!r}")

    fc1_pre = fully_connected(pooled, params["fc1_w"], params["fc1_b"])
    fc1_act = relu(fc1_pre)
    logits = fully_connected(fc1_act, params["fc2_w"], params["fc2_b"])
    logp = log_softmax(logits)
    probs = np.exp(logp)
    ctx = NetworkContext(
        cfg=cfg,
        params=params,
        x=x,
        conv_pre=conv_pre,
        feats=feats,
        bof_ctx=bof_ctx,
        pooled=pooled,
        fc1_pre=fc1_pre,
        fc1_act=fc1_act,
        logp=logp,
        probs=probs,
    )
    return probs, ctx


def model_forward(
    x: np.ndarray, params: dict[str, np.ndarray], cfg: ModelConfig
) -> tuple[np.ndarray, NetworkContext]:
    """Single-window forward pass; ``x`` is (steps, d_in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (steps, dim) input, got shape {x.shape}")
    probs, ctx = forward_batch(x[None], params, cfg)
    ctx.squeeze = True
    return probs[0], ctx


def cnn_gap_forward(
    x: np.ndarray, params: dict[str, np.ndarray], cfg: ModelConfig
) -> tuple[np.ndarray, NetworkContext]:
    """Baseline forward pass with global average pooling instead of histograms."""
    return model_forward(x, params, replace(cfg, arch=ARCH_CNN_GAP))


def batch_loss(ctx: NetworkContext, labels: np.ndarray) -> float:
    """Mean cross-entropy of the cached forward pass."""
    labels = np.asarray(labels)
    return float(-ctx.logp[np.arange(ctx.logp.shape[0]), labels].mean())


def backward_batch(ctx: NetworkContext, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy w.r.t. every differentiable parameter.

    The kernel slope/offset gradients are only reported when kernel
    parameter learning is enabled.
    """
    if ctx.probs is None:
        raise RuntimeError("forward context is missing or was already consumed")
    cfg, params = ctx.cfg, ctx.params
    labels = np.asarray(labels)
    batch = ctx.probs.shape[0]
    if labels.shape != (batch,):
        raise ValueError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= cfg.n_classes:
        raise ValueError("label out of range")

    grads: dict[str, np.ndarray] = {}
    d_logits = ctx.probs.copy()
    d_logits[np.arange(batch), labels] -= 1.0
    d_logits /= batch

    grads["fc2_w"] = ctx.fc1_act.T @ d_logits
    grads["fc2_b"] = d_logits.sum(axis=0)
    d_fc1_act = d_logits @ params["fc2_w"].T
    d_fc1_pre = d_fc1_act * (ctx.fc1_pre > 0.0)
    grads["fc1_w"] = ctx.pooled.T @ d_fc1_pre
    grads["fc1_b"] = d_fc1_pre.sum(axis=0)
    d_pooled = d_fc1_pre @ params["fc1_w"].T

    if cfg.arch == ARCH_TLONBOF:
        bg = bof.backward(ctx.bof_ctx, d_pooled)
        d_feats = bg.feats
        grads["codebook"] = bg.codebook
        scaling = ctx.bof_ctx.scaling
        # Stored parameters are log(c); chain through c = exp(log c).
        grads["log_cu"] = np.array(bg.c_u * scaling.c_u)
        grads["log_cs"] = np.array(bg.c_s * scaling.c_s)
        if cfg.kernel_param_learning and bg.alpha is not None:
            grads["alpha"] = np.array(bg.alpha)
            grads["beta"] = np.array(bg.beta)
    else:
        n = ctx.feats.shape[1]
        d_feats = np.broadcast_to(d_pooled[:, None, :] / n, ctx.feats.shape).copy()

    if cfg.deep_features:
        d_conv = d_feats * (ctx.conv_pre > 0.0)
        _, grads["conv_w"], grads["conv_b"] = conv1d_same_backward(
            ctx.x, params["conv_w"], d_conv
        )
    return grads


def model_backward(ctx: NetworkContext, label: int) -> dict[str, np.ndarray]:
    """Single-window gradient of the cross-entropy loss."""
    if not ctx.squeeze:
        raise RuntimeError("context was produced by forward_batch; use backward_batch")
    return backward_batch(ctx, np.array([int(label)]))
