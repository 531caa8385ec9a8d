"""Encoder, projection head and classifier over a named parameter store.

The encoder stacks ``(grouped 3x3 conv, batch norm, ReLU)`` blocks with
strided downsampling and ends in global average pooling. The projection head
is ``Linear-BN-ReLU, Linear-BN-ReLU, Linear``; the classifier is one affine
map. Gradients are computed by explicit reverse-mode passes.

Parameter order (also the checkpoint order)::

    encoder.{i}.conv.weight, encoder.{i}.bn.weight, encoder.{i}.bn.bias   per block
    projector.{0,1}.linear.weight, projector.{0,1}.bn.weight, projector.{0,1}.bn.bias
    projector.2.linear.weight, projector.2.linear.bias
    classifier.weight, classifier.bias                                 if num_classes > 0

followed by ``<bn site>.running_mean`` / ``<bn site>.running_var`` buffers in
the same site order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .layers import (
    batchnorm_backward,
    batchnorm_forward,
    conv3x3_backward,
    conv3x3_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)
from .vicreg import VicregWeights, vicreg_grad, vicreg_total

PROJECTOR_HIDDEN = 2


@dataclass(frozen=True)
class BlockConfig:
    channels: int
    stride: int = 2
    groups: int = 1


def _default_blocks():
    # first block sees a single input channel, so it cannot be grouped
    return (BlockConfig(32, 2, 1), BlockConfig(64, 2, 8), BlockConfig(128, 2, 8), BlockConfig(256, 2, 8))


@dataclass(frozen=True)
class ModelConfig:
    encoder_blocks: tuple[BlockConfig, ...] = field(default_factory=_default_blocks)
    encoder_out_dim: int = 256
    projector_dim: int = 512
    num_classes: int = 20
    input_shape: tuple[int, int] = (401, 98)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, BlockConfig) else BlockConfig(**b) for b in self.encoder_blocks)
        object.__setattr__(self, "encoder_blocks", blocks)
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if not blocks:
            raise ValueError("encoder needs at least one block")
        in_ch = 1
        for i, b in enumerate(blocks):
            if b.channels < 1 or b.stride < 1 or b.groups < 1:
                raise ValueError(f"block {i}: channels, stride and groups must be positive")
            if b.channels % b.groups or in_ch % b.groups:
                raise ValueError(f"block {i}: groups={b.groups} must divide input ({in_ch}) "
                                 f"and output ({b.channels}) channels")
            in_ch = b.channels
        if self.encoder_out_dim != in_ch:
            raise ValueError(f"encoder_out_dim {self.encoder_out_dim} must equal the last block's channels ({in_ch})")
        if self.projector_dim < 1 or self.encoder_out_dim < 1:
            raise ValueError("feature dimensions must be >= 1")
        if self.num_classes < 0:
            raise ValueError("num_classes must be >= 0")
        if len(self.input_shape) != 2 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (F, T), got {self.input_shape}")

    def to_dict(self) -> dict:
        return {
            "encoder_blocks": [{"channels": b.channels, "stride": b.stride, "groups": b.groups}
                               for b in self.encoder_blocks],
            "encoder_out_dim": self.encoder_out_dim,
            "projector_dim": self.projector_dim,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        obj = dict(obj)
        if "encoder_blocks" in obj:
            obj["encoder_blocks"] = tuple(BlockConfig(**b) for b in obj["encoder_blocks"])
        return cls(**obj)

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig.from_dict({**self.to_dict(), **changes})


class ParamStore:
    """Ordered named parameters plus batch-norm running statistics."""

    def __init__(self, config: ModelConfig, params: dict, buffers: dict, requires_grad: dict | None = None):
        self.config = config
        self.params = dict(params)
        self.buffers = dict(buffers)
        self.requires_grad = {k: True for k in self.params}
        if requires_grad:
            self.requires_grad.update(requires_grad)

    @property
    def names(self) -> list[str]:
        return list(self.params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def __getitem__(self, name):
        return self.params[name]

    def copy(self) -> "ParamStore":
        return ParamStore(self.config, {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.buffers.items()}, dict(self.requires_grad))

    def subset(self, prefixes) -> list[str]:
        return [n for n in self.params if n.startswith(tuple(prefixes))]

    def drop(self, prefix: str) -> "ParamStore":
        keep = lambda d: {k: v for k, v in d.items() if not k.startswith(prefix)}  # noqa: E731
        return ParamStore(self.config, keep(self.params), keep(self.buffers), keep(self.requires_grad))

    def has(self, prefix: str) -> bool:
        return any(n.startswith(prefix) for n in self.params)

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    @staticmethod
    def decays(name: str) -> bool:
        """Weight decay applies to conv/linear weights only."""
        return name.endswith(".weight") and ".bn." not in name


def _uniform(rng, shape, fan_in, gain):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Fan-in scaled uniform weights, zero biases, unit BN scales.

    Hidden layers followed by ReLU use gain sqrt(2); output layers gain 1.
    """
    if not isinstance(cfg, ModelConfig):
        raise TypeError("cfg must be a ModelConfig")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    relu_gain = np.sqrt(2.0)
    params, buffers = {}, {}

    def bn(prefix, width):
        params[prefix + "bn.weight"] = np.ones(width)
        params[prefix + "bn.bias"] = np.zeros(width)
        buffers[prefix + "bn.running_mean"] = np.zeros(width)
        buffers[prefix + "bn.running_var"] = np.ones(width)

    in_ch = 1
    for i, b in enumerate(cfg.encoder_blocks):
        p = f"encoder.{i}."
        fan_in = in_ch // b.groups * 9
        params[p + "conv.weight"] = _uniform(rng, (b.channels, in_ch // b.groups, 3, 3), fan_in, relu_gain)
        bn(p, b.channels)
        in_ch = b.channels

    width_in = cfg.encoder_out_dim
    for i in range(PROJECTOR_HIDDEN):
        p = f"projector.{i}."
        params[p + "linear.weight"] = _uniform(rng, (cfg.projector_dim, width_in), width_in, relu_gain)
        bn(p, cfg.projector_dim)
        width_in = cfg.projector_dim
    p = f"projector.{PROJECTOR_HIDDEN}."
    params[p + "linear.weight"] = _uniform(rng, (cfg.projector_dim, width_in), width_in, 1.0)
    params[p + "linear.bias"] = np.zeros(cfg.projector_dim)

    if cfg.num_classes > 0:
        params["classifier.weight"] = _uniform(rng, (cfg.num_classes, cfg.encoder_out_dim), cfg.encoder_out_dim, 1.0)
        params["classifier.bias"] = np.zeros(cfg.num_classes)

    # order: params as built, then buffers grouped per BN site
    params = {k: v.astype(dtype) for k, v in params.items()}
    buffers = {k: v.astype(dtype) for k, v in buffers.items()}
    return ParamStore(cfg, params, buffers)


def _check_mode(mode):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


def _bn(store, prefix, x, train):
    cfg = store.config
    return batchnorm_forward(
        x, store.params[prefix + "bn.weight"], store.params[prefix + "bn.bias"],
        store.buffers[prefix + "bn.running_mean"], store.buffers[prefix + "bn.running_var"],
        train, cfg.bn_momentum, cfg.bn_eps)


def _commit(store, stats):
    for prefix, (mean, var) in stats.items():
        store.buffers[prefix + "bn.running_mean"] = mean.astype(store.dtype)
        store.buffers[prefix + "bn.running_var"] = var.astype(store.dtype)


def _encoder_fwd(store, x, train):
    cfg = store.config
    x = np.asarray(x)
    if x.ndim != 3 or tuple(x.shape[1:]) != cfg.input_shape:
        raise ValueError(f"expected batch of shape (n, {cfg.input_shape[0]}, {cfg.input_shape[1]}), got {x.shape}")
    h = x.astype(store.dtype, copy=False)[:, None]
    caches, stats = [], {}
    for i, b in enumerate(cfg.encoder_blocks):
        p = f"encoder.{i}."
        h, cc = conv3x3_forward(h, store.params[p + "conv.weight"], b.stride, b.groups)
        h, bc, st = _bn(store, p, h, train)
        if st is not None:
            stats[p] = st
        h, rc = relu_forward(h)
        caches.append((cc, bc, rc))
    y, pc = global_avg_pool_forward(h)
    return y, (caches, pc), stats


def _encoder_bwd(store, dy, cache, grads):
    caches, pc = cache
    dh = global_avg_pool_backward(dy, pc)
    for i in reversed(range(len(caches))):
        p = f"encoder.{i}."
        cc, bc, rc = caches[i]
        dh = relu_backward(dh, rc)
        dh, dgamma, dbeta = batchnorm_backward(dh, bc)
        grads[p + "bn.weight"] = dgamma
        grads[p + "bn.bias"] = dbeta
        dh, dw = conv3x3_backward(dh, cc, store.params[p + "conv.weight"], need_dx=i > 0)
        grads[p + "conv.weight"] = dw


def _projector_fwd(store, y, train):
    cfg = store.config
    if y.ndim != 2 or y.shape[1] != cfg.encoder_out_dim:
        raise ValueError(f"expected features of shape (n, {cfg.encoder_out_dim}), got {y.shape}")
    h = y
    caches, stats = [], {}
    for i in range(PROJECTOR_HIDDEN):
        p = f"projector.{i}."
        h, lc = linear_forward(h, store.params[p + "linear.weight"])
        h, bc, st = _bn(store, p, h, train)
        if st is not None:
            stats[p] = st
        h, rc = relu_forward(h)
        caches.append((lc, bc, rc))
    p = f"projector.{PROJECTOR_HIDDEN}."
    z, lc = linear_forward(h, store.params[p + "linear.weight"], store.params[p + "linear.bias"])
    return z, (caches, lc), stats


def _projector_bwd(store, dz, cache, grads):
    caches, lc = cache
    p = f"projector.{PROJECTOR_HIDDEN}."
    dh, dw, db = linear_backward(dz, lc, store.params[p + "linear.weight"])
    grads[p + "linear.weight"] = dw
    grads[p + "linear.bias"] = db
    for i in reversed(range(PROJECTOR_HIDDEN)):
        p = f"projector.{i}."
        lc_i, bc, rc = caches[i]
        dh = relu_backward(dh, rc)
        dh, dgamma, dbeta = batchnorm_backward(dh, bc)
        grads[p + "bn.weight"] = dgamma
        grads[p + "bn.bias"] = dbeta
        dh, dw, _ = linear_backward(dh, lc_i, store.params[p + "linear.weight"], has_bias=False)
        grads[p + "linear.weight"] = dw
    return dh


def encoder_forward(store: ParamStore, batch, mode: str = "eval") -> np.ndarray:
    """(n, F, T) spectrograms to (n, d') features; train mode updates BN buffers."""
    train = _check_mode(mode)
    y, _, stats = _encoder_fwd(store, batch, train)
    _commit(store, stats)
    return y


def projector_forward(store: ParamStore, features, mode: str = "eval") -> np.ndarray:
    train = _check_mode(mode)
    z, _, stats = _projector_fwd(store, np.asarray(features, dtype=store.dtype), train)
    _commit(store, stats)
    return z


def classifier_forward(store: ParamStore, features) -> np.ndarray:
    cfg = store.config
    if cfg.num_classes < 1 or "classifier.weight" not in store.params:
        raise ValueError("model has no classifier")
    features = np.asarray(features, dtype=store.dtype)
    if features.ndim != 2 or features.shape[1] != cfg.encoder_out_dim:
        raise ValueError(f"expected features of shape (n, {cfg.encoder_out_dim}), got {features.shape}")
    logits, _ = linear_forward(features, store.params["classifier.weight"], store.params["classifier.bias"])
    return logits


def embed(store: ParamStore, batch, mode: str = "eval") -> np.ndarray:
    return projector_forward(store, encoder_forward(store, batch, mode), mode)


def ssl_loss_and_grads(store: ParamStore, views_a, views_b, w: VicregWeights = VicregWeights()):
    """VICReg loss over two batches of views and gradients for encoder + projector.

    Both views pass through the model in train mode, each with its own batch
    statistics; running buffers are updated by both passes in turn.
    """
    if len(views_a) < 2 or len(views_a) != len(views_b):
        raise ValueError("need two equally sized batches of at least 2 views")
    ya, enc_a, st = _encoder_fwd(store, views_a, True)
    _commit(store, st)
    za, proj_a, st = _projector_fwd(store, ya, True)
    _commit(store, st)
    yb, enc_b, st = _encoder_fwd(store, views_b, True)
    _commit(store, st)
    zb, proj_b, st = _projector_fwd(store, yb, True)
    _commit(store, st)

    breakdown = vicreg_total(za, zb, w)
    dza, dzb = vicreg_grad(za, zb, w)

    grads_a, grads_b = {}, {}
    dya = _projector_bwd(store, dza.astype(store.dtype), proj_a, grads_a)
    _encoder_bwd(store, dya, enc_a, grads_a)
    dyb = _projector_bwd(store, dzb.astype(store.dtype), proj_b, grads_b)
    _encoder_bwd(store, dyb, enc_b, grads_b)
    grads = {name: grads_a[name] + grads_b[name] for name in store.params if name in grads_a}
    return breakdown, grads


def supervised_loss_and_grads(store: ParamStore, batch, labels, freeze_encoder: bool = False):
    """Softmax cross-entropy of the classifier on encoder features.

    With ``freeze_encoder`` the encoder runs in eval mode (buffers untouched)
    and its gradients are all zero. The projector is never read.
    """
    labels = np.asarray(labels)
    k = store.config.num_classes
    if labels.ndim != 1 or len(labels) != len(batch):
        raise ValueError("labels must be a vector with one entry per sample")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    y, enc_cache, stats = _encoder_fwd(store, batch, not freeze_encoder)
    _commit(store, stats)
    loss, grads, dy = _classifier_loss(store, y, labels)
    if freeze_encoder:
        for name in store.subset(["encoder."]):
            grads[name] = np.zeros_like(store.params[name])
    else:
        _encoder_bwd(store, dy, enc_cache, grads)
    return loss, {name: grads[name] for name in store.params if name in grads}


def classifier_loss_and_grads(store: ParamStore, features, labels):
    """Cross-entropy and classifier gradients on precomputed (frozen) features."""
    loss, grads, _ = _classifier_loss(store, np.asarray(features, dtype=store.dtype), np.asarray(labels))
    return loss, grads


def _classifier_loss(store, y, labels):
    logits = classifier_forward(store, y)
    loss, dlogits = softmax_cross_entropy(logits.astype(np.float64), labels)
    dy, dw, db = linear_backward(dlogits.astype(store.dtype), y, store.params["classifier.weight"])
    return loss, {"classifier.weight": dw, "classifier.bias": db}, dy


def kernel_backend() -> str:
    return kernels.BACKEND
