"""Minimal deterministic network engine for the fixed layer menu.

Supports dense, single-channel conv1d and transposed conv1d layers with
relu/tanh/identity activations, mean-square and binary-cross-entropy
losses, plain SGD with optional momentum, finite-difference gradient
checking, and text checkpoints. All math is float64; training is
single-threaded and reproducible under a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels

ACTIVATIONS = ("relu", "tanh", "identity")
LAYER_KINDS = ("dense", "conv1d", "transposed_conv1d")
LOSS_KINDS = ("mse", "bce")

BCE_EPS = 1e-7
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Raised for inconsistent layer geometry or malformed checkpoints."""


class NumericsError(ArithmeticError):
    """Raised when a non-finite value is produced during training."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_len: int
    out_len: int
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    activation: str = "identity"

    def validate(self, index: int = -1) -> None:
        where = f"layer {index} ({self.kind})"
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"{where}: unknown kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"{where}: unknown activation {self.activation!r}")
        if self.in_len < 1 or self.out_len < 1:
            raise ConfigError(f"{where}: lengths must be positive")
        if self.kind == "dense":
            return
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(f"{where}: bad kernel/stride/padding")
        if self.kind == "conv1d":
            expect = (self.in_len + 2 * self.padding - self.kernel_size) // self.stride + 1
            if expect != self.out_len:
                raise ConfigError(
                    f"{where}: conv geometry gives out_len {expect}, spec says {self.out_len}"
                )
        else:
            # window may overhang the scatter extent by < stride (output padding)
            full = (self.in_len - 1) * self.stride + self.kernel_size
            if self.padding + self.out_len > full + self.stride - 1:
                raise ConfigError(
                    f"{where}: transposed conv window [{self.padding}, "
                    f"{self.padding + self.out_len}) exceeds scatter extent {full}"
                )


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for i, layer in enumerate(self.layers):
            layer.validate(i)
            if i and layer.in_len != self.layers[i - 1].out_len:
                raise ConfigError(
                    f"layer {i} in_len {layer.in_len} != layer {i - 1} "
                    f"out_len {self.layers[i - 1].out_len}"
                )

    @property
    def input_len(self) -> int:
        return self.layers[0].in_len

    @property
    def output_len(self) -> int:
        return self.layers[-1].out_len


def solve_conv_geometry(in_len: int, out_len: int, kernel_size: int, stride: int) -> int:
    """Smallest zero padding making conv1d(in_len -> out_len) exact, or raise."""
    lo = (out_len - 1) * stride
    hi = out_len * stride - 1
    for pad in range(0, out_len * stride + kernel_size + 1):
        span = in_len + 2 * pad - kernel_size
        if lo <= span <= hi:
            return pad
        if span > hi:
            break
    raise ConfigError(
        f"no integer padding maps conv1d {in_len}->{out_len} "
        f"(kernel {kernel_size}, stride {stride})"
    )


def conv_layer(in_len, out_len, activation, kernel_size=None, stride=None) -> LayerSpec:
    """Conv1d layer with geometry auto-solved (stride ~ in/out, kernel 2*stride+1).

    When unspecified, the stride starts at round(in/out) and is bumped until
    an integer padding exists (round(240/200)=1 cannot shrink, for example).
    """
    strides = [stride] if stride is not None else [max(1, round(in_len / out_len)) + d for d in range(3)]
    err = None
    for s in strides:
        ksz = kernel_size if kernel_size is not None else 2 * s + 1
        try:
            pad = solve_conv_geometry(in_len, out_len, ksz, s)
        except ConfigError as exc:
            err = exc
            continue
        return LayerSpec("conv1d", in_len, out_len, ksz, s, pad, activation)
    raise err


def mirror_layer(layer: LayerSpec, activation: str) -> LayerSpec:
    """Transposed-conv twin of a conv layer (swapped lengths, same geometry)."""
    if layer.kind != "conv1d":
        raise ConfigError("only conv1d layers can be mirrored")
    spec = LayerSpec(
        "transposed_conv1d",
        layer.out_len,
        layer.in_len,
        layer.kernel_size,
        layer.stride,
        layer.padding,
        activation,
    )
    spec.validate()
    return spec


class NetworkWeights:
    """Per-layer parameter blocks; `version` advances on each optimizer step."""

    def __init__(self, blocks: list[dict[str, np.ndarray]]):
        self.blocks = blocks
        self.version = 0

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(
            [{k: v.copy() for k, v in blk.items()} for blk in self.blocks]
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for blk in self.blocks for v in blk.values())

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for blk in self.blocks:
            for key in sorted(blk):
                h.update(np.ascontiguousarray(blk[key]).tobytes())
        return h.hexdigest()


def init_weights(spec: NetworkSpec, seed: int) -> NetworkWeights:
    """Symmetric uniform init, bound sqrt(6/(fan_in+fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    blocks = []
    for layer in spec.layers:
        if layer.kind == "dense":
            bound = math.sqrt(6.0 / (layer.in_len + layer.out_len))
            w = rng.uniform(-bound, bound, size=(layer.out_len, layer.in_len))
            b = np.zeros(layer.out_len)
        else:
            bound = math.sqrt(6.0 / (2 * layer.kernel_size))
            w = rng.uniform(-bound, bound, size=layer.kernel_size)
            b = np.zeros(1)
        blocks.append({"w": w, "b": b})
    return NetworkWeights(blocks)


def _check_shapes(spec: NetworkSpec, weights: NetworkWeights) -> None:
    if len(weights.blocks) != len(spec.layers):
        raise ConfigError(
            f"weights have {len(weights.blocks)} blocks for {len(spec.layers)} layers"
        )
    for i, (layer, blk) in enumerate(zip(spec.layers, weights.blocks)):
        if layer.kind == "dense":
            want_w, want_b = (layer.out_len, layer.in_len), (layer.out_len,)
        else:
            want_w, want_b = (layer.kernel_size,), (1,)
        if blk["w"].shape != want_w or blk["b"].shape != want_b:
            raise ConfigError(
                f"layer {i} ({layer.kind}): parameter shapes {blk['w'].shape}/"
                f"{blk['b'].shape} do not match spec {want_w}/{want_b}"
            )


def _activate(act: str, z: np.ndarray) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(act: str, z: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    if act == "relu":
        return da * (z > 0.0)
    if act == "tanh":
        return da * (1.0 - a * a)
    return da


@dataclass
class ForwardCache:
    spec: NetworkSpec
    weights_version: int
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    output: np.ndarray


def _linear_forward(layer: LayerSpec, blk, x):
    if layer.kind == "dense":
        return kernels.dense_forward(x, blk["w"], blk["b"])
    if layer.kind == "conv1d":
        return kernels.conv1d_forward(
            x, blk["w"], blk["b"], layer.stride, layer.padding, layer.out_len
        )
    return kernels.tconv1d_forward(
        x, blk["w"], blk["b"], layer.stride, layer.padding, layer.out_len
    )


def forward(spec: NetworkSpec, weights: NetworkWeights, x) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; returns the output and a cache for backward()."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != spec.input_len:
        raise ConfigError(
            f"input length {x.shape} does not match network input {spec.input_len}"
        )
    _check_shapes(spec, weights)
    inputs, preacts = [], []
    a = x
    for layer, blk in zip(spec.layers, weights.blocks):
        inputs.append(a)
        z = _linear_forward(layer, blk, a)
        preacts.append(z)
        a = _activate(layer.activation, z)
    return a, ForwardCache(spec, weights.version, inputs, preacts, a)


def loss(kind: str, pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    if kind == "mse":
        d = pred - target
        return float(np.mean(d * d))
    if kind == "bce":
        if np.any(target < 0.0) or np.any(target > 1.0):
            raise ValueError("bce targets must lie in [0, 1]")
        p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
        return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)))
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_grad(kind: str, pred, target) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    if kind == "mse":
        return 2.0 * (pred - target) / n
    if kind == "bce":
        if np.any(target < 0.0) or np.any(target > 1.0):
            raise ValueError("bce targets must lie in [0, 1]")
        p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
        g = (p - target) / (p * (1.0 - p)) / n
        # clamped coordinates carry no gradient
        g[(pred < BCE_EPS) | (pred > 1.0 - BCE_EPS)] = 0.0
        return g
    raise ValueError(f"unknown loss kind {kind!r}")


def backward_from(
    spec: NetworkSpec, weights: NetworkWeights, cache: ForwardCache, dout
) -> tuple[list[dict[str, np.ndarray]], np.ndarray]:
    """Backpropagate an output-side gradient; returns (param grads, d input)."""
    if cache.spec is not spec and cache.spec != spec:
        raise ConfigError("cache was produced by a different network spec")
    if cache.weights_version != weights.version:
        raise ConfigError(
            f"stale cache: weights at version {weights.version}, "
            f"cache at {cache.weights_version}"
        )
    da = np.ascontiguousarray(dout, dtype=np.float64)
    grads: list[dict[str, np.ndarray]] = [None] * len(spec.layers)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        blk = weights.blocks[i]
        z = cache.preacts[i]
        a = _activate(layer.activation, z) if layer.activation == "tanh" else z
        dz = _activate_grad(layer.activation, z, a, da)
        dz = np.ascontiguousarray(dz)
        x = cache.inputs[i]
        if layer.kind == "dense":
            dw, db, da = kernels.dense_backward(x, blk["w"], dz)
        elif layer.kind == "conv1d":
            dw, db, da = kernels.conv1d_backward(x, blk["w"], dz, layer.stride, layer.padding)
        else:
            dw, db, da = kernels.tconv1d_backward(x, blk["w"], dz, layer.stride, layer.padding)
        grads[i] = {"w": np.asarray(dw), "b": np.asarray(db)}
    return grads, np.asarray(da)


def backward(spec, weights, cache, loss_kind, target):
    """Gradients of loss(kind, forward(x), target) w.r.t. parameters and input."""
    dout = loss_grad(loss_kind, cache.output, target)
    return backward_from(spec, weights, cache, dout)


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.0
    velocity: list | None = None
    step_count: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def optimizer_step(weights: NetworkWeights, grads, state: OptimizerState) -> NetworkWeights:
    """In-place SGD step: w <- w - lr * (momentum-adjusted gradient)."""
    if state.velocity is None:
        state.velocity = [
            {k: np.zeros_like(v) for k, v in blk.items()} for blk in weights.blocks
        ]
    for i, (blk, g) in enumerate(zip(weights.blocks, grads)):
        for key in blk:
            garr = g[key]
            if not np.isfinite(garr).all():
                raise NumericsError(f"non-finite gradient in layer {i} ({key})")
            v = state.velocity[i][key]
            v *= state.momentum
            v += garr
            blk[key] -= state.learning_rate * v
    state.step_count += 1
    weights.version += 1
    return weights


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    n_skipped: int
    kink_at_base: bool


def _min_relu_margin(spec: NetworkSpec, preacts) -> float:
    margins = [
        np.min(np.abs(z))
        for layer, z in zip(spec.layers, preacts)
        if layer.activation == "relu"
    ]
    return min(margins) if margins else math.inf


def gradient_check(
    spec: NetworkSpec,
    weights: NetworkWeights,
    x,
    target,
    loss_kind: str = "mse",
    eps: float = 1e-5,
    kink_tol: float = 1e-6,
) -> GradCheckResult:
    """Compare backward() with central finite differences, parameter by parameter.

    Probes whose forward pass brings some relu pre-activation within
    kink_tol of zero (or across it) are skipped: the loss is not
    differentiable there and central differences are meaningless.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    x = np.ascontiguousarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    out, cache = forward(spec, weights, x)
    grads, _ = backward(spec, weights, cache, loss_kind, target)
    kink_at_base = _min_relu_margin(spec, cache.preacts) < kink_tol

    max_rel = 0.0
    n_checked = 0
    n_skipped = 0
    for i, blk in enumerate(weights.blocks):
        for key in ("w", "b"):
            arr = blk[key]
            gan = grads[i][key]
            flat = arr.reshape(-1)
            gflat = gan.reshape(-1)
            for j in range(flat.shape[0]):
                orig = flat[j]
                flat[j] = orig + eps
                out_p, cache_p = forward(spec, weights, x)
                lp = loss(loss_kind, out_p, target)
                flat[j] = orig - eps
                out_m, cache_m = forward(spec, weights, x)
                lm = loss(loss_kind, out_m, target)
                flat[j] = orig

                bad = kink_at_base
                if not bad:
                    for layer, zp, zm in zip(spec.layers, cache_p.preacts, cache_m.preacts):
                        if layer.activation != "relu":
                            continue
                        if min(np.min(np.abs(zp)), np.min(np.abs(zm))) < kink_tol:
                            bad = True
                            break
                        if np.any((zp > 0) != (zm > 0)):
                            bad = True
                            break
                if bad:
                    n_skipped += 1
                    continue
                gfd = (lp - lm) / (2.0 * eps)
                rel = abs(gfd - gflat[j]) / max(abs(gfd) + abs(gflat[j]), 1e-4)
                max_rel = max(max_rel, rel)
                n_checked += 1
    return GradCheckResult(max_rel, n_checked, n_skipped, kink_at_base)


def _layer_to_dict(layer: LayerSpec) -> dict:
    return {
        "kind": layer.kind,
        "in_len": layer.in_len,
        "out_len": layer.out_len,
        "kernel_size": layer.kernel_size,
        "stride": layer.stride,
        "padding": layer.padding,
        "activation": layer.activation,
    }


def _layer_from_dict(d: dict) -> LayerSpec:
    return LayerSpec(
        d["kind"],
        d["in_len"],
        d["out_len"],
        d.get("kernel_size", 0),
        d.get("stride", 1),
        d.get("padding", 0),
        d.get("activation", "identity"),
    )


def save_weights(spec: NetworkSpec, weights: NetworkWeights, path, seed_lineage=None) -> None:
    """Checkpoint as JSON text; floats keep exact round-trip precision."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "seed_lineage": list(seed_lineage) if seed_lineage else [],
        "layers": [_layer_to_dict(layer) for layer in spec.layers],
        "params": [
            {"w": blk["w"].reshape(-1).tolist(), "b": blk["b"].reshape(-1).tolist()}
            for blk in weights.blocks
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_weights(path) -> tuple[NetworkSpec, NetworkWeights]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"corrupt checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    spec = NetworkSpec(tuple(_layer_from_dict(d) for d in doc["layers"]))
    if len(doc["params"]) != len(spec.layers):
        raise ConfigError("checkpoint parameter count does not match layer count")
    blocks = []
    for i, (layer, params) in enumerate(zip(spec.layers, doc["params"])):
        if layer.kind == "dense":
            want_w, wshape = layer.out_len * layer.in_len, (layer.out_len, layer.in_len)
            want_b = layer.out_len
        else:
            want_w, wshape = layer.kernel_size, (layer.kernel_size,)
            want_b = 1
        w = np.asarray(params["w"], dtype=np.float64)
        b = np.asarray(params["b"], dtype=np.float64)
        if w.size != want_w or b.size != want_b:
            raise ConfigError(
                f"checkpoint layer {i} ({layer.kind}): truncated or oversized "
                f"parameter block ({w.size} weights, expected {want_w})"
            )
        blocks.append({"w": w.reshape(wshape), "b": b})
    weights = NetworkWeights(blocks)
    _check_shapes(spec, weights)
    return spec, weights
