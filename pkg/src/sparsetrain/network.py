"""Masked feed-forward networks: layer specs, parameters, sparse forward and
backward passes, and a dense relaxed path for straight-through comparisons.

A network is a flat list of layers. Conv layers and hidden Dense layers own
*channels* (feature maps / hidden units) registered consecutively in a global
channel registry; a binary mask over the registry decides which channels exist
in a given pass. The classifier (final Dense) layer is never maskable.

The sparse path never computes a pruned channel: its output block is zero by
construction, no error signal is propagated to or through it, its weight
gradients are exactly zero because they are never written, and the multiply
counter only sees active work. The relaxed path computes every channel densely
and multiplies each maskable layer's output by a continuous per-channel gate,
which is what a straight-through estimate of d(loss)/d(gate) differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_ops as T
from .errors import ContractViolation, DimensionError, ParameterError


# ---------------------------------------------------------------------------
# layer specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    norm: bool = False


@dataclass(frozen=True)
class Dense:
    out_units: int
    norm: bool = False


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class MaxPool:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


_LAYER_TAGS = {Conv: "conv", Dense: "dense", Relu: "relu", MaxPool: "maxpool", Flatten: "flatten"}
_TAG_LAYERS = {v: k for k, v in _LAYER_TAGS.items()}


class NetworkSpec:
    """Validated architecture: input shape, layer list, class count.

    Construction walks the layer list once, resolving every intermediate
    shape and assigning each maskable layer its slice of the channel
    registry. The final layer must be a Dense producing ``classes`` logits.
    """

    def __init__(self, input_shape, layers, classes):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = tuple(layers)
        self.classes = int(classes)
        if self.classes < 2:
            raise ParameterError(f"classes must be >= 2, got {classes}")
        if len(self.input_shape) not in (1, 3):
            raise ParameterError(
                f"input shape must be (features,) or (channels, H, W), got {self.input_shape}"
            )
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise ParameterError("the last layer must be the Dense classifier")
        if self.layers[-1].out_units != self.classes:
            raise ParameterError(
                f"classifier width {self.layers[-1].out_units} != classes {self.classes}"
            )
        self._walk_shapes()

    def _walk_shapes(self):
        shape = self.input_shape
        self.in_shapes = []
        self.out_shapes = []
        self.channel_slices = [None] * len(self.layers)  # (start, count) per maskable layer
        start = 0
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            self.in_shapes.append(shape)
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ParameterError(f"layer {i}: conv needs (C,H,W) input, got {shape}")
                c, h, w = shape
                if layer.kernel < 1 or layer.kernel > min(h, w) + 2 * layer.padding:
                    raise ParameterError(
                        f"layer {i}: kernel {layer.kernel} incompatible with input {shape}"
                    )
                if layer.stride < 1 or layer.padding < 0:
                    raise ParameterError(f"layer {i}: bad stride/padding")
                ho = T.conv_output_size(h, layer.kernel, layer.stride, layer.padding)
                wo = T.conv_output_size(w, layer.kernel, layer.stride, layer.padding)
                if ho < 1 or wo < 1:
                    raise ParameterError(f"layer {i}: empty output for input {shape}")
                shape = (layer.out_channels, ho, wo)
                self.channel_slices[i] = (start, layer.out_channels)
                start += layer.out_channels
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise ParameterError(
                        f"layer {i}: dense needs flattened input, got {shape}"
                    )
                if layer.out_units < 1:
                    raise ParameterError(f"layer {i}: out_units must be >= 1")
                shape = (layer.out_units,)
                if i != last:
                    self.channel_slices[i] = (start, layer.out_units)
                    start += layer.out_units
            elif isinstance(layer, Relu):
                pass
            elif isinstance(layer, MaxPool):
                if len(shape) != 3:
                    raise ParameterError(f"layer {i}: maxpool needs (C,H,W) input, got {shape}")
                c, h, w = shape
                if h < 2 or w < 2:
                    raise ParameterError(f"layer {i}: input {shape} too small to pool")
                shape = (c, h // 2, w // 2)
            elif isinstance(layer, Flatten):
                if len(shape) != 3:
                    raise ParameterError(f"layer {i}: flatten needs (C,H,W) input, got {shape}")
                shape = (shape[0] * shape[1] * shape[2],)
            else:
                raise ParameterError(f"layer {i}: unknown layer type {type(layer).__name__}")
            self.out_shapes.append(shape)
        self.num_channels = start
        if self.num_channels == 0:
            raise ParameterError("network has no maskable channels")

    @property
    def maskable_layers(self):
        return [i for i, sl in enumerate(self.channel_slices) if sl is not None]

    def channel_range(self, layer_index):
        sl = self.channel_slices[layer_index]
        if sl is None:
            raise ParameterError(f"layer {layer_index} owns no channels")
        return sl

    def to_dict(self):
        layers = []
        for layer in self.layers:
            d = {"type": _LAYER_TAGS[type(layer)]}
            if isinstance(layer, Conv):
                d.update(out_channels=layer.out_channels, kernel=layer.kernel,
                         stride=layer.stride, padding=layer.padding, norm=layer.norm)
            elif isinstance(layer, Dense):
                d.update(out_units=layer.out_units, norm=layer.norm)
            layers.append(d)
        return {"input_shape": list(self.input_shape), "classes": self.classes, "layers": layers}

    @classmethod
    def from_dict(cls, d):
        layers = []
        for entry in d["layers"]:
            kind = _TAG_LAYERS[entry["type"]]
            kwargs = {k: v for k, v in entry.items() if k != "type"}
            layers.append(kind(**kwargs))
        return cls(tuple(d["input_shape"]), layers, d["classes"])

    def describe(self):
        lines = [f"input {self.input_shape}"]
        for i, layer in enumerate(self.layers):
            sl = self.channel_slices[i]
            chan = f" channels [{sl[0]}:{sl[0] + sl[1]})" if sl else ""
            lines.append(f"{i:2d} {type(layer).__name__:8s} -> {self.out_shapes[i]}{chan}")
        lines.append(f"total maskable channels: {self.num_channels}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class NetworkParams:
    """Per-layer weight arrays plus a version counter used to detect stale
    forward caches after an in-place update."""

    def __init__(self, layers):
        self.layers = layers  # list aligned with spec.layers; None for stateless layers
        self.version = 0

    @classmethod
    def init(cls, spec, rng):
        """He-style initialisation, independent of any mask."""
        layers = []
        for i, layer in enumerate(spec.layers):
            if isinstance(layer, Conv):
                cin = spec.in_shapes[i][0]
                fan_in = cin * layer.kernel * layer.kernel
                arrays = {
                    "w": rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                    (layer.out_channels, cin, layer.kernel, layer.kernel)),
                    "b": np.zeros(layer.out_channels),
                }
                if layer.norm:
                    arrays["gamma"] = np.ones(layer.out_channels)
                    arrays["beta"] = np.zeros(layer.out_channels)
                layers.append(arrays)
            elif isinstance(layer, Dense):
                fan_in = spec.in_shapes[i][0]
                arrays = {
                    "w": rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, layer.out_units)),
                    "b": np.zeros(layer.out_units),
                }
                if layer.norm:
                    arrays["gamma"] = np.ones(layer.out_units)
                    arrays["beta"] = np.zeros(layer.out_units)
                layers.append(arrays)
            else:
                layers.append(None)
        return cls(layers)

    def zero_grads(self):
        return [
            None if arrays is None else {k: np.zeros_like(v) for k, v in arrays.items()}
            for arrays in self.layers
        ]

    def copy(self):
        out = NetworkParams([
            None if arrays is None else {k: v.copy() for k, v in arrays.items()}
            for arrays in self.layers
        ])
        out.version = self.version
        return out

    def flat_items(self):
        """Yield (name, array) pairs with stable names like 'layer3.w'."""
        for i, arrays in enumerate(self.layers):
            if arrays is None:
                continue
            for key in sorted(arrays):
                yield f"layer{i}.{key}", arrays[key]

    def total_parameters(self):
        return sum(a.size for _, a in self.flat_items())


def sgd_step(params, grads, lr):
    """In-place plain SGD update w -= lr * g on every parameter array.

    Bumps the parameter version so caches built before the update refuse to
    run a backward pass.
    """
    lr = float(lr)
    if not lr > 0.0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    if len(grads) != len(params.layers):
        raise DimensionError("gradient container does not match parameter layout")
    for arrays, garrays in zip(params.layers, grads):
        if arrays is None:
            continue
        for key, w in arrays.items():
            g = garrays[key]
            if g.shape != w.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} != parameter shape {w.shape} for '{key}'"
                )
            w -= lr * g
            T.record_ops(g.size, g.size)
    params.version += 1
    return params


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Everything the matching backward pass needs from a forward pass."""

    spec: NetworkSpec
    params: NetworkParams
    params_version: int
    mask: np.ndarray | None
    entries: list
    logits: np.ndarray
    loss: float | None
    grad_logits: np.ndarray | None
    batch_size: int
    relaxed: bool
    first_compute_layer: int


def _validate_inputs(spec, inputs, labels):
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        raise DimensionError(
            f"input shape {x.shape[1:]} != network input shape {spec.input_shape}"
        )
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (x.shape[0],):
            raise DimensionError(
                f"labels shape {labels.shape} does not match batch of {x.shape[0]}"
            )
    return x, labels


def _validate_mask(spec, mask):
    if mask is None:
        return np.ones(spec.num_channels, dtype=np.uint8)
    m = np.asarray(mask)
    if m.shape != (spec.num_channels,):
        raise DimensionError(
            f"mask length {m.shape} != channel count {spec.num_channels}"
        )
    vals = np.unique(m)
    if not np.isin(vals, (0, 1)).all():
        raise ParameterError("mask entries must be 0 or 1")
    return m.astype(np.uint8)


def _affine_norm_forward(out, arrays, active, channel_axis_spatial):
    """Per-channel affine y_c = gamma_c * x_c + beta_c on active channels only.

    Restricting to active channels matters: beta on a pruned channel would
    re-inject a nonzero value into a block that must stay exactly zero.
    """
    gamma = arrays["gamma"][active]
    beta = arrays["beta"][active]
    pre = out[:, active].copy()
    if channel_axis_spatial:
        out[:, active] = gamma[None, :, None, None] * pre + beta[None, :, None, None]
    else:
        out[:, active] = gamma[None, :] * pre + beta[None, :]
    T.record_ops(pre.size, 2 * pre.size)
    return pre


def _run_sparse(spec, params, mask, x, want_entries):
    """Shared sparse walk; returns (logits, entries, first_compute_layer)."""
    entries = [None] * len(spec.layers) if want_entries else None
    h = x
    if len(spec.input_shape) == 3:
        active = np.arange(spec.input_shape[0])
        space = "image"
    else:
        active = np.arange(spec.input_shape[0])
        space = "vector"
    first_compute = next(
        i for i, l in enumerate(spec.layers) if isinstance(l, (Conv, Dense))
    )
    last = len(spec.layers) - 1
    flat_hw = None
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            start, count = spec.channel_slices[i]
            a_out = np.flatnonzero(mask[start : start + count])
            arrays = params.layers[i]
            out = T.conv2d(h, arrays["w"], layer.stride, layer.padding,
                           active_in=active, active_out=a_out)
            if a_out.size:
                out[:, a_out] += arrays["b"][a_out][None, :, None, None]
                T.record_ops(0, out[:, a_out].size)
            pre_norm = None
            if layer.norm and a_out.size:
                pre_norm = _affine_norm_forward(out, arrays, a_out, True)
            if want_entries:
                entries[i] = {"kind": "conv", "x": h, "active_in": active,
                              "active_out": a_out, "pre_norm": pre_norm}
            h, active, space = out, a_out, "image"
        elif isinstance(layer, Dense):
            arrays = params.layers[i]
            if i == last:
                a_out = np.arange(layer.out_units)
            else:
                start, count = spec.channel_slices[i]
                a_out = np.flatnonzero(mask[start : start + count])
            out = np.zeros((h.shape[0], layer.out_units))
            if a_out.size:
                w = arrays["w"][np.ix_(active, a_out)]
                out[:, a_out] = T.matmul(h[:, active], w) + arrays["b"][a_out][None, :]
                T.record_ops(0, out[:, a_out].size)
            pre_norm = None
            if layer.norm and a_out.size:
                pre_norm = _affine_norm_forward(out, arrays, a_out, False)
            if want_entries:
                entries[i] = {"kind": "dense", "x": h, "active_in": active,
                              "active_out": a_out, "pre_norm": pre_norm}
            h, active, space = out, a_out, "vector"
        elif isinstance(layer, Relu):
            if want_entries:
                entries[i] = {"kind": "relu", "pre": h[:, active].copy(), "active": active}
            h = T.relu(h)
        elif isinstance(layer, MaxPool):
            in_shape = h.shape
            h, argmax = T.maxpool2(h)
            if want_entries:
                entries[i] = {"kind": "maxpool", "argmax": argmax, "in_shape": in_shape}
        elif isinstance(layer, Flatten):
            b, c, ih, iw = h.shape
            flat_hw = ih * iw
            if want_entries:
                entries[i] = {"kind": "flatten", "in_shape": h.shape}
            h = h.reshape(b, c * flat_hw)
            active = (active[:, None] * flat_hw + np.arange(flat_hw)[None, :]).ravel()
            space = "vector"
    return h, entries, first_compute


def forward(spec, params, mask, inputs, labels, want_cache=True):
    """Masked sparse forward pass; returns ``(loss, cache)``.

    Pruned channels are skipped in both operand positions of every product,
    so their activations are exactly zero and the multiply counter reflects
    only active work. ``want_cache=False`` skips stashing backward state (the
    arithmetic and counts are identical).
    """
    x, labels = _validate_inputs(spec, inputs, labels)
    m = _validate_mask(spec, mask)
    logits, entries, first = _run_sparse(spec, params, m, x, want_cache)
    loss, grad_logits = T.softmax_cross_entropy(logits, labels)
    cache = None
    if want_cache:
        cache = ForwardCache(
            spec=spec, params=params, params_version=params.version, mask=m,
            entries=entries, logits=logits, loss=loss, grad_logits=grad_logits,
            batch_size=x.shape[0], relaxed=False, first_compute_layer=first,
        )
    return loss, cache


def forward_logits(spec, params, mask, inputs):
    """Masked sparse forward pass returning raw logits (prediction path)."""
    x, _ = _validate_inputs(spec, inputs, None)
    m = _validate_mask(spec, mask)
    logits, _, _ = _run_sparse(spec, params, m, x, False)
    return logits


# ---------------------------------------------------------------------------
# sparse backward
# ---------------------------------------------------------------------------

def backward_weights(cache):
    """Weight gradients from a sparse forward cache.

    Gradient blocks belonging to pruned channels are exactly zero — they are
    never written — and no error signal is propagated through a pruned
    channel. Raises if the parameters changed since the forward pass or if
    the cache came from the relaxed path.
    """
    if cache is None or cache.entries is None:
        raise ContractViolation("forward was run without cache capture")
    if cache.relaxed:
        raise ContractViolation("weight backward expects a sparse cache, not a relaxed one")
    if cache.params.version != cache.params_version:
        raise ContractViolation(
            "parameters were updated after this forward pass; rerun forward"
        )
    params = cache.params
    grads = params.zero_grads()
    delta = cache.grad_logits
    for i in range(len(cache.spec.layers) - 1, -1, -1):
        entry = cache.entries[i]
        layer = cache.spec.layers[i]
        if entry is None:
            continue
        kind = entry["kind"]
        if kind == "dense":
            a_in, a_out = entry["active_in"], entry["active_out"]
            arrays = params.layers[i]
            if a_out.size == 0:
                delta = np.zeros_like(entry["x"])
                continue
            d = delta[:, a_out]
            if layer.norm:
                d = _affine_norm_backward(d, entry["pre_norm"], arrays, grads[i], a_out)
            x_in = entry["x"][:, a_in]
            grads[i]["w"][np.ix_(a_in, a_out)] = T.matmul(x_in.T, d)
            grads[i]["b"][a_out] = d.sum(axis=0)
            T.record_ops(0, d.size)
            if i == cache.first_compute_layer:
                break
            new_delta = np.zeros_like(entry["x"])
            new_delta[:, a_in] = T.matmul(d, arrays["w"][np.ix_(a_in, a_out)].T)
            delta = new_delta
        elif kind == "conv":
            a_in, a_out = entry["active_in"], entry["active_out"]
            arrays = params.layers[i]
            if a_out.size == 0:
                delta = np.zeros_like(entry["x"])
                continue
            d = np.zeros_like(delta)
            d[:, a_out] = delta[:, a_out]
            if layer.norm:
                dslice = _affine_norm_backward(
                    delta[:, a_out], entry["pre_norm"], arrays, grads[i], a_out,
                    spatial=True,
                )
                d[:, a_out] = dslice
            grads[i]["b"][a_out] = d[:, a_out].sum(axis=(0, 2, 3))
            T.record_ops(0, d[:, a_out].size)
            need_input = i != cache.first_compute_layer
            gw, gx = T.conv2d_backward(
                entry["x"], arrays["w"], d, layer.stride, layer.padding,
                active_in=a_in, active_out=a_out, need_input_grad=need_input,
            )
            grads[i]["w"] = gw
            if not need_input:
                break
            delta = gx
        elif kind == "relu":
            act = entry["active"]
            if act.size:
                delta[:, act] = T.relu_backward(delta[:, act], entry["pre"])
        elif kind == "maxpool":
            delta = T.maxpool2_backward(delta, entry["argmax"], entry["in_shape"])
        elif kind == "flatten":
            delta = delta.reshape(entry["in_shape"])
    return grads


def _affine_norm_backward(d, pre_norm, arrays, grad_arrays, active, spatial=False):
    """Backward through y = gamma * x + beta on the active slice; fills the
    gamma/beta gradient blocks and returns d(loss)/dx."""
    if spatial:
        grad_arrays["gamma"][active] = (d * pre_norm).sum(axis=(0, 2, 3))
        grad_arrays["beta"][active] = d.sum(axis=(0, 2, 3))
        out = d * arrays["gamma"][active][None, :, None, None]
    else:
        grad_arrays["gamma"][active] = (d * pre_norm).sum(axis=0)
        grad_arrays["beta"][active] = d.sum(axis=0)
        out = d * arrays["gamma"][active][None, :]
    T.record_ops(2 * d.size, 2 * d.size)
    return out


# ---------------------------------------------------------------------------
# relaxed (dense) path
# ---------------------------------------------------------------------------

def forward_relaxed(spec, params, gate_values, inputs, labels):
    """Dense forward pass with a continuous per-channel gate.

    Every channel is computed; each maskable layer's post-norm output is then
    multiplied by its gate value. At binary gates this reproduces the sparse
    forward exactly, but at dense cost — which is the point: it is the object
    a straight-through estimator differentiates, and its multiply count shows
    what the sparse path avoids.
    """
    x, labels = _validate_inputs(spec, inputs, labels)
    g = np.ascontiguousarray(gate_values, dtype=np.float64)
    if g.shape != (spec.num_channels,):
        raise DimensionError(
            f"gate length {g.shape} != channel count {spec.num_channels}"
        )
    entries = [None] * len(spec.layers)
    h = x
    last = len(spec.layers) - 1
    first = next(i for i, l in enumerate(spec.layers) if isinstance(l, (Conv, Dense)))
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            arrays = params.layers[i]
            out = T.conv2d(h, arrays["w"], layer.stride, layer.padding)
            out += arrays["b"][None, :, None, None]
            T.record_ops(0, out.size)
            pre_norm = None
            if layer.norm:
                all_ch = np.arange(layer.out_channels)
                pre_norm = _affine_norm_forward(out, arrays, all_ch, True)
            start, count = spec.channel_slices[i]
            gate = g[start : start + count]
            pre_gate = out.copy()
            out = out * gate[None, :, None, None]
            T.record_ops(out.size)
            entries[i] = {"kind": "conv", "x": h, "pre_norm": pre_norm,
                          "pre_gate": pre_gate, "gate": gate, "slice": (start, count)}
            h = out
        elif isinstance(layer, Dense):
            arrays = params.layers[i]
            out = T.matmul(h, arrays["w"]) + arrays["b"][None, :]
            T.record_ops(0, out.size)
            pre_norm = None
            if layer.norm:
                all_u = np.arange(layer.out_units)
                pre_norm = _affine_norm_forward(out, arrays, all_u, False)
            entry = {"kind": "dense", "x": h, "pre_norm": pre_norm}
            if i != last:
                start, count = spec.channel_slices[i]
                gate = g[start : start + count]
                entry["pre_gate"] = out.copy()
                entry["gate"] = gate
                entry["slice"] = (start, count)
                out = out * gate[None, :]
                T.record_ops(out.size)
            entries[i] = entry
            h = out
        elif isinstance(layer, Relu):
            entries[i] = {"kind": "relu", "pre": h}
            h = T.relu(h)
        elif isinstance(layer, MaxPool):
            in_shape = h.shape
            h, argmax = T.maxpool2(h)
            entries[i] = {"kind": "maxpool", "argmax": argmax, "in_shape": in_shape}
        elif isinstance(layer, Flatten):
            entries[i] = {"kind": "flatten", "in_shape": h.shape}
            h = h.reshape(h.shape[0], -1)
    loss, grad_logits = T.softmax_cross_entropy(h, labels)
    return loss, ForwardCache(
        spec=spec, params=params, params_version=params.version, mask=None,
        entries=entries, logits=h, loss=loss, grad_logits=grad_logits,
        batch_size=x.shape[0], relaxed=True, first_compute_layer=first,
    )


def backward_gates_relaxed(cache):
    """d(loss)/d(gate_c) for every channel from a relaxed cache: the inner
    product of the upstream error with the channel's pre-gate activation,
    accumulated over batch and spatial positions. Dense cost by construction.
    """
    if cache is None or not cache.relaxed:
        raise ContractViolation("gate backward expects a cache from the relaxed forward")
    if cache.params.version != cache.params_version:
        raise ContractViolation(
            "parameters were updated after this forward pass; rerun forward"
        )
    spec = cache.spec
    params = cache.params
    gate_grad = np.zeros(spec.num_channels)
    delta = cache.grad_logits
    for i in range(len(spec.layers) - 1, -1, -1):
        entry = cache.entries[i]
        layer = spec.layers[i]
        kind = entry["kind"]
        if kind == "dense":
            arrays = params.layers[i]
            d = delta
            if "gate" in entry:
                start, count = entry["slice"]
                gate_grad[start : start + count] = (d * entry["pre_gate"]).sum(axis=0)
                d = d * entry["gate"][None, :]
                T.record_ops(2 * d.size, d.size)
            if layer.norm:
                d = d * arrays["gamma"][None, :]
                T.record_ops(d.size)
            if i == cache.first_compute_layer:
                break
            delta = T.matmul(d, arrays["w"].T)
        elif kind == "conv":
            arrays = params.layers[i]
            d = delta
            if "gate" in entry:
                start, count = entry["slice"]
                gate_grad[start : start + count] = (d * entry["pre_gate"]).sum(axis=(0, 2, 3))
                d = d * entry["gate"][None, :, None, None]
                T.record_ops(2 * d.size, d.size)
            if layer.norm:
                d = d * arrays["gamma"][None, :, None, None]
                T.record_ops(d.size)
            if i == cache.first_compute_layer:
                break
            _, delta = T.conv2d_backward(
                entry["x"], arrays["w"], d, layer.stride, layer.padding,
                need_input_grad=True,
            )
        elif kind == "relu":
            delta = T.relu_backward(delta, entry["pre"])
        elif kind == "maxpool":
            delta = T.maxpool2_backward(delta, entry["argmax"], entry["in_shape"])
        elif kind == "flatten":
            delta = delta.reshape(entry["in_shape"])
    return gate_grad
