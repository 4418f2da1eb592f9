"""Model presets, keyed by the ids used in run configs."""

from __future__ import annotations

from .errors import ConfigError
from .network import Conv, Dense, Flatten, MaxPool, NetworkSpec, Relu


def make_mlp(input_shape, classes, hidden=(32,), norm=True):
    """Fully-connected net with the given hidden widths; flattens image input."""
    layers = []
    if len(input_shape) == 3:
        layers.append(Flatten())
    for width in hidden:
        layers.append(Dense(int(width), norm=norm))
        layers.append(Relu())
    layers.append(Dense(classes))
    return NetworkSpec(input_shape, layers, classes)


def _mlp_tiny(input_shape, classes):
    return make_mlp(input_shape, classes, hidden=(32,))


def _mlp_small(input_shape, classes):
    return make_mlp(input_shape, classes, hidden=(128, 64))


def _conv_small(input_shape, classes):
    layers = [
        Conv(8, kernel=3, stride=1, padding=1, norm=True), Relu(), MaxPool(),
        Conv(16, kernel=3, stride=1, padding=1, norm=True), Relu(), MaxPool(),
        Conv(16, kernel=3, stride=1, padding=1, norm=True), Relu(),
        Flatten(),
        Dense(classes),
    ]
    return NetworkSpec(input_shape, layers, classes)


def _conv_wide(input_shape, classes):
    layers = [
        Conv(16, kernel=3, stride=1, padding=1, norm=True), Relu(),
        Conv(32, kernel=3, stride=1, padding=1, norm=True), Relu(),
        Conv(32, kernel=3, stride=1, padding=1, norm=True), Relu(),
        MaxPool(),
        Flatten(),
        Dense(128, norm=True), Relu(),
        Dense(classes),
    ]
    return NetworkSpec(input_shape, layers, classes)


MODEL_BUILDERS = {
    "mlp_tiny": _mlp_tiny,
    "mlp_small": _mlp_small,
    "conv_small": _conv_small,
    "conv_wide": _conv_wide,
}


def build_model(model_id, input_shape, classes):
    try:
        builder = MODEL_BUILDERS[model_id]
    except KeyError:
        known = ", ".join(sorted(MODEL_BUILDERS))
        raise ConfigError(f"run.model: unknown model '{model_id}' (known: {known})") from None
    return builder(tuple(input_shape), int(classes))
