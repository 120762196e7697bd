"""Model registry: the built-in dummy model plus an import hook for real ones.

A model is a callable ``(width, height, rgb: bytes, num_classes) -> bytes``
returning w*h*K little-endian float32 scores, row-major, channel-last.
"""

from __future__ import annotations

import array
import importlib
import sys
from typing import Callable

ModelFn = Callable[[int, int, bytes, int], bytes]


def _to_le_bytes(values: array.array) -> bytes:
    if sys.byteorder == "big":
        values = array.array(values.typecode, values)
        values.byteswap()
    return values.tobytes()


def constant_model(width: int, height: int, rgb: bytes, num_classes: int) -> bytes:
    """Score 1.0 for class 0 everywhere; the no-dependency conformance model."""
    pixel = array.array("f", [1.0] + [0.0] * (num_classes - 1))
    return _to_le_bytes(pixel) * (width * height)


def mean_brightness_model(width: int, height: int, rgb: bytes, num_classes: int) -> bytes:
    """Toy model with real per-pixel variation: class 0 score is the pixel's
    mean channel value scaled to [0, 1], remaining mass on class 1."""
    out = array.array("f", bytes(width * height * num_classes * 4))
    for i in range(width * height):
        r, g, b = rgb[3 * i : 3 * i + 3]
        bright = (r + g + b) / (3 * 255.0)
        out[i * num_classes] = bright
        if num_classes > 1:
            out[i * num_classes + 1] = 1.0 - bright
    return _to_le_bytes(out)


BUILTIN_MODELS: dict[str, ModelFn] = {
    "constant": constant_model,
    "mean-brightness": mean_brightness_model,
}


def load_model(spec: str) -> ModelFn:
    """Resolve a model spec: a builtin name, or ``import:package.module:attr``
    naming a ModelFn (the extension point for wrapping real frameworks)."""
    if spec in BUILTIN_MODELS:
        return BUILTIN_MODELS[spec]
    if spec.startswith("import:"):
        target = spec[len("import:"):]
        module_name, _, attr = target.partition(":")
        if not module_name or not attr:
            raise ValueError(f"import spec must be 'import:module:attribute', got {spec!r}")
        module = importlib.import_module(module_name)
        model = getattr(module, attr)
        if not callable(model):
            raise ValueError(f"{target} is not callable")
        return model
    raise ValueError(
        f"unknown model {spec!r}; builtins: {sorted(BUILTIN_MODELS)} or 'import:module:attr'"
    )
