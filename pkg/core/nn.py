"""
Layer helpers built on the autodiff core: initializers, masked attention
normalisation and a central finite-difference gradient checker.
"""

from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from core.tensor import Tensor, add, as_tensor, matmul, mul, no_grad, softmax

MASK_FILL = -1e30


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int], name: Optional[str] = None) -> Tensor:
    """Uniform in ±sqrt(6 / (fan_in + fan_out)); fans are the last two axes"""
    fan_in = shape[-2] if len(shape) > 1 else shape[-1]
    fan_out = shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True, name=name)


def zeros_param(shape: Sequence[int], name: Optional[str] = None) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True, name=name)


def ones_param(shape: Sequence[int], name: Optional[str] = None) -> Tensor:
    return Tensor(np.ones(tuple(shape)), requires_grad=True, name=name)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def masked_softmax(scores: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """
    Softmax restricted to entries where `mask` is 1. Rows without any
    admissible entry come out as all zeros.
    """
    mask = np.asarray(mask, dtype=np.float64)
    filled = add(mul(scores, mask), (1.0 - mask) * MASK_FILL)
    weights = softmax(filled, axis=axis)
    return mul(weights, mask)


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """
    Central finite differences of a scalar function w.r.t. every entry of `tensor`.
    `fn` must rebuild the forward pass from the current tensor values.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + h
            plus = fn().item()
            flat[k] = original - h
            minus = fn().item()
            flat[k] = original
            out[k] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor), taken entrywise"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_gradients(fn: Callable[[], Tensor], params: Dict[str, Tensor], h: float = 1e-5,
                    floor: float = 1e-6) -> Dict[str, float]:
    """
    Compares autodiff gradients with central differences for every named tensor

    Returns:
        name -> worst relative error
    """
    for p in params.values():
        p.zero_grad()
    loss = fn()
    loss.backward()
    report = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numerical_gradient(fn, p, h=h)
        report[name] = relative_error(analytic, numeric, floor=floor)
    return report


def gradient_pair(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> Tuple[np.ndarray, np.ndarray]:
    tensor.zero_grad()
    fn().backward()
    analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
    return analytic, numerical_gradient(fn, tensor, h=h)


__all__ = [
    "as_tensor", "check_gradients", "glorot_uniform", "gradient_pair", "linear", "masked_softmax",
    "numerical_gradient", "ones_param", "relative_error", "zeros_param",
]
