"""Neural building blocks on top of the autodiff engine.

Parameters live as plain numpy arrays inside dataclasses; ``tensorize``
wraps a parameter container into a mirror structure of Tensors and registers
every leaf in a flat name->Tensor dict so the optimizer and the gradient
checker can address individual arrays.
"""
from __future__ import annotations

import dataclasses
from types import SimpleNamespace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LN_EPS = 1e-5
MASK_NEG = -1e30  # exp(MASK_NEG - max) underflows to exactly 0


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = x @ w
    return out if b is None else out + b


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    return ad.layer_norm_op(x, gamma, beta, eps)


@dataclasses.dataclass
class AttnParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray


def init_attn_params(rng: np.random.Generator, d_model: int) -> AttnParams:
    def proj():
        return xavier_uniform(rng, d_model, d_model)

    zeros = lambda: np.zeros(d_model)
    return AttnParams(proj(), proj(), proj(), proj(), zeros(), zeros(), zeros(), zeros())


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    t, dm = x.shape
    dh = dm // n_heads
    return ad.transpose(ad.reshape(x, (t, n_heads, dh)), (1, 0, 2))  # [H, T, dh]


def _merge_heads(x: Tensor) -> Tensor:
    h, t, dh = x.shape
    return ad.reshape(ad.transpose(x, (1, 0, 2)), (t, h * dh))


def attention(
    q_in: Tensor,
    kv_in: Tensor,
    p,
    n_heads: int,
    mask_bias: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Multi-head scaled dot-product attention.

    ``q_in`` [Tq, d_model] provides queries; ``kv_in`` [Tk, d_model] provides
    keys and values. ``mask_bias`` is a constant [Tq, Tk] additive mask (0 or
    MASK_NEG). Returns (output [Tq, d_model], weights [H, Tq, Tk]).
    """
    dm = q_in.shape[-1]
    dh = dm // n_heads
    q = _split_heads(linear(q_in, p.wq, p.bq), n_heads)
    k = _split_heads(linear(kv_in, p.wk, p.bk), n_heads)
    v = _split_heads(linear(kv_in, p.wv, p.bv), n_heads)
    scores = (q @ ad.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh))
    if mask_bias is not None:
        scores = scores + ad.const(mask_bias[None, :, :].astype(scores.dtype))
    weights = ad.softmax(scores, axis=-1)
    out = _merge_heads(weights @ v)
    return linear(out, p.wo, p.bo), weights


def mlp(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return linear(ad.gelu(linear(x, w1, b1)), w2, b2)


# ---------------------------------------------------------------------------
# parameter containers <-> tensor namespaces
# ---------------------------------------------------------------------------

def _is_learnable(field: dataclasses.Field) -> bool:
    return field.metadata.get("learnable", True)


def tensorize(params, registry: dict[str, Tensor], prefix: str = "", requires_grad: bool = True):
    """Recursively wrap a dataclass/list of ndarrays into Tensors.

    Every ndarray leaf becomes one Tensor, registered in ``registry`` under a
    dotted name. Fields marked ``metadata={"learnable": False}`` pass through
    as plain arrays.
    """
    if isinstance(params, np.ndarray):
        t = Tensor(params, requires_grad=requires_grad)
        registry[prefix] = t
        return t
    if isinstance(params, (list, tuple)):
        return [
            tensorize(p, registry, f"{prefix}.{i}" if prefix else str(i), requires_grad)
            for i, p in enumerate(params)
        ]
    if dataclasses.is_dataclass(params):
        ns = SimpleNamespace()
        for f in dataclasses.fields(params):
            value = getattr(params, f.name)
            name = f"{prefix}.{f.name}" if prefix else f.name
            if not _is_learnable(f) or value is None:
                setattr(ns, f.name, value)
                continue
            setattr(ns, f.name, tensorize(value, registry, name, requires_grad))
        return ns
    return params


def named_arrays(params, prefix: str = "") -> dict[str, np.ndarray]:
    """Flat dotted-name -> ndarray view of a parameter container."""
    out: dict[str, np.ndarray] = {}
    if isinstance(params, np.ndarray):
        out[prefix] = params
        return out
    if isinstance(params, (list, tuple)):
        for i, p in enumerate(params):
            out.update(named_arrays(p, f"{prefix}.{i}" if prefix else str(i)))
        return out
    if dataclasses.is_dataclass(params):
        for f in dataclasses.fields(params):
            value = getattr(params, f.name)
            if not _is_learnable(f) or value is None:
                continue
            name = f"{prefix}.{f.name}" if prefix else f.name
            out.update(named_arrays(value, name))
        return out
    return out


def assign_named_arrays(params, values: dict[str, np.ndarray]) -> None:
    """Write ``values`` back into a parameter container, in place."""
    current = named_arrays(params)
    for name, arr in current.items():
        if name not in values:
            raise KeyError(f"missing parameter {name}")
        if values[name].shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}")
        arr[...] = values[name]
