"""Dynamic prompting by meta-fusion.

Learnable prompt tokens are refined in two residual cross-attention stages:
first against the variable-averaged (purely temporal) summary of the latent
sequence, then against the time-averaged (per-variable) summary. Each stage is
LayerNorm(CrossAttn(queries, keys, keys) + queries).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .errors import InvalidInputError, ShapeError
from .layers import AttnParams


@dataclass
class PromptParams:
    tokens: np.ndarray  # [K, d_model], the learnable prompts
    attn_t: AttnParams  # stage 1: attend over temporal aggregate
    attn_c: AttnParams  # stage 2: attend over variable aggregate
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    n_heads: int = field(default=1, metadata={"learnable": False})

    def __post_init__(self):
        K, dm = self.tokens.shape
        if K < 1:
            raise InvalidInputError("need at least one prompt token")
        if dm % self.n_heads != 0:
            raise InvalidInputError("d_model must be divisible by n_heads")
        if self.attn_t.wq.shape != (dm, dm):
            raise ShapeError("attention projections must be [d_model, d_model]")


def init_prompt_params(
    rng: np.random.Generator,
    n_prompts: int = 8,
    d_model: int = 64,
    n_heads: int = 1,
    dtype=np.float32,
) -> PromptParams:
    def attn():
        p = layers.init_attn_params(rng, d_model)
        for name in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"):
            setattr(p, name, getattr(p, name).astype(dtype))
        return p

    return PromptParams(
        tokens=(rng.normal(0.0, 0.02, size=(n_prompts, d_model))).astype(dtype),
        attn_t=attn(),
        attn_c=attn(),
        ln1_g=np.ones(d_model, dtype=dtype),
        ln1_b=np.zeros(d_model, dtype=dtype),
        ln2_g=np.ones(d_model, dtype=dtype),
        ln2_b=np.zeros(d_model, dtype=dtype),
    )


# ---------------------------------------------------------------------------
# aggregates
# ---------------------------------------------------------------------------

def _check_cld(S: np.ndarray | Tensor) -> None:
    if len(S.shape) != 3:
        raise ShapeError("latent sequence must be [C, L, d_model]")
    if S.shape[0] < 1 or S.shape[1] < 1:
        raise InvalidInputError("latent sequence axes must be nonempty")


def aggregate_variables_t(S: Tensor) -> Tensor:
    """Mean over the variable axis: [C, L, d] -> [L, d]."""
    _check_cld(S)
    return ad.mean(S, axis=0)


def aggregate_time_t(S: Tensor) -> Tensor:
    """Mean over the time axis: [C, L, d] -> [C, d]."""
    _check_cld(S)
    return ad.mean(S, axis=1)


def aggregate_variables(S: np.ndarray) -> np.ndarray:
    return aggregate_variables_t(ad.const(S)).data


def aggregate_time(S: np.ndarray) -> np.ndarray:
    return aggregate_time_t(ad.const(S)).data


# ---------------------------------------------------------------------------
# meta-fusion
# ---------------------------------------------------------------------------

def meta_fusion_t(p, S: Tensor, n_heads: int, collect=None) -> Tensor:
    """Two-stage prompt refinement; returns refined prompts [K, d_model].

    ``collect``, if given, receives the two attention-weight tensors.
    """
    _check_cld(S)
    if S.shape[2] != p.tokens.shape[1]:
        raise ShapeError("latent d_model does not match prompt width")
    s_t = aggregate_variables_t(S)  # [L, d]
    s_c = aggregate_time_t(S)  # [C, d]
    attn1, w1 = layers.attention(p.tokens, s_t, p.attn_t, n_heads)
    p1 = layers.layer_norm(attn1 + p.tokens, p.ln1_g, p.ln1_b)
    attn2, w2 = layers.attention(p1, s_c, p.attn_c, n_heads)
    p2 = layers.layer_norm(attn2 + p1, p.ln2_g, p.ln2_b)
    if collect is not None:
        collect.extend([w1, w2])
    return p2


def meta_fusion(params: PromptParams, S: np.ndarray) -> np.ndarray:
    """Array-level wrapper over :func:`meta_fusion_t`."""
    p = layers.tensorize(params, {}, requires_grad=False)
    return meta_fusion_t(p, ad.const(np.asarray(S)), params.n_heads).data
