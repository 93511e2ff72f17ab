"""Decoder backbone over [prompt tokens || spectral timestep tokens].

Each history step's truncated latent spectrum is flattened per variable and
projected to d_model; the per-timestep token is the mean over variables plus a
learned time encoding. Prompt tokens form a bidirectional prefix; timestep
tokens attend causally among themselves and to all prompts. The output head
maps the final timestep token's hidden state to (re, im) for every retained
bin of every variable; the spectrum is conjugate-symmetrized before inversion
so the reconstruction is real.

Also hosts the model container (config + all parameter groups), the published
checkpoint format, and the end-to-end ``forecast`` composition.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import fmoe as fmoe_mod
from . import layers
from . import prompt as prompt_mod
from .autodiff import Tensor
from .errors import FreqcastError, InvalidInputError, ShapeError
from .fmoe import FmoeParams, init_fmoe_params
from .grid import GridField, HistoryWindow, NormStats, compute_norm_stats
from .hashutil import config_hash
from .layers import MASK_NEG, AttnParams
from .prompt import PromptParams, init_prompt_params
from .spectral import kept_flat_indices, mirror_flat_permutation, radial_band_index

CHECKPOINT_MAGIC = b"FQCK"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    var_names: tuple[str, ...]
    M: int
    N: int
    L: int = 4
    k_max: int = 4
    latent_dim: int = 32
    expert_hidden: int = 64
    n_experts: int = 4
    n_bands: int = 4
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    n_prompts: int = 8
    use_fft: bool = True
    use_prompt: bool = True
    use_moe: bool = True
    prompt_sees_timesteps: bool = True
    norm_epsilon: float = 1e-6
    dtype: str = "float32"

    def __post_init__(self):
        self.var_names = tuple(self.var_names)
        if self.d_model % self.n_heads != 0:
            raise InvalidInputError("d_model must be divisible by n_heads")
        if self.n_layers < 1:
            raise InvalidInputError("need at least one backbone layer")
        if self.L < 1:
            raise InvalidInputError("history length must be positive")
        if self.use_fft and self.k_max > min(self.M, self.N) // 2:
            raise InvalidInputError("k_max exceeds min(M, N)/2")

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def kept_indices(self) -> np.ndarray:
        """Flat bin indices retained by the head and the tokenizer."""
        return _cached_kept_indices(self.M, self.N, self.k_max, self.use_fft)

    @property
    def n_kept(self) -> int:
        return int(self.kept_indices().size)

    @property
    def flat_width(self) -> int:
        return self.n_kept * self.latent_dim

    @property
    def head_width(self) -> int:
        return 2 * self.n_vars * self.n_kept

    def band_index(self) -> np.ndarray:
        return _cached_band_index(self.M, self.N, self.n_bands)


@lru_cache(maxsize=None)
def _cached_kept_indices(M: int, N: int, k_max: int, use_fft: bool) -> np.ndarray:
    idx = kept_flat_indices(M, N, k_max) if use_fft else np.arange(M * N)
    idx.flags.writeable = False
    return idx


@lru_cache(maxsize=None)
def _cached_band_index(M: int, N: int, n_bands: int) -> np.ndarray:
    from .spectral import band_edges_uniform

    idx = radial_band_index(M, N, band_edges_uniform(M, N, n_bands))
    idx.flags.writeable = False
    return idx


@lru_cache(maxsize=None)
def _cached_kept_bin_mask(M: int, N: int, k_max: int, use_fft: bool, dtype_name: str):
    mask = np.zeros(M * N, dtype=np.dtype(dtype_name))
    mask[_cached_kept_indices(M, N, k_max, use_fft)] = 1.0
    out = mask.reshape(1, M, N, 1)
    out.flags.writeable = False
    return out


@dataclass
class LayerParams:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    attn: AttnParams
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray


@dataclass
class BackboneParams:
    w_in: np.ndarray  # [flat_width, d_model]
    b_in: np.ndarray
    time_table: np.ndarray  # [L, d_model]
    blocks: list
    lnf_g: np.ndarray
    lnf_b: np.ndarray
    head_w: np.ndarray  # [d_model, head_width]
    head_b: np.ndarray


@dataclass
class ModelParams:
    config: ModelConfig = field(metadata={"learnable": False})
    fmoe: FmoeParams = None
    prompt: PromptParams = None
    backbone: BackboneParams = None


@dataclass(frozen=True)
class TokenSequence:
    """Backbone input: prompts (if any) followed by timestep tokens."""

    tokens: np.ndarray  # [K + T, d_model]
    n_prompt: int
    n_time: int

    def __post_init__(self):
        if self.n_time < 1:
            raise InvalidInputError("need at least one timestep token")
        if self.tokens.shape[0] != self.n_prompt + self.n_time:
            raise ShapeError("token count does not match segment sizes")


def init_backbone_params(rng: np.random.Generator, cfg: ModelConfig) -> BackboneParams:
    dt = cfg.np_dtype
    dm = cfg.d_model
    blocks = []
    for _ in range(cfg.n_layers):
        blocks.append(
            LayerParams(
                ln1_g=np.ones(dm, dtype=dt),
                ln1_b=np.zeros(dm, dtype=dt),
                attn=_typed_attn(rng, dm, dt),
                ln2_g=np.ones(dm, dtype=dt),
                ln2_b=np.zeros(dm, dtype=dt),
                mlp_w1=layers.xavier_uniform(rng, dm, 4 * dm).astype(dt),
                mlp_b1=np.zeros(4 * dm, dtype=dt),
                mlp_w2=layers.xavier_uniform(rng, 4 * dm, dm).astype(dt),
                mlp_b2=np.zeros(dm, dtype=dt),
            )
        )
    return BackboneParams(
        w_in=layers.xavier_uniform(rng, cfg.flat_width, dm).astype(dt),
        b_in=np.zeros(dm, dtype=dt),
        time_table=rng.normal(0.0, 0.02, size=(cfg.L, dm)).astype(dt),
        blocks=blocks,
        lnf_g=np.ones(dm, dtype=dt),
        lnf_b=np.zeros(dm, dtype=dt),
        head_w=(rng.normal(0.0, 0.02, size=(dm, cfg.head_width))).astype(dt),
        head_b=np.zeros(cfg.head_width, dtype=dt),
    )


def _typed_attn(rng, dm, dt) -> AttnParams:
    p = layers.init_attn_params(rng, dm)
    for name in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"):
        setattr(p, name, getattr(p, name).astype(dt))
    return p


def init_model(cfg: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(
        config=cfg,
        fmoe=init_fmoe_params(
            rng,
            cfg.M,
            cfg.N,
            latent_dim=cfg.latent_dim,
            expert_hidden=cfg.expert_hidden,
            n_experts=cfg.n_experts,
            n_bands=cfg.n_bands,
            dtype=cfg.np_dtype,
        ),
        prompt=init_prompt_params(
            rng, cfg.n_prompts, cfg.d_model, n_heads=1, dtype=cfg.np_dtype
        ),
        backbone=init_backbone_params(rng, cfg),
    )


# ---------------------------------------------------------------------------
# graph builders
# ---------------------------------------------------------------------------

def tokenize_t(latents: list[Tensor], p, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Latent spectra (one [V, M, N, d] per step) -> (S [C, T, dm], tokens [T, dm])."""
    T = len(latents)
    kept = cfg.kept_indices()
    per_step = []
    for lat in latents:
        V, M, N, d = lat.shape
        if kept.size * d != p.w_in.shape[0]:
            raise ShapeError(
                f"latent truncation width {kept.size * d} does not match the "
                f"input projection ({p.w_in.shape[0]})"
            )
        rows = ad.transpose(ad.reshape(lat, (V, M * N, d)), (1, 0, 2))  # [MN, V, d]
        kept_rows = ad.take_rows(rows, kept)  # [n_kept, V, d]
        flat = ad.reshape(ad.transpose(kept_rows, (1, 0, 2)), (V, kept.size * d))
        s_t = layers.linear(flat, p.w_in, p.b_in)  # [V, dm]
        per_step.append(ad.reshape(s_t, (V, 1, cfg.d_model)))
    S = ad.concat(per_step, axis=1)  # [C, T, dm]
    tokens = ad.mean(S, axis=0) + p.time_table[:T]
    return S, tokens


@lru_cache(maxsize=None)
def build_mask(n_prompt: int, n_time: int, prompt_sees_timesteps: bool = True) -> np.ndarray:
    """Additive attention mask [K+T, K+T]: 0 where allowed, MASK_NEG where not."""
    total = n_prompt + n_time
    mask = np.full((total, total), MASK_NEG)
    mask[:n_prompt, :n_prompt] = 0.0
    if prompt_sees_timesteps:
        mask[:n_prompt, n_prompt:] = 0.0
    mask[n_prompt:, :n_prompt] = 0.0
    t = np.arange(n_time)
    mask[n_prompt:, n_prompt:] = np.where(t[None, :] <= t[:, None], 0.0, MASK_NEG)
    mask.flags.writeable = False
    return mask


def backbone_forward_t(
    tokens: Tensor, p, cfg: ModelConfig, mask: np.ndarray, collect=None
) -> Tensor:
    """Pre-norm transformer stack; returns hidden states [K+T, d_model]."""
    x = tokens
    n_layers = len(p.blocks)
    for blk in p.blocks:
        normed = layers.layer_norm(x, blk.ln1_g, blk.ln1_b)
        attn_out, weights = layers.attention(normed, normed, blk.attn, cfg.n_heads, mask)
        if collect is not None:
            collect.append(weights)
        x = x + attn_out
        normed2 = layers.layer_norm(x, blk.ln2_g, blk.ln2_b)
        x = x + layers.mlp(normed2, blk.mlp_w1, blk.mlp_b1, blk.mlp_w2, blk.mlp_b2)
    if n_layers > 0:
        x = layers.layer_norm(x, p.lnf_g, p.lnf_b)
    return x


def project_to_spectrum_t(h_last: Tensor, p, cfg: ModelConfig) -> Tensor:
    """Final hidden state -> stacked spectrum [V, M, N, 2], zero outside kept bins."""
    kept = cfg.kept_indices()
    V, M, N = cfg.n_vars, cfg.M, cfg.N
    vec = layers.linear(ad.reshape(h_last, (1, cfg.d_model)), p.head_w, p.head_b)
    per_bin = ad.transpose(ad.reshape(vec, (V, kept.size, 2)), (1, 0, 2))  # [n_kept, V, 2]
    full = ad.scatter_rows(per_bin, kept, M * N)  # [MN, V, 2]
    if cfg.use_fft:
        perm = mirror_flat_permutation(M, N)
        mirrored = ad.take_rows(full, perm)
        re = 0.5 * (full[:, :, 0] + mirrored[:, :, 0])
        im = 0.5 * (full[:, :, 1] - mirrored[:, :, 1])
        full = ad.stack_last([re, im])
    return ad.reshape(ad.transpose(full, (1, 0, 2)), (V, M, N, 2))


@contextmanager
def _stage(name: str):
    try:
        yield
    except FreqcastError as e:
        e.args = (f"[stage {name}] {e.args[0] if e.args else ''}",) + e.args[1:]
        raise


def forecast_t(
    window: np.ndarray,
    stats: NormStats,
    p,
    cfg: ModelConfig,
    collect=None,
) -> Tensor:
    """Differentiable one-step forecast from an [L, V, M, N] window.

    Returns the denormalized predicted field [V, M, N] as a graph tensor.
    """
    dt = cfg.np_dtype
    L = window.shape[0]
    if L != cfg.L:
        raise ShapeError(f"window length {L} does not match configured L={cfg.L}")
    if window.shape[1] != cfg.n_vars or window.shape[2:] != (cfg.M, cfg.N):
        raise ShapeError("window dims do not match model config")
    scale = stats.scale.astype(dt)
    mu = stats.mu.astype(dt)
    band_index = cfg.band_index()
    kept_mask = _cached_kept_bin_mask(cfg.M, cfg.N, cfg.k_max, cfg.use_fft, np.dtype(dt).name)

    with _stage("normalize"):
        xhat = (window.astype(dt) - mu[None, :, None, None]) / scale[None, :, None, None]

    latents = []
    for t in range(L):
        x_t = ad.const(xhat[t])
        with _stage("dft2"):
            if cfg.use_fft:
                spec_t = ad.dft2_stacked(x_t)
            else:
                zero = ad.const(np.zeros_like(xhat[t]))
                spec_t = ad.stack_last([x_t, zero])
            spec_t = spec_t * ad.const(kept_mask)
        with _stage("moe_forward"):
            latents.append(fmoe_mod.moe_forward_t(spec_t, p.fmoe, band_index, cfg.use_moe))

    with _stage("tokenize"):
        S, time_tokens = tokenize_t(latents, p.backbone, cfg)

    if cfg.use_prompt:
        with _stage("meta_fusion"):
            refined = prompt_mod.meta_fusion_t(p.prompt, S, p.prompt.n_heads, collect)
        seq = ad.concat([refined, time_tokens], axis=0)
        n_prompt = cfg.n_prompts
    else:
        seq = time_tokens
        n_prompt = 0

    with _stage("backbone_forward"):
        mask = build_mask(n_prompt, L, cfg.prompt_sees_timesteps)
        hidden = backbone_forward_t(seq, p.backbone, cfg, mask, collect)

    with _stage("project_to_spectrum"):
        spec_pred = project_to_spectrum_t(hidden[n_prompt + L - 1], p.backbone, cfg)

    with _stage("idft2"):
        if cfg.use_fft:
            xnorm = ad.idft2_stacked(spec_pred, imag_tol=1e-6)
        else:
            xnorm = spec_pred[:, :, :, 0]

    with _stage("denormalize"):
        pred = xnorm * ad.const(scale[:, None, None]) + ad.const(mu[:, None, None])
    return pred


# ---------------------------------------------------------------------------
# public pipeline
# ---------------------------------------------------------------------------

def _check_history(history: HistoryWindow, cfg: ModelConfig) -> None:
    first = history.steps[0]
    if first.var_names != cfg.var_names:
        raise ShapeError("history variables do not match model config")
    if first.shape[1:] != (cfg.M, cfg.N):
        raise ShapeError("history grid does not match model config")
    if len(history) != cfg.L:
        raise ShapeError(f"history length {len(history)} != configured L={cfg.L}")


def forecast(history: HistoryWindow, model: ModelParams) -> GridField:
    """One-step prediction for the step following the window."""
    cfg = model.config
    _check_history(history, cfg)
    stats = compute_norm_stats(history, cfg.norm_epsilon)
    p = layers.tensorize(model, {}, requires_grad=False)
    pred = forecast_t(history.stacked(), stats, p, cfg)
    first = history.steps[0]
    values = pred.data.astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("forecast produced non-finite values")
    return GridField(values, first.var_names, first.lats, first.lons)


def rollout(history: HistoryWindow, model: ModelParams, n_steps: int) -> list[GridField]:
    """Autoregressive multi-step forecast; prompts are recomputed per step."""
    if n_steps < 1:
        raise InvalidInputError("rollout needs at least one step")
    steps = list(history.steps)
    times = list(np.asarray(history.timestamps, dtype=np.float64))
    dt = times[-1] - times[-2] if len(times) > 1 else 1.0
    preds: list[GridField] = []
    for _ in range(n_steps):
        window = HistoryWindow(tuple(steps), np.asarray(times))
        pred = forecast(window, model)
        preds.append(pred)
        steps = steps[1:] + [pred]
        times = times[1:] + [times[-1] + dt]
    return preds


# ---------------------------------------------------------------------------
# checkpoint format: magic | version | header_len | header json | f32 blocks
# ---------------------------------------------------------------------------

def save_model(model: ModelParams, path) -> str:
    """Write the versioned checkpoint; returns its config hash."""
    arrays = layers.named_arrays(model)
    names = sorted(arrays)
    cfg_dict = dataclasses.asdict(model.config)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": cfg_dict,
        "config_hash": config_hash(model.config),
        "params": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes())
    return header["config_hash"]


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise InvalidInputError(f"not a model checkpoint: bad magic {magic!r}")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        cfg = ModelConfig(**header["config"])
        model = init_model(cfg, seed=0)
        arrays = layers.named_arrays(model)
        listed = {entry["name"] for entry in header["params"]}
        if listed != set(arrays):
            raise InvalidInputError("checkpoint parameter set does not match model")
        for entry in header["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in arrays or arrays[name].shape != shape:
                raise InvalidInputError(f"checkpoint parameter {name} does not fit model")
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise InvalidInputError("checkpoint truncated")
            arrays[name][...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    return model
