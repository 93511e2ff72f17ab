"""Frequency-band mixture of experts.

The spectrum is lifted bin-wise from (re, im) to a latent channel vector; a
gate assigns each radial wavenumber band a softmax mixture over experts; each
expert is a bin-wise two-layer perceptron. Routing is soft (all experts are
evaluated and mixed), and the gate for a band sees only that band's energy, so
perturbing one band leaves every other band's gate row and output unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .errors import InvalidInputError, ShapeError
from .spectral import SpectralField, band_edges_uniform, radial_band_index

GATE_ENERGY_EPS = 1e-12


@dataclass
class FmoeParams:
    """Learnable pieces: bin-wise lift, E expert MLPs, per-band gate."""

    lift_w: np.ndarray  # [2, d]
    lift_b: np.ndarray  # [d]
    expert_w1: np.ndarray  # [E, d, d_h]
    expert_b1: np.ndarray  # [E, d_h]
    expert_w2: np.ndarray  # [E, d_h, d]
    expert_b2: np.ndarray  # [E, d]
    gate_w: np.ndarray  # [B, E]
    gate_b: np.ndarray  # [B, E]
    band_edges: np.ndarray = field(metadata={"learnable": False}, default=None)

    def __post_init__(self):
        if self.n_experts < 1:
            raise InvalidInputError("need at least one expert")
        if self.band_edges is None or len(self.band_edges) < 2:
            raise InvalidInputError("band_edges must define at least one band")
        if np.any(np.diff(self.band_edges) <= 0):
            raise InvalidInputError("band boundaries must be strictly increasing")
        if self.gate_w.shape != (self.n_bands, self.n_experts):
            raise ShapeError("gate weights must be [n_bands, n_experts]")

    @property
    def latent_dim(self) -> int:
        return self.lift_w.shape[1]

    @property
    def n_experts(self) -> int:
        return self.expert_w1.shape[0]

    @property
    def n_bands(self) -> int:
        return len(self.band_edges) - 1


@dataclass(frozen=True)
class LatentSpectrum:
    """Per-bin latent channels plus each bin's radial band id."""

    values: np.ndarray  # [V, M, N, d]
    band_index: np.ndarray  # [M, N]

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ShapeError("latent values must be [V, M, N, d]")
        if self.band_index.shape != self.values.shape[1:3]:
            raise ShapeError("band_index must match the grid dims")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("latent spectrum contains NaN or Inf")


def init_fmoe_params(
    rng: np.random.Generator,
    M: int,
    N: int,
    latent_dim: int = 32,
    expert_hidden: int | None = None,
    n_experts: int = 4,
    n_bands: int = 4,
    dtype=np.float32,
) -> FmoeParams:
    d = latent_dim
    d_h = expert_hidden or 2 * d
    E = n_experts
    return FmoeParams(
        lift_w=layers.xavier_uniform(rng, 2, d).astype(dtype),
        lift_b=np.zeros(d, dtype=dtype),
        expert_w1=np.stack([layers.xavier_uniform(rng, d, d_h) for _ in range(E)]).astype(dtype),
        expert_b1=np.zeros((E, d_h), dtype=dtype),
        expert_w2=np.stack([layers.xavier_uniform(rng, d_h, d) for _ in range(E)]).astype(dtype),
        expert_b2=np.zeros((E, d), dtype=dtype),
        gate_w=np.zeros((n_bands, E), dtype=dtype),
        gate_b=np.zeros((n_bands, E), dtype=dtype),
        band_edges=band_edges_uniform(M, N, n_bands),
    )


# ---------------------------------------------------------------------------
# graph builders (shared by the public ops and the training pipeline)
# ---------------------------------------------------------------------------

def lift_t(spec_t: Tensor, p) -> Tensor:
    """[V, M, N, 2] stacked spectrum -> [V, M, N, d] latent, bin-wise affine."""
    V, M, N, two = spec_t.shape
    if two != 2:
        raise ShapeError("stacked spectrum must end in a (re, im) axis of size 2")
    flat = ad.reshape(spec_t, (V * M * N, 2))
    out = layers.linear(flat, p.lift_w, p.lift_b)
    return ad.reshape(out, (V, M, N, p.lift_w.shape[1]))


_BAND_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _band_tables(band_index: np.ndarray, n_bands: int, n_vars: int):
    """Cached (averaging matrix [n_bands, M*N], tiled row->band index [V*M*N])."""
    key = (band_index.shape, n_bands, n_vars, band_index.tobytes())
    if key not in _BAND_CACHE:
        flat = band_index.ravel()
        avg = np.zeros((n_bands, flat.size))
        for b in range(n_bands):
            members = flat == b
            count = int(members.sum())
            if count:
                avg[b, members] = 1.0 / count
        _BAND_CACHE[key] = (avg, np.tile(flat, n_vars))
    return _BAND_CACHE[key]


def band_energy_features_t(spec_t: Tensor, band_index: np.ndarray, n_bands: int) -> Tensor:
    """Per-band log mean squared magnitude of the spectrum, shape [B].

    Empty bands (possible on tiny grids) report the log of the energy floor.
    """
    V, M, N, _ = spec_t.shape
    avg, _ = _band_tables(band_index, n_bands, V)
    energy = ad.sum_(spec_t * spec_t, axis=-1)  # |S|^2 per bin, [V, M, N]
    mean_v = ad.reshape(ad.mean(energy, axis=0), (M * N, 1))
    per_band = ad.const(avg.astype(mean_v.dtype)) @ mean_v  # [n_bands, 1]
    return ad.reshape(ad.log(per_band + GATE_ENERGY_EPS), (n_bands,))


def gate_t(spec_t: Tensor, p, band_index: np.ndarray) -> Tensor:
    """Per-band softmax mixture weights, shape [B, E]."""
    n_bands = p.gate_w.shape[0]
    phi = band_energy_features_t(spec_t, band_index, n_bands)
    logits = p.gate_w * ad.reshape(phi, (n_bands, 1)) + p.gate_b
    return ad.softmax(logits, axis=-1)


def _single_expert_t(flat: Tensor, p, e: int) -> Tensor:
    return layers.mlp(flat, p.expert_w1[e], p.expert_b1[e], p.expert_w2[e], p.expert_b2[e])


def moe_forward_t(spec_t: Tensor, p, band_index: np.ndarray, use_moe: bool = True) -> Tensor:
    """Gated expert mixture over the lifted spectrum, [V, M, N, d]."""
    V, M, N, _ = spec_t.shape
    z = lift_t(spec_t, p)
    d = z.shape[-1]
    flat = ad.reshape(z, (V * M * N, d))
    if not use_moe:
        return ad.reshape(_single_expert_t(flat, p, 0), (V, M, N, d))
    n_experts = p.expert_w1.shape[0]
    weights = gate_t(spec_t, p, band_index)
    _, band_rows = _band_tables(band_index, weights.shape[0], V)
    # all experts in one batched MLP: [E, bins, d] -> [E, bins, d]
    stacked = ad.reshape(flat, (1, V * M * N, d))
    h = ad.gelu(stacked @ p.expert_w1 + ad.reshape(p.expert_b1, (n_experts, 1, -1)))
    o = h @ p.expert_w2 + ad.reshape(p.expert_b2, (n_experts, 1, -1))
    # per-bin mixture weights: gather each bin's band row, transpose to [E, bins, 1]
    per_bin = ad.take_rows(weights, band_rows)  # [V*M*N, E]
    scale = ad.reshape(ad.transpose(per_bin, (1, 0)), (n_experts, V * M * N, 1))
    mixed = ad.sum_(o * scale, axis=0)
    return ad.reshape(mixed, (V, M, N, d))


# ---------------------------------------------------------------------------
# public array-level operations
# ---------------------------------------------------------------------------

def _stacked_const(spec: SpectralField) -> Tensor:
    return ad.const(np.stack([spec.re, spec.im], axis=-1))


def _band_index_for(spec: SpectralField, params: FmoeParams) -> np.ndarray:
    _, M, N = spec.shape
    return radial_band_index(M, N, params.band_edges)


def _tensor_params(params: FmoeParams):
    return layers.tensorize(params, {}, requires_grad=False)


def lift(spec: SpectralField, params: FmoeParams) -> LatentSpectrum:
    """Bin-wise affine map of (re, im) to latent channels; no cross-bin mixing."""
    values = lift_t(_stacked_const(spec), _tensor_params(params)).data
    return LatentSpectrum(values=values, band_index=_band_index_for(spec, params))


def gate(spec: SpectralField, params: FmoeParams) -> np.ndarray:
    """Mixture weights [n_bands, n_experts]; each row sums to 1."""
    p = _tensor_params(params)
    return gate_t(_stacked_const(spec), p, _band_index_for(spec, params)).data


def moe_forward(spec: SpectralField, params: FmoeParams) -> LatentSpectrum:
    """Full lift -> gate -> expert mixture."""
    p = _tensor_params(params)
    band_index = _band_index_for(spec, params)
    values = moe_forward_t(_stacked_const(spec), p, band_index).data
    return LatentSpectrum(values=values, band_index=band_index)
