"""2-D discrete Fourier transforms for grid fields, plus mode bookkeeping.

Convention: the forward transform is the unnormalized double sum with kernel
exp(-2*pi*i*(k_m*m/M + k_n*n/N)); the inverse carries the 1/(M*N) prefactor.
The coefficient/round-trip harness at the bottom uses a different convention
(1/N^2 on the forward) and says so explicitly.

Wavenumber geometry helpers (kept-mode masks, mirror permutation, radial
bands) are shared by the mode-truncation path and the frequency-band gating.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError, ShapeError, SymmetryError
from .grid import GridField, _frozen_array

BRUTEFORCE_MAX_CELLS = 64 * 64
DEFAULT_IMAG_TOL = 1e-6

EXTENSION_AMBIGUITY_NOTE = (
    "extension formula not implemented: the one-step spectral extrapolation "
    "relation references spectrum entry F(N+1, v), an index outside the range "
    "of the N-point transform, and no definition for that entry is available; "
    "coefficients A and B and the round-trip identities are verified instead."
)


@dataclass(frozen=True)
class SpectralField:
    """Complex spectrum stored as separate real/imaginary planes [V, M, N]."""

    re: np.ndarray
    im: np.ndarray
    var_names: tuple[str, ...]
    lats: np.ndarray
    lons: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        object.__setattr__(self, "re", _frozen_array(self.re))
        object.__setattr__(self, "im", _frozen_array(self.im))
        object.__setattr__(self, "var_names", tuple(self.var_names))
        object.__setattr__(self, "lats", _frozen_array(self.lats))
        object.__setattr__(self, "lons", _frozen_array(self.lons))
        if self.re.ndim != 3 or self.re.shape != self.im.shape:
            raise ShapeError("re/im must both be [V, M, N]")
        if not (np.all(np.isfinite(self.re)) and np.all(np.isfinite(self.im))):
            raise InvalidInputError("spectrum contains NaN or Inf")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.re.shape

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def with_planes(self, re: np.ndarray, im: np.ndarray, hermitian: bool) -> "SpectralField":
        return SpectralField(re, im, self.var_names, self.lats, self.lons, hermitian)


# ---------------------------------------------------------------------------
# wavenumber geometry
# ---------------------------------------------------------------------------

def axis_wavenumbers(n: int) -> np.ndarray:
    """Wrap-around wavenumber magnitude min(k, n-k) for each DFT bin."""
    k = np.arange(n)
    return np.minimum(k, n - k)


def radial_wavenumbers(M: int, N: int) -> np.ndarray:
    wm = axis_wavenumbers(M)[:, None]
    wn = axis_wavenumbers(N)[None, :]
    return np.sqrt(wm.astype(np.float64) ** 2 + wn.astype(np.float64) ** 2)


def kept_mask(M: int, N: int, k_max: int) -> np.ndarray:
    """Boolean [M, N] mask of bins with both axis wavenumbers <= k_max."""
    if k_max < 1:
        raise InvalidInputError("k_max must be a positive integer")
    if k_max > min(M, N) // 2:
        raise InvalidInputError(f"k_max={k_max} exceeds min(M, N)/2 = {min(M, N) // 2}")
    return (axis_wavenumbers(M)[:, None] <= k_max) & (axis_wavenumbers(N)[None, :] <= k_max)


def kept_flat_indices(M: int, N: int, k_max: int) -> np.ndarray:
    """Row-major flat indices of the kept low-frequency block (sorted)."""
    return np.flatnonzero(kept_mask(M, N, k_max).ravel())


def mirror_flat_permutation(M: int, N: int) -> np.ndarray:
    """Flat index of the conjugate-mirror bin ((M-k_m)%M, (N-k_n)%N)."""
    mm = (M - np.arange(M)) % M
    nn = (N - np.arange(N)) % N
    return (mm[:, None] * N + nn[None, :]).ravel()


def band_edges_uniform(M: int, N: int, n_bands: int) -> np.ndarray:
    """Strictly increasing radial band boundaries covering [0, rho_max]."""
    if n_bands < 1:
        raise InvalidInputError("need at least one band")
    rho_max = float(radial_wavenumbers(M, N).max())
    return np.linspace(0.0, rho_max, n_bands + 1)


def radial_band_index(M: int, N: int, edges: np.ndarray) -> np.ndarray:
    """Integer [M, N] map of each bin to its radial band in [0, len(edges)-2]."""
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise InvalidInputError("band edges must be strictly increasing")
    rho = radial_wavenumbers(M, N)
    idx = np.searchsorted(edges, rho, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def dft2(field: GridField) -> SpectralField:
    """Forward unnormalized 2-D DFT of each variable."""
    S = kernels.fft2(field.values.astype(np.complex128), -1)
    return SpectralField(S.real, S.imag, field.var_names, field.lats, field.lons, hermitian=True)


def dft2_bruteforce(field: GridField) -> SpectralField:
    """Literal double-sum DFT, one bin at a time. Test oracle only."""
    V, M, N = field.values.shape
    if M * N > BRUTEFORCE_MAX_CELLS:
        raise InvalidInputError(f"brute-force DFT refused for {M}x{N} grid")
    x = field.values
    m = np.arange(M)[:, None]
    n = np.arange(N)[None, :]
    S = np.zeros((V, M, N), dtype=np.complex128)
    for km in range(M):
        for kn in range(N):
            phase = np.exp(-2j * np.pi * (km * m / M + kn * n / N))
            S[:, km, kn] = np.sum(x * phase[None, :, :], axis=(1, 2))
    return SpectralField(S.real, S.imag, field.var_names, field.lats, field.lons, hermitian=True)


def idft2(spec: SpectralField, imag_tol: float = DEFAULT_IMAG_TOL) -> GridField:
    """Inverse transform with 1/(M*N); rejects non-negligible imaginary residue."""
    V, M, N = spec.shape
    z = kernels.fft2(spec.to_complex(), +1) / (M * N)
    residue = float(np.max(np.abs(z.imag)))
    if residue > imag_tol:
        raise SymmetryError(
            f"inverse transform left imaginary residue {residue:.3e} > {imag_tol:.1e}; "
            "spectrum is not conjugate-symmetric"
        )
    return GridField(z.real, spec.var_names, spec.lats, spec.lons)


def truncate_modes(spec: SpectralField, k_max: int) -> SpectralField:
    """Zero every bin outside the low-frequency block |k| <= k_max (both axes)."""
    _, M, N = spec.shape
    mask = kept_mask(M, N, k_max)[None, :, :]
    return spec.with_planes(spec.re * mask, spec.im * mask, spec.hermitian)


def hermitian_symmetrize(spec: SpectralField) -> SpectralField:
    """Project onto the conjugate-symmetric subspace: (S + conj(S_mirror)) / 2."""
    V, M, N = spec.shape
    perm = mirror_flat_permutation(M, N)
    re = spec.re.reshape(V, M * N)
    im = spec.im.reshape(V, M * N)
    re_out = 0.5 * (re + re[:, perm])
    im_out = 0.5 * (im - im[:, perm])
    return spec.with_planes(re_out.reshape(V, M, N), im_out.reshape(V, M, N), hermitian=True)


def hermitian_residual(spec: SpectralField) -> float:
    """Max absolute deviation from S[k] = conj(S[-k])."""
    V, M, N = spec.shape
    perm = mirror_flat_permutation(M, N)
    S = spec.to_complex().reshape(V, M * N)
    return float(np.max(np.abs(S - np.conj(S[:, perm]))))


# ---------------------------------------------------------------------------
# coefficient / round-trip harness (1/N^2-normalized forward convention)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prop1Coefficients:
    """Coefficient tables A[u, v], B[u, v] for a square single-variable field."""

    A: np.ndarray
    B: np.ndarray
    N: int


@dataclass(frozen=True)
class Prop1Entry:
    A: complex
    B: complex
    identity_residual: float


@dataclass(frozen=True)
class Prop1Report:
    N: int
    max_roundtrip_error: float
    passed: bool
    ambiguity_note: str = EXTENSION_AMBIGUITY_NOTE


def _square_single_var(field: GridField) -> np.ndarray:
    V, M, N = field.values.shape
    if V != 1 or M != N:
        raise InvalidInputError("coefficient harness requires a square single-variable field")
    return field.values[0]


def prop1_tables(field: GridField) -> Prop1Coefficients:
    """A and B by literal summation, via the separable kernel factorization.

    A[u,v] = sum_xy f(x,y) * (e_N(ux+vy)/N - e_{N+1}(ux+vy)/(N+1))
    B[u,v] = (1/(N+1)^2) * sum_xy f(x,y) * e_{N+1}(ux+vy)
    with e_d(q) = exp(-2*pi*i*q/d), indices x, y, u, v in [0, N).
    """
    f = _square_single_var(field)
    N = f.shape[0]
    x = np.arange(N)
    EN = np.exp(-2j * np.pi * np.outer(x, x) / N)
    EN1 = np.exp(-2j * np.pi * np.outer(x, x) / (N + 1))
    UN = EN.T @ f @ EN          # sum f * e_N(ux+vy)
    UN1 = EN1.T @ f @ EN1       # sum f * e_{N+1}(ux+vy)
    A = UN / N - UN1 / (N + 1)
    B = UN1 / (N + 1) ** 2
    return Prop1Coefficients(A=A, B=B, N=N)


def prop1_coefficients(field: GridField, u: int, v: int) -> Prop1Entry:
    """One (u, v) entry of the A/B tables, with the decomposition identity check.

    Under the 1/N^2 forward convention, sum f*e_N = N^2 * F(u,v), so
    A = N*F(u,v) - (N+1)*B must hold; the residual of that identity, with
    F recomputed through the fast transform, is returned alongside A and B.
    """
    tables = prop1_tables(field)
    N = tables.N
    if not (0 <= u < N and 0 <= v < N):
        raise InvalidInputError(f"(u, v) must lie in [0, {N}), got ({u}, {v})")
    A = complex(tables.A[u, v])
    B = complex(tables.B[u, v])
    F = kernels.fft2(field.values[0].astype(np.complex128), -1)[u, v] / N**2
    residual = abs(A - (N * F - (N + 1) * B))
    return Prop1Entry(A=A, B=B, identity_residual=float(residual))


def prop1_roundtrip_check(field: GridField, tol: float = 1e-9) -> Prop1Report:
    """Round-trip f -> F -> f under the 1/N^2-forward convention."""
    f = _square_single_var(field)
    N = f.shape[0]
    F = kernels.fft2(f.astype(np.complex128), -1) / N**2
    back = kernels.fft2(F, +1)
    err = float(max(np.max(np.abs(back.real - f)), np.max(np.abs(back.imag))))
    return Prop1Report(N=N, max_roundtrip_error=err, passed=err <= tol)
