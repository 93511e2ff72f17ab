"""Dataset persistence, synthetic generation, and the trivial baselines.

On-disk format: ``<name>.manifest.json`` sidecar plus a ``<name>.grd1``
payload of little-endian float32 values ordered time-major, then variable,
latitude, longitude. The manifest records grid coordinates, the timestep,
split boundaries and a sha256 checksum of the payload; loading verifies all
of them and round-trips bit-exactly.

The synthetic generator advances band-limited random initial fields by
semi-Lagrangian advection plus spectral diffusion on a periodic grid, with
per-step band-limited process noise and rare localized high-amplitude
anomalies, so low wavenumbers carry coherent motion while bursts inject
fine-scale structure.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import CorruptDatasetError, InvalidInputError
from .grid import GridField, HistoryWindow
from .metrics import Climatology

FORMAT_VERSION = 1
DEFAULT_VAR_NAMES = ("t2m", "u10", "z", "t")


@dataclass
class DatasetManifest:
    name: str
    var_names: tuple[str, ...]
    M: int
    N: int
    lats: list[float]
    lons: list[float]
    timestep_hours: float
    n_steps: int
    splits: dict[str, list[int]]  # name -> [start, stop)
    payload: str
    checksum: str
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.var_names = tuple(self.var_names)
        order = ["train", "val", "test"]
        prev_stop = 0
        for part in order:
            if part not in self.splits:
                raise InvalidInputError(f"missing split {part}")
            a, b = self.splits[part]
            if not (prev_stop <= a <= b <= self.n_steps):
                raise InvalidInputError("splits must be disjoint and time-ordered")
            prev_stop = b


class Dataset:
    """In-memory gridded series [T, V, M, N] plus its manifest."""

    def __init__(self, manifest: DatasetManifest, values: np.ndarray):
        expected = (manifest.n_steps, len(manifest.var_names), manifest.M, manifest.N)
        if values.shape != expected:
            raise CorruptDatasetError(f"payload shape {values.shape} != manifest {expected}")
        self.manifest = manifest
        self.values = values.astype(np.float32)

    @property
    def lats(self) -> np.ndarray:
        return np.asarray(self.manifest.lats, dtype=np.float64)

    @property
    def lons(self) -> np.ndarray:
        return np.asarray(self.manifest.lons, dtype=np.float64)

    def split_range(self, name: str) -> tuple[int, int]:
        a, b = self.manifest.splits[name]
        return a, b

    def grid_field(self, t: int) -> GridField:
        return GridField(
            self.values[t].astype(np.float64), self.manifest.var_names, self.lats, self.lons
        )

    def history(self, start: int, L: int) -> HistoryWindow:
        steps = tuple(self.grid_field(t) for t in range(start, start + L))
        times = (np.arange(start, start + L) * self.manifest.timestep_hours).astype(np.float64)
        return HistoryWindow(steps, times)

    def window_array(self, start: int, L: int) -> np.ndarray:
        return self.values[start : start + L].astype(np.float64)

    def windows(self, split: str, L: int) -> list[tuple[int, int]]:
        """(window_start, target_index) pairs fully inside the split."""
        a, b = self.split_range(split)
        return [(s, s + L) for s in range(a, b - L)]


# ---------------------------------------------------------------------------
# save / load
# ---------------------------------------------------------------------------

def save_dataset(dataset: Dataset, directory, name: str | None = None, force: bool = False):
    """Write ``<name>.manifest.json`` + ``<name>.grd1``; returns both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = name or dataset.manifest.name
    manifest_path = directory / f"{name}.manifest.json"
    payload_path = directory / f"{name}.grd1"
    if not force and (manifest_path.exists() or payload_path.exists()):
        raise InvalidInputError(f"refusing to overwrite {manifest_path} (use force)")
    payload = np.ascontiguousarray(dataset.values, dtype="<f4").tobytes()
    manifest = dataclasses.replace(
        dataset.manifest,
        name=name,
        payload=payload_path.name,
        checksum=hashlib.sha256(payload).hexdigest(),
    )
    payload_path.write_bytes(payload)
    doc = dataclasses.asdict(manifest)
    doc["var_names"] = list(manifest.var_names)
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    dataset.manifest = manifest
    return manifest_path, payload_path


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptDatasetError(f"cannot read manifest: {e}") from e
    if doc.get("format_version") != FORMAT_VERSION:
        raise CorruptDatasetError(f"unsupported format_version {doc.get('format_version')}")
    manifest = DatasetManifest(**doc)
    payload_path = manifest_path.parent / manifest.payload
    try:
        raw = payload_path.read_bytes()
    except OSError as e:
        raise CorruptDatasetError(f"cannot read payload: {e}") from e
    expected_bytes = manifest.n_steps * len(manifest.var_names) * manifest.M * manifest.N * 4
    if len(raw) != expected_bytes:
        raise CorruptDatasetError(
            f"payload is {len(raw)} bytes, manifest implies {expected_bytes}"
        )
    if hashlib.sha256(raw).hexdigest() != manifest.checksum:
        raise CorruptDatasetError("payload checksum mismatch")
    values = np.frombuffer(raw, dtype="<f4").reshape(
        manifest.n_steps, len(manifest.var_names), manifest.M, manifest.N
    )
    return Dataset(manifest, values.copy())


# ---------------------------------------------------------------------------
# synthetic advection-diffusion generator
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    M: int = 8
    N: int = 16
    n_steps: int = 2000
    var_names: tuple[str, ...] = DEFAULT_VAR_NAMES
    velocity_lat: float = 0.3  # cells per step
    velocity_lon: float = 0.8
    diffusion: float = 0.002  # spectral decay rate, exp(-diffusion * rho^2)
    ic_modes: int = 2  # initial condition band limit (radial wavenumber)
    # optional per-variable radial band (lo, hi]; distinct bands give the
    # channels distinct spectral signatures, like real atmospheric variables
    ic_bands: tuple[tuple[float, float], ...] | None = None
    noise_amplitude: float = 0.02  # per-step band-limited process noise (std)
    extreme_prob: float = 0.005  # per-step probability of a localized anomaly
    extreme_amplitude: float = 1.5
    extreme_width: float = 1.2  # gaussian width in cells
    offsets: tuple[float, ...] | None = None  # per-variable additive level
    scales: tuple[float, ...] | None = None  # per-variable amplitude
    burn_in: int = 0  # steps evolved and discarded before recording
    timestep_hours: float = 6.0
    split_fractions: tuple[float, float] = (0.8, 0.1)  # train, val; rest is test
    seed: int = 0

    def __post_init__(self):
        if self.diffusion < 0:
            raise InvalidInputError("diffusion coefficient must be nonnegative")
        if max(abs(self.velocity_lat), abs(self.velocity_lon)) > 1.0:
            raise InvalidInputError(
                "CFL violation: |velocity| must be <= 1 cell per step on each axis"
            )
        if self.n_steps < 3:
            raise InvalidInputError("need at least 3 steps")
        for per_var in (self.offsets, self.scales):
            if per_var is not None and len(per_var) != len(self.var_names):
                raise InvalidInputError("offsets/scales must have one entry per variable")


def _cell_center_lats(M: int) -> np.ndarray:
    half = 90.0 / M
    return np.linspace(90.0 - half, -90.0 + half, M)


def _band_limited_field(rng, M, N, max_mode, scale) -> np.ndarray:
    """Random real field with radial wavenumbers <= max_mode, std ~= scale."""
    from .spectral import radial_wavenumbers

    rho = radial_wavenumbers(M, N)
    coeff = rng.normal(size=(M, N)) + 1j * rng.normal(size=(M, N))
    coeff[rho > max_mode] = 0.0
    # conjugate-symmetrize so the inverse transform is real
    mm = (M - np.arange(M)) % M
    nn = (N - np.arange(N)) % N
    coeff = 0.5 * (coeff + np.conj(coeff[np.ix_(mm, nn)]))
    coeff[0, 0] = 0.0  # zero mean
    f = kernels.fft2(coeff, +1).real / (M * N)
    std = f.std()
    if std > 0:
        f = f * (scale / std)
    return f


def _spectral_diffuse(f: np.ndarray, decay: np.ndarray) -> np.ndarray:
    M, N = f.shape[-2:]
    S = kernels.fft2(f.astype(np.complex128), -1) * decay
    return kernels.fft2(S, +1).real / (M * N)


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Deterministic per seed; see the module docstring for the dynamics."""
    from .spectral import radial_wavenumbers

    rng = np.random.default_rng(config.seed)
    M, N, V = config.M, config.N, len(config.var_names)
    rho = radial_wavenumbers(M, N)
    decay = np.exp(-config.diffusion * rho**2)
    state = np.stack(
        [_band_limited_field(rng, M, N, config.ic_modes, 1.0) for _ in range(V)], axis=0
    )
    lat_grid = np.arange(M)[:, None]
    lon_grid = np.arange(N)[None, :]

    def step(state):
        state = kernels.advect_bilinear(state, config.velocity_lat, config.velocity_lon)
        if config.diffusion > 0:
            state = _spectral_diffuse(state, decay)
        if config.noise_amplitude > 0:
            noise = np.stack(
                [
                    _band_limited_field(rng, M, N, config.ic_modes, config.noise_amplitude)
                    for _ in range(V)
                ],
                axis=0,
            )
            state = state + noise
        if config.extreme_prob > 0 and rng.random() < config.extreme_prob:
            v = int(rng.integers(V))
            cm = rng.uniform(0, M)
            cn = rng.uniform(0, N)
            sign = 1.0 if rng.random() < 0.5 else -1.0
            dm = np.minimum(np.abs(lat_grid - cm), M - np.abs(lat_grid - cm))
            dn = np.minimum(np.abs(lon_grid - cn), N - np.abs(lon_grid - cn))
            blob = np.exp(-(dm**2 + dn**2) / (2.0 * config.extreme_width**2))
            state = state.copy()
            state[v] = state[v] + sign * config.extreme_amplitude * blob
        return state

    for _ in range(config.burn_in):
        state = step(state)
    out = np.empty((config.n_steps, V, M, N), dtype=np.float32)
    out[0] = state.astype(np.float32)
    for t in range(1, config.n_steps):
        state = step(state)
        out[t] = state.astype(np.float32)

    if config.scales is not None:
        out *= np.asarray(config.scales, dtype=np.float32)[None, :, None, None]
    if config.offsets is not None:
        out += np.asarray(config.offsets, dtype=np.float32)[None, :, None, None]

    n_train = int(round(config.n_steps * config.split_fractions[0]))
    n_val = int(round(config.n_steps * config.split_fractions[1]))
    manifest = DatasetManifest(
        name=f"synthetic-{config.seed}",
        var_names=config.var_names,
        M=M,
        N=N,
        lats=[float(x) for x in _cell_center_lats(M)],
        lons=[float(x) for x in np.arange(N) * (360.0 / N)],
        timestep_hours=config.timestep_hours,
        n_steps=config.n_steps,
        splits={
            "train": [0, n_train],
            "val": [n_train, n_train + n_val],
            "test": [n_train + n_val, config.n_steps],
        },
        payload="",
        checksum="",
    )
    return Dataset(manifest, out)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def persistence_forecast(history: HistoryWindow) -> GridField:
    """The last observed field, unchanged."""
    return history.steps[-1]


def climatology_forecast(clim: Climatology) -> GridField:
    """The climatology mean as a constant forecast."""
    return clim.as_field()
