"""Latitude-weighted RMSE objective, Adam, and the training loop.

Two loss variants:

* ``paper_eq14`` (default): sqrt((1/(M*N)) * sum_mn alpha(m) * err^2) with the
  weights alpha summing to 1. Note this normalizes over latitude twice (the
  1/M inside 1/(M*N) and the weight normalization); it is kept literal.
* ``weatherbench_normalized``: the same expression with the weights rescaled
  to mean 1 (alpha * M), the conventional skill-score form.

Gradients come from the reverse-mode engine and are cross-checked against
central finite differences by :func:`gradient_check`.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .backbone import ModelConfig, ModelParams, forecast_t, init_model, save_model
from .errors import InvalidInputError, ShapeError, TrainingDivergenceError
from .grid import GridField, NormStats
from .hashutil import config_hash

LOSS_VARIANTS = ("paper_eq14", "weatherbench_normalized")


@dataclass(frozen=True)
class LatWeights:
    """Normalized cos(latitude) weights, one per latitude row, summing to 1."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        a.flags.writeable = False
        object.__setattr__(self, "alpha", a)
        if a.ndim != 1:
            raise ShapeError("alpha must be 1-D")
        if abs(float(a.sum()) - 1.0) > 1e-9:
            raise InvalidInputError("weights must sum to 1")

    def mean_one(self) -> np.ndarray:
        """Weights rescaled to mean 1 (alpha * M)."""
        return self.alpha * self.alpha.size


def latitude_weights(lats: np.ndarray) -> LatWeights:
    """alpha(m) proportional to cos(latitude), latitudes in degrees."""
    lats = np.asarray(lats, dtype=np.float64)
    if np.any(np.abs(lats) > 90.0):
        raise InvalidInputError("latitudes must lie in [-90, 90]")
    c = np.cos(np.radians(lats))
    c = np.where(np.abs(lats) >= 90.0, 0.0, c)  # poles carry no area; kill rounding residue
    total = c.sum()
    if total <= 0.0:
        raise InvalidInputError("degenerate all-polar grid: sum of cosines is zero")
    return LatWeights(alpha=c / total)


def _loss_weights(w: LatWeights, variant: str) -> np.ndarray:
    if variant == "paper_eq14":
        return w.alpha
    if variant == "weatherbench_normalized":
        return w.mean_one()
    raise InvalidInputError(f"unknown loss variant {variant!r}")


def weighted_rmse_t(pred: Tensor, truth: np.ndarray, w: LatWeights, variant: str) -> Tensor:
    """Per-variable latitude-weighted RMSE of a [V, M, N] prediction graph."""
    V, M, N = pred.shape
    alpha = _loss_weights(w, variant).astype(pred.dtype)
    err = pred - ad.const(truth.astype(pred.dtype))
    weighted = err * err * ad.const(alpha[None, :, None])
    return ad.sqrt(ad.sum_(weighted, axis=(1, 2)) * (1.0 / (M * N)))


def weighted_rmse(
    pred: GridField, truth: GridField, w: LatWeights, variant: str = "paper_eq14"
) -> np.ndarray:
    """Array-level per-variable loss; see the module docstring for variants."""
    if pred.shape != truth.shape:
        raise ShapeError("prediction and truth shapes differ")
    if w.alpha.shape[0] != pred.shape[1]:
        raise ShapeError("weight count does not match latitude rows")
    return weighted_rmse_t(ad.const(pred.values), truth.values, w, variant).data


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    grad_clip: float | None = None
    use_fft: bool = True
    use_prompt: bool = True
    use_moe: bool = True
    loss_variant: str = "paper_eq14"
    # divide each variable's loss term by its window sigma+eps so that
    # large-unit channels (e.g. geopotential) do not monopolize the gradient
    balance_variables: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning rate must be positive")
        if self.batch_size < 1:
            raise InvalidInputError("batch size must be at least 1")
        if self.loss_variant not in LOSS_VARIANTS:
            raise InvalidInputError(f"loss_variant must be one of {LOSS_VARIANTS}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, arrays: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a, dtype=np.float64) for k, a in arrays.items()},
            v={k: np.zeros_like(a, dtype=np.float64) for k, a in arrays.items()},
        )


def adam_step(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> AdamState:
    """Standard Adam with bias correction; updates ``arrays`` in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for name, a in arrays.items():
        g = grads[name].astype(np.float64)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        a -= (config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)).astype(
            a.dtype
        )
    return state


# ---------------------------------------------------------------------------
# loss and gradients over a batch of (window, target) samples
# ---------------------------------------------------------------------------

Batch = list[tuple[np.ndarray, np.ndarray]]  # ([L,V,M,N] window, [V,M,N] target)


def _batch_loss_graph(
    p, cfg: ModelConfig, batch: Batch, w: LatWeights, variant: str, balance: bool
) -> Tensor:
    losses = []
    for window, target in batch:
        stats = _window_stats(window, cfg.norm_epsilon)
        pred = forecast_t(window, stats, p, cfg)
        per_var = weighted_rmse_t(pred, target, w, variant)
        if balance:
            per_var = per_var * ad.const((1.0 / stats.scale).astype(per_var.dtype))
        losses.append(ad.mean(per_var))
    stacked = ad.concat([ad.reshape(x, (1,)) for x in losses], axis=0)
    return ad.mean(stacked)


def _window_stats(window: np.ndarray, epsilon: float) -> NormStats:
    mu = window.mean(axis=(0, 2, 3))
    sigma = np.sqrt(np.mean((window - mu[None, :, None, None]) ** 2, axis=(0, 2, 3)))
    return NormStats(mu=mu, sigma=sigma, epsilon=epsilon)


def batch_loss(
    model: ModelParams, batch: Batch, w: LatWeights, variant: str, balance: bool = False
) -> float:
    """Forward-only mean loss over a batch."""
    p = layers.tensorize(model, {}, requires_grad=False)
    return float(_batch_loss_graph(p, model.config, batch, w, variant, balance).data)


def backward(
    model: ModelParams,
    batch: Batch,
    w: LatWeights,
    variant: str = "paper_eq14",
    balance: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its gradient for every learnable parameter."""
    registry: dict[str, Tensor] = {}
    p = layers.tensorize(model, registry, requires_grad=True)
    loss = _batch_loss_graph(p, model.config, batch, w, variant, balance)
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, tensor in registry.items():
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient in parameter {name}")
        grads[name] = g
    return float(loss.data), grads


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: ModelParams
    history: list[dict]
    best_val_loss: float
    config_hash: str


def _make_batches(starts: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [starts[i : i + batch_size] for i in range(0, len(starts), batch_size)]


def train(
    dataset,
    config: TrainConfig,
    model_cfg: ModelConfig | None = None,
    checkpoint_path=None,
    resume_state: dict | None = None,
    initial_model: ModelParams | None = None,
    state_path=None,
    last_model_path=None,
    log_fn=None,
) -> TrainResult:
    """Optimize a model on the dataset's train split, validating per epoch.

    ``dataset`` is a :class:`freqcast.dataio.Dataset`. The ablation flags on
    ``config`` override the corresponding model-config flags. One JSON-able
    record per epoch is appended to the returned history (and passed to
    ``log_fn`` when given); the best-validation checkpoint is written to
    ``checkpoint_path`` when given. ``state_path``/``last_model_path`` persist
    the optimizer state and current model each epoch, which together with
    ``resume_state``/``initial_model`` continue an interrupted run exactly.
    """
    if initial_model is not None:
        model_cfg = initial_model.config
    else:
        if model_cfg is None:
            model_cfg = ModelConfig(
                var_names=dataset.manifest.var_names,
                M=dataset.manifest.M,
                N=dataset.manifest.N,
            )
        model_cfg = replace(
            model_cfg,
            use_fft=config.use_fft,
            use_prompt=config.use_prompt,
            use_moe=config.use_moe,
        )
    model = initial_model if initial_model is not None else init_model(model_cfg, config.seed)
    arrays = layers.named_arrays(model)
    w = latitude_weights(dataset.manifest.lats)
    full_hash = config_hash({"train": config, "model": model_cfg})

    train_windows = dataset.windows("train", model_cfg.L)
    val_windows = dataset.windows("val", model_cfg.L)
    if not train_windows:
        raise InvalidInputError("train split has no complete windows")

    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(arrays)
    start_epoch = 0
    best_val = np.inf
    history: list[dict] = []
    if resume_state is not None:
        state = resume_state["adam"]
        rng.bit_generator.state = resume_state["rng_state"]
        start_epoch = resume_state["epoch"]
        best_val = resume_state["best_val"]

    def sample(idx: int) -> tuple[np.ndarray, np.ndarray]:
        s, t = train_windows[idx]
        return dataset.window_array(s, model_cfg.L), dataset.values[t].astype(np.float64)

    for epoch in range(start_epoch, config.epochs):
        t0 = time.time()
        order = rng.permutation(len(train_windows))
        epoch_losses = []
        for batch_idx in _make_batches(order, config.batch_size):
            batch = [sample(i) for i in batch_idx]
            loss, grads = backward(
                model, batch, w, config.loss_variant, config.balance_variables
            )
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"NaN loss at epoch {epoch}, after {len(epoch_losses)} batches; "
                    f"recent losses: {epoch_losses[-5:]}"
                )
            if config.grad_clip is not None:
                clip_gradients(grads, config.grad_clip)
            adam_step(arrays, grads, state, config)
            epoch_losses.append(loss)
        val_loss = _split_loss(model, dataset, val_windows, w, config)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "val_loss": val_loss,
            "wall_seconds": round(time.time() - t0, 3),
            "config_hash": full_hash,
        }
        history.append(record)
        if log_fn is not None:
            log_fn(record)
        if val_loss is not None and val_loss < best_val:
            best_val = val_loss
            if checkpoint_path is not None:
                save_model(model, checkpoint_path)
        if last_model_path is not None:
            save_model(model, last_model_path)
        if state_path is not None:
            save_training_state(state_path, state, rng, epoch + 1, best_val)
    if checkpoint_path is not None and not np.isfinite(best_val):
        save_model(model, checkpoint_path)
    return TrainResult(
        model=model,
        history=history,
        best_val_loss=float(best_val),
        config_hash=full_hash,
    )


def save_training_state(path, state: AdamState, rng, epoch: int, best_val: float) -> None:
    """Persist the optimizer moments and RNG position for exact resumption."""
    import json

    payload = {f"m::{k}": v for k, v in state.m.items()}
    payload.update({f"v::{k}": v for k, v in state.v.items()})
    meta = {
        "t": state.t,
        "epoch": epoch,
        "best_val": None if not np.isfinite(best_val) else float(best_val),
        "rng_state": rng.bit_generator.state,
    }
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **payload)


def load_training_state(path) -> dict:
    import json

    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        m = {k[3:]: data[k] for k in data.files if k.startswith("m::")}
        v = {k[3:]: data[k] for k in data.files if k.startswith("v::")}
    best = meta["best_val"]
    return {
        "adam": AdamState(m=m, v=v, t=meta["t"]),
        "rng_state": meta["rng_state"],
        "epoch": meta["epoch"],
        "best_val": np.inf if best is None else best,
    }


def _split_loss(model, dataset, windows, w: LatWeights, config: TrainConfig) -> float | None:
    if not windows:
        return None
    L = model.config.L
    total = 0.0
    for s, t in windows:
        batch = [(dataset.window_array(s, L), dataset.values[t].astype(np.float64))]
        total += batch_loss(model, batch, w, config.loss_variant, config.balance_variables)
    return total / len(windows)


# ---------------------------------------------------------------------------
# finite-difference gradient verification
# ---------------------------------------------------------------------------

GRADCHECK_GROUPS = {
    "lift": lambda n: n.startswith("fmoe.lift_"),
    "experts": lambda n: n.startswith("fmoe.expert_"),
    "gate": lambda n: n.startswith("fmoe.gate_"),
    "prompt": lambda n: n.startswith("prompt."),
    "attention": lambda n: n.startswith("backbone.blocks.") and ".attn." in n,
    "output_head": lambda n: n.startswith("backbone.head_"),
}


@dataclass
class GradCheckResult:
    group: str
    n_checked: int
    max_rel_err: float
    worst_param: str
    passed: bool


def gradient_check(
    model: ModelParams,
    batch: Batch,
    w: LatWeights,
    variant: str = "paper_eq14",
    n_per_group: int = 20,
    step: float = 1e-4,
    tol: float = 1e-4,
    seed: int = 0,
    corrupt_group: str | None = None,
) -> list[GradCheckResult]:
    """Compare analytic gradients with central differences, per parameter group.

    Relative error is |analytic - fd| / max(|analytic|, |fd|, 1e-8). The model
    should be configured with dtype float64. ``corrupt_group`` perturbs one
    analytic gradient before comparison (negative-control hook).
    """
    if model.config.np_dtype != np.float64:
        raise InvalidInputError("gradient_check requires a float64 model")
    rng = np.random.default_rng(seed)
    _, grads = backward(model, batch, w, variant)
    if corrupt_group is not None:
        names = sorted(n for n in grads if GRADCHECK_GROUPS[corrupt_group](n))
        g = grads[names[0]]
        g.flat[0] += 1.0
    arrays = layers.named_arrays(model)
    results = []
    for group, match in GRADCHECK_GROUPS.items():
        names = sorted(n for n in arrays if match(n))
        if not names:
            continue
        sizes = np.array([arrays[n].size for n in names])
        total = int(sizes.sum())
        picks = rng.choice(total, size=min(n_per_group, total), replace=False)
        max_err, worst = 0.0, ""
        for flat in np.sort(picks):
            cum = 0
            for n, size in zip(names, sizes):
                if flat < cum + size:
                    local = int(flat - cum)
                    break
                cum += size
            a = arrays[n]
            orig = a.flat[local]
            a.flat[local] = orig + step
            up = batch_loss(model, batch, w, variant)
            a.flat[local] = orig - step
            down = batch_loss(model, batch, w, variant)
            a.flat[local] = orig
            fd = (up - down) / (2.0 * step)
            an = float(grads[n].flat[local])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            if rel > max_err:
                max_err, worst = rel, f"{n}[{local}]"
        results.append(
            GradCheckResult(
                group=group,
                n_checked=len(picks),
                max_rel_err=max_err,
                worst_param=worst,
                passed=max_err <= tol,
            )
        )
    return results
