"""Evaluation metrics: latitude-weighted RMSE and anomaly correlation.

The climatology (time mean of the training split) defines the anomaly
reference. ACC is the latitude-weighted cosine similarity of predicted and
true anomalies; it is undefined when either anomaly field is identically
zero and is reported as null in that case, never as 0.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError, UndefinedMetricError
from .grid import GridField, HistoryWindow
from .train import LatWeights, weighted_rmse


@dataclass(frozen=True)
class Climatology:
    """Pointwise time-mean of truth over a reference period."""

    C: np.ndarray  # [V, M, N]
    var_names: tuple[str, ...]
    lats: np.ndarray
    lons: np.ndarray

    def __post_init__(self):
        if self.C.ndim != 3:
            raise ShapeError("climatology must be [V, M, N]")
        if not np.all(np.isfinite(self.C)):
            raise InvalidInputError("climatology contains NaN or Inf")

    def as_field(self) -> GridField:
        return GridField(self.C, self.var_names, self.lats, self.lons)


def climatology(series) -> Climatology:
    """Time-mean over a nonempty sequence of GridFields (or [T, V, M, N] array)."""
    if isinstance(series, np.ndarray):
        raise InvalidInputError("climatology needs GridFields to carry grid metadata")
    fields = list(series)
    if not fields:
        raise InvalidInputError("cannot average an empty series")
    stack = np.stack([f.values for f in fields], axis=0)
    first = fields[0]
    return Climatology(stack.mean(axis=0), first.var_names, first.lats, first.lons)


def eval_rmse(
    pred: GridField, truth: GridField, w: LatWeights, variant: str = "weatherbench_normalized"
) -> np.ndarray:
    """Per-variable latitude-weighted RMSE (mean-1 weights by default)."""
    return weighted_rmse(pred, truth, w, variant)


def eval_acc(pred: GridField, truth: GridField, clim: Climatology, w: LatWeights) -> np.ndarray:
    """Per-variable anomaly correlation coefficient, clamped to [-1, 1]."""
    if pred.shape != truth.shape or pred.shape != clim.C.shape:
        raise ShapeError("pred, truth and climatology shapes differ")
    L = w.mean_one()[None, :, None]
    ap = pred.values - clim.C
    at = truth.values - clim.C
    num = np.sum(L * ap * at, axis=(1, 2))
    den_p = np.sum(L * ap * ap, axis=(1, 2))
    den_t = np.sum(L * at * at, axis=(1, 2))
    out = np.empty(pred.shape[0])
    for v in range(pred.shape[0]):
        if den_p[v] == 0.0 or den_t[v] == 0.0:
            raise UndefinedMetricError(
                f"ACC undefined for variable {pred.var_names[v]}: zero anomaly norm"
            )
        out[v] = num[v] / np.sqrt(den_p[v] * den_t[v])
    return np.clip(out, -1.0, 1.0)


@dataclass
class EvalCell:
    variable: str
    lead_hours: float
    rmse: float
    rmse_eq14: float
    acc: float | None


@dataclass
class EvalReport:
    dataset_id: str
    checkpoint_hash: str
    metric_variant: str
    cells: list[EvalCell]
    baselines: dict[str, list[EvalCell]]

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)

    def cell(self, variable: str, lead_hours: float, baseline: str | None = None) -> EvalCell:
        rows = self.cells if baseline is None else self.baselines[baseline]
        for c in rows:
            if c.variable == variable and c.lead_hours == lead_hours:
                return c
        raise KeyError((variable, lead_hours, baseline))


class _AccPool:
    """Pooled ACC sums over all evaluation samples of one (variable, lead)."""

    def __init__(self):
        self.num = 0.0
        self.den_p = 0.0
        self.den_t = 0.0

    def add(self, L, ap, at):
        self.num += float(np.sum(L * ap * at))
        self.den_p += float(np.sum(L * ap * ap))
        self.den_t += float(np.sum(L * at * at))

    def value(self) -> float | None:
        if self.den_p == 0.0 or self.den_t == 0.0:
            return None
        return float(np.clip(self.num / np.sqrt(self.den_p * self.den_t), -1.0, 1.0))


def evaluate(
    model,
    dataset,
    lead_times_hours,
    checkpoint_hash: str = "",
    sample_stride: int = 1,
) -> EvalReport:
    """Autoregressive rollout over the test split, metrics per (variable, lead).

    RMSE cells are means of per-forecast RMSE; ACC cells pool the anomaly sums
    over all forecasts. Persistence and climatology baseline rows are always
    included.
    """
    from .backbone import rollout
    from .dataio import climatology_forecast, persistence_forecast

    cfg = model.config
    dt_hours = dataset.manifest.timestep_hours
    leads = [float(h) for h in lead_times_hours]
    steps = []
    for h in leads:
        n = h / dt_hours
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise InvalidInputError(
                f"lead time {h}h is not a positive multiple of the {dt_hours}h timestep"
            )
        steps.append(int(round(n)))
    max_steps = max(steps)

    w = latitude_weights_for(dataset)
    train_fields = [dataset.grid_field(t) for t in range(*dataset.split_range("train"))]
    clim = climatology(train_fields)

    a, b = dataset.split_range("test")
    starts = [s for s in range(a, b - cfg.L - max_steps + 1)][::sample_stride]
    if not starts:
        raise InvalidInputError("test split too short for the requested lead times")

    names = cfg.var_names
    sq_sums = {k: {(v, j): [] for v in names for j in steps} for k in ("model", "persistence", "climatology")}
    pools = {k: {(v, j): _AccPool() for v in names for j in steps} for k in sq_sums}
    Lw = w.mean_one()[:, None]

    for s in starts:
        history = dataset.history(s, cfg.L)
        preds = rollout(history, model, max_steps)
        pers = persistence_forecast(history)
        clim_pred = climatology_forecast(clim)
        for j in steps:
            truth = dataset.grid_field(s + cfg.L + j - 1)
            for kind, pred in (
                ("model", preds[j - 1]),
                ("persistence", pers),
                ("climatology", clim_pred),
            ):
                r = eval_rmse(pred, truth, w)
                for vi, v in enumerate(names):
                    sq_sums[kind][(v, j)].append(float(r[vi]))
                    ap = pred.values[vi] - clim.C[vi]
                    at = truth.values[vi] - clim.C[vi]
                    pools[kind][(v, j)].add(Lw, ap, at)

    def make_cells(kind: str) -> list[EvalCell]:
        cells = []
        for j in steps:
            for vi, v in enumerate(names):
                rmses = sq_sums[kind][(v, j)]
                cells.append(
                    EvalCell(
                        variable=v,
                        lead_hours=j * dt_hours,
                        rmse=float(np.mean(rmses)),
                        # exact relation: mean-1 weights = alpha * M inside the sqrt
                        rmse_eq14=float(np.mean(rmses) / np.sqrt(len(w.alpha))),
                        acc=pools[kind][(v, j)].value(),
                    )
                )
        return cells

    return EvalReport(
        dataset_id=dataset.manifest.name,
        checkpoint_hash=checkpoint_hash,
        metric_variant="weatherbench_normalized",
        cells=make_cells("model"),
        baselines={
            "persistence": make_cells("persistence"),
            "climatology": make_cells("climatology"),
        },
    )


def latitude_weights_for(dataset) -> LatWeights:
    from .train import latitude_weights

    return latitude_weights(dataset.manifest.lats)
