"""P.1401-style scoring: Pearson correlation and RMSE after a third-order
polynomial mapping, per dataset; plain RMSE for the acoustic tasks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acoustics import ACOUSTIC_TASKS


@dataclass(frozen=True)
class EvalPairs:
    y_pred: np.ndarray
    y_true: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.y_pred, dtype=np.float64)
        t = np.asarray(self.y_true, dtype=np.float64)
        if p.shape != t.shape or p.ndim != 1:
            raise ValueError(f"pairs must be equal-length vectors, got {p.shape} vs {t.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite values in evaluation pairs")
        object.__setattr__(self, "y_pred", p)
        object.__setattr__(self, "y_true", t)


@dataclass
class EvalReport:
    n_files: int
    pcc_raw: float
    pcc_mapped: float
    rmse_raw: float
    rmse_mapped: float
    mapping_coeffs: tuple
    mapping_monotone: bool
    acoustic_rmse: dict = field(default_factory=dict)  # task -> physical-unit RMSE


def pearson(pairs: EvalPairs) -> float:
    x, y = pairs.y_pred, pairs.y_true
    if len(x) < 3:
        raise ValueError("need at least 3 pairs for a correlation")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.sum(xc**2)), np.sqrt(np.sum(yc**2))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("zero variance; correlation undefined")
    return float(np.sum(xc * yc) / (sx * sy))


def fit_cubic_mapping(pairs: EvalPairs) -> tuple:
    """Least-squares y_true ~ a0 + a1 x + a2 x^2 + a3 x^3 (column-scaled solve).

    Fewer than 4 distinct prediction values triggers a linear (or constant)
    fallback; returns (a0, a1, a2, a3) either way.
    """
    x, y = pairs.y_pred, pairs.y_true
    n_distinct = len(np.unique(x))
    degree = 3 if n_distinct >= 4 else min(1, n_distinct - 1)
    cols = np.stack([x**k for k in range(degree + 1)], axis=1)
    scale = np.sqrt(np.sum(cols**2, axis=0))
    scale[scale == 0.0] = 1.0
    coef, *_ = np.linalg.lstsq(cols / scale, y, rcond=None)
    coef = coef / scale
    return tuple(coef) + (0.0,) * (3 - degree)


def apply_mapping(coeffs: tuple, x: np.ndarray) -> np.ndarray:
    a0, a1, a2, a3 = coeffs
    return a0 + a1 * x + a2 * x**2 + a3 * x**3


def mapping_is_monotone(coeffs: tuple, x: np.ndarray) -> bool:
    """True when the fitted cubic is monotone over the span of the predictions."""
    _, a1, a2, a3 = coeffs
    grid = np.linspace(x.min(), x.max(), 512)
    deriv = a1 + 2 * a2 * grid + 3 * a3 * grid**2
    return bool(np.all(deriv >= 0.0) or np.all(deriv <= 0.0))


def rmse(y_pred: np.ndarray, y_true: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(y_pred) - np.asarray(y_true)) ** 2)))


def rmse_after_mapping(pairs: EvalPairs, coeffs: tuple | None = None) -> float:
    if coeffs is None:
        coeffs = fit_cubic_mapping(pairs)
    return rmse(apply_mapping(coeffs, pairs.y_pred), pairs.y_true)


def acoustic_rmse(per_task_pairs: dict) -> dict:
    """Plain physical-unit RMSE per acoustic task."""
    return {task: rmse(p.y_pred, p.y_true) for task, p in per_task_pairs.items()}


def evaluate_mos(pairs: EvalPairs) -> EvalReport:
    coeffs = fit_cubic_mapping(pairs)
    mapped = apply_mapping(coeffs, pairs.y_pred)
    return EvalReport(
        n_files=len(pairs.y_pred),
        pcc_raw=pearson(pairs),
        pcc_mapped=pearson(EvalPairs(mapped, pairs.y_true)),
        rmse_raw=rmse(pairs.y_pred, pairs.y_true),
        rmse_mapped=rmse(mapped, pairs.y_true),
        mapping_coeffs=coeffs,
        mapping_monotone=mapping_is_monotone(coeffs, pairs.y_pred),
    )


def evaluate_manifest(model, rows: list, base_dir, frontend=None) -> EvalReport:
    """Predict every row of one dataset manifest and score it."""
    from .frontend import FrontendConfig, SegmentTensor
    from .trainer import featurize_manifest

    frontend = frontend or FrontendConfig()
    examples = featurize_manifest(rows, base_dir, frontend)

    mos_pred, mos_true = [], []
    task_pred = {task: [] for task in ACOUSTIC_TASKS}
    task_true = {task: [] for task in ACOUSTIC_TASKS}
    for ex in examples:
        pred = model.predict_segments(SegmentTensor(values=ex.segments))
        if ex.mos is not None:
            mos_pred.append(pred.mos)
            mos_true.append(ex.mos)
        if ex.acoustics is not None:
            for task in ACOUSTIC_TASKS:
                task_pred[task].append(getattr(pred, task))
                task_true[task].append(ex.acoustics[task])

    if mos_pred:
        report = evaluate_mos(EvalPairs(np.array(mos_pred), np.array(mos_true)))
    else:
        report = EvalReport(
            n_files=len(rows), pcc_raw=float("nan"), pcc_mapped=float("nan"),
            rmse_raw=float("nan"), rmse_mapped=float("nan"),
            mapping_coeffs=(0.0, 1.0, 0.0, 0.0), mapping_monotone=True,
        )
        report.n_files = len(rows)
    if any(task_true[t] for t in ACOUSTIC_TASKS):
        report.acoustic_rmse = acoustic_rmse(
            {
                t: EvalPairs(np.array(task_pred[t]), np.array(task_true[t]))
                for t in ACOUSTIC_TASKS
                if task_true[t]
            }
        )
    return report


def write_report(report: EvalReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerow(["n_files", report.n_files])
        writer.writerow(["pcc_raw", f"{report.pcc_raw:.6f}"])
        writer.writerow(["pcc_mapped", f"{report.pcc_mapped:.6f}"])
        writer.writerow(["rmse_raw", f"{report.rmse_raw:.6f}"])
        writer.writerow(["rmse_mapped", f"{report.rmse_mapped:.6f}"])
        writer.writerow(["mapping_monotone", report.mapping_monotone])
        for task, value in report.acoustic_rmse.items():
            writer.writerow([f"rmse_{task}", f"{value:.6f}"])


def format_report(report: EvalReport) -> str:
    lines = [
        f"files:        {report.n_files}",
        f"PCC  raw:     {report.pcc_raw:.4f}",
        f"PCC  mapped:  {report.pcc_mapped:.4f}",
        f"RMSE raw:     {report.rmse_raw:.4f}",
        f"RMSE mapped:  {report.rmse_mapped:.4f}",
        f"cubic monotone over range: {report.mapping_monotone}",
    ]
    for task, value in report.acoustic_rmse.items():
        lines.append(f"RMSE {task}: {value:.4f}")
    return "\n".join(lines)
