"""
Edge-classification and node-state regression metrics, and the multi-seed
report (mean ± sample std per metric).
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from core.errors import ShapeMismatchError

logger = logging.getLogger(__name__)

REPORT_METRICS = ("acc", "f1", "precision", "recall", "mae", "rmse", "rmse_paper")


@dataclass(frozen=True)
class ClassificationCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("classification counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, y_true: Sequence[int], y_pred: Sequence[int]) -> "ClassificationCounts":
        tn, fp, fn, tp = confusion_matrix(np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int),
                                          labels=[0, 1]).ravel()
        return cls(tp=int(tp), tn=int(tn), fp=int(fp), fn=int(fn))


def _ratio(num: float, den: float):
    return (num / den, False) if den > 0 else (0.0, True)


def classification_metrics(c: ClassificationCounts) -> Dict[str, object]:
    """
    acc, precision, recall and f1; a zero denominator yields 0 and a
    `degenerate` entry naming the metric
    """
    acc, bad_acc = _ratio(c.tp + c.tn, c.total)
    precision, bad_p = _ratio(c.tp, c.tp + c.fp)
    recall, bad_r = _ratio(c.tp, c.tp + c.fn)
    f1, bad_f1 = _ratio(2.0 * precision * recall, precision + recall)
    degenerate = [name for name, bad in (("acc", bad_acc), ("precision", bad_p), ("recall", bad_r), ("f1", bad_f1))
                  if bad]
    return {"acc": acc, "precision": precision, "recall": recall, "f1": f1, "degenerate": degenerate}


def regression_metrics(u_hat: np.ndarray, u_true: np.ndarray) -> Dict[str, float]:
    """
    mae: mean absolute error per entry
    rmse: root of the mean squared error per entry
    rmse_paper: mean over nodes of the L2 norm of the node error
    """
    u_hat = np.asarray(u_hat, dtype=np.float64)
    u_true = np.asarray(u_true, dtype=np.float64)
    if u_hat.shape != u_true.shape:
        raise ShapeMismatchError("regression_metrics", u_hat.shape, u_true.shape)
    if u_hat.ndim == 1:
        u_hat, u_true = u_hat[:, None], u_true[:, None]
    err = u_hat - u_true
    return {
        "mae": float(np.mean(np.abs(err))),
        "rmse": float(np.sqrt(np.mean(err * err))),
        "rmse_paper": float(np.mean(np.linalg.norm(err, axis=1))),
    }


def config_digest(config: Mapping) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class MetricsReport:
    seeds: List[int]
    metrics: Dict[str, Dict[str, object]]
    config_digest: str = ""
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {"seeds": self.seeds, "config_digest": self.config_digest, "metrics": self.metrics, **self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def formatted(self) -> Dict[str, str]:
        """Table-style "mean ± std" strings (the bare mean when std is undefined)"""
        out = {}
        for name, entry in self.metrics.items():
            if entry["std"] is None:
                out[name] = f"{entry['mean']:.3f}"
            else:
                out[name] = f"{entry['mean']:.3f} ± {entry['std']:.3f}"
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: entry["per_seed"] for name, entry in self.metrics.items()},
                            index=pd.Index(self.seeds, name="seed"))


def multi_run_report(per_seed: Sequence[Mapping[str, float]], seeds: Sequence[int],
                     config: Optional[Mapping] = None, metric_names: Optional[Sequence[str]] = None) -> MetricsReport:
    """
    Aggregates per-seed metric dicts (in seed order) into mean and sample std.
    With a single seed std is None and the metric is flagged degenerate.
    """
    if len(per_seed) != len(seeds):
        raise ValueError(f"{len(per_seed)} results for {len(seeds)} seeds")
    frame = pd.DataFrame(list(per_seed), index=list(seeds))
    names = [m for m in (metric_names or REPORT_METRICS) if m in frame.columns]
    metrics = {}
    for name in names:
        column = frame[name].astype(float)
        entry = {"per_seed": column.tolist(), "mean": float(column.mean())}
        if len(column) >= 2:
            entry["std"] = float(column.std(ddof=1))
        else:
            entry["std"] = None
            entry["degenerate"] = True
        metrics[name] = entry
    return MetricsReport(seeds=list(seeds), metrics=metrics,
                         config_digest=config_digest(config) if config is not None else "")
