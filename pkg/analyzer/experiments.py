"""
Evaluation protocols: held-out edge classification with the internal
baselines, multi-seed benchmarks, and the random-attack resilience
experiment for a ground-truth simulator or a trained checkpoint.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from ai.model import ResilienceNet, Window
from ai.trainer import Checkpoint, TrainConfig, sample_negatives, train
from analyzer.metrics import (ClassificationCounts, MetricsReport, classification_metrics, multi_run_report,
                              regression_metrics)
from core.errors import ConfigError, DatasetError
from core.graph import TemporalGraphDataset
from core.rng import stream
from core.tensor import no_grad
from simulation.dynamics import (DEFAULT_DT, DEFAULT_EPS, DEFAULT_T_END, DEFAULT_THETA_FRACTION, RecoveryCurve,
                                 ResilienceVerdict, Trajectory, attack, classify_resilience, dynamics_from_dict,
                                 recovery_curve, time_to_recovery)
from simulation.synthetic import split

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.05, 0.10, 0.20, 0.50)
DEFAULT_THRESHOLD = 0.5
THREADS_ENV = "NETRESIL_THREADS"


def thread_count() -> int:
    """Worker threads for seed fan-out, capped by NETRESIL_THREADS"""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return max(1, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got '{raw}'") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {value}")
    return value


# ---------------------------------------------------------------------- topology evaluation


def score_topology(probabilities: np.ndarray, positives: np.ndarray, negatives: np.ndarray,
                   threshold: float = DEFAULT_THRESHOLD) -> ClassificationCounts:
    """Counts over labelled pairs; a pair is predicted present when p >= threshold"""
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(-1, 2)
    pairs = np.concatenate([positives, negatives])
    labels = np.concatenate([np.ones(len(positives), dtype=int), np.zeros(len(negatives), dtype=int)])
    predicted = (np.asarray(probabilities)[pairs[:, 0], pairs[:, 1]] >= threshold).astype(int)
    return ClassificationCounts.from_labels(labels, predicted)


def degree_product_counts(adjacency: np.ndarray, positives: np.ndarray, negatives: np.ndarray) -> ClassificationCounts:
    """
    Ranks the labelled pairs by d_i * d_j on the given graph and predicts the
    top half as edges (ties keep pair order)
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(-1, 2)
    pairs = np.concatenate([positives, negatives])
    labels = np.concatenate([np.ones(len(positives), dtype=int), np.zeros(len(negatives), dtype=int)])
    degree = np.asarray(adjacency, dtype=np.float64).sum(axis=1)
    scores = degree[pairs[:, 0]] * degree[pairs[:, 1]]
    order = np.argsort(-scores, kind="stable")
    predicted = np.zeros(len(pairs), dtype=int)
    predicted[order[: len(pairs) // 2]] = 1
    return ClassificationCounts.from_labels(labels, predicted)


def _check_compatible(ckpt: Checkpoint, dataset: TemporalGraphDataset) -> None:
    m, n = int(ckpt.meta.get("feature_dim", -1)), int(ckpt.meta.get("n_nodes", -1))
    if (m, n) != (dataset.feature_dim, dataset.node_count):
        raise DatasetError(f"checkpoint expects N={n}, M={m}; dataset has "
                           f"N={dataset.node_count}, M={dataset.feature_dim}")


def evaluate_topology(ckpt: Checkpoint, dataset: TemporalGraphDataset, threshold: float = DEFAULT_THRESHOLD,
                      seed: int = 0, model: Optional[ResilienceNet] = None) -> Dict[str, object]:
    """
    Held-out edges of the training split against an equal number of sampled
    non-edges (stream "eval-negatives" of `seed`), plus node-state errors
    and the degree-product / persistence baselines
    """
    _check_compatible(ckpt, dataset)
    config = ckpt.train_config()
    model = model or ckpt.to_model()
    length = int(ckpt.meta.get("window") or dataset.horizon - 1)
    start = dataset.horizon - 1 - length
    target_index = dataset.horizon - 1
    _, test_edges = split(dataset, config.split_ratio, config.seed, target_index=target_index)
    target = dataset.snapshots[target_index]
    a_target = np.asarray(target.graph.adjacency)
    test_edges = np.asarray(test_edges, dtype=np.int64)
    negatives = sample_negatives(a_target, len(test_edges), stream(seed, "eval-negatives"))

    with no_grad():
        out = model.predict(dataset, start, length)
    probabilities = out.topology.data
    counts = score_topology(probabilities, test_edges, negatives, threshold)
    result: Dict[str, object] = dict(classification_metrics(counts))
    result["counts"] = {"tp": counts.tp, "tn": counts.tn, "fp": counts.fp, "fn": counts.fn}
    result.update(regression_metrics(out.state.data, target.states))

    last = dataset.snapshots[target_index - 1]
    baseline = classification_metrics(degree_product_counts(last.graph.adjacency, test_edges, negatives))
    persistence = regression_metrics(last.states, target.states)
    result["baseline_degree_f1"] = baseline["f1"]
    result["baseline_degree_acc"] = baseline["acc"]
    result["baseline_persistence_mae"] = persistence["mae"]
    result["baseline_persistence_rmse"] = persistence["rmse"]
    return result


def evaluate_seeds(ckpt: Checkpoint, dataset: TemporalGraphDataset, seeds: Sequence[int],
                   threshold: float = DEFAULT_THRESHOLD, threads: Optional[int] = None) -> MetricsReport:
    """One evaluation per seed (fresh negative draw each), merged in seed order"""
    _check_compatible(ckpt, dataset)
    n_jobs = min(threads or thread_count(), max(len(seeds), 1))
    logger.info("🔄 Evaluating %d seed(s) on %d thread(s)", len(seeds), n_jobs)
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(evaluate_topology)(ckpt, dataset, threshold, seed) for seed in seeds)
    report = multi_run_report(results, seeds, config=ckpt.config)
    report.extra["baselines"] = _baseline_summary(results)
    return report


def benchmark(dataset: TemporalGraphDataset, config: TrainConfig, seeds: Sequence[int],
              threshold: float = DEFAULT_THRESHOLD, threads: Optional[int] = None) -> MetricsReport:
    """Trains and evaluates once per seed; each seed has its own split, init and negatives"""

    def run(seed: int) -> Dict[str, object]:
        seeded = TrainConfig.from_dict({**config.to_dict(), "seed": int(seed)})
        ckpt = train(dataset, seeded)
        return evaluate_topology(ckpt, dataset, threshold, seed)

    n_jobs = min(threads or thread_count(), max(len(seeds), 1))
    logger.info("🔄 Benchmark: %d seed(s), %d epochs each, %d thread(s)", len(seeds), config.epochs, n_jobs)
    results = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(run)(seed) for seed in seeds)
    report = multi_run_report(results, seeds, config=config.to_dict())
    report.extra["baselines"] = _baseline_summary(results)
    return report


def _baseline_summary(results: Sequence[Dict[str, object]]) -> Dict[str, float]:
    keys = ("baseline_degree_f1", "baseline_degree_acc", "baseline_persistence_mae", "baseline_persistence_rmse")
    return {k: float(np.mean([r[k] for r in results])) for k in keys}


# ---------------------------------------------------------------------- attack experiment


@dataclass(eq=False)
class AttackOutcome:
    fraction: float
    curve: RecoveryCurve
    verdict: ResilienceVerdict
    recovery_ratio: float
    time_to_recovery: float

    def to_dict(self) -> Dict:
        return {
            "fraction": self.fraction,
            "removed": int(len(self.curve.removed)),
            "recovery_ratio": self.recovery_ratio,
            "time_to_recovery": self.time_to_recovery,
            **self.verdict.to_dict(),
        }


@dataclass(eq=False)
class AttackReport:
    subject: str
    seed: int
    baseline_steady_mean: float
    theta: float
    outcomes: List[AttackOutcome] = field(default_factory=list)

    @property
    def curves(self) -> List[RecoveryCurve]:
        return [o.curve for o in self.outcomes]

    def outcome(self, fraction: float) -> AttackOutcome:
        for o in self.outcomes:
            if np.isclose(o.fraction, fraction):
                return o
        raise KeyError(fraction)

    def to_dict(self) -> Dict:
        return {
            "subject": self.subject,
            "seed": self.seed,
            "baseline_steady_mean": self.baseline_steady_mean,
            "theta": self.theta,
            "verdicts": [o.to_dict() for o in self.outcomes],
        }


def _simulated_curves(dataset: TemporalGraphDataset, fractions: Sequence[float], seed: int, dt: float,
                      t_end: float, record_every: int) -> List[RecoveryCurve]:
    if not dataset.metadata.get("dynamics"):
        raise DatasetError(f"dataset {dataset.name} records no dynamics; pass a checkpoint instead")
    spec = dynamics_from_dict(dataset.metadata["dynamics"])
    first = dataset.snapshots[0]
    return recovery_curve(first.graph, spec, first.states, fractions, dt=dt, t_end=t_end, rng_seed=seed,
                          record_every=record_every)


def model_rollout(model: ResilienceNet, dataset: TemporalGraphDataset, fraction: float, seed: int,
                  steps: int, length: int) -> RecoveryCurve:
    """
    Attacks the last `length` snapshots, then predicts one step at a time,
    feeding predictions back with the attacked topology held fixed
    """
    hit = attack(dataset, fraction, seed)
    removed = np.asarray(hit.metadata["removed_nodes"], dtype=np.int64)
    snaps = hit.snapshots[-length:]
    states = [s.states for s in snaps]
    adjacencies = [np.asarray(s.graph.adjacency) for s in snaps]
    gap = dataset.mean_gap()
    timestamps = [float(s.t) for s in snaps]
    irregular = not dataset.is_regular()
    samples = [states[-1]]
    with no_grad():
        for _ in range(steps):
            window = Window(states=states[-length:], adjacencies=adjacencies[-length:],
                            timestamps=timestamps[-length:], target_index=-1, target_t=timestamps[-1] + gap)
            nxt = np.array(model.forward(window, irregular=irregular, mean_gap=gap).state.data)
            nxt[removed] = 0.0
            states.append(nxt)
            adjacencies.append(adjacencies[-1])
            timestamps.append(timestamps[-1] + gap)
            samples.append(nxt)
    active = np.ones(dataset.node_count, dtype=bool)
    active[removed] = False
    traj = Trajectory(np.arange(steps + 1) * gap, np.stack(samples),
                      provenance={"integrator": "model-rollout", "fraction": fraction}, active=active)
    return RecoveryCurve(fraction=float(fraction), trajectory=traj, removed=removed)


def attack_experiment(dataset: TemporalGraphDataset, fractions: Sequence[float] = DEFAULT_FRACTIONS,
                      seed: int = 0, dt: float = DEFAULT_DT, t_end: float = DEFAULT_T_END,
                      ckpt: Optional[Checkpoint] = None, steps: int = 30, record_every: int = 10,
                      eps: float = DEFAULT_EPS) -> AttackReport:
    """
    Per attack fraction: mean-state curve, resilience verdict, recovery ratio
    (final mean / unperturbed final mean) and time to 90% of its own final mean.

    The ground-truth simulator starts from the first snapshot; a checkpoint
    is rolled forward autoregressively from the end of the dataset.
    """
    fractions = [float(f) for f in fractions]
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ConfigError(f"attack fraction must be in [0, 1], got {f}")
    runs = [0.0] + [f for f in fractions if f != 0.0]

    if ckpt is None:
        subject = "simulator"
        logger.info("🔄 Attack experiment on %s (simulator, fractions %s)", dataset.name, fractions)
        curves = _simulated_curves(dataset, runs, seed, dt, t_end, record_every)
    else:
        subject = "checkpoint"
        _check_compatible(ckpt, dataset)
        model = ckpt.to_model()
        length = min(int(ckpt.meta.get("window") or dataset.horizon - 1), dataset.horizon)
        logger.info("🔄 Attack experiment on %s (model rollout of %d steps)", dataset.name, steps)
        curves = [model_rollout(model, dataset, f, seed, steps, length) for f in runs]

    baseline = curves[0]
    baseline_mean = float(baseline.mean_state[-1])
    theta = DEFAULT_THETA_FRACTION * baseline_mean
    by_fraction = dict(zip(runs, curves))
    report = AttackReport(subject=subject, seed=seed, baseline_steady_mean=baseline_mean, theta=theta)
    for f in fractions:
        curve = by_fraction[f]
        verdict = classify_resilience(curve.trajectory, theta, eps)
        ratio = verdict.steady_mean / baseline_mean if baseline_mean > 0 else 0.0
        ttr = time_to_recovery(curve.times, curve.mean_state)
        report.outcomes.append(AttackOutcome(f, curve, verdict, ratio, ttr))
        logger.info("%s %.0f%% attack: ratio=%.3f resilient=%s", "✅" if verdict.resilient else "⚠️",
                    100 * f, ratio, verdict.resilient)
    return report
