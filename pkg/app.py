#!/usr/bin/env python3
"""
NetResil - physics-informed prediction of evolving networks and their
resilience to random node attacks.

Command-line entry point: generate datasets, train, evaluate, run attack
experiments and multi-seed benchmarks. Every command writes a run manifest
next to its output.

Config precedence: command-line flags > config file values > defaults.
"""

import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import click
import psutil

from ai.trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from analyzer.experiments import DEFAULT_FRACTIONS, DEFAULT_THRESHOLD, attack_experiment, benchmark, evaluate_seeds
from core.errors import ConfigError, DivergenceError, NetResilError
from core.graph import META_FILE, SNAPSHOTS_FILE, load_dataset, save_dataset
from simulation.dynamics import DEFAULT_DT, DEFAULT_T_END, export_curves_csv
from simulation.synthetic import GeneratorConfig, generate, preset, presets

__version__ = "1.0.0"

logger = logging.getLogger("netresil")

LOG_FORMAT = "[%(asctime)s] %(levelname)s %(name)s: %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


# ---------------------------------------------------------------------- manifests


@dataclass
class RunManifest:
    command: str
    config: Dict
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    version: str = __version__
    duration_s: float = 0.0
    rss_bytes: int = 0


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_digest(path: str) -> str:
    """SHA-256 over the two dataset files (the manifest itself is excluded)"""
    h = hashlib.sha256()
    for name in (META_FILE, SNAPSHOTS_FILE):
        h.update(file_digest(os.path.join(path, name)).encode("ascii"))
    return h.hexdigest()


def write_manifest(manifest: RunManifest, path: str, started: float) -> None:
    manifest.duration_s = round(time.perf_counter() - started, 3)
    manifest.rss_bytes = int(psutil.Process().memory_info().rss)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(asdict(manifest), f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def _manifest_path(output: str) -> str:
    if os.path.isdir(output):
        return os.path.join(output, "manifest.json")
    return os.path.splitext(output)[0] + ".manifest.json"


def _guard_output(path: str, force: bool) -> None:
    if force or not os.path.exists(path):
        return
    if os.path.isdir(path) and not os.listdir(path):
        return
    raise click.UsageError(f"{path} already exists; use --force to overwrite")


def _read_json(path: str) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e.msg}", line=e.lineno, column=e.colno) from e
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return payload


def _int_list(ctx, param, value: Optional[str]) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got '{value}'") from None


def _fraction_list(ctx, param, value: str) -> List[float]:
    try:
        fractions = [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated fractions, got '{value}'") from None
    if not fractions or any(not 0.0 <= f <= 1.0 for f in fractions):
        raise click.BadParameter("fractions must lie in [0, 1]")
    return fractions


# ---------------------------------------------------------------------- CLI


class NetResilGroup(click.Group):
    """Maps library errors onto exit codes: 1 usage/config/data, 2 numerical failure"""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = 1
            raise
        except DivergenceError as e:
            logger.error("❌ %s", e)
            click.echo(f"Error: {e}", err=True)
            ctx.exit(2)
        except NetResilError as e:
            logger.error("❌ %s", e)
            click.echo(f"Error: {e}", err=True)
            ctx.exit(1)


@click.group(cls=NetResilGroup)
@click.option("--quiet", is_flag=True, help="Only log warnings and errors.")
@click.version_option(__version__, prog_name="netresil")
def cli(quiet: bool):
    """NetResil: simulate, learn and attack evolving networks."""
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format=LOG_FORMAT, datefmt=LOG_DATEFMT)


@cli.command("generate")
@click.option("--preset", "preset_name", type=click.Choice(sorted(presets())), help="Named generator preset.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Generator config JSON.")
@click.option("--seed", type=int, default=None, help="Overrides the preset/config seed.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Dataset directory.")
@click.option("--force", is_flag=True, help="Overwrite a non-empty output directory.")
def cmd_generate(preset_name: Optional[str], config_path: Optional[str], seed: Optional[int], out_dir: str,
                 force: bool):
    """Generate a synthetic temporal graph dataset."""
    started = time.perf_counter()
    if (preset_name is None) == (config_path is None):
        raise click.UsageError("pass exactly one of --preset / --config")
    _guard_output(out_dir, force)
    config = preset(preset_name) if preset_name else GeneratorConfig.from_dict(_read_json(config_path))
    if seed is not None:
        config.seed = seed
    dataset = generate(config)
    save_dataset(dataset, out_dir)
    manifest = RunManifest(command="generate", config=config.to_dict(),
                           inputs={"config": file_digest(config_path)} if config_path else {},
                           outputs=[out_dir])
    manifest.inputs["dataset"] = dataset_digest(out_dir)
    write_manifest(manifest, _manifest_path(out_dir), started)
    click.echo(f"✅ {dataset.name}: N={dataset.node_count} M={dataset.feature_dim} T={dataset.horizon} -> {out_dir}")


@cli.command("train")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), help="Dataset directory.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Training config JSON.")
@click.option("--seed", type=int, default=None, help="Master seed (split, init, negatives).")
@click.option("--epochs", type=int, default=None, help="Overrides the configured epoch count.")
@click.option("--lr", "learning_rate", type=float, default=None, help="Overrides the learning rate.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Checkpoint JSON.")
@click.option("--force", is_flag=True, help="Overwrite an existing checkpoint.")
def cmd_train(data_dir: Optional[str], config_path: Optional[str], seed: Optional[int], epochs: Optional[int],
              learning_rate: Optional[float], out_path: str, force: bool):
    """Jointly train the state and topology predictors."""
    started = time.perf_counter()
    _guard_output(out_path, force)
    payload = TrainConfig.from_json(config_path).to_dict() if config_path else TrainConfig().to_dict()
    overrides = {"seed": seed, "epochs": epochs, "learning_rate": learning_rate, "dataset": data_dir}
    payload.update({k: v for k, v in overrides.items() if v is not None})
    config = TrainConfig.from_dict(payload)
    if not config.dataset:
        raise click.UsageError("no dataset: pass --data or set \"dataset\" in the config")
    dataset = load_dataset(config.dataset)
    ckpt = train(dataset, config)
    save_checkpoint(ckpt, out_path)
    inputs = {"dataset": dataset_digest(config.dataset)}
    if config_path:
        inputs["config"] = file_digest(config_path)
    write_manifest(RunManifest(command="train", config=config.to_dict(), inputs=inputs, outputs=[out_path]),
                   _manifest_path(out_path), started)
    click.echo(f"✅ final loss {ckpt.history['loss'][-1]:.6f}" if ckpt.history["loss"] else "✅ 0 epochs")


@cli.command("eval")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--seeds", default="0", callback=_int_list, help="Comma-separated evaluation seeds.")
@click.option("--threshold", type=float, default=DEFAULT_THRESHOLD, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Metrics JSON.")
@click.option("--force", is_flag=True)
def cmd_eval(ckpt_path: str, data_dir: str, seeds: List[int], threshold: float, out_path: str, force: bool):
    """Evaluate a checkpoint on held-out edges and next states."""
    started = time.perf_counter()
    _guard_output(out_path, force)
    ckpt = load_checkpoint(ckpt_path)
    dataset = load_dataset(data_dir)
    report = evaluate_seeds(ckpt, dataset, seeds, threshold)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(report.to_json() + "\n")
    write_manifest(RunManifest(command="eval", config={"seeds": seeds, "threshold": threshold},
                               inputs={"checkpoint": file_digest(ckpt_path), "dataset": dataset_digest(data_dir)},
                               outputs=[out_path]), _manifest_path(out_path), started)
    for name, value in report.formatted().items():
        click.echo(f"{name:>10}: {value}")


@cli.command("attack")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True, dir_okay=False),
              help="Roll a trained model forward instead of the ground-truth simulator.")
@click.option("--fractions", default=",".join(f"{f:.2f}" for f in DEFAULT_FRACTIONS), callback=_fraction_list,
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dt", type=float, default=DEFAULT_DT, show_default=True)
@click.option("--t-end", "t_end", type=float, default=DEFAULT_T_END, show_default=True)
@click.option("--steps", type=int, default=30, show_default=True, help="Rollout steps for --ckpt.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Curves CSV.")
@click.option("--force", is_flag=True)
def cmd_attack(data_dir: str, ckpt_path: Optional[str], fractions: List[float], seed: int, dt: float, t_end: float,
               steps: int, out_path: str, force: bool):
    """Random node attacks: recovery curves and resilience verdicts."""
    started = time.perf_counter()
    _guard_output(out_path, force)
    dataset = load_dataset(data_dir)
    ckpt = load_checkpoint(ckpt_path) if ckpt_path else None
    report = attack_experiment(dataset, fractions, seed=seed, dt=dt, t_end=t_end, ckpt=ckpt, steps=steps)
    export_curves_csv(report.curves, out_path)
    verdicts_path = os.path.splitext(out_path)[0] + ".verdicts.json"
    with open(verdicts_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    inputs = {"dataset": dataset_digest(data_dir)}
    if ckpt_path:
        inputs["checkpoint"] = file_digest(ckpt_path)
    write_manifest(RunManifest(command="attack", config={"fractions": fractions, "seed": seed, "dt": dt,
                                                         "t_end": t_end, "steps": steps},
                               inputs=inputs, outputs=[out_path, verdicts_path]), _manifest_path(out_path), started)
    for outcome in report.outcomes:
        click.echo(f"{100 * outcome.fraction:5.1f}%  ratio={outcome.recovery_ratio:.3f}  "
                   f"resilient={outcome.verdict.resilient}")


@cli.command("benchmark")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seeds", default="0,1,2,3,4,5,6,7,8,9", callback=_int_list, show_default=True)
@click.option("--epochs", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Metrics JSON.")
@click.option("--force", is_flag=True)
def cmd_benchmark(data_dir: str, config_path: Optional[str], seeds: List[int], epochs: Optional[int],
                  out_path: str, force: bool):
    """Train and evaluate once per seed; report mean ± std."""
    started = time.perf_counter()
    _guard_output(out_path, force)
    payload = TrainConfig.from_json(config_path).to_dict() if config_path else TrainConfig().to_dict()
    if epochs is not None:
        payload["epochs"] = epochs
    payload["dataset"] = data_dir
    config = TrainConfig.from_dict(payload)
    report = benchmark(load_dataset(data_dir), config, seeds)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(report.to_json() + "\n")
    write_manifest(RunManifest(command="benchmark", config=config.to_dict(),
                               inputs={"dataset": dataset_digest(data_dir)}, outputs=[out_path]),
                   _manifest_path(out_path), started)
    for name, value in report.formatted().items():
        click.echo(f"{name:>10}: {value}")


def main() -> int:
    try:
        cli.main(prog_name="netresil")
    except SystemExit as e:
        return int(e.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
