#!/usr/bin/env python3
"""
End-to-end smoke check for NetResil.
Runs every stage once on a small dataset: generation, storage, training,
evaluation and the attack experiment. Works under pytest and as a script.
"""

import os
import sys
import tempfile

import numpy as np

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from ai.trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from analyzer.experiments import attack_experiment, evaluate_topology
from core.graph import load_dataset, save_dataset
from core.nn import check_gradients
from core.tensor import Tensor, matmul, tanh, tsum
from simulation.synthetic import GeneratorConfig, generate

SMOKE_GENERATOR = GeneratorConfig(name="smoke", n_nodes=16, feature_dim=1, horizon=5,
                                  topology_params={"p": 0.45}, seed=17, initial_low=0.5, initial_high=1.5)
SMOKE_TRAINING = {"epochs": 3, "learning_rate": 1e-2, "seed": 2, "window": 3,
                  "state": {"d_e": 4, "n_heads": 2, "d_k": 2, "gcn_hidden": 4, "d_ff": 8, "ode_hidden": 4},
                  "topo": {"d_z": 4, "L_hops": 1, "d_h": 4, "d_att": 4, "d_q": 4, "mlp_hidden": 8}}


def test_autodiff():
    """Gradient of a small two-layer expression against finite differences"""
    print("🔗 Checking autodiff...")
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    x = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    errors = check_gradients(lambda: tsum(tanh(matmul(w, x))), {"w": w, "x": x}, floor=1e-3)
    assert max(errors.values()) < 1e-4, errors
    print(f"✅ Worst relative gradient error {max(errors.values()):.2e}")


def test_dataset_storage():
    print("\n📊 Generating and storing a dataset...")
    dataset = generate(SMOKE_GENERATOR)
    with tempfile.TemporaryDirectory() as tmp:
        save_dataset(dataset, tmp)
        loaded = load_dataset(tmp)
    assert np.array_equal(loaded.adjacency_array(), dataset.adjacency_array())
    assert np.allclose(loaded.states_array(), dataset.states_array())
    print(f"✅ {dataset.name}: N={dataset.node_count} T={dataset.horizon} "
          f"edges at t0={dataset.snapshots[0].graph.edge_count()}")


def test_training_and_evaluation():
    print("\n🤖 Training and evaluating...")
    dataset = generate(SMOKE_GENERATOR)
    ckpt = train(dataset, TrainConfig.from_dict(SMOKE_TRAINING))
    assert len(ckpt.history["loss"]) == 3
    assert all(np.isfinite(ckpt.history["loss"]))

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "ckpt.json")
        save_checkpoint(ckpt, path)
        ckpt = load_checkpoint(path)

    metrics = evaluate_topology(ckpt, dataset, seed=0)
    for name in ("acc", "f1", "precision", "recall"):
        assert 0.0 <= metrics[name] <= 1.0
    assert metrics["rmse"] >= metrics["mae"] >= 0.0
    print(f"✅ acc={metrics['acc']:.3f} f1={metrics['f1']:.3f} mae={metrics['mae']:.4f}")


def test_attack():
    print("\n🎯 Running the attack experiment...")
    dataset = generate(SMOKE_GENERATOR)
    report = attack_experiment(dataset, [0.0, 0.25], seed=0, t_end=5.0)
    assert report.outcome(0.0).recovery_ratio == 1.0
    assert len(report.outcome(0.25).curve.removed) == 4
    for outcome in report.outcomes:
        print(f"✅ {100 * outcome.fraction:.0f}%: ratio={outcome.recovery_ratio:.3f} "
              f"resilient={outcome.verdict.resilient}")


def main():
    print("🚀 NetResil smoke check")
    print("=" * 50)

    tests = [
        ("Autodiff", test_autodiff),
        ("Dataset storage", test_dataset_storage),
        ("Training and evaluation", test_training_and_evaluation),
        ("Attack experiment", test_attack),
    ]

    results = []
    for test_name, test_func in tests:
        try:
            test_func()
            results.append((test_name, True))
        except Exception as e:
            print(f"❌ '{test_name}' failed: {e}")
            results.append((test_name, False))

    print("\n" + "=" * 50)
    print("📋 SUMMARY")
    print("=" * 50)
    passed = 0
    for test_name, result in results:
        print(f"{test_name}: {'✅ PASSED' if result else '❌ FAILED'}")
        passed += int(result)

    print(f"\nResult: {passed}/{len(results)} checks passed")
    if passed == len(results):
        print("\n🎉 All checks passed. Try: python app.py generate --preset resilient-demo --out runs/data")
    else:
        print(f"\n⚠️  {len(results) - passed} check(s) failed. See the errors above.")
    return passed == len(results)


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
