#!/usr/bin/env python3
"""Smoke test for the sewa_py extension module.

Builds the cdylib if needed, copies it next to a temp dir as sewa_py.so,
imports it, and drives the main pipeline end to end:

    dataset -> train -> window -> baselines vs learned mask -> bounds

Run from the repository root:  python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    lib = REPO / "target" / "debug" / "libsewa_py.so"
    if not lib.exists():
        print("building sewa-py ...")
        subprocess.run(
            ["cargo", "build", "-p", "sewa-py"], cwd=REPO, check=True
        )
    staging = Path(tempfile.mkdtemp(prefix="sewa_py_"))
    shutil.copy2(lib, staging / "sewa_py.so")
    sys.path.insert(0, str(staging))
    import sewa_py

    return sewa_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} !~ {b}"


def main():
    sewa = load_module()

    # --- model + data -----------------------------------------------------
    spec = sewa.MlpSpec([2, 8, 2], "relu", "cross_entropy_softmax")
    assert spec.param_count() == 2 * 8 + 8 + 8 * 2 + 2
    train, test = sewa.gen_spirals(400, 0.25, seed=7)
    assert len(train) == 320 and len(test) == 80

    # deterministic init, finite forward pass
    w0 = sewa.mlp_init(spec, 1)
    assert w0 == sewa.mlp_init(spec, 1)
    logits = sewa.mlp_forward(w0, spec, [0.5, -0.5], 1)
    assert len(logits) == 2 and all(math.isfinite(v) for v in logits)

    # gradient is finite and nonzero
    loss, grad = sewa.loss_and_grad(w0, spec, train)
    assert math.isfinite(loss) and any(g != 0.0 for g in grad)

    # --- train + window ----------------------------------------------------
    final_w, window = sewa.sgd_train(
        spec, train, steps=600, alpha=0.5, batch_size=8, seed=1,
        capture_every=10, window_k=20,
    )
    assert len(window) == 20
    assert window.steps[-1] == 600

    # window persistence round-trip
    with tempfile.TemporaryDirectory() as d:
        window.save(d)
        reloaded = sewa.Window.load(d)
        assert reloaded.steps == window.steps
        assert reloaded.weights(0) == window.weights(0)

    # --- averaging baselines ----------------------------------------------
    uni = sewa.uniform_average(window)
    assert uni == sewa.apply_mask(window, [True] * 20)
    lawa_mask = sewa.lawa_select(20, 4)
    assert sum(lawa_mask) == 4 and lawa_mask[-1]
    rand_mask = sewa.random_select(20, 4, seed=3)
    assert sum(rand_mask) == 4
    sewa.ema_average(window, 0.9, 1)
    sewa.swa_average(window, 0.75, 1)

    # --- gumbel + relaxation sanity ----------------------------------------
    u, g = sewa.gumbel_sample(0, 0)
    assert 0.0 < u < 1.0
    approx(g, -math.log(-math.log(u)), 1e-12)
    proj = sewa.project_feasible([0.9, 0.9, 0.9], 2)
    approx(sum(proj), 2.0, 1e-6)

    # --- mask learning ------------------------------------------------------
    history, probs, mask = sewa.optimize_mask(
        window, spec, test, budget=4, mc_samples=8, step_size=0.1,
        iterations=40, seed=5,
    )
    assert len(probs) == 20 and sum(mask) == 4
    assert all(0.0 < p < 1.0 for p in probs)
    assert sum(probs) <= 4.0 + 1e-9
    assert len(history) >= 1

    learned = sewa.apply_mask(window, mask)
    loss_learned, acc_learned = sewa.evaluate(learned, spec, test)
    loss_final, _ = sewa.evaluate(final_w, spec, test)
    print(f"test loss: learned-mask {loss_learned:.4f} vs final {loss_final:.4f} "
          f"(acc {acc_learned:.3f})")

    # the Monte Carlo objective tracks the exact enumeration at small k
    small_spec = sewa.MlpSpec([1, 1], "identity", "mse")
    small_data = sewa.Dataset.from_values([1.0], [0.0], 1)
    _, small_window = sewa.sgd_train(
        small_spec, small_data, steps=6, alpha=0.05, batch_size=1, seed=2,
        capture_every=1, window_k=6,
    )
    s = [0.6] * 6
    mc = sewa.objective_mc(s, 3, small_window, small_spec, small_data,
                           mc_samples=4000, temperature=0.01, seed=9)
    exact = sewa.exact_expected_loss(s, 3, small_window, small_spec, small_data)
    approx(mc, exact, 0.05 * max(abs(exact), 1e-3) + 1e-4)

    # --- bounds --------------------------------------------------------------
    cb = sewa.convex_bound(0.01, 1.0, 1.0, 1.0, 100, 1000, 1, 1.0)
    approx(cb, 0.1999, 1e-12)
    nb = sewa.nonconvex_bound(0.01, 1.0, 1.0, 1.0, 101, 10000, 1, 1.0)
    approx(nb, 5.4540127087927070, 1e-9)
    t0 = sewa.optimal_t0(0.01, 1.0, 1.0, 1.0, 101, 10000, 1, 1.0)
    approx(t0, 272.70063543963535, 1e-7)

    max_ratio, bound = sewa.expansiveness_quadratic(2.0, 4, 1.0, 50, seed=1)
    approx(max_ratio, 1.0, 1e-12)
    approx(bound, 1.0, 0.0)

    print("smoke test OK")


if __name__ == "__main__":
    main()
