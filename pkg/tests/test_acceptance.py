"""End-to-end acceptance checks for the whole stack.

Each test measures everything first, prints one [PASS]/[FAIL] summary line
(visible under ``pytest -s``), and only then asserts, so a red run still
reports its numbers.  Tests with a wall-clock budget assert it too.
"""

import os
import time

import numpy as np

from fuzzyseg import fcm, gradcheck
from fuzzyseg.cli import main as cli_main
from fuzzyseg.config import RunConfig
from fuzzyseg.dataset import build_dataset, save_dataset
from fuzzyseg.metrics import accuracy, dice_per_class, iou_per_class
from fuzzyseg.models import UNetSpec, build_unetpp
from fuzzyseg.phantoms import PhantomConfig
from fuzzyseg.train import run_ablation, train_run


def _report(num, title, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num} ({title}): {detail}")


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def _grid_minimum(pixels: np.ndarray) -> float:
    """Exact minimum of the c=2, m=2 objective over a joint 0.01-step grid.

    Centroids and the per-pixel memberships all live on the same 101-point
    grid; the cluster-1 membership 1 - u stays on it too.  For fixed
    centroids the objective is a sum of independent per-pixel terms, so
    minimizing each pixel over its own membership grid searches the full
    product grid without enumerating 101**N combinations.
    """
    g = np.linspace(0.0, 1.0, 101)
    w0 = (g[:, None] ** 2)[None]          # (1, 101, 1) membership^2, cluster 0
    w1 = ((1.0 - g)[:, None] ** 2)[None]  # same for cluster 1
    d1 = (pixels[None, :] - g[:, None]) ** 2   # (101, N) over candidate v1
    best = np.inf
    for v0 in g:
        d0 = (pixels - v0) ** 2
        cost = w0 * d0[None, None, :] + w1 * d1[:, None, :]   # (101, 101, N)
        best = min(best, float(cost.min(axis=1).sum(axis=1).min()))
    return best


def test_criterion_1_fcm_correctness():
    start = time.perf_counter()

    # closed-form membership updates
    u = fcm.update_memberships(np.array([0.0, 1.0]), np.array([0.0, 1.0]), 2.0)
    exact = np.array_equal(u, np.array([[1.0, 0.0], [0.0, 1.0]]))
    u = fcm.update_memberships(np.array([0.5]), np.array([0.0, 1.0]), 2.0)
    exact &= np.array_equal(u, np.array([[0.5], [0.5]]))
    u = fcm.update_memberships(np.array([0.25]), np.array([0.0, 1.0]), 2.0)
    derived_err = float(np.max(np.abs(u - np.array([[0.9], [0.1]]))))

    # closed-form centroid updates (dyadic pixels keep the float sums exact)
    v = fcm.update_centroids(np.array([0.0, 0.25, 0.75, 1.0]),
                             np.array([[1.0, 1.0, 0.0, 0.0],
                                       [0.0, 0.0, 1.0, 1.0]]), 2.0)
    exact &= np.array_equal(v, np.array([0.125, 0.875]))
    v = fcm.update_centroids(np.array([0.25, 0.5, 0.75, 1.0]),
                             np.full((2, 4), 0.5), 2.0)
    exact &= np.array_equal(v, np.array([0.625, 0.625]))
    v = fcm.update_centroids(np.array([0.0, 1.0]),
                             np.array([[1.0, 0.5], [0.0, 0.5]]), 2.0)
    derived_err = max(derived_err, float(np.max(np.abs(v - np.array([0.2, 1.0])))))

    # objective values
    pix = np.array([0.0, 0.25, 0.75, 1.0])
    crisp = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    exact &= fcm.objective(pix, crisp, np.array([0.125, 0.875]), 2.0) == 0.0625
    exact &= fcm.objective(np.array([0.0, 1.0]), np.eye(2),
                           np.array([0.0, 1.0]), 2.0) == 0.0
    derived_err = max(derived_err, abs(
        fcm.objective(np.array([0.25]), np.array([[0.9], [0.1]]),
                      np.array([0.0, 1.0]), 2.0) - 0.05625))

    # objective trace never increases over 50 random instances
    rng = np.random.default_rng(0)
    worst_step = -np.inf
    for k in range(50):
        n = int(rng.integers(30, 121))
        res = fcm.run(rng.uniform(0.0, 1.0, size=n),
                      fcm.FcmConfig(num_clusters=2 + k % 2, fuzzifier=2.0,
                                    max_iterations=100, tolerance=1e-5, seed=k))
        worst_step = max(worst_step, float(np.max(np.diff(res.objective_trace))))
        column_err = float(np.max(np.abs(res.memberships.sum(axis=0) - 1.0)))
        worst_step = max(worst_step, column_err - 1e-9)

    # brute-force grid oracle on tiny two-cluster instances; snapping the
    # true optimum to the 0.01 grid moves the objective by at most 0.03 * n
    # (gradient bounds: 2n per centroid, 2 per membership, half-step 0.005)
    min_gap, max_slack = np.inf, 0.0
    for k in range(20):
        n = int(rng.integers(5, 9))
        pixels = rng.uniform(0.0, 1.0, size=n)
        res = fcm.run(pixels, fcm.FcmConfig(num_clusters=2, fuzzifier=2.0,
                                            max_iterations=100, tolerance=1e-5,
                                            seed=k))
        min_gap = min(min_gap, _grid_minimum(pixels) - res.objective)
        max_slack = max(max_slack, 0.03 * n)

    elapsed = time.perf_counter() - start
    ok = (bool(exact) and derived_err < 1e-9 and worst_step <= 1e-9
          and min_gap >= -max_slack and elapsed < 10.0)
    _report(1, "fcm correctness", ok,
            f"closed-form exact={bool(exact)}, derived err {derived_err:.1e} "
            f"(tol 1e-9), worst trace step {worst_step:+.1e}, grid-oracle "
            f"min gap {min_gap:+.1e} (slack {max_slack:.2f}), {elapsed:.1f}s")
    assert exact
    assert derived_err < 1e-9
    assert worst_step <= 1e-9
    assert min_gap >= -max_slack
    assert elapsed < 10.0


def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    results = gradcheck.full_suite(seed=0, instances=100)
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_rel_error)
    ok = all(r.passed for r in results) and elapsed < 120.0
    _report(2, "gradient suite", ok,
            f"{len(results)} cases x 100 instances, worst {worst.name} "
            f"{worst.max_rel_error:.1e} (tol 1e-4), {elapsed:.1f}s")
    assert all(r.passed for r in results), \
        [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert elapsed < 120.0


def test_criterion_3_zero_entropy_weight_reduces_to_cce(tmp_path):
    dataset = build_dataset(PhantomConfig(size=16), 8, 0, with_memberships=False)
    base = dict(model="unet", loss="cce", depth=2, base_channels=4, epochs=5,
                batch_size=4, learning_rate=1e-3, early_stopping_patience=5,
                split_fraction=0.75, seed=0)
    plain = train_run(RunConfig(**base, out_dir=str(tmp_path / "cce")),
                      dataset, render_figures=False)
    base.update(loss="fcce", membership_source="prediction", entropy_weight=0.0)
    reduced = train_run(RunConfig(**base, out_dir=str(tmp_path / "fcce0")),
                        dataset, render_figures=False)
    same_csv = _read_bytes(plain.csv_path) == _read_bytes(reduced.csv_path)
    same_ckpt = (_read_bytes(plain.checkpoint_path)
                 == _read_bytes(reduced.checkpoint_path))
    ok = same_csv and same_ckpt and len(plain.records) == 5
    _report(3, "zero-weight reduction", ok,
            f"5-epoch cce vs fcce(entropy_weight=0): metrics bytes equal="
            f"{same_csv}, checkpoint bytes equal={same_ckpt}")
    assert same_csv
    assert same_ckpt
    assert len(plain.records) == 5


def test_criterion_4_nested_skip_structure():
    checks = []
    for levels in (2, 3, 4):
        spec = UNetSpec(depth=levels, base_channels=2, num_classes=3,
                        dropout_rate=0.0)
        wiring = build_unetpp(spec, deep_supervision=True).wiring()
        count_ok = len(wiring) == levels * (levels + 1) // 2
        degree_ok = all(len(edges) == j + 1 for (_, j), edges in wiring.items())
        checks.append((levels, count_ok, degree_ok))
    ok = all(c and d for _, c, d in checks)
    _report(4, "nested skip structure", ok,
            "node counts {2: 3, 3: 6, 4: 10} and in-degree j+1 at every "
            f"lattice node, verified={ok}")
    assert ok, checks


def test_criterion_5_overfit_two_phantoms(tmp_path):
    start = time.perf_counter()
    dataset = build_dataset(PhantomConfig(size=32), 2, 0, with_memberships=False)
    cfg = RunConfig(model="unet", loss="cce", depth=2, base_channels=8,
                    epochs=200, batch_size=2, learning_rate=5e-3,
                    early_stopping_patience=200, split_fraction=0.5, seed=0,
                    overfit=True, out_dir=str(tmp_path / "overfit"))
    out = train_run(cfg, dataset, render_figures=False)
    elapsed = time.perf_counter() - start
    best = max(r.dc for r in out.records)
    first_hit = next((r.epoch for r in out.records if r.dc >= 0.99), None)
    ok = best >= 0.99 and elapsed < 300.0
    _report(5, "overfit sanity", ok,
            f"train DC peaked at {best:.4f} (first >= 0.99 at epoch "
            f"{first_hit}), {elapsed:.1f}s")
    assert best >= 0.99
    assert elapsed < 300.0


def test_criterion_6_loss_comparison(tmp_path):
    start = time.perf_counter()
    dataset = build_dataset(PhantomConfig(size=32, blur_sigma=1.5,
                                          noise_sigma=0.05),
                            64, 0, with_memberships=False)
    cfg = RunConfig(model="unet", loss="cce", depth=3, base_channels=8,
                    epochs=20, batch_size=8, learning_rate=3e-3,
                    early_stopping_patience=20, split_fraction=0.8, seed=0,
                    out_dir=str(tmp_path / "ablation"))
    result = run_ablation(cfg, [0, 1, 2, 3, 4], dataset,
                          entropy_weights=(0.1, 0.5),
                          threads=min(4, os.cpu_count() or 1),
                          render_figures=False)
    elapsed = time.perf_counter() - start

    # the full per-arm table is part of the deliverable either way
    print("\nper-arm best-epoch results:")
    with open(result.csv_path, "r", encoding="utf-8") as fh:
        print(fh.read(), end="")

    ok = (result.wins >= 3 and result.mean_dc_difference >= -0.005
          and elapsed < 1800.0)
    _report(6, "loss comparison", ok,
            f"fcce wins {result.wins}/{result.seeds_compared} seeds "
            f"(need >= 3), mean val DC difference "
            f"{result.mean_dc_difference:+.5f} (floor -0.005), {elapsed:.0f}s")
    assert result.wins >= 3
    assert result.mean_dc_difference >= -0.005
    assert elapsed < 1800.0


def test_criterion_7_metric_identities():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        classes = int(rng.integers(2, 5))
        shape = (int(rng.integers(4, 17)), int(rng.integers(4, 17)))
        pred = rng.integers(0, classes, size=shape)
        truth = rng.integers(0, classes, size=shape)
        d = dice_per_class(pred, truth, classes)
        i = iou_per_class(pred, truth, classes)
        worst = max(worst, float(np.max(np.abs(i - d / (2.0 - d)))))

    same = np.array([[0, 1], [2, 3]])
    hand = accuracy(same, same) == 1.0
    hand &= np.array_equal(dice_per_class(same, same, 4), np.ones(4))
    hand &= np.array_equal(iou_per_class(same, same, 4), np.ones(4))
    flip = np.array([[1, 0], [0, 1]])
    hand &= accuracy(flip, 1 - flip) == 0.0
    base = np.arange(16).reshape(4, 4) % 4
    off4 = base.copy()
    off4[0] = (off4[0] + 1) % 4               # 4 of 16 pixels differ
    hand &= accuracy(off4, base) == 0.75
    pred = np.array([[0, 1], [1, 0]])         # one overlapping fg pixel
    truth = np.array([[1, 1], [0, 0]])
    hand &= dice_per_class(pred, truth, 2)[1] == 0.5
    hand &= iou_per_class(pred, truth, 2)[1] == 1 / 3
    hand &= dice_per_class(pred, truth, 3)[2] == 1.0   # absent from both

    ok = worst <= 1e-9 and bool(hand)
    _report(7, "metric identities", ok,
            f"iou == dice/(2-dice) worst gap {worst:.1e} over 100 random "
            f"pairs (tol 1e-9); hand-counted examples exact={bool(hand)}")
    assert worst <= 1e-9
    assert hand


def test_criterion_8_train_determinism(tmp_path):
    phantom_cfg = PhantomConfig(size=16)
    dataset = build_dataset(phantom_cfg, 8, 0, with_memberships=False)
    data_dir = tmp_path / "data"
    save_dataset(data_dir, dataset, phantom_cfg)
    cfg = RunConfig(model="unet", loss="fcce", membership_source="prediction",
                    entropy_weight=0.1, depth=2, base_channels=4, epochs=3,
                    batch_size=4, learning_rate=1e-3, early_stopping_patience=3,
                    split_fraction=0.75, seed=0)
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(cfg.to_text())

    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = cli_main(["train", "--config", str(cfg_file),
                         "--data", str(data_dir), "--out", str(out)])
        assert code == 0
        outs.append(out)
    same_csv = (_read_bytes(outs[0] / "metrics.csv")
                == _read_bytes(outs[1] / "metrics.csv"))
    same_ckpt = (_read_bytes(outs[0] / "best.ckpt")
                 == _read_bytes(outs[1] / "best.ckpt"))
    ok = same_csv and same_ckpt
    _report(8, "training determinism", ok,
            f"two identical train invocations: metrics bytes equal="
            f"{same_csv}, checkpoint bytes equal={same_ckpt}")
    assert same_csv
    assert same_ckpt
