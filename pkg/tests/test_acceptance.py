"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the summary lines.
"""
import math
import time

import numpy as np

from attacknet import layers as L
from attacknet.cli import main, run_benchmark
from attacknet.data import load_dataset
from attacknet.gradcam import cam_from_activations, grad_cam
from attacknet.layers import BatchNormState
from attacknet.metrics import confusion, evaluate_report, f1, far, frr, hter, precision, recall
from attacknet.model import (
    ModelConfig,
    build_model,
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    save_checkpoint,
)
from attacknet.protocol import run_cross_eval, run_fused
from attacknet.synthetic import make_arrays, write_dataset
from attacknet.tensor import Prng
from attacknet.trainer import TrainLog, fit
from gradcheck import numeric_grad, rel_error
from test_layers import direct_conv

SEEDS = range(5)


def verdict(n, title, ok, detail, elapsed, budget=None):
    within = budget is None or elapsed < budget
    passed = bool(ok) and within
    limit = f" (budget {budget:.0f}s)" if budget is not None else ""
    print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {n:>2}: {title} | {detail} | {elapsed:.2f}s{limit}", flush=True)
    assert ok, detail
    assert within, f"took {elapsed:.1f}s, budget {budget}s"


def kv(text):
    return dict(line.split(",", 1) for line in text.splitlines() if line.count(",") == 1)


# ---------------------------------------------------------------- 1, 2

def test_criterion_01_parameter_budget(capsys):
    t = time.perf_counter()
    code = main(["params"])
    vals = kv(capsys.readouterr().out)
    elapsed = time.perf_counter() - t
    ok = code == 0 and vals.get("params") == "291042" and vals.get("params_M") == "0.3"
    verdict(1, "parameter budget", ok, f"params={vals.get('params')} params_M={vals.get('params_M')}", elapsed, 1)


def test_criterion_02_flop_budget(capsys):
    t = time.perf_counter()
    code = main(["flops"])
    vals = kv(capsys.readouterr().out)
    elapsed = time.perf_counter() - t
    total = int(vals.get("flops", -1))
    ok = code == 0 and 22.4e6 <= total <= 23.0e6 and vals.get("mflops") == "22.7"
    verdict(2, "FLOP budget", ok, f"flops={total} mflops={vals.get('mflops')}", elapsed, 1)


# ---------------------------------------------------------------- 3

def _layer_cases(rng):
    """Yield (name, tolerance, inputs dict, scalar loss closure, analytic grads dict)."""

    def shape4():
        return tuple(int(v) for v in (rng.integers(1, 3), rng.integers(1, 4), 2 * rng.integers(1, 3), 2 * rng.integers(1, 3)))

    for _ in range(10):
        # conv
        n, c, h, w = shape4()
        f = int(rng.integers(1, 4))
        x, wt, b = rng.standard_normal((n, c, h, w)), rng.standard_normal((f, c, 3, 3)), rng.standard_normal(f)
        r = rng.standard_normal((n, f, h, w))
        y, cache = L.conv2d_forward(x, wt, b)
        dx, dw, db = L.conv2d_backward(cache, r)
        yield "conv2d", 1e-6, {"x": x, "w": wt, "b": b}, lambda x=x, wt=wt, b=b, r=r: float(np.sum(L.conv2d_forward(x, wt, b)[0] * r)), {"x": dx, "w": dw, "b": db}

        # leaky relu, inputs kept away from the kink
        x = rng.standard_normal(shape4())
        x += np.sign(x) * 0.01
        alpha = float(rng.uniform(0, 0.5))
        r = rng.standard_normal(x.shape)
        _, cache = L.leaky_relu_forward(x, alpha)
        yield "leaky_relu", 1e-5, {"x": x}, lambda x=x, a=alpha, r=r: float(np.sum(L.leaky_relu_forward(x, a)[0] * r)), {"x": L.leaky_relu_backward(cache, r, alpha)}

        # tanh
        x = rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(1, 6))))
        r = rng.standard_normal(x.shape)
        _, cache = L.tanh_forward(x)
        yield "tanh", 1e-6, {"x": x}, lambda x=x, r=r: float(np.sum(L.tanh_forward(x)[0] * r)), {"x": L.tanh_backward(cache, r)}

        # batchnorm, both modes
        for mode in ("train", "infer"):
            n, c, h, w = shape4()
            n = max(n, 2)
            x = rng.standard_normal((n, c, h, w))
            st = BatchNormState.fresh(c, dtype=np.float64)
            st.gamma[...] = rng.uniform(0.5, 2, c)
            st.beta[...] = rng.standard_normal(c)
            st.running_mean[...] = rng.standard_normal(c)
            st.running_var[...] = rng.uniform(0.5, 2, c)
            frozen = (st.running_mean.copy(), st.running_var.copy())
            r = rng.standard_normal(x.shape)

            def bn_loss(x=x, st=st, r=r, mode=mode, frozen=frozen):
                out = float(np.sum(L.batchnorm_forward(x, st, mode)[0] * r))
                st.running_mean[...], st.running_var[...] = frozen
                return out

            _, cache = L.batchnorm_forward(x, st, mode)
            st.running_mean[...], st.running_var[...] = frozen
            dx, dg, dbeta = L.batchnorm_backward(cache, r)
            yield f"batchnorm[{mode}]", 1e-6, {"x": x, "gamma": st.gamma, "beta": st.beta}, bn_loss, {"x": dx, "gamma": dg, "beta": dbeta}

        # dropout with a fixed mask
        x = rng.standard_normal(shape4())
        rate = float(rng.uniform(0.1, 0.8))
        seed = int(rng.integers(1 << 30))
        r = rng.standard_normal(x.shape)
        _, cache = L.dropout_forward(x, rate, "train", Prng(seed))
        yield "dropout", 1e-6, {"x": x}, lambda x=x, rate=rate, s=seed, r=r: float(np.sum(L.dropout_forward(x, rate, "train", Prng(s))[0] * r)), {"x": L.dropout_backward(cache, r)}

        # maxpool, distinct values so no window is near a tie
        shp = shape4()
        x = rng.permutation(np.arange(int(np.prod(shp)))).reshape(shp) * 0.01
        r = rng.standard_normal((shp[0], shp[1], shp[2] // 2, shp[3] // 2))
        _, cache = L.maxpool2x2_forward(x)
        yield "maxpool2x2", 1e-5, {"x": x}, lambda x=x, r=r: float(np.sum(L.maxpool2x2_forward(x)[0] * r)), {"x": L.maxpool2x2_backward(cache, r)}

        # dense
        n, d, m = (int(v) for v in rng.integers(1, 6, 3))
        x, wt, b = rng.standard_normal((n, d)), rng.standard_normal((d, m)), rng.standard_normal(m)
        r = rng.standard_normal((n, m))
        _, cache = L.dense_forward(x, wt, b)
        dx, dw, db = L.dense_backward(cache, r)
        yield "dense", 1e-6, {"x": x, "w": wt, "b": b}, lambda x=x, wt=wt, b=b, r=r: float(np.sum(L.dense_forward(x, wt, b)[0] * r)), {"x": dx, "w": dw, "b": db}

        # residual add
        a, b2 = rng.standard_normal(shape4()), None
        b2 = rng.standard_normal(a.shape)
        r = rng.standard_normal(a.shape)
        da, db2 = L.residual_add_backward(r)
        yield "residual_add", 1e-6, {"a": a, "b": b2}, lambda a=a, b2=b2, r=r: float(np.sum(L.residual_add(a, b2) * r)), {"a": da, "b": db2}

        # softmax + cross-entropy
        n, k = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        z = rng.standard_normal((n, k)) * 2
        labels = rng.integers(0, k, n)
        _, dz = L.cross_entropy_loss(L.softmax(z), labels)
        yield "softmax_xent", 1e-6, {"z": z}, lambda z=z, y=labels: L.cross_entropy_loss(L.softmax(z), y)[0], {"z": dz}


def test_criterion_03_gradient_suite():
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst: dict[str, float] = {}
    failures = []
    counts: dict[str, int] = {}
    for name, tol, inputs, loss, analytic in _layer_cases(rng):
        counts[name] = counts.get(name, 0) + 1
        for key, arr in inputs.items():
            err = rel_error(analytic[key], numeric_grad(loss, arr, h=1e-5))
            worst[name] = max(worst.get(name, 0.0), err)
            if not err < tol:
                failures.append(f"{name}.{key}={err:.2e}")
    elapsed = time.perf_counter() - t
    ok = not failures and min(counts.values()) >= 10
    detail = f"{len(counts)} layers x {min(counts.values())} shapes, worst rel err {max(worst.values()):.1e}"
    if failures:
        detail += f"; failures: {', '.join(failures[:5])}"
    verdict(3, "gradient suite", ok, detail, elapsed, 60)


# ---------------------------------------------------------------- 4

def test_criterion_04_convolution_oracle():
    t = time.perf_counter()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(50):
        n, c, f = (int(v) for v in rng.integers(1, 4, 3))
        h, w = (int(v) for v in rng.integers(1, 8, 2))
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        wt = rng.standard_normal((f, c, 3, 3)).astype(np.float32)
        b = rng.standard_normal(f).astype(np.float32)
        y, _ = L.conv2d_forward(x, wt, b)
        worst = max(worst, float(np.abs(y - direct_conv(x, wt, b)).max()))
    elapsed = time.perf_counter() - t
    verdict(4, "convolution oracle", worst <= 1e-5, f"50 cases, max abs diff {worst:.1e}", elapsed, 30)


# ---------------------------------------------------------------- 5

def test_criterion_05_metrics_oracle():
    t = time.perf_counter()
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 100))
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        preds = rng.integers(0, 2, n)
        tp = sum(1 for p, y in zip(preds, labels) if y == 0 and p == 0)
        fn = sum(1 for p, y in zip(preds, labels) if y == 0 and p == 1)
        fp = sum(1 for p, y in zip(preds, labels) if y == 1 and p == 0)
        tn = sum(1 for p, y in zip(preds, labels) if y == 1 and p == 1)
        pr = tp / (tp + fp) if tp + fp else 0.0
        rc = tp / (tp + fn)
        f = 2 * pr * rc / (pr + rc) if pr + rc else 0.0
        fa, fr = fp / (fp + tn), fn / (tp + fn)
        cm = confusion(preds, labels)
        got = (precision(cm), recall(cm), f1(cm), far(cm), frr(cm), hter(cm))
        mismatches += got != (pr, rc, f, fa, fr, (fa + fr) / 2)
    # 25 genuine with 1 rejected, 25 attacks with 2 accepted
    table = evaluate_report([0] * 24 + [1] + [0] * 2 + [1] * 23, [0] * 25 + [1] * 25)
    footer = f"{table.hter:.3f}"
    elapsed = time.perf_counter() - t
    ok = mismatches == 0 and math.isclose(table.far, 0.08) and math.isclose(table.frr, 0.04) and footer == "0.060"
    verdict(5, "metrics oracle", ok, f"1000 vectors, {mismatches} mismatches; HTER(FAR=0.08, FRR=0.04)={footer}", elapsed, 10)


# ---------------------------------------------------------------- 6

def test_criterion_06_overfit_sanity():
    t = time.perf_counter()
    reached = []
    for seed in SEEDS:
        cfg = ModelConfig(augment=False, max_epochs=200, patience=200, seed=seed)
        data = make_arrays(32, 32, seed=100 + seed)
        hit = []

        def stop_when_perfect(m, rec, hit=hit):
            if rec.val_acc == 1.0:
                hit.append(rec.epoch)
                return True
            return False

        # val = train, so val_acc is the inference-mode training accuracy
        fit(build_model(cfg, Prng(seed)), data, data, Prng(seed + 1), callback=stop_when_perfect)
        reached.append(hit[0] if hit else None)
    elapsed = time.perf_counter() - t
    ok_count = sum(r is not None for r in reached)
    verdict(6, "overfit sanity", ok_count >= 4, f"{ok_count}/5 seeds at 100% train acc, epochs {reached}", elapsed, 300)


# ---------------------------------------------------------------- 7

def test_criterion_07_early_stopping():
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    cfg = ModelConfig(input_h=8, input_w=8, phase1_filters=2, phase2_filters=4, dense_width=4,
                      augment=False, max_epochs=100, patience=10)
    data = make_arrays(4, 8, seed=0)
    sequences = [[1.0] * 100, [1.0, 0.9, 0.8] + [0.85] * 97]
    for _ in range(8):
        k = int(rng.integers(1, 40))
        head = np.cumsum(-rng.random(k)) + 10
        jitter = rng.random(100 - k) + head[-1] + 1e-3
        seq = np.concatenate([head, jitter])
        sequences.append(seq.tolist())
    problems = []
    for i, seq in enumerate(sequences):
        snaps = {}

        def capture(m, rec, snaps=snaps):
            snaps[rec.epoch] = checkpoint_bytes(m)
            return False

        it = iter(seq)
        m, log = fit(build_model(cfg, Prng(i)), data, data, Prng(i), evaluate=lambda m, d, it=it: (next(it), 0.0),
                     callback=capture)
        best = int(np.argmin(seq)) + 1
        stop = len(log.records)
        if log.stop_reason != "early-stop" or log.best_epoch != best or stop != best + 10:
            problems.append(f"seq{i}: stop={stop} best={log.best_epoch} expected {best}+10")
        if checkpoint_bytes(m) != snaps[best]:
            problems.append(f"seq{i}: restored weights differ from epoch {best}")
    elapsed = time.perf_counter() - t
    detail = f"{len(sequences)} sequences, stop = best + 10 and best weights restored" if not problems else "; ".join(problems)
    verdict(7, "early stopping", not problems, detail, elapsed, 60)


# ---------------------------------------------------------------- 8, 9

PROTO_CFG = ModelConfig(augment=False, max_epochs=15, patience=5)


def _protocol_sets(root, seed):
    a = load_dataset(write_dataset(root / "synthA", 32, 32, seed=1000 + 10 * seed + 1), "synthA", seed=seed)
    b = load_dataset(write_dataset(root / "synthB", 32, 32, seed=1000 + 10 * seed + 2), "synthB", seed=seed)
    s = load_dataset(write_dataset(root / "shuffled", 200, 32, seed=1000 + 10 * seed + 3, shuffle_labels=True),
                     "shuffled", seed=seed, train_ratio=0.1)
    return a, b, s


def test_criterion_08_cross_database(tmp_path):
    t = time.perf_counter()
    same_ok, null_ok, notes = [], [], []
    for seed in SEEDS:
        a, b, s = _protocol_sets(tmp_path / f"seed{seed}", seed)
        m = run_cross_eval([a, b, s], PROTO_CFG, seed)
        grid = m.hter_grid
        same = grid[:2, :2]
        null = grid[:2, 2]
        same_ok.append(bool(np.all(same <= 0.05)))
        null_ok.append(bool(np.all((null >= 0.4) & (null <= 0.6))))
        notes.append(f"s{seed}: same<={same.max():.3f} vs-shuffled={null.round(3).tolist()} "
                     f"(shuffled-trained {grid[2, :2].round(3).tolist()})")
    elapsed = time.perf_counter() - t
    ok = all(same_ok) and sum(null_ok) >= 4
    detail = f"same-generator all<=0.05: {sum(same_ok)}/5; shuffled in [0.4,0.6]: {sum(null_ok)}/5 | " + "; ".join(notes)
    verdict(8, "cross-database harness", ok, detail, elapsed, 600)


def test_criterion_09_fused_protocol(tmp_path):
    t = time.perf_counter()
    a, b, _ = _protocol_sets(tmp_path, 0)
    reports, log = run_fused([a, b], PROTO_CFG, seed=0, out_dir=tmp_path / "out")
    rows = TrainLog.from_csv((tmp_path / "out" / "trainlog_fused.csv").read_text()).records
    h = [r.hter for r in reports.values()]
    elapsed = time.perf_counter() - t
    ok = list(reports) == ["synthA", "synthB"] and len(rows) == len(log.records) <= PROTO_CFG.max_epochs \
        and abs(h[0] - h[1]) <= 0.05
    verdict(9, "fused protocol", ok, f"{len(reports)} reports, HTERs {[round(x, 3) for x in h]}, "
            f"trainlog rows {len(rows)} <= {PROTO_CFG.max_epochs}", elapsed, 600)


# ---------------------------------------------------------------- 10

def test_criterion_10_determinism_and_persistence(tmp_path):
    t = time.perf_counter()
    cfg = ModelConfig(max_epochs=3, patience=3, seed=4)
    data = make_arrays(16, 32, seed=8)
    runs = []
    for _ in range(2):
        m, log = fit(build_model(cfg, Prng(cfg.seed)), data, data, Prng(cfg.seed))
        runs.append((log.to_csv().encode(), checkpoint_bytes(m), m))
    same_log = runs[0][0] == runs[1][0]
    same_ckpt = runs[0][1] == runs[1][1]
    path = tmp_path / "m.atkn"
    save_checkpoint(runs[0][2], path)
    back = load_checkpoint(path)
    x = np.random.default_rng(0).random((8, 3, 32, 32), dtype=np.float32)
    same_fwd = runs[0][2].forward(x)[0].tobytes() == back.forward(x)[0].tobytes()
    resaved = checkpoint_bytes(checkpoint_from_bytes(path.read_bytes())) == path.read_bytes()
    elapsed = time.perf_counter() - t
    ok = same_log and same_ckpt and same_fwd and resaved
    verdict(10, "determinism & persistence", ok,
            f"trainlog identical={same_log} checkpoint identical={same_ckpt} "
            f"round-trip forward identical={same_fwd} re-save identical={resaved}", elapsed, 120)


# ---------------------------------------------------------------- 11

def test_criterion_11_latency():
    t = time.perf_counter()
    stats = run_benchmark(build_model(ModelConfig(), Prng(0)), 5000)
    elapsed = time.perf_counter() - t
    verdict(11, "latency benchmark", stats["mean_ms"] < 10.0,
            f"5000 iterations mean {stats['mean_ms']:.3f} ms, median {stats['median_ms']:.3f} ms, "
            f"p95 {stats['p95_ms']:.3f} ms, {stats['fps']:.0f} fps", elapsed)


# ---------------------------------------------------------------- 12

def test_criterion_12_grad_cam(tmp_path, capsys):
    t = time.perf_counter()
    rng = np.random.default_rng(12)
    problems = []

    # analytic case: logit = spatial mean of one positive channel with a planted peak
    for _ in range(50):
        k, h, w = 6, 16, 16
        acts = rng.standard_normal((k, h, w))
        acts[3] = rng.random((h, w)) + 0.1
        peak = tuple(int(v) for v in rng.integers(0, (h, w)))
        acts[3][peak] = 2.0
        grads = np.zeros_like(acts)
        grads[3] = 1.0 / (h * w)
        cam = cam_from_activations(acts, grads, (32, 32), 0)
        raw_peak = np.unravel_index(cam.raw.argmax(), cam.raw.shape)
        ui, uj = np.unravel_index(cam.upsampled.argmax(), cam.upsampled.shape)
        centre = (2 * peak[0] + 0.5, 2 * peak[1] + 0.5)
        if raw_peak != peak or abs(ui - centre[0]) > 2 or abs(uj - centre[1]) > 2:
            problems.append(f"analytic peak {peak} -> raw {raw_peak}, upsampled {(ui, uj)}")

    # normalization on a real model
    m = build_model(ModelConfig(), Prng(1))
    for i in range(100):
        cam = grad_cam(m, rng.random((3, 32, 32), dtype=np.float32), i % 2)
        for arr in (cam.raw, cam.upsampled):
            if arr.min() < 0 or arr.max() > 1:
                problems.append("map outside [0,1]")
        if cam.raw.any() and cam.raw.max() != 1.0:
            problems.append("non-degenerate map without a 1")

    # byte-identical CLI output
    root = write_dataset(tmp_path / "ds", 2, 32, seed=0)
    save_checkpoint(m, tmp_path / "m.atkn")
    image = sorted((root / "bonafide").glob("*.ppm"))[0]
    outs = []
    for name in ("a.ppm", "b.ppm"):
        code = main(["gradcam", "--checkpoint", str(tmp_path / "m.atkn"), "--image", str(image),
                     "--target", "bonafide", "--out", str(tmp_path / name)])
        outs.append((code, (tmp_path / name).read_bytes()))
    capsys.readouterr()
    if outs[0][0] != 0 or outs[0] != outs[1]:
        problems.append("gradcam output not byte-identical")
    elapsed = time.perf_counter() - t
    detail = "50 analytic peaks recovered, 100 model maps in [0,1], repeat output identical" if not problems \
        else "; ".join(sorted(set(problems))[:5])
    verdict(12, "Grad-CAM", not problems, detail, elapsed, 30)
