"""Acceptance gate. Each test prints and records one PASS/FAIL line.

Criteria 5, 7 and 9 share one default-config run of the command-line
pipeline (gen-data, train, infer, eval). Criterion 10 is optional: it always
checks the container-format import path and additionally scores external
files when SUBTASKNET_BENCHMARK_DIR points at a directory with ``pred/`` and
``gt/`` label folders.
"""

import contextlib
import io
import math
import os
import time

import numpy as np
import pytest

from gradcheck import analytic_grads, numeric_grad, rel_error
from oracles import brute_edit, brute_f1, random_labels, resize
from subtasknet import data, execution as ex, numcore as nc, tcn
from subtasknet.cli import _read_stats, main
from subtasknet.experiments import LADDER, SetupConfig, ablation, ladder_means, stage_segment_counts
from subtasknet.loss import cross_entropy, t_mse, transition_loss
from subtasknet.metrics import edit_score, f1_at
from subtasknet.model import SegmentationModel
from subtasknet.postprocess import collapse_short_runs, median_filter
from subtasknet.trainer import TrainConfig

VERDICTS = {}


def verdict(n, title, ok, detail):
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    VERDICTS[n] = line
    print(line)
    assert ok, line


def kv(text):
    return dict(ln.split("=", 1) for ln in text.splitlines() if "=" in ln and " " not in ln)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """gen-data -> train -> infer -> eval with every default."""
    root = tmp_path_factory.mktemp("default_run")
    out = {}
    t0 = time.perf_counter()
    assert main(["gen-data", "--out", str(root / "ds")]) == 0
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(["train", "--data", str(root / "ds/manifest.tsv"), "--out", str(root / "run")])
    out["train_seconds"] = time.perf_counter() - t0
    assert code == 0, buf.getvalue()
    out["train"] = kv(buf.getvalue())
    val_feats = root / "val_features"
    val_gt = root / "val_labels"
    val_feats.mkdir()
    val_gt.mkdir()
    for e in data.read_manifest(root / "ds/manifest.tsv"):
        if e.split == "val":
            name = os.path.basename(e.feature_path)
            os.link(root / "ds" / e.feature_path, val_feats / name)
            os.link(root / "ds" / e.label_path, val_gt / name.replace(".sseq", ".txt"))
    assert main(["infer", "--checkpoint", str(root / "run/best.ckpt"), "--features", str(val_feats),
                 "--out", str(root / "pred")]) == 0
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        assert main(["eval", "--pred", str(root / "pred"), "--gt", str(val_gt)]) == 0
    out["eval"] = kv(buf.getvalue())
    out["root"] = root
    return out


# ---------------------------------------------------------------- 1


def test_criterion_01_receptive_field_identity():
    t0 = time.perf_counter()
    for L in range(1, 17):
        rf = tcn.receptive_field(tcn.make_schedule("fibonacci", L), 3)
        assert rf == 1 + 2 * (tcn.fibonacci(L + 3) - 2), L
    fib10 = tcn.receptive_field(tcn.make_schedule("fibonacci", 10), 3)
    exp10 = tcn.receptive_field(tcn.make_schedule("exponential", 10), 3)
    dt = time.perf_counter() - t0
    ok = fib10 == 463 and exp10 == 2047 and dt < 1.0
    verdict(1, "receptive field", ok, f"L=1..16 identity holds, fib(10)={fib10}, exp(10)={exp10}, {dt * 1e3:.1f} ms")


# ---------------------------------------------------------------- 2


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _probe_cases(rng):
    """(name, build, inputs) triples with inputs kept off kinks and the truncation cap."""
    def off_kink(shape, margin=0.05):
        x = rng.standard_normal(shape)
        return x + np.sign(x) * margin

    M = np.array([[0, 0, 1, 1], [1, 0, 0, 1], [1, 1, 0, 0], [0, 1, 1, 0]])
    labels = rng.integers(0, 4, 6)
    probe = nc.tensor(rng.standard_normal((6, 4)))
    weights = rng.uniform(0.5, 2.0, 4)

    z = rng.standard_normal((6, 4))
    d = _softmax(z)
    steps = (np.diff(np.log(d), axis=0) ** 2).sum(axis=1)
    tau = float(np.median(steps))
    if np.min(np.abs(steps - tau)) < 0.05:  # keep clear of the truncation boundary
        tau += 0.1
    return [
        ("add", lambda a, b: nc.sum(nc.mul(nc.add(a, b), probe)), [off_kink((6, 4)), off_kink((6, 4))]),
        ("sub", lambda a, b: nc.sum(nc.mul(nc.sub(a, b), probe)), [off_kink((6, 4)), off_kink((6, 4))]),
        ("mul", lambda a, b: nc.sum(nc.mul(nc.mul(a, b), probe)), [off_kink((6, 4)), off_kink((6, 4))]),
        ("relu", lambda a: nc.sum(nc.mul(nc.relu(a), probe)), [off_kink((6, 4))]),
        ("sigmoid", lambda a: nc.sum(nc.mul(nc.sigmoid(a), probe)), [off_kink((6, 4))]),
        ("log", lambda a: nc.sum(nc.mul(nc.log(a), probe)), [np.abs(off_kink((6, 4))) + 0.1]),
        ("abs", lambda a: nc.sum(nc.mul(nc.absolute(a), probe)), [off_kink((6, 4))]),
        ("square", lambda a: nc.sum(nc.mul(nc.square(a), probe)), [off_kink((6, 4))]),
        ("min", lambda a: nc.sum(nc.mul(nc.minimum(a, 0.0), probe)), [off_kink((6, 4))]),
        ("sum", lambda a: nc.sum(nc.square(nc.sum(a, axis=1))), [off_kink((6, 4))]),
        ("slice", lambda a: nc.sum(nc.square(nc.slice_rows(a, 1, 5))), [off_kink((6, 4))]),
        ("gather", lambda a: nc.sum(nc.square(nc.gather(a, labels))), [off_kink((6, 4))]),
        ("concat", lambda a, b: nc.sum(nc.square(nc.concat_cols(a, b))), [off_kink((6, 2)), off_kink((6, 2))]),
        ("matmul", lambda a, b: nc.sum(nc.mul(nc.matmul(a, b), probe)), [off_kink((6, 3)), off_kink((3, 4))]),
        ("softmax", lambda a: nc.sum(nc.mul(nc.softmax_rows(a), probe)), [off_kink((6, 4))]),
        ("linear", lambda a, w, b: nc.sum(nc.mul(nc.linear(a, w, b), probe)), [off_kink((6, 3)), off_kink((4, 3)), off_kink(4)]),
        ("conv1d", lambda a, w, b: nc.sum(nc.mul(nc.conv1d_dilated(a, w, b, 2), probe)), [off_kink((6, 3)), off_kink((4, 3, 3)), off_kink(4)]),
        ("cross_entropy", lambda a: cross_entropy(nc.softmax_rows(a), labels, weights), [z.copy()]),
        ("t_mse", lambda a: t_mse(nc.softmax_rows(a), tau), [z.copy()]),
        ("transition", lambda a: transition_loss(nc.softmax_rows(a), M), [z.copy()]),
    ]


def test_criterion_02_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    probes, worst, worst_name = 0, 0.0, ""
    covered = set()
    for _ in range(8):
        for name, build, inputs in _probe_cases(rng):
            grads = analytic_grads(build, inputs)
            i = int(rng.integers(len(inputs)))

            def f(*xs):
                return build(*(nc.tensor(x) for x in xs)).item()

            num = numeric_grad(f, inputs, i)
            err = rel_error(grads[i], num)
            probes += 1
            covered.add(name)
            if err > worst:
                worst, worst_name = err, name
    dt = time.perf_counter() - t0
    ok = probes >= 100 and worst < 1e-3 and dt < 60
    verdict(2, "gradient correctness", ok,
            f"{probes} probes over {len(covered)} ops/losses, worst rel err {worst:.2e} ({worst_name}), {dt:.1f} s")


# ---------------------------------------------------------------- 3


def test_criterion_03_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        gt = random_labels(rng, max_segments=6)
        pred = resize(random_labels(rng, max_segments=6), len(gt))
        for thr in (0.1, 0.25, 0.5):
            mismatches += f1_at(pred, gt, thr) != brute_f1(pred, gt, thr)
        mismatches += edit_score(pred, gt) != brute_edit(pred, gt)
    dt = time.perf_counter() - t0
    verdict(3, "metric oracles", mismatches == 0 and dt < 30,
            f"1000 instances x (3 F1 thresholds + edit), {mismatches} mismatches, {dt:.1f} s")


# ---------------------------------------------------------------- 4


def test_criterion_04_dataset_arithmetic():
    spec = data.SplitSpec(0.2, {t: 200 for t in data.GRAMMAR}, ("aug1", "aug2"))
    per_task, total, val = data.split_counts(spec)
    holdout = sum(val.values())
    ok = set(per_task.values()) == {480} and total == 1920 and holdout == 160
    verdict(4, "dataset arithmetic", ok, f"{sorted(set(per_task.values()))}/task, total {total}, holdout {holdout}")


# ---------------------------------------------------------------- 5


@pytest.mark.slow
def test_criterion_05_end_to_end_learning(default_run):
    tr, ev = default_run["train"], default_run["eval"]
    f1, acc = float(ev["f1@50"]), float(ev["acc"])
    minutes = default_run["train_seconds"] / 60
    epochs = int(tr["epochs_run"])
    ok = f1 >= 95 and acc >= 95 and epochs <= 50 and minutes < 30
    verdict(5, "end-to-end learning", ok,
            f"val F1@50 {f1:.2f}, acc {acc:.2f}, edit {float(ev['edit']):.2f} "
            f"(best epoch {tr['best_epoch']} of {epochs}), {minutes:.1f} min")


# ---------------------------------------------------------------- 6


@pytest.mark.slow
def test_criterion_06_ablation_direction():
    t0 = time.perf_counter()
    rows = ablation(SetupConfig(), TrainConfig(), seeds=[0, 1, 2, 3, 4])
    means = ladder_means(rows)
    inv = [means[a][0] for a, _, _ in LADDER]
    ed = [means[a][1] for a, _, _ in LADDER]
    ok = inv[0] >= inv[1] >= inv[2] and ed[0] <= ed[1] <= ed[2]
    detail = ", ".join(f"{a}: invalid {i:.3f} edit {e:.2f}" for (a, _, _), i, e in zip(LADDER, inv, ed))
    verdict(6, "ablation direction", ok, f"{detail} ({(time.perf_counter() - t0) / 60:.1f} min)")


# ---------------------------------------------------------------- 7


@pytest.mark.slow
def test_criterion_07_over_segmentation_refinement(default_run):
    root = default_run["root"]
    model = SegmentationModel.load(root / "run/best.ckpt")
    mean, std = _read_stats(root / "run/norm.txt")
    val = data.load_split(root / "ds/manifest.tsv", data.ClassVocabulary(), "val")
    for v in val:
        v.features = (v.features - mean) / std
    counts = stage_segment_counts(model, val)
    frac = float(np.mean(counts[:, -1] <= counts[:, 0]))
    verdict(7, "over-segmentation refinement", frac >= 0.9,
            f"stage-{counts.shape[1]} <= stage-1 segment count on {100 * frac:.0f}% of {len(val)} held-out videos "
            f"(mean {counts[:, 0].mean():.2f} -> {counts[:, -1].mean():.2f})")


# ---------------------------------------------------------------- 8


def test_criterion_08_dmp_correctness():
    t0 = time.perf_counter()
    skel = ex.dmp_skeleton(1, 20)
    zero = ex.rollout(ex.DmpParams(0.0, 1.0, np.zeros((1, 20)), skel.centers, skel.sigma2), 1e-3, 3.0)
    terminal = abs(zero.pos[-1, 0] - 1.0)

    worst = 0.0
    for name in data.VOCABULARY:
        demo = ex.demo_for(name)
        learned = ex.learn_from_demo(demo, ex.dmp_skeleton(3, 20))
        re = ex.rollout(learned, demo.dt, demo.duration)
        worst = max(worst, 100 * np.sqrt(np.mean((re.pos - demo.pos) ** 2)) / np.ptp(demo.pos, axis=0).max())

    cfg, dt, e0 = ex.ControllerConfig(), 0.01, 0.2
    servo = ex.servo_until_aligned([0.0, 0.0, 0.0], [cfg.d_ref + e0, 0.0, 0.0], cfg, dt)
    predicted = math.ceil(math.log(cfg.tolerance[0] / e0) / math.log(1 - cfg.k_x * dt))
    elapsed = time.perf_counter() - t0
    ok = terminal < 1e-3 and worst < 1.0 and servo.converged and abs(servo.steps - predicted) <= 2 and elapsed < 10
    verdict(8, "DMP and servo", ok,
            f"terminal |x-g| {terminal:.1e}, worst reconstruction RMSE {worst:.3f}% of range, "
            f"servo {servo.steps} steps vs predicted {predicted}, {elapsed:.1f} s")


# ---------------------------------------------------------------- 9


@pytest.mark.slow
def test_criterion_09_idempotence_and_reproducibility(default_run, tmp_path):
    rng = np.random.default_rng(9)
    failures = 0
    for _ in range(1000):
        x = list(rng.integers(0, int(rng.integers(1, 6)), int(rng.integers(1, 80))))
        w = int(rng.choice([1, 3, 5, 7, 9]))
        m = int(rng.integers(1, 10))
        once_m = median_filter(x, w)
        once_c = collapse_short_runs(x, m)
        failures += median_filter(once_m, w) != once_m
        failures += collapse_short_runs(once_c, m) != once_c
    # retrain from the same generated data and compare every run artefact byte for byte
    root = default_run["root"]
    with contextlib.redirect_stdout(io.StringIO()):
        assert main(["train", "--data", str(root / "ds/manifest.tsv"), "--out", str(tmp_path / "again")]) == 0
    differing = [
        n for n in sorted(os.listdir(root / "run"))
        if (root / "run" / n).read_bytes() != (tmp_path / "again" / n).read_bytes()
    ]
    ok = failures == 0 and not differing
    verdict(9, "idempotence and reproducibility", ok,
            f"{failures} idempotence failures over 1000 fuzzed sequences x 2 ops; "
            f"retrained run artefacts differing: {differing or 'none'}")


# ---------------------------------------------------------------- 10


def test_criterion_10_external_benchmark_import(tmp_path, capsys):
    """Optional. Hand-written container files (not produced by this package) go through eval."""
    names = ["bg", "take", "open", "pour"]
    (tmp_path / "mapping.txt").write_text("".join(f"{i} {n}\n" for i, n in enumerate(names)))
    for sub in ("gt", "pred"):
        (tmp_path / sub).mkdir()
    gt = ["bg"] * 3 + ["take"] * 4 + ["pour"] * 3
    pred = ["bg"] * 4 + ["take"] * 3 + ["pour"] * 3
    (tmp_path / "gt" / "v1.txt").write_text("\n".join(gt) + "\n")
    (tmp_path / "pred" / "v1.txt").write_text("\n".join(pred) + "\n")
    code = main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                 "--mapping", str(tmp_path / "mapping.txt"), "--matching", "mstcn"])
    got = kv(capsys.readouterr().out)
    ok = code == 0 and float(got["acc"]) == 90.0 and float(got["edit"]) == 100.0
    detail = f"container-format eval acc {got.get('acc')}, edit {got.get('edit')}"
    bench = os.environ.get("SUBTASKNET_BENCHMARK_DIR")
    if bench:
        args = ["eval", "--pred", os.path.join(bench, "pred"), "--gt", os.path.join(bench, "gt"), "--matching", "mstcn"]
        if os.path.exists(os.path.join(bench, "mapping.txt")):
            args += ["--mapping", os.path.join(bench, "mapping.txt")]
        code = main(args)
        out = kv(capsys.readouterr().out)
        ok = ok and code == 0
        detail += f"; external benchmark: {out}"
    else:
        detail += "; no external benchmark supplied (optional)"
    verdict(10, "external import (optional)", ok, detail)
