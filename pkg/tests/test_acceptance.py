"""Acceptance suite.

One test per criterion, each at its stated tolerance; every test prints a
PASS line on success (run with ``pytest -v`` to see one line per criterion
either way). The expensive end-to-end training run is shared by the criteria
that need a trained model.
"""

import json
import time

import numpy as np
import pytest
import yaml

from conftest import TINY_ENC, make_noise, tiny_head
from mospred.cli import main as cli_main
from mospred.encoder import EncoderConfig, ToySpectralEncoder
from mospred.errors import DigestMismatchError
from mospred.knn import Datastore, knn_query
from mospred.losses import (
    LossConfig,
    all_pairs,
    clipped_l1_grad,
    clipped_l1_loss,
    contrastive_loss,
    l1_loss,
)
from mospred.manifest import RatedUtterance
from mospred.metrics import lcc, mse, srcc
from mospred.optim import MomentumSGD
from mospred.predictor import Predictor, sha256_file
from mospred.registry import RegistryEntry, registry_load, write_registry
from mospred.trainer import TrainConfig, TrainState, train, update_early_stop


def run_cli(*argv):
    code = cli_main([str(a) for a in argv])
    assert code == 0, f"command failed ({code}): {argv}"


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    """make-synth 8x10x3 -> prepare -> train with published defaults, 2000 steps."""
    root = tmp_path_factory.mktemp("accept")
    t0 = time.time()
    run_cli(
        "make-synth", "--out", root / "raw",
        "--systems", 8, "--utts-per-system", 10, "--listeners", 3, "--seed", 1234,
    )
    run_cli("prepare", "--data-dir", root / "raw", "--out", root / "data",
            "--dataset-name", "synth")
    config = {
        "name": "acceptance-overfit",
        "out_dir": str(root / "run"),
        "datasets": [
            {
                "name": "synth",
                "train_manifest": str(root / "data/train.csv"),
                "dev_manifest": str(root / "data/dev.csv"),
                "test_manifest": str(root / "data/test.csv"),
                "has_listener_ids": True,
            }
        ],
        # encoder/head/loss stay at package defaults; training defaults are the
        # published settings (batch 16, lr 0.001, momentum 0.9) with the step
        # budget reduced to 2000
        "train": {"max_steps": 2000, "seed": 17},
    }
    config_path = root / "run.yaml"
    config_path.write_text(yaml.safe_dump(config))
    run_cli("train", "--config", config_path)
    elapsed = time.time() - t0
    return {"root": root, "elapsed": elapsed, "config": config_path}


# 1 -----------------------------------------------------------------------------


def test_criterion_1_metric_oracle_equivalence():
    start = time.time()

    def pearson_oracle(x, y):
        n = len(x)
        mx, my = sum(x) / n, sum(y) / n
        cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
        vx = sum((a - mx) ** 2 for a in x)
        vy = sum((b - my) ** 2 for b in y)
        return cov / (vx**0.5 * vy**0.5)

    def ranks_oracle(x):
        return [sum(1 for u in x if u < v) + (sum(1 for u in x if u == v) + 1) / 2.0 for v in x]

    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 200:
        n = int(rng.integers(2, 51))
        if checked % 2:  # force ties via quantization on half the cases
            p = np.round(rng.uniform(1, 5, n) * 4) / 4
            t = np.round(rng.uniform(1, 5, n) * 4) / 4
        else:
            p, t = rng.uniform(1, 5, n), rng.uniform(1, 5, n)
        if np.all(p == p[0]) or np.all(t == t[0]):
            continue
        checked += 1
        assert abs(mse(p, t) - sum((a - b) ** 2 for a, b in zip(p, t)) / n) <= 1e-9
        assert abs(lcc(p, t) - pearson_oracle(list(p), list(t))) <= 1e-9
        oracle_srcc = pearson_oracle(ranks_oracle(list(p)), ranks_oracle(list(t)))
        assert abs(srcc(p, t) - oracle_srcc) <= 1e-9
        # strict monotone-transform invariance
        for f in (np.exp, lambda v: v**3, lambda v: 1.7 * v + 0.3):
            assert abs(srcc(f(p), t) - srcc(p, t)) <= 1e-12
    elapsed = time.time() - start
    assert elapsed < 10.0, f"criterion 1 took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 1 PASS: 200 vectors vs brute-force oracles (1e-9), "
          f"monotone invariance (1e-12), {elapsed:.1f}s")


# 2 -----------------------------------------------------------------------------


def test_criterion_2_overfit_sanity(overfit_run, tmp_path):
    root = overfit_run["root"]
    run_cli(
        "evaluate", "--checkpoint", root / "run/best.ckpt",
        "--test", f"train={root / 'data/train.csv'}", "--out", tmp_path / "ev",
    )
    report = json.loads((tmp_path / "ev/train.report.json").read_text())
    assert report["sys_srcc"] >= 0.9, report
    assert report["utt_mse"] <= 0.5, report
    assert overfit_run["elapsed"] < 600, f"pipeline took {overfit_run['elapsed']:.0f}s"

    # invariant: loss smoothed over 100-step windows trends down (small noise
    # allowance once converged) and ends well below where it started
    records = [
        json.loads(l)
        for l in (root / "run/train_log.jsonl").read_text().splitlines()
    ]
    losses = np.array([r["loss"] for r in records if r["kind"] == "train"])
    windows = losses[: len(losses) // 100 * 100].reshape(-1, 100).mean(axis=1)
    assert np.all(np.diff(windows) <= 0.05), windows
    assert windows[-1] < 0.5 * windows[0], windows
    print(f"\nACCEPTANCE 2 PASS: train-set Sys SRCC={report['sys_srcc']:.3f} (>=0.9), "
          f"Utt MSE={report['utt_mse']:.3f} (<=0.5), "
          f"pipeline {overfit_run['elapsed']:.0f}s (<600s)")


# 3 -----------------------------------------------------------------------------


def test_criterion_3_early_stopping_exactness(tmp_path):
    start = time.time()
    # (a) injected validation stream through the real training loop
    enc = ToySpectralEncoder(EncoderConfig(**TINY_ENC, seed=1))
    head = tiny_head()
    rng = np.random.default_rng(1)
    rows = [RatedUtterance(f"w{i}.wav", f"s{i}", 3.0, dataset_id="d") for i in range(4)]
    waves = {f"w{i}.wav": make_noise(rng, 1500, 16000) for i in range(4)}
    improve_until = 137
    cfg = TrainConfig(
        batch_size=2, max_steps=100000, val_interval=1, patience_steps=2000, seed=3
    )
    state = train(
        enc, head, rows, [], cfg, LossConfig(), tmp_path,
        wave_provider=lambda row, crop: waves[row.wav_path],
        validation_metric_fn=lambda step: float(step) if step <= improve_until else 0.0,
    )
    assert state.step == improve_until + 2000, state.step
    assert state.last_improvement_step == improve_until

    # (b) best-5 bookkeeping matches a brute-force replay on 1000 random streams
    rng = np.random.default_rng(7)
    for _ in range(1000):
        stream_len = int(rng.integers(5, 60))
        metric = rng.choice(["utt_srcc", "utt_mse"])
        higher = metric == "utt_srcc"
        cfg = TrainConfig(
            selection_metric=str(metric),
            keep_best=5,
            patience_steps=int(rng.integers(1, 20)),
        )
        state = TrainState()
        kept: list[tuple[float, int]] = []
        last = 0
        for i in range(stream_len):
            value = float(np.round(rng.uniform(0, 1), 1))
            step = i + 1
            state, stop = update_early_stop(state, value, step, cfg)
            if len(kept) < 5 or (value > kept[-1][0] if higher else value < kept[-1][0]):
                kept.append((value, step))
                kept.sort(key=(lambda e: (-e[0], e[1])) if higher else (lambda e: (e[0], e[1])))
                kept = kept[:5]
                last = step
            assert [(e.value, e.step) for e in state.best_list] == kept
            assert stop == (step - last >= cfg.patience_steps)
            if stop:
                break
    elapsed = time.time() - start
    assert elapsed < 30.0, f"criterion 3 took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 3 PASS: halt at {improve_until}+2000 exactly; "
          f"best-5 replay on 1000 streams, {elapsed:.1f}s")


# 4 -----------------------------------------------------------------------------


def test_criterion_4_loss_contracts():
    rng = np.random.default_rng(3)
    # clipped-L1 gradient: exactly 0 inside the margin
    for _ in range(200):
        y = float(rng.uniform(1, 5))
        d = float(rng.uniform(-0.249, 0.249))
        assert clipped_l1_grad(y, y + d, tau=0.25) == 0.0
    # matches finite differences outside
    for _ in range(200):
        y = float(rng.uniform(1, 5))
        d = float(rng.uniform(0.3, 2.0)) * (1 if rng.random() < 0.5 else -1)
        y_hat = y + d
        h = 1e-7
        fd = (clipped_l1_loss(y, y_hat + h, 0.25) - clipped_l1_loss(y, y_hat - h, 0.25)) / (2 * h)
        an = clipped_l1_grad(y, y_hat, 0.25)
        assert abs(fd - an) / max(abs(fd), 1e-10) <= 1e-3
    # contrastive equals all-pairs brute force on batches of 16
    for _ in range(20):
        preds = rng.uniform(1, 5, 16)
        targets = rng.uniform(1, 5, 16)
        value = contrastive_loss(all_pairs(preds, targets), alpha=0.1)
        total, count = 0.0, 0
        for i in range(16):
            for j in range(i + 1, 16):
                rel = (preds[i] - preds[j]) - (targets[i] - targets[j])
                total += max(0.0, abs(rel) - 0.1)
                count += 1
        assert abs(value - total / count) <= 1e-9
    # tau = 0 reduces to plain L1 pointwise
    for _ in range(500):
        y, y_hat = rng.uniform(1, 5, 2)
        assert clipped_l1_loss(y, y_hat, tau=0.0) == l1_loss(y, y_hat)
    print("\nACCEPTANCE 4 PASS: clipped-L1 dead zone exact, FD match outside (1e-3), "
          "all-pairs contrastive (1e-9), tau=0 reduction pointwise")


# 5 -----------------------------------------------------------------------------


def test_criterion_5_knn_exactness():
    rng = np.random.default_rng(4)
    store = Datastore(
        keys=rng.standard_normal((1000, 12)),
        values=rng.uniform(1, 5, 1000),
        sample_ids=[f"s{i}" for i in range(1000)],
    )
    for k in (1, 4, 8):
        for _ in range(10):
            q = rng.standard_normal(12)
            score, ids, dists = knn_query(store, q, k=k, temperature=0.8)
            all_d = np.array([float(np.sqrt(((key - q) ** 2).sum())) for key in store.keys])
            order = sorted(range(1000), key=lambda i: (all_d[i], i))[:k]
            w = np.exp(-all_d[order] / 0.8)
            w /= w.sum()
            expected = float(w @ store.values[order])
            assert abs(score - expected) <= 1e-9
    # high-temperature limit -> unweighted mean of the k neighbors
    q = rng.standard_normal(12)
    score, ids, _ = knn_query(store, q, k=8, temperature=1e6)
    neighbor_values = store.values[[int(s[1:]) for s in ids]]
    assert abs(score - neighbor_values.mean()) <= 1e-6
    print("\nACCEPTANCE 5 PASS: exhaustive-scan match for k in {1,4,8} (1e-9), "
          "high-temperature limit (1e-6)")


# 6 -----------------------------------------------------------------------------


def test_criterion_6_checkpoint_fidelity(overfit_run, tmp_path):
    root = overfit_run["root"]
    predictor = Predictor.from_checkpoint(root / "run/best.ckpt")
    rng = np.random.default_rng(5)
    waves = [make_noise(rng, int(n), 16000) for n in rng.integers(16000, 32000, size=20)]
    before = [predictor.predict_wave(w).utterance_score for w in waves]
    resaved = tmp_path / "resaved.ckpt"
    predictor.save(resaved)
    reloaded = Predictor.from_checkpoint(resaved)
    after = [reloaded.predict_wave(w).utterance_score for w in waves]
    np.testing.assert_allclose(after, before, atol=1e-6)

    # digest verification rejects a single flipped byte
    reg = tmp_path / "registry.json"
    write_registry([RegistryEntry("m", "v1", str(resaved), sha256_file(resaved))], reg)
    registry_load(reg, "m", "v1")  # intact: loads
    raw = bytearray(resaved.read_bytes())
    raw[len(raw) // 3] ^= 0x01
    resaved.write_bytes(bytes(raw))
    with pytest.raises(DigestMismatchError):
        registry_load(reg, "m", "v1")
    print("\nACCEPTANCE 6 PASS: save->load reproduces 20 predictions (<=1e-6); "
          "single flipped byte rejected by digest")


# 7 -----------------------------------------------------------------------------


def test_criterion_7_determinism(tmp_path):
    # rerunning the same stages at the same destination reproduces every byte
    def generate():
        run_cli(
            "make-synth", "--out", tmp_path / "raw",
            "--systems", 3, "--utts-per-system", 4, "--listeners", 2, "--seed", 99,
        )
        run_cli("prepare", "--data-dir", tmp_path / "raw",
                "--out", tmp_path / "data", "--dataset-name", "synth")
        files = sorted(p for p in (tmp_path / "raw").rglob("*") if p.is_file())
        files += sorted(p for p in (tmp_path / "data").rglob("*") if p.is_file())
        return {str(p): p.read_bytes() for p in files}

    first = generate()
    second = generate()
    assert first.keys() == second.keys()
    assert all(first[k] == second[k] for k in first)
    assert any(k.endswith(".wav") for k in first) and any(k.endswith("train.csv") for k in first)

    # first-10-step loss traces: bitwise identical for identical config+seed
    config = {
        "name": "determinism",
        "datasets": [
            {
                "name": "synth",
                "train_manifest": str(tmp_path / "data/train.csv"),
                "dev_manifest": str(tmp_path / "data/dev.csv"),
                "has_listener_ids": True,
            }
        ],
        "train": {"max_steps": 10, "val_interval": 100, "seed": 55},
    }
    traces = []
    for run_name in ("r1", "r2"):
        config["out_dir"] = str(tmp_path / run_name)
        config_path = tmp_path / f"{run_name}.yaml"
        config_path.write_text(yaml.safe_dump(config))
        run_cli("train", "--config", config_path)
        records = [
            json.loads(l)
            for l in (tmp_path / run_name / "train_log.jsonl").read_text().splitlines()
        ]
        traces.append([r["loss"] for r in records if r["kind"] == "train"])
    assert len(traces[0]) == 10
    assert traces[0] == traces[1]
    print("\nACCEPTANCE 7 PASS: corpora/manifest bytes identical; "
          "first-10-step loss traces bitwise identical")


# 8 -----------------------------------------------------------------------------


def test_criterion_8_pipeline_equivalence(overfit_run, tmp_path):
    root = overfit_run["root"]
    ckpt = root / "run/best.ckpt"
    dev_manifest = root / "data/dev.csv"
    test_manifest = root / "data/test.csv"

    preds_csv = tmp_path / "preds.csv"
    run_cli("predict", "--checkpoint", ckpt, "--manifest", test_manifest, "--out", preds_csv)
    run_cli("evaluate", "--predictions", f"test={preds_csv}",
            "--test", f"test={test_manifest}", "--out", tmp_path / "from_csv")
    run_cli("evaluate", "--checkpoint", ckpt,
            "--test", f"test={test_manifest}", "--out", tmp_path / "from_model")
    a = json.loads((tmp_path / "from_csv/test.report.json").read_text())
    b = json.loads((tmp_path / "from_model/test.report.json").read_text())
    for key in ("utt_mse", "utt_lcc", "utt_srcc", "sys_mse", "sys_lcc", "sys_srcc"):
        assert abs(a[key] - b[key]) <= 1e-9, key

    # multi-test-set summary equals the mean of the per-set reports
    run_cli("evaluate", "--checkpoint", ckpt,
            "--test", f"dev={dev_manifest}", "--test", f"test={test_manifest}",
            "--out", tmp_path / "multi")
    summary = json.loads((tmp_path / "multi/summary.json").read_text())
    r1 = json.loads((tmp_path / "multi/dev.report.json").read_text())
    r2 = json.loads((tmp_path / "multi/test.report.json").read_text())
    for key in ("utt_mse", "utt_lcc", "utt_srcc", "sys_mse", "sys_srcc"):
        assert abs(summary[key] - (r1[key] + r2[key]) / 2) <= 1e-9, key
    print("\nACCEPTANCE 8 PASS: predict->evaluate == direct evaluate (1e-9); "
          "summary averaging matches per-set reports")


# 9 -----------------------------------------------------------------------------


def test_criterion_9_optimizer_recurrence():
    a, c = 2.5, -0.8
    lr, mu = 0.001, 0.9
    params = {"x": np.array([4.0])}
    opt = MomentumSGD(params, lr=lr, momentum=mu)
    x_ref, v_ref = 4.0, 0.0
    for step in range(100):
        g = a * (params["x"][0] - c)
        opt.step({"x": np.array([g])})
        v_ref = mu * v_ref + a * (x_ref - c)
        x_ref = x_ref - lr * v_ref
        assert abs(params["x"][0] - x_ref) <= 1e-10, f"step {step}"
    print("\nACCEPTANCE 9 PASS: momentum-SGD matches hand-rolled recurrence "
          "for 100 steps (1e-10)")
