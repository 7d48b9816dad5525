"""Acceptance criteria, one pass/fail line each (see the summary at the end of the run).

Run on its own with ``pytest tests/test_acceptance.py -v``.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import record, weighted
from oracles import brute_force, np_squash, scripted_routing
from tables import MITBIH_CONFUSION, MITBIH_COUNTS, MITBIH_NAMES, MITBIH_SCORES, PTB_COUNTS
from test_training import unit_scale_point

from mambacapsule import checkpoint
from mambacapsule import tensor as T
from mambacapsule.capsule import dynamic_routing, squash
from mambacapsule.cli import main
from mambacapsule.config import LossConfig, ScheduleConfig, preset
from mambacapsule.data import class_counts, load_csv, stratified_split, synth_beats, to_arrays
from mambacapsule.explain import cross_label_reconstruct, p_wave_energy
from mambacapsule.gradcheck import check
from mambacapsule.metrics import ConfusionMatrix, per_class_metrics
from mambacapsule.model import MambaCapsule
from mambacapsule.ssm import SsmBranch, discretize, phi1, scan, selective_scan
from mambacapsule.tensor import Tensor
from mambacapsule.training import (batch_loss, center_window, format_log, lr_at, m_plus_at,
                                   margin_loss, train)

TOY = Path(__file__).parent / "data" / "toy.ckpt"

# ---------------------------------------------------------------- 1. metrics fixture

CELL_TOL = 0.01
COLUMNS = MITBIH_NAMES + ("macro",)
CELLS = [(m, i) for m in MITBIH_SCORES for i in range(len(COLUMNS))]
# printed as 85.29; 2*ACC*SEN/(ACC+SEN) from the matrix gives 85.83, and the printed
# macro average of that row (93.50) only holds with 85.83
MISPRINTED = {("f1_acc_sen", 3)}


def _computed(metric, i):
    r = per_class_metrics(ConfusionMatrix(MITBIH_CONFUSION, MITBIH_NAMES))
    return r.macro[metric] if i == 5 else float(r.scores[metric][i])


def _cell_id(cell):
    return f"{cell[0]}-{COLUMNS[cell[1]]}"


@pytest.mark.parametrize("cell", [
    pytest.param(c, marks=pytest.mark.xfail(strict=True, reason="reference cell disagrees with its own confusion matrix"))
    if c in MISPRINTED else c for c in CELLS], ids=_cell_id)
def test_c1_metrics_cell(cell):
    metric, i = cell
    assert abs(_computed(metric, i) - MITBIH_SCORES[metric][i]) <= CELL_TOL


def test_c1_metrics_summary():
    t0 = time.perf_counter()
    r = per_class_metrics(ConfusionMatrix(MITBIH_CONFUSION, MITBIH_NAMES))
    elapsed = time.perf_counter() - t0
    bad = []
    for metric, i in CELLS:
        got = r.macro[metric] if i == 5 else float(r.scores[metric][i])
        if abs(got - MITBIH_SCORES[metric][i]) > CELL_TOL:
            bad.append(f"{metric}[{COLUMNS[i]}] {got:.2f} vs {MITBIH_SCORES[metric][i]:.2f}")
    record(1, not bad and elapsed < 1.0,
           f"{len(CELLS) - len(bad)}/{len(CELLS)} cells within {CELL_TOL}; "
           + (f"off: {'; '.join(bad)}; " if bad else "") + f"{elapsed * 1e3:.1f} ms")
    assert elapsed < 1.0


# ---------------------------------------------------------------- 2. gradient suite

PRIM_TOL = 1e-6
COMPOSITE_TOL = 1e-4


def _primitive_cases(rng):
    def leaf(*shape, lo=None, hi=None):
        data = rng.uniform(lo, hi, shape) if lo is not None else rng.standard_normal(shape)
        return Tensor(data, requires_grad=True)

    a, b, pos = leaf(3, 4), leaf(3, 4), leaf(3, 4, lo=0.5, hi=2.0)
    relu_in = leaf(3, 4)
    relu_in.data = np.where(np.abs(relu_in.data) < 0.1, 0.5, relu_in.data)
    m1, m2 = leaf(3, 4), leaf(4, 2)
    cx, ck = leaf(2, 8, 3), leaf(3, 3)
    g, be, ln_x = leaf(5), leaf(5), leaf(2, 3, 5)
    sa, su, sc = leaf(2, 5, 3, 2, lo=0.2, hi=0.95), leaf(2, 5, 3, 2), leaf(2, 5, 2)
    z = leaf(6, lo=-3.0, hi=-0.01)
    mask = (rng.uniform(size=(3, 4)) > 0.3) / 0.7
    return {
        "add": (lambda: a + b, [a, b]),
        "sub": (lambda: a - b, [a, b]),
        "mul": (lambda: a * b, [a, b]),
        "div": (lambda: a / pos, [a, pos]),
        "scale": (lambda: T.scale(a, 1.7), [a]),
        "neg": (lambda: -a, [a]),
        "power": (lambda: T.power(pos, 2.5), [pos]),
        "exp": (lambda: T.exp(a), [a]),
        "log": (lambda: T.log(pos), [pos]),
        "sqrt": (lambda: T.sqrt(pos), [pos]),
        "relu": (lambda: T.relu(relu_in), [relu_in]),
        "sigmoid": (lambda: T.sigmoid(a), [a]),
        "softplus": (lambda: T.softplus(a), [a]),
        "tanh": (lambda: T.tanh(a), [a]),
        "sum": (lambda: a.sum(axis=0), [a]),
        "mean": (lambda: a.mean(axis=1), [a]),
        "reshape": (lambda: a.reshape(2, 6), [a]),
        "transpose": (lambda: a.transpose(), [a]),
        "getitem": (lambda: a[1:, ::2], [a]),
        "concat": (lambda: T.concat([a, b], axis=0), [a, b]),
        "matmul": (lambda: m1 @ m2, [m1, m2]),
        "conv1d": (lambda: T.conv1d(cx, ck), [cx, ck]),
        "softmax": (lambda: T.softmax(a, axis=-1), [a]),
        "l2norm": (lambda: T.l2norm(a, axis=-1), [a]),
        "mse": (lambda: T.mse(a, b), [a, b]),
        "layer_norm": (lambda: T.layer_norm(ln_x, g, be), [ln_x, g, be]),
        "dropout": (lambda: a * mask, [a]),
        "phi1": (lambda: phi1(z), [z]),
        "selective_scan": (lambda: scan(sa, su, sc), [sa, su, sc]),
        "squash": (lambda: squash(a), [a]),
    }


def test_c2_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    prim = {}
    for name, (fn, leaves) in _primitive_cases(rng).items():
        out_shape = fn().shape
        f = weighted(fn, rng, out_shape) if out_shape else fn
        prim[name] = max(check(f, leaves).values())
    composite = []
    for seed in range(10):
        model, cfg, x, y = unit_scale_point(seed)
        f = lambda: batch_loss(model, x, y, 0.9, cfg.training.loss, 0.5)[0]
        composite.append(max(check(f, model.parameters()).values()))
    elapsed = time.perf_counter() - t0
    worst_prim = max(prim, key=prim.get)
    ok = max(prim.values()) < PRIM_TOL and max(composite) < COMPOSITE_TOL and elapsed < 120
    record(2, ok, f"{len(prim)} primitives, worst {worst_prim} {prim[worst_prim]:.1e} (< {PRIM_TOL:g}); "
                  f"full network over 10 parameter draws worst {max(composite):.1e} (< {COMPOSITE_TOL:g}); "
                  f"{elapsed:.1f} s")
    assert max(prim.values()) < PRIM_TOL, prim
    assert max(composite) < COMPOSITE_TOL
    assert elapsed < 120


# ---------------------------------------------------------------- 3. scan oracle

def test_c3_scan_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_diff, n = 0.0, 0
    for _ in range(128):
        b, l, d, s = (int(v) for v in (rng.integers(1, 3), rng.integers(1, 17), rng.integers(1, 5), rng.integers(1, 5)))
        br = SsmBranch(d, s, 2 * int(rng.integers(0, 2)) + 1, (0.001, 1.0), rng)
        br.W_delta.data = rng.standard_normal(br.W_delta.shape)
        x = rng.standard_normal((b, l, d))
        worst_diff = max(worst_diff, float(np.max(np.abs(selective_scan(Tensor(x), br).data - brute_force(x, br)))))
        n += 1
    elapsed = time.perf_counter() - t0
    record(3, worst_diff < 1e-10 and n >= 100 and elapsed < 30,
           f"{n} instances, max abs diff {worst_diff:.1e} (< 1e-10); {elapsed:.2f} s")
    assert n >= 100 and worst_diff < 1e-10 and elapsed < 30


# ---------------------------------------------------------------- 4. discretization

def test_c4_discretization_limits():
    abar, bbar = discretize(Tensor(np.array([[-1.0]])), Tensor(np.ones((1, 1, 1))),
                            Tensor(np.full((1, 1, 1), math.log(2.0))))
    exact = abar.data.item() == 0.5 and bbar.data.item() == 0.5
    d = 1e-9
    A = Tensor(np.array([[-1.0, -4.0]]))
    B = Tensor(np.array([[[0.3, -2.0]]]))
    a2, b2 = discretize(A, B, Tensor(np.full((1, 1, 1), d)))
    rel_a = float(np.max(np.abs(a2.data - 1.0)))
    rel_b = float(np.max(np.abs(b2.data.reshape(-1) / (d * B.data.reshape(-1)) - 1.0)))
    ok = exact and rel_a < 1e-6 and rel_b < 1e-6
    record(4, ok, f"Abar={abar.data.item()!r} Bbar={bbar.data.item()!r} at delta=ln2; "
                  f"small-step rel err Abar {rel_a:.1e} Bbar {rel_b:.1e} (< 1e-6)")
    assert ok


# ---------------------------------------------------------------- 5. routing

def test_c5_routing_properties():
    rng = np.random.default_rng(5)
    sum_err = 0.0
    for _ in range(200):
        shape = tuple(int(v) for v in rng.integers(1, 6, 4))
        out = dynamic_routing(Tensor(rng.standard_normal(shape) * rng.uniform(0.1, 10)), int(rng.integers(1, 6)))
        sum_err = max(sum_err, max(float(np.max(np.abs(c.sum(axis=2) - 1.0))) for c in out.coefficients))
    u = rng.standard_normal((4, 1, 1, 7))
    single = float(np.max(np.abs(dynamic_routing(Tensor(u), 3).capsules.data - np_squash(u[:, 0]))))
    oracle = 0.0
    for _ in range(50):
        v = rng.standard_normal((1, 2, 2, 5))
        oracle = max(oracle, float(np.max(np.abs(dynamic_routing(Tensor(v), 3).capsules.data[0]
                                                 - scripted_routing(v[0], 3)))))
    ok = sum_err <= 1e-12 and single <= 1e-12 and oracle <= 1e-12
    record(5, ok, f"coefficient row sums off by {sum_err:.1e}; P=K=1 vs squash {single:.1e}; "
                  f"scripted oracle P=K=2 r=3 {oracle:.1e} (all <= 1e-12)")
    assert ok


# ---------------------------------------------------------------- 6. squash

def test_c6_squash():
    rng = np.random.default_rng(6)
    s = rng.standard_normal((10_000, 8)) * rng.uniform(0.0, 30.0, (10_000, 1))
    v = squash(Tensor(s)).data
    nv = np.linalg.norm(v, axis=1)
    cos = (v * s).sum(1) / (nv * np.linalg.norm(s, axis=1))
    one = float(np.linalg.norm(squash(Tensor(np.array([[0.6, 0.8]]))).data))
    three = float(np.linalg.norm(squash(Tensor(np.array([[0.0, 3.0, 0.0]]))).data))
    ok = bool(np.all(nv < 1.0)) and abs(one - 0.5) < 1e-15 and abs(three - 0.9) < 1e-15 \
        and float(cos.min()) >= 1 - 1e-12
    record(6, ok, f"max |v| {nv.max():.6f} over 1e4 inputs; |s|=1 -> {one!r}; |s|=3 -> {three!r}; "
                  f"min cosine 1-{1 - cos.min():.1e}")
    assert ok


# ---------------------------------------------------------------- 7. loss fixtures

def test_c7_loss_fixtures():
    lc = LossConfig()
    zero = margin_loss(Tensor(np.array([[0.95, 0.05, 0.0]])), [0], 0.9, lc).item()
    all_off = margin_loss(Tensor(np.zeros((1, 5))), [2], 0.9, lc).item()
    wrong_half = margin_loss(Tensor(np.array([[0.9, 0.5]])), [0], 0.9, lc).item()
    s = ScheduleConfig(warmup_steps=30, total_steps=300)
    ends = (lr_at(30, s) == s.lr_peak, lr_at(300, s) == s.lr_min, m_plus_at(0, s) == 0.9)
    ok = zero == 0.0 and abs(all_off - 0.81) <= 1e-12 and abs(wrong_half - 0.08) <= 1e-12 and all(ends)
    record(7, ok, f"margin cases {zero!r}, {all_off!r}, {wrong_half!r} (0, 0.81, 0.08 to 1e-12); "
                  f"lr(warmup)=peak {ends[0]}, lr(total)=min {ends[1]}, m+(0)=0.9 {ends[2]}")
    assert ok


# ---------------------------------------------------------------- 8. toy training

def _toy_run(seed=0):
    cfg = preset("tiny")
    cfg.training.seed = seed
    tr = to_arrays(synth_beats(100, 187, 0))
    te = to_arrays(synth_beats(50, 187, 1))
    model = MambaCapsule(cfg.model, seed)
    t0 = time.perf_counter()
    log = train(model, tr, te, cfg.training, ("N", "S")).log
    return model, log, time.perf_counter() - t0, len(tr[0]), len(te[0])


def test_c8_toy_training():
    _, log, elapsed, n_tr, n_te = _toy_run()
    _, log2, _, _, _ = _toy_run()
    best = max(r["test_acc"] for r in log)
    first = next((r["epoch"] + 1 for r in log if r["test_acc"] >= 95.0), None)
    same = [format_log(r) for r in log] == [format_log(r) for r in log2]
    ok = len(log) <= 30 and first is not None and elapsed < 600 and same
    record(8, ok, f"{n_tr}/{n_te} beats, >= 95% test accuracy at epoch {first} of {len(log)}, "
                  f"final {log[-1]['test_acc']:.1f}%, best {best:.1f}%; {elapsed:.1f} s; repeat run identical: {same}")
    assert ok


# ---------------------------------------------------------------- 9. explainability

def test_c9_explainability():
    model, meta = checkpoint.load(TOY)
    d = meta["data"]
    x, y = to_arrays(synth_beats(d["synth_test_per_class"], 187, d["seed"] + 1, d["noise"]))
    L, Lr = model.cfg.seq_len, model.cfg.recon_len
    offset = (L - Lr) // 2
    normal, suppressed = 0, 1  # P wave present / absent
    mse_wins, p_contrast = 0, 0
    for xi, yi in zip(x, y):
        target = center_window(xi, Lr)
        recon = {k: cross_label_reconstruct(xi, model, k).trace for k in (0, 1)}
        true_rec = model.reconstruct(model(xi[None]), [int(yi)]).data[0]
        wrong = recon[1 - int(yi)]
        mse_wins += np.mean((true_rec - target) ** 2) < np.mean((wrong - target) ** 2)
        p_contrast += p_wave_energy(recon[suppressed], offset, L) < p_wave_energy(recon[normal], offset, L)
    n = len(x)
    ok = mse_wins / n >= 0.8 and p_contrast / n > 0.5
    record(9, ok, f"true-label MSE below wrong-label on {100 * mse_wins / n:.0f}% of {n} beats (>= 80%); "
                  f"P-phase energy lower in the suppressed-class reconstruction on {100 * p_contrast / n:.0f}% (> 50%)")
    assert ok


# ---------------------------------------------------------------- 10. round trip and CLI determinism

def test_c10_round_trip_and_cli_determinism(tmp_path):
    model, meta = checkpoint.load(TOY)
    checkpoint.save(tmp_path / "again.ckpt", model, meta)
    reloaded, _ = checkpoint.load(tmp_path / "again.ckpt")
    x, _ = to_arrays(synth_beats(5, 187, 11))
    a, b = model(x), reloaded(x)
    bit_identical = np.array_equal(a.capsules.data, b.capsules.data) and np.array_equal(a.norms.data, b.norms.data)
    bytes_equal = (tmp_path / "again.ckpt").read_bytes() == TOY.read_bytes()
    logs = []
    for name in ("a", "b"):
        assert main(["train", "--preset", "tiny", "--synthetic", "--epochs", "2", "--seed", "7",
                     "--out-dir", str(tmp_path / name)]) == 0
        logs.append((tmp_path / name / "train.log").read_text())
    same_log = logs[0] == logs[1]
    ok = bit_identical and bytes_equal and same_log
    record(10, ok, f"forward after save/load bit-identical {bit_identical}, re-save byte-identical {bytes_equal}; "
                   f"two CLI runs with seed 7 give identical log lines {same_log}")
    assert ok


# ---------------------------------------------------------------- 11. external dataset counts

MITBIH_DIR = os.environ.get("MAMBACAPSULE_MITBIH_DIR")
PTB_DIR = os.environ.get("MAMBACAPSULE_PTB_DIR")


def test_c11_external_counts():
    if not (MITBIH_DIR or PTB_DIR):
        record(11, "SKIP", "set MAMBACAPSULE_MITBIH_DIR (mitbih_train.csv, mitbih_test.csv) and/or "
                           "MAMBACAPSULE_PTB_DIR (ptbdb_normal.csv, ptbdb_abnormal.csv) to run")
        pytest.skip("external CSVs not supplied")
    found = {}
    if MITBIH_DIR:
        for split in ("train", "test"):
            recs = load_csv(os.path.join(MITBIH_DIR, f"mitbih_{split}.csv"), 187, 5)
            found[f"mitbih {split}"] = (tuple(int(v) for v in class_counts(recs, 5)), MITBIH_COUNTS[split])
    if PTB_DIR:
        recs = load_csv(os.path.join(PTB_DIR, "ptbdb_normal.csv"), 187, 2) \
            + load_csv(os.path.join(PTB_DIR, "ptbdb_abnormal.csv"), 187, 2)
        split = stratified_split(recs, 0.8, seed=0)
        for name, part in (("train", split.train), ("test", split.test)):
            found[f"ptb {name}"] = (tuple(int(v) for v in class_counts(part, 2)), PTB_COUNTS[name])
    bad = {k: v for k, v in found.items() if v[0] != v[1]}
    record(11, not bad, "; ".join(f"{k} {v[0]} vs {v[1]}" for k, v in found.items()))
    assert not bad
