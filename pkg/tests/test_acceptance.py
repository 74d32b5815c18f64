"""Acceptance criteria, each run at its stated tolerance and budget.

Every test records one PASS/FAIL line (see acceptance_log / conftest) before
asserting, so the terminal summary lists all eight criteria even on failure.
"""

import math
import time

import numpy as np

from liftedstruct.cli import main
from liftedstruct.core import EmbeddingBatch, pairwise_sq_distances
from liftedstruct.experiments import (
    ACCEPTANCE_SETUP,
    away_component,
    baselines_for,
    failure_cases,
    run_comparison,
    step_displacement,
    summarize,
)
from liftedstruct.gradcheck import gradient_check, random_check_case
from liftedstruct.losses import LOSS_NAMES, LossConfig, lifted_loss_nonsmooth, lifted_loss_smooth
from liftedstruct.metrics import nmi, pairwise_f1, recall_at_k

import oracles
from acceptance_log import record
from test_losses import HAND_CASES, oracle_value, package_value


def test_criterion_1_gradient_fidelity():
    start = time.perf_counter()
    rng = np.random.default_rng(2016)
    worst, failed, inconclusive = {}, [], 0
    for loss in LOSS_NAMES:
        worst[loss] = 0.0
        for trial in range(100):
            inputs, labels, spec, params = random_check_case(loss, rng)
            rep = gradient_check(loss, inputs, labels, spec, params, tolerance=1e-5, rng=rng)
            if rep.status == "inconclusive":
                inconclusive += 1
                continue
            worst[loss] = max(worst[loss], rep.max_error)
            if rep.status != "pass":
                failed.append((loss, trial, rep.max_error))
    elapsed = time.perf_counter() - start
    ok = not failed and elapsed < 30
    detail = ", ".join(f"{k} max {v:.1e}" for k, v in worst.items())
    record(1, ok, f"400 checks at 1e-5 ({detail}); {inconclusive} breakpoint-excluded; {elapsed:.1f}s (<30s)")
    assert not failed, failed[:5]
    assert elapsed < 30


def _single_negative_batch(rng):
    """Disjoint (a, a', b) triples; the only negative kept is (a, b), so each lse has one term."""
    t = int(rng.integers(1, 6))
    c = int(rng.integers(1, 6))
    labels = np.empty(3 * t, dtype=np.int64)
    labels[0::3] = labels[1::3] = 2 * np.arange(t)
    labels[2::3] = 2 * np.arange(t) + 1
    negatives = [(3 * k, 3 * k + 2) for k in range(t)]
    return EmbeddingBatch(rng.normal(scale=0.5, size=(3 * t, c)), labels), negatives


def test_criterion_2_upper_bound_dominance():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    cfg = LossConfig()
    violations = 0
    for _ in range(1000):
        m = int(rng.integers(3, 17))
        labels = rng.integers(0, int(rng.integers(2, 5)), size=m)
        labels[0] = labels[1]
        if np.all(labels == labels[0]):
            labels[-1] = labels[0] + 1
        batch = EmbeddingBatch(rng.normal(scale=float(rng.choice([0.1, 0.5, 2.0])), size=(m, int(rng.integers(1, 9)))),
                               labels)
        s, n = lifted_loss_smooth(batch, cfg).value, lifted_loss_nonsmooth(batch, cfg).value
        violations += s < n
    worst_eq = 0.0
    for _ in range(1000):
        batch, negatives = _single_negative_batch(rng)
        s = lifted_loss_smooth(batch, cfg, negatives).value
        n = lifted_loss_nonsmooth(batch, cfg, negatives).value
        worst_eq = max(worst_eq, abs(s - n))
    elapsed = time.perf_counter() - start
    ok = violations == 0 and worst_eq <= 1e-9 and elapsed < 10
    record(2, ok, f"{violations} violations in 1000 batches; single-negative |smooth-nonsmooth| max {worst_eq:.1e} "
                  f"(<=1e-9); {elapsed:.1f}s (<10s)")
    assert violations == 0 and worst_eq <= 1e-9 and elapsed < 10


def test_criterion_3_hand_values():
    bad = []
    for loss, X, labels, extra, expected in HAND_CASES:
        ref = oracle_value(loss, X, labels, extra)
        got = package_value(loss, X, labels, extra)
        if abs(ref - expected) > 1e-12 or abs(got - expected) > 1e-6:
            bad.append((loss, X, expected, ref, got))
    # the exact expressions behind the quoted 4-place decimals 2.8473 and 1.0865;
    # ln(4e)^2 / 2 = 2.84720..., so the first quoted decimal is off in its last
    # place. Shown for reference, the gate is the exact values above.
    exact = [math.log(4 * math.e) ** 2 / 2, (math.log(1 + math.exp(0.5)) + 0.5) ** 2 / 2]
    ok = not bad
    record(3, ok, f"{len(HAND_CASES) - len(bad)}/{len(HAND_CASES)} hand values within 1e-6, oracle-confirmed "
                  f"(smooth lifted {exact[0]:.5f}, {exact[1]:.5f})")
    assert ok, bad


def test_criterion_4_distance_matrix():
    rng = np.random.default_rng(64)
    worst = 0.0
    shapes = [(64, 512)] + [(int(rng.integers(1, 65)), int(rng.integers(1, 513))) for _ in range(99)]
    for m, c in shapes:
        X = rng.normal(size=(m, c))
        naive = np.zeros((m, m))
        for i in range(m):
            for j in range(m):
                naive[i, j] = np.sum((X[i] - X[j]) ** 2)
        worst = max(worst, float(np.max(np.abs(pairwise_sq_distances(X).sq - naive))))
    ok = worst <= 1e-10
    record(4, ok, f"100 batches up to m=64, c=512; max abs error {worst:.1e} (<=1e-10)")
    assert ok


def test_criterion_5_metric_oracles():
    start = time.perf_counter()
    mismatches, compared = 0, 0

    def check(a, b):
        nonlocal mismatches, compared
        compared += 1
        if abs(nmi(a, b) - oracles.brute_nmi(a, b)) > 1e-12:
            mismatches += 1
        if len(a) >= 2 and abs(pairwise_f1(a, b) - oracles.brute_pairwise_f1(a, b)) > 1e-12:
            mismatches += 1

    # every ordered pair for n <= 6; for n = 7, 8 every partition on each side
    # against a seeded panel of partners (all pairs would be ~8 million)
    rng = np.random.default_rng(8)
    for n in range(1, 9):
        parts = list(oracles.set_partitions(n, 4))
        if n <= 6:
            for a in parts:
                for b in parts:
                    check(a, b)
        else:
            panel = [parts[0], parts[-1]] + [parts[i] for i in rng.choice(len(parts), size=10, replace=False)]
            for a in parts:
                for b in panel:
                    check(a, b)
                    check(b, a)

    monotone_failures = 0
    for _ in range(100):
        n = int(rng.integers(5, 60))
        X = rng.normal(size=(n, int(rng.integers(1, 6))))
        labels = rng.integers(0, int(rng.integers(2, 6)), size=n)
        ks = list(range(1, n))
        r = recall_at_k(X, labels, ks)
        vals = [r[k] for k in ks]
        monotone_failures += any(b < a for a, b in zip(vals, vals[1:]))
        for k in (1, min(4, n - 1)):
            monotone_failures += abs(r[k] - oracles.brute_recall_at_k(X, labels, k)) > 1e-12
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and monotone_failures == 0
    record(5, ok, f"{compared} partition pairs (n<=8, <=4 blocks), {mismatches} mismatches; "
                  f"recall monotone and brute-force equal on 100 sets ({monotone_failures} failures); {elapsed:.1f}s")
    assert ok


def test_criterion_6_desk_scale_comparison():
    start = time.perf_counter()
    outcomes = run_comparison(ACCEPTANCE_SETUP)
    table = summarize(outcomes)
    elapsed = time.perf_counter() - start
    lifted = table["lifted-smooth"]
    beats = lifted["recall_at_1"] >= table["contrastive"]["recall_at_1"] and \
        lifted["recall_at_1"] >= table["triplet"]["recall_at_1"]
    ok = beats and lifted["nmi"] >= 0.6 and elapsed < 300
    detail = "; ".join(f"{k} R@1 {v['recall_at_1']:.3f} NMI {v['nmi']:.3f}" for k, v in table.items())
    record(6, ok, f"median over 5 seeds: {detail}; {elapsed:.0f}s (<300s)")
    assert beats, table
    assert lifted["nmi"] >= 0.6
    assert elapsed < 300


def test_criterion_7_determinism(tmp_path):
    data = tmp_path / "d.csv"
    assert main(["synth", "--classes", "12", "--per-class", "8", "--dim", "6", "--seed", "5", "-o", str(data)]) == 0
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        args = ["train", "--input-path", str(data), "--output-dir", str(out), "--max-iterations", "60",
                "--batch-size", "24", "--hidden-widths", "16", "--embedding-dim", "4",
                "--mining-mode", "pool-mined", "--candidate-pool-size", "48", "--init-seed", "3", "--sampler-seed", "9"]
        assert main(args) == 0
        runs.append({f: (out / f).read_bytes() for f in ("train_log.csv", "checkpoint.bin")})
    same = runs[0] == runs[1]
    record(7, same, "two train invocations: byte-identical train_log.csv and checkpoint.bin" if same
           else "train outputs differ between identical invocations")
    assert same


def test_criterion_8_failure_modes():
    rows, ok = [], True
    for case in failure_cases():
        lifted = away_component(case, step_displacement(case, "lifted-smooth"))
        ok &= lifted > 0
        parts = [f"lifted {lifted:+.3f}"]
        for method in baselines_for(case):
            v = away_component(case, step_displacement(case, method))
            ok &= v < 0
            parts.append(f"{method} {v:+.3f}")
        rows.append(f"{case.name}: " + ", ".join(parts))
    record(8, ok, "away-from-cluster components; " + " | ".join(rows))
    assert ok
