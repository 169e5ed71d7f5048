"""Acceptance suite: one test per release criterion, each printing a
pass/fail line.  Everything runs against the in-process toy backend; no
external service is involved.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import math
import time

import numpy as np
import pytest

from mgtdetect import (
    DDLConfig,
    DPOConfig,
    LogProbMatrix,
    ScoredLabelSet,
    TokenSequence,
    ToyScoringModel,
    analytic_moments,
    auroc,
    auroc_sweep,
    batch_discrepancies,
    build_reference,
    conditional_discrepancy,
    ddl_loss,
    decode,
    dpo_loss,
    encode,
    estimate_pm,
    improvement,
    mc_moments,
    post_clean,
    pre_clean,
    resample,
    synth_task,
    train,
    validate,
)
from tests.test_protocol import (
    GOLDEN_DENSE,
    GOLDEN_TOPK,
    assert_matrices_equal_at_f32,
    golden_dense_matrix,
    golden_topk_matrix,
)
from tests.test_refcluster import full_scan_pm
from tests.test_training import finite_difference_grad, grad_rel_error, random_instance


def report(name: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


def random_dense(rng, s, v):
    z = rng.normal(scale=1.5, size=(s, v))
    return LogProbMatrix.from_dense(z - np.log(np.exp(z).sum(1, keepdims=True)))


# ---------------------------------------------------------------------------
# Shared training sweep (used by the separation, gamma, and beta criteria).

SYNTH = dict(seed=42, v=16, order=1, s=64, count=300)
N_TRAIN = 200  # 200 training pairs, 100 held out


@pytest.fixture(scope="module")
def corpora():
    data = synth_task(**SYNTH)
    return {
        "train": (data.human[:N_TRAIN], data.machine[:N_TRAIN]),
        "holdout": (data.human[N_TRAIN:], data.machine[N_TRAIN:]),
    }


@pytest.fixture(scope="module")
def initial_model():
    return ToyScoringModel.random(SYNTH["order"], SYNTH["v"], scale=0.1, seed=1)


def holdout_auroc(model, corpora):
    hold_h, hold_m = corpora["holdout"]
    d_m = batch_discrepancies(model, hold_m)
    d_h = batch_discrepancies(model, hold_h)
    return auroc(ScoredLabelSet.from_scores(d_m, d_h))


@pytest.fixture(scope="module")
def gamma_sweep(corpora, initial_model):
    start = time.perf_counter()
    out = {}
    for gamma in (50.0, 100.0, 500.0, 10000.0):
        trained, _ = train(initial_model, corpora["train"], DDLConfig(gamma=gamma))
        out[gamma] = holdout_auroc(trained, corpora)
    out["elapsed"] = time.perf_counter() - start
    return out


class TestDiscrepancy:
    def test_mc_analytic_oracle_equivalence(self):
        rng = np.random.default_rng(2024)
        n = 10000
        trials = 1000
        failures = 0
        start = time.perf_counter()
        for t in range(trials):
            s = int(rng.integers(1, 51))
            v = int(rng.integers(2, 65))
            matrix = random_dense(rng, s, v)
            mu_a, sigma_a = analytic_moments(matrix)
            mu_mc, _ = mc_moments(matrix, resample(matrix, n, seed=t))
            if abs(mu_mc - mu_a) > 4.0 * sigma_a / math.sqrt(n) + 1e-12:
                failures += 1
        elapsed = time.perf_counter() - start
        ok = failures <= trials * 0.01 and elapsed < 60.0
        report(
            "discrepancy MC/analytic oracle equivalence",
            ok,
            f"{failures}/{trials} outside 4 standard errors, {elapsed:.1f}s",
        )

    def test_hand_values(self):
        m = LogProbMatrix.from_dense(np.log([[0.9, 0.1]]))
        hi = conditional_discrepancy(m, TokenSequence((0,))).d_c
        lo = conditional_discrepancy(m, TokenSequence((1,))).d_c
        ok = abs(hi - 0.33333) <= 1e-4 and abs(lo - (-3.0000)) <= 1e-4
        report("discrepancy hand values", ok, f"high {hi:.6f}, low {lo:.6f}")


class TestGradients:
    def test_loss_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        start = time.perf_counter()
        worst_ddl = worst_dpo = 0.0
        for _ in range(100):
            model, hwt, mgt, gamma = random_instance(rng)
            _, g = ddl_loss(model, hwt, mgt, gamma)
            gf = finite_difference_grad(lambda m: ddl_loss(m, hwt, mgt, gamma)[0], model)
            worst_ddl = max(worst_ddl, grad_rel_error(g, gf))

            pairs_m = (mgt * len(hwt))[: len(hwt)]
            ref = ToyScoringModel(model.order, model.vocab,
                                  rng.normal(0, 1.0, model.logits.shape))
            beta = float(rng.uniform(0.05, 1.0))
            _, g = dpo_loss(model, ref, hwt, pairs_m, beta)
            gf = finite_difference_grad(
                lambda m: dpo_loss(m, ref, hwt, pairs_m, beta)[0], model
            )
            worst_dpo = max(worst_dpo, grad_rel_error(g, gf))
        elapsed = time.perf_counter() - start
        ok = worst_ddl <= 1e-4 and worst_dpo <= 1e-4 and elapsed < 30.0
        report(
            "loss gradient finite-difference check",
            ok,
            f"worst rel err ddl {worst_ddl:.2e}, dpo {worst_dpo:.2e}, {elapsed:.1f}s",
        )


class TestTrainingBehavior:
    def test_ddl_separates_synthetic_task(self, corpora, initial_model):
        untrained = holdout_auroc(initial_model, corpora)
        start = time.perf_counter()
        trained, _ = train(initial_model, corpora["train"], DDLConfig(gamma=100.0))
        elapsed = time.perf_counter() - start
        trained_auroc = holdout_auroc(trained, corpora)
        ok = trained_auroc >= 0.95 and untrained <= 0.80 and elapsed < 300.0
        report(
            "direct-discrepancy training separates",
            ok,
            f"AUROC untrained {untrained:.4f} -> trained {trained_auroc:.4f}, {elapsed:.0f}s",
        )

    def test_gamma_plateau(self, gamma_sweep):
        values = [gamma_sweep[g] for g in (50.0, 100.0, 500.0, 10000.0)]
        spread = max(values) - min(values)
        ok = spread <= 0.03
        report(
            "margin hyperparameter plateau",
            ok,
            "AUROC " + ", ".join(f"{v:.4f}" for v in values) + f", spread {spread:.4f}",
        )

    def test_beta_trend(self, corpora, initial_model):
        deltas = []
        for beta in (0.05, 0.5, 0.95):
            _, trace = train(initial_model, corpora["train"], DPOConfig(beta=beta))
            deltas.append(trace.records[-1].delta_d)
        inversions = sum(
            1 for a, b in zip(deltas, deltas[1:]) if b > a + 0.05 * abs(a)
        )
        ok = inversions <= 1
        report(
            "KL-strength margin trend",
            ok,
            "delta_d " + ", ".join(f"{d:.3f}" for d in deltas) + f", inversions {inversions}",
        )


class TestMetricOracles:
    def test_auroc_dual_implementation(self):
        rng = np.random.default_rng(11)
        exact = True
        for _ in range(500):
            n = int(rng.integers(2, 501))
            scores = np.round(rng.normal(size=n), 2)
            labels = rng.random(n) < rng.uniform(0.2, 0.8)
            if labels.all() or not labels.any():
                continue
            s = ScoredLabelSet(scores, labels)
            if auroc(s) != auroc_sweep(s):
                exact = False
                break
        report("AUROC pair-count vs sweep equality", exact)

    def test_improvement_paper_value(self):
        got = improvement(0.9525, 0.8597) * 100
        ok = abs(got - 66.14) <= 0.01
        report("headroom improvement arithmetic", ok, f"{got:.4f}% vs 66.14%")


class TestReferenceClustering:
    def test_full_scan_oracle(self):
        rng = np.random.default_rng(13)
        exact = True
        for _ in range(1000):
            nm = int(rng.integers(1, 101))
            nh = int(rng.integers(1, 101))
            machine = rng.normal(1.0, 1.0, nm)
            human = rng.normal(-1.0, 1.0, nh)
            k = int(rng.integers(1, nm + nh + 1))
            ref = build_reference(machine, human, k)
            d = float(rng.normal(0.0, 2.0))
            if estimate_pm(ref, d) != full_scan_pm(machine, human, k, d):
                exact = False
                break
        hand = (
            estimate_pm(build_reference([2.0, 3.0], [0.0, 1.0], 2), 2.5) == 1.0
            and estimate_pm(build_reference([2.0, 3.0], [0.0, 1.0], 2), 0.5) == 0.0
            and estimate_pm(build_reference([1.0], [-1.0], 2), 0.0) == 0.5
        )
        report("reference clustering oracle + hand examples", exact and hand)


class TestCleaningRules:
    def test_boundary_suite(self):
        def words(n):
            return " ".join(f"w{i}" for i in range(n))

        pre = [
            (95, False), (100, True), (200, True), (201, False),
        ]
        post = [
            (89, False), (90, True), (220, True), (221, False),
        ]
        ok = all(pre_clean(words(n)).accepted is want for n, want in pre) and all(
            post_clean(words(n)).accepted is want for n, want in post
        )
        report("cleaning boundary suite", ok)


class TestProtocol:
    def test_round_trip_and_golden_bytes(self):
        rng = np.random.default_rng(17)
        ok = True
        for _ in range(200):
            s = int(rng.integers(1, 20))
            v = int(rng.integers(2, 50))
            m = random_dense(rng, s, v)
            seq = TokenSequence(tuple(rng.integers(0, v, s)))
            blob = encode(m, seq)
            back_m, back_seq = decode(blob)
            if back_seq != seq or validate(back_m) != []:
                ok = False
                break
            assert_matrices_equal_at_f32(m, back_m)
            if encode(back_m, back_seq) != blob:
                ok = False
                break
        golden = (
            encode(*golden_dense_matrix()) == GOLDEN_DENSE
            and encode(*golden_topk_matrix()) == GOLDEN_TOPK
        )
        report("protocol round-trip and golden bytes", ok and golden)
