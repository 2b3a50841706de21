"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import filecmp
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import kstest

from ordquant._parallel import default_threads
from ordquant.classifier import HyperGrid
from ordquant.labelling import build_labelled_dataset, hill_number
from ordquant.metrics import nmd
from ordquant.protocol import ProtocolConfig, run_protocol
from ordquant.quantifiers import QuantifierModel, classify_and_count, emq, simplex_least_squares
from ordquant.sampling import kraemer_samples, make_rng
from ordquant.selection import ProtocolLoss, gini, greedy_select, importance_report, jaccard, rbo
from ordquant.synth import generate, generate_comments, label_cohorts, make_spec
from ordquant.data import FeatureSchema

from test_classifier import _relative_gradient_error


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nacceptance criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return emit


def test_criterion_1_metric(report):
    t0 = time.perf_counter()
    exact = (
        nmd([0.2] * 5, [0.2] * 5) == 0.0
        and nmd([1, 0, 0, 0, 0], [0, 0, 0, 0, 1]) == 1.0
        and nmd([0.5, 0.5, 0, 0, 0], [0.5, 0, 0.5, 0, 0]) == 0.125
    )
    rng = np.random.default_rng(0)
    P, Q, R = (kraemer_samples(5, 1000, rng) for _ in range(3))
    worst_sym = worst_tri = 0.0
    for p, q, r in zip(P, Q, R):
        worst_sym = max(worst_sym, abs(nmd(p, q) - nmd(q, p)))
        worst_tri = max(worst_tri, nmd(p, r) - nmd(p, q) - nmd(q, r))
    elapsed = time.perf_counter() - t0
    ok = exact and worst_sym <= 1e-12 and worst_tri <= 1e-12 and elapsed < 1
    assert report(1, ok, f"hand values exact={exact}, max asymmetry {worst_sym:.1e}, "
                         f"max triangle excess {worst_tri:.1e}, {elapsed:.2f}s")


def test_criterion_2_kraemer(report):
    t0 = time.perf_counter()
    S = kraemer_samples(5, 100_000, make_rng(0))
    pvalues = [kstest(S[:, i], "beta", args=(1, 4)).pvalue for i in range(5)]
    means = S.mean(axis=0)
    elapsed = time.perf_counter() - t0
    ok = min(pvalues) > 0.01 and np.all(np.abs(means - 0.2) <= 0.005) and elapsed < 10
    assert report(2, ok, f"min KS p={min(pvalues):.3f}, max |mean-0.2|={np.max(np.abs(means - 0.2)):.4f}, "
                         f"{elapsed:.2f}s")


PRIORS = np.round(np.arange(0.1, 1.0, 0.1), 1)


def _gaussian_oracle(reps=20, size=2000, mu=1.0, seed=0):
    """Mean absolute error on the positive class per test prior.

    Classes are N(-mu, 1) and N(mu, 1) with equal training priors, so the
    Bayes posterior of class 1 is 1 / (1 + exp(2 mu x)). Each sample holds
    exactly round(pi * size) class-1 items.
    """
    rng = np.random.default_rng(seed)
    prior = np.array([0.5, 0.5])
    mlpe = QuantifierModel("mlpe", prior)
    errors = {k: np.zeros(PRIORS.size) for k in ("emq", "cc", "mlpe")}
    for i, pi in enumerate(PRIORS):
        n1 = int(round(pi * size))
        for _ in range(reps):
            x = np.r_[rng.normal(-mu, 1, n1), rng.normal(mu, 1, size - n1)]
            p1 = 1 / (1 + np.exp(2 * mu * x))
            P = np.c_[p1, 1 - p1]
            truth = n1 / size
            errors["emq"][i] += abs(emq(P, prior, 10_000, 1e-10).prevalence[0] - truth)
            errors["cc"][i] += abs(classify_and_count(P)[0] - truth)
            errors["mlpe"][i] += abs(mlpe.aggregate(P)[0] - truth)
    return {k: v / reps for k, v in errors.items()}


@pytest.fixture(scope="module")
def oracle():
    t0 = time.perf_counter()
    return _gaussian_oracle(), time.perf_counter() - t0


def test_criterion_3_emq_recovery(report, oracle):
    err, elapsed = oracle
    shifted = PRIORS != 0.5
    accurate = bool(np.all(err["emq"] < 0.03))
    ordered_shifted = bool(np.all(err["emq"][shifted] < err["cc"][shifted])
                           and np.all(err["emq"][shifted] < err["mlpe"][shifted]))
    ordered_all = bool(np.all(err["emq"] < err["cc"]) and np.all(err["emq"] < err["mlpe"]))
    mid = int(np.flatnonzero(~shifted)[0])
    detail = (f"max EMQ MAE {err['emq'].max():.4f}; EMQ < CC, MLPE at all 8 shifted priors={ordered_shifted}; "
              f"at prior 0.5 EMQ {err['emq'][mid]:.4f} vs CC {err['cc'][mid]:.4f} vs MLPE "
              f"{err['mlpe'][mid]:.4f}, {elapsed:.1f}s")
    report(3, accurate and ordered_all and elapsed < 120, detail)
    # the clauses that are attainable are enforced here; the unshifted point
    # is tracked by the expected failure below
    assert accurate and ordered_shifted and elapsed < 120


@pytest.mark.xfail(strict=True, reason="at test prior 0.5 there is no shift: MLPE is exact and CC "
                                       "is as good as EMQ, so strict EMQ superiority cannot hold")
def test_criterion_3_unshifted_prior(oracle):
    err, _ = oracle
    mid = int(np.flatnonzero(PRIORS == 0.5)[0])
    assert err["emq"][mid] < err["cc"][mid] and err["emq"][mid] < err["mlpe"][mid]


def test_criterion_4_pacc(report):
    rng = np.random.default_rng(0)
    worst_identity = 0.0
    for _ in range(50):
        P = rng.dirichlet(np.ones(5), 40)
        q = QuantifierModel("pacc", np.full(5, 0.2), correction=np.eye(5))
        worst_identity = max(worst_identity, np.max(np.abs(q.aggregate(P) - P.mean(axis=0))))
    worst_binary = 0.0
    cases = 0
    while cases < 50:
        tpr, fpr = rng.uniform(0.55, 0.99), rng.uniform(0.01, 0.45)
        observed = rng.uniform(fpr, tpr)
        closed = (observed - fpr) / (tpr - fpr)
        if not 1e-3 < closed < 1 - 1e-3:
            continue
        A = np.array([[tpr, fpr], [1 - tpr, 1 - fpr]])
        p = simplex_least_squares(A, np.array([observed, 1 - observed]))
        worst_binary = max(worst_binary, abs(p[0] - closed))
        cases += 1
    ok = worst_identity < 1e-10 and worst_binary < 1e-8
    assert report(4, ok, f"identity max diff {worst_identity:.1e}, binary closed-form max diff "
                         f"{worst_binary:.1e} over {cases} cases")


def test_criterion_5_gradient(report):
    shapes = [(20, 3, 2), (50, 6, 5), (8, 1, 3)]
    worst = max(_relative_gradient_error(s, seed) for s in shapes for seed in range(20))
    assert report(5, worst < 1e-4, f"max relative error {worst:.1e} over 60 points")


@pytest.mark.slow
def test_criterion_6_learning_curve(report):
    t0 = time.perf_counter()
    data = generate(make_spec([("S", 5, 0.4)], [("N1", 20), ("N2", 20), ("N3", 20)], per_class=1200, seed=0))
    cfg = ProtocolConfig.scaled(500, 8, repetitions=2, app_samples=200, app_sample_size=250, seed=0)
    by_size = run_protocol(data, None, "emq", cfg).mean_by_size()
    drop = (by_size[500] - by_size[4000]) / by_size[500]
    elapsed = time.perf_counter() - t0
    curve = ", ".join(f"{v:.4f}" for v in by_size.values())
    assert report(6, drop >= 0.2 and elapsed < 900,
                  f"T1->T8 mean NMD drop {100 * drop:.1f}%, curve [{curve}], {elapsed:.0f}s")


SIGNAL = {"S1", "S2"}


def _selection_run(seed):
    data = generate(make_spec([("S1", 3, 0.35), ("S2", 3, 0.35)],
                              [(f"N{i}", 15) for i in range(1, 5)], per_class=500, seed=seed))
    cfg = ProtocolConfig.scaled(250, 4, repetitions=1, app_samples=100, app_sample_size=250, seed=seed,
                                grid=HyperGrid((0.1, 10.0), ("uniform",)))
    loss = ProtocolLoss(data, "emq", cfg)
    final, trace = greedy_select(data, "emq", cfg, initial=data.schema.blocks, loss=loss)
    return data, cfg, loss, final, trace


@pytest.fixture(scope="module")
def selection_runs():
    t0 = time.perf_counter()
    runs = [_selection_run(seed) for seed in range(3)]
    return runs, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_7_greedy(report, selection_runs):
    runs, elapsed = selection_runs
    ok = elapsed < 1800
    parts = []
    for seed, (_, _, _, final, trace) in enumerate(runs):
        try:
            trace.check()
            invariants = True
        except AssertionError:
            invariants = False
        good = (SIGNAL <= final and len(final - SIGNAL) <= 1
                and trace.final_loss <= trace.initial_loss and invariants)
        ok &= good
        parts.append(f"seed {seed}: {'+'.join(sorted(final))}, "
                     f"{trace.initial_loss:.4f}->{trace.final_loss:.4f}")
    assert report(7, ok, "; ".join(parts) + f", {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_8_importance(report, selection_runs):
    runs, _ = selection_runs
    tops = []
    for data, cfg, loss, final, _ in runs:
        rep = importance_report(data, final, "emq", cfg, loss)
        tops.append(set(rep.ranking[:2]))
    top_ok = all(t == SIGNAL for t in tops)
    exact = (gini([1, 0, 0, 0, 0]) == pytest.approx(0.8, abs=1e-15)
             and jaccard({"A", "B"}, {"B", "C"}) == pytest.approx(1 / 3, abs=1e-15)
             and rbo(list("abcde"), list("abcde")) == 1.0
             and rbo(list("abc"), list("xyz")) == 0.0)
    assert report(8, top_ok and exact, f"signal blocks ranked top two on all seeds={top_ok}, "
                                       f"gini/jaccard/rbo exact={exact}")


def test_criterion_9_labelling(report):
    cohorts = label_cohorts(users=3)
    comments = generate_comments([c for c, _ in cohorts], seed=0)
    ids = [f"{c.name}-{u:04d}" for c, _ in cohorts for u in range(c.users)]
    schema = FeatureSchema.from_blocks([("F", 1)])
    recovered = total = 0
    for task in ("activity", "toxicity", "diversity"):
        ds = build_labelled_dataset(comments, np.zeros((len(ids), 1)), ids, schema, task, (0.2, 0.55))
        got = dict(zip(ds.ids, ds.labels))
        for c, intended in cohorts:
            for u in range(c.users):
                total += 1
                recovered += got.get(f"{c.name}-{u:04d}") == intended[task]
    hill = [hill_number([9]), hill_number([4, 4]), hill_number([2, 2, 2, 2])]
    hill_ok = all(abs(h - e) <= 1e-12 for h, e in zip(hill, (1, 2, 4)))
    ok = recovered == total and hill_ok
    assert report(9, ok, f"{recovered}/{total} labels recovered, hill values {hill}")


DET_SYNTH = "[synth]\nsignal = S1:3:0.5,S2:3:0.5\nnoise = N1:6,N2:6\nper_class = 200\n"
DET_RUN = """[run]
quantifier = emq
seed = 11
[paths]
features = data/features.csv
labels = data/labels.csv
schema = data/schema.ini
[protocol]
repetitions = 2
batch_size = 200
batch_count = 2
app_samples = 30
app_sample_size = 100
val_samples = 10
val_sample_size = 80
grid_regs = 0.1, 10
grid_weightings = uniform
"""


def _cli(*args, cwd):
    env = {**os.environ, "PYTHONHASHSEED": "random"}
    subprocess.run([sys.executable, "-m", "ordquant.cli", *args], cwd=cwd, env=env, check=True,
                   capture_output=True)


def _same_tree(a, b):
    names = sorted(os.listdir(a))
    if names != sorted(os.listdir(b)):
        return False
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errors


def test_criterion_10_determinism(report, tmp_path):
    (tmp_path / "synth.ini").write_text(DET_SYNTH)
    (tmp_path / "run.ini").write_text(DET_RUN)
    _cli("synth", "--config", "synth.ini", "--out", "data", "--seed", "5", cwd=tmp_path)
    max_threads = max(default_threads(), 4)
    results = {}
    for cmd in ("stress", "select"):
        outs = []
        for label, threads in (("a", 1), ("b", 1), ("c", max_threads)):
            out = f"{cmd}_{label}"
            _cli(cmd, "--config", "run.ini", "--out", out, "--threads", str(threads), cwd=tmp_path)
            outs.append(tmp_path / out)
        results[cmd] = (_same_tree(outs[0], outs[1]), _same_tree(outs[0], outs[2]))
    ok = all(all(v) for v in results.values())
    detail = ", ".join(f"{cmd}: repeat identical={r[0]}, threads 1 vs {max_threads} identical={r[1]}"
                       for cmd, r in results.items())
    assert report(10, ok, detail)
