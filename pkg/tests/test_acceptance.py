"""Acceptance suite: one test per shipping criterion, each printing a
PASS/FAIL line (run with `pytest tests/test_acceptance.py -s` to see them).

The trajectory criteria are directional reproductions with the rule agent;
their catalogs, configs, and seeds are frozen from a calibration sweep.
Iteration numbering in the trajectory checks is display-based (figures
plot from iteration 1 = the cold-start iteration), i.e. storage index 0.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from bubblesim.agents import FeedbackType
from bubblesim.catalog import generate_fixture
from bubblesim.metrics import (
    bubble_proportion,
    bubble_status,
    demographic_ecdf,
    entropy,
)
from bubblesim.recommender import (
    FMModel,
    MFModel,
    TrainSample,
    predict_fm,
    predict_mf,
    train,
    weighted_bce,
)
from bubblesim.simulation import SimulationConfig, audit_run_log, persist_run, run

from gradcheck import fd_check_fm, fd_check_mf
from oracles import ecdf_naive, weighted_bce_naive

# frozen calibration constants for the directional criteria
TRAJECTORY_SEEDS = (1, 2, 3, 4, 5)
DENSE_CATALOG_ARGS = dict(seed=7, n_items=600, shape=(10, 2.5, 3.0))
FINAL_ITERATION = 19  # storage index of display iteration 20


def report(criterion: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}"
    if detail:
        line += f" -- {detail}"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def dense_catalog():
    return generate_fixture(**DENSE_CATALOG_ARGS)


@pytest.fixture(scope="module")
def run_cache(paper_shaped_catalog, dense_catalog):
    """Executes and audits every simulation the trajectory criteria need."""
    cache = {}

    def execute(catalog_name, **config_fields):
        key = (catalog_name, tuple(sorted(config_fields.items())))
        if key not in cache:
            catalog = paper_shaped_catalog if catalog_name == "paper" else dense_catalog
            log = run(SimulationConfig(**config_fields), catalog)
            assert audit_run_log(log) == [], f"audit failed for {key}"
            cache[key] = log
        return cache[key]

    return execute


def mean_level1_entropy(log, iteration):
    for row in log.summary:
        if row.level == 1 and row.iteration == iteration:
            return row.mean_entropy
    raise AssertionError(f"no summary row for iteration {iteration}")


def mapped_fm(mf: MFModel, extra_features: int = 2) -> FMModel:
    """FM over the MF's users/items plus a couple of side features."""
    n_users, n_items = len(mf.user_ids), len(mf.item_ids)
    rng = np.random.default_rng(123)
    vocab = (
        [("user", uid) for uid in mf.user_ids]
        + [("item", iid) for iid in mf.item_ids]
        + [("side", str(j)) for j in range(extra_features)]
    )
    w = np.concatenate([mf.user_bias, mf.item_bias, rng.normal(0, 0.1, extra_features)])
    factors = np.vstack([mf.user_vecs, mf.item_vecs,
                         rng.normal(0, 0.1, (extra_features, mf.dim))])
    return FMModel(
        vocab, mf.dim, w0=mf.global_bias, w=w, factors=factors,
        user_features={uid: (u,) for u, uid in enumerate(mf.user_ids)},
        item_features=[(n_users + i,) for i in range(n_items)],
        item_ids=mf.item_ids,
    )


class TestGradientCorrectness:
    def test_mf_and_fm_gradients(self):
        started = time.monotonic()
        mf = MFModel.init(["u0", "u1", "u2"], ["v0", "v1", "v2"], dim=4, seed=11)
        samples = [
            TrainSample(0, 0, 1.0, 1.0, FeedbackType.JUST_WATCH),
            TrainSample(0, 1, 0.0, 2.0, FeedbackType.DISLIKE),
            TrainSample(1, 1, 1.0, 3.0, FeedbackType.WATCH_AND_COMMENT),
            TrainSample(1, 2, 0.0, 1.0, FeedbackType.SKIP),
            TrainSample(2, 0, 1.0, 2.0, FeedbackType.WATCH_AND_LIKE),
            TrainSample(2, 2, 1.0, 4.0, FeedbackType.WATCH_AND_COLLECT),
        ]
        mf_error = fd_check_mf(mf, samples)
        fm = mapped_fm(MFModel.init(["u0", "u1", "u2"], ["v0", "v1", "v2"], dim=4, seed=13))
        fm_samples = [
            replace(s, features=(s.user, 3 + s.item) + ((6,) if s.user == 0 else (7,)))
            for s in samples
        ]
        fm_error = fd_check_fm(fm, fm_samples)
        elapsed = time.monotonic() - started
        report(
            "gradient correctness (MF & FM vs central differences, h=1e-5)",
            mf_error <= 1e-4 and fm_error <= 1e-4 and elapsed < 1.0,
            f"mf_err={mf_error:.2e} fm_err={fm_error:.2e} elapsed={elapsed:.2f}s",
        )


class TestFMReduction:
    def test_fm_equals_mf_on_100_random_models(self):
        started = time.monotonic()
        worst = 0.0
        for seed in range(100):
            mf = MFModel.init(["u0", "u1", "u2"], ["v0", "v1", "v2"], dim=4, seed=seed)
            fm = mapped_fm(mf, extra_features=0)
            for u in range(3):
                for i in range(3):
                    worst = max(worst, abs(predict_fm(fm, (u, 3 + i)) - predict_mf(mf, u, i)))
        elapsed = time.monotonic() - started
        report(
            "FM reduces to MF on user+item one-hots (100 random models)",
            worst <= 1e-12 and elapsed < 1.0,
            f"max_abs_diff={worst:.2e} elapsed={elapsed:.2f}s",
        )


class TestWeightedBCEReduction:
    def test_unit_weights_and_hand_example(self):
        rng = np.random.default_rng(7)
        ys = rng.integers(0, 2, size=64).astype(float)
        y_hats = rng.uniform(0.02, 0.98, size=64)
        samples = [TrainSample(0, 0, y, 1.0, FeedbackType.JUST_WATCH) for y in ys]
        unit_diff = abs(
            weighted_bce(list(y_hats), samples)
            - weighted_bce_naive(ys, y_hats, np.ones(64))
        )
        oracle_value = weighted_bce_naive([1.0, 0.0], [0.8, 0.3], [2.0, 1.0])
        batch = [
            TrainSample(0, 0, 1.0, 2.0, FeedbackType.WATCH_AND_LIKE),
            TrainSample(0, 1, 0.0, 1.0, FeedbackType.DISLIKE),
        ]
        hand_diff = abs(weighted_bce([0.8, 0.3], batch) - oracle_value)
        report(
            "weighted BCE: unit-weight reduction and hand-computed batch",
            unit_diff <= 1e-12 and hand_diff <= 1e-5,
            f"unit_diff={unit_diff:.2e} batch={oracle_value:.7f} hand_diff={hand_diff:.2e}",
        )


class TestMetricOracles:
    def test_entropy_bubble_and_ecdf(self):
        uniform_err = abs(entropy({c: 3 for c in "abcd"}) - math.log(4))
        split_err = abs(entropy({"a": 3, "b": 1}) - 0.5623)
        rng = np.random.default_rng(99)
        proportion_ok = True
        for _ in range(1000):
            counts = {f"u{i}": int(rng.integers(0, 15))
                      for i in range(int(rng.integers(1, 50)))}
            if bubble_proportion(bubble_status(counts)) > 0.5:
                proportion_ok = False
                break
        ecdf_ok = True
        for _ in range(100):
            n = int(rng.integers(1, 40))
            values = {f"u{i}": float(rng.integers(0, 8)) for i in range(n)}
            groups = {u: str(rng.integers(0, 3)) for u in values}
            result = demographic_ecdf(values, groups)
            for group, points in result.items():
                member_values = [values[u] for u in values if groups[u] == group]
                expected = ecdf_naive(member_values)
                if len(points) != len(expected) or any(
                    p[0] != e[0] or abs(p[1] - e[1]) > 1e-12
                    for p, e in zip(points, expected)
                ):
                    ecdf_ok = False
        report(
            "metric oracles: entropy, bubble proportion bound, ECDF",
            uniform_err <= 1e-12 and split_err <= 1e-4 and proportion_ok and ecdf_ok,
            f"ln4_err={uniform_err:.2e} split_err={split_err:.2e}",
        )


class TestDeterminism:
    def test_default_config_byte_identical(self, paper_shaped_catalog, tmp_path):
        started = time.monotonic()
        config = SimulationConfig(seed=0)  # 20 users, 5 items/iter, 20 iterations, rule
        artifacts = []
        for name in ("a", "b"):
            log = run(config, paper_shaped_catalog)
            out = persist_run(log, tmp_path / name)
            artifacts.append(out)
        elapsed = time.monotonic() - started
        records_equal = (
            (artifacts[0] / "records.jsonl").read_bytes()
            == (artifacts[1] / "records.jsonl").read_bytes()
        )
        metrics_equal = (
            (artifacts[0] / "metrics.csv").read_bytes()
            == (artifacts[1] / "metrics.csv").read_bytes()
        )
        report(
            "determinism: two default-config runs byte-identical",
            records_equal and metrics_equal and elapsed < 30.0,
            f"elapsed={elapsed:.1f}s",
        )


class TestSyntheticRecovery:
    def test_two_cluster_auc(self):
        started = time.monotonic()
        rng = np.random.default_rng(21)
        n = 20
        pairs = [(u, i) for u in range(n) for i in range(n)]
        rng.shuffle(pairs)
        split = int(0.7 * len(pairs))
        samples = [
            TrainSample(u, i, float((u < 10) == (i < 10)), 1.0, FeedbackType.JUST_WATCH)
            for u, i in pairs[:split]
        ]
        model = MFModel.init([f"u{i}" for i in range(n)], [f"v{i}" for i in range(n)],
                             dim=16, seed=1)
        train(model, samples, epochs=50, lr=0.05, reg=1e-4, seed=2)
        pos, neg = [], []
        for u, i in pairs[split:]:
            (pos if (u < 10) == (i < 10) else neg).append(model.score(u, i))
        wins = sum(1 for p in pos for q in neg if p > q)
        ties = sum(1 for p in pos for q in neg if p == q)
        auc = (wins + 0.5 * ties) / (len(pos) * len(neg))
        elapsed = time.monotonic() - started
        report(
            "synthetic recovery: planted 2-cluster AUC >= 0.9 in 50 epochs",
            auc >= 0.9 and elapsed < 10.0,
            f"auc={auc:.3f} elapsed={elapsed:.1f}s",
        )


class TestBubbleEmergence:
    def test_entropy_drops_by_display_iteration_5(self, run_cache):
        started = time.monotonic()
        passes = 0
        details = []
        for seed in TRAJECTORY_SEEDS:
            log = run_cache("paper", seed=seed)
            early = mean_level1_entropy(log, 0)  # display iteration 1
            later = mean_level1_entropy(log, 4)  # display iteration 5
            passes += later < early
            details.append(f"s{seed}:{early:.3f}->{later:.3f}")
        elapsed = time.monotonic() - started
        report(
            "bubble emergence: level-1 entropy lower at iteration 5 than 1 (>=4/5 seeds)",
            passes >= 4 and elapsed < 180.0,
            f"{passes}/5 seeds, {' '.join(details)}, elapsed={elapsed:.1f}s",
        )


class TestInterventionDirection:
    def test_progressive_beats_reversed(self, run_cache):
        passes = 0
        details = []
        for seed in TRAJECTORY_SEEDS:
            prog = mean_level1_entropy(
                run_cache("dense", seed=seed, strategy="progressive"), FINAL_ITERATION
            )
            rev = mean_level1_entropy(
                run_cache("dense", seed=seed, strategy="reversed"), FINAL_ITERATION
            )
            passes += prog > rev
            details.append(f"s{seed}:{prog:.3f}vs{rev:.3f}")
        report(
            "intervention: progressive final entropy > reversed (>=4/5 seeds)",
            passes >= 4,
            f"{passes}/5 seeds, {' '.join(details)}",
        )

    def test_no_cold_start_keeps_entropy_up(self, run_cache):
        passes = 0
        details = []
        for seed in TRAJECTORY_SEEDS:
            h0 = mean_level1_entropy(run_cache("dense", seed=seed, cscmr=0), FINAL_ITERATION)
            h50 = mean_level1_entropy(run_cache("dense", seed=seed, cscmr=50), FINAL_ITERATION)
            passes += h0 >= h50
            details.append(f"s{seed}:{h0:.3f}vs{h50:.3f}")
        report(
            "intervention: cscmr=0 final entropy >= cscmr=50 (>=3/5 seeds)",
            passes >= 3,
            f"{passes}/5 seeds, {' '.join(details)}",
        )


class TestLogAudit:
    def test_no_repeats_and_slate_sizes(self, paper_shaped_catalog, run_cache, tmp_path):
        from bubblesim.simulation import load_records, load_slates

        log = run_cache("paper", seed=0)
        out = persist_run(log, tmp_path / "audited")
        records = load_records(out / "records.jsonl")
        slates = load_slates(out / "slates.jsonl")
        k = log.config.items_per_iteration
        seen = {}
        repeat_free = True
        for record in records:
            user_seen = seen.setdefault(record.user_id, set())
            if record.item_id in user_seen:
                repeat_free = False
            user_seen.add(record.item_id)
        slate_sizes_ok = all(len(s.items) == k for s in slates)
        per_pair = {}
        for record in records:
            key = (record.iteration, record.user_id)
            per_pair[key] = per_pair.get(key, 0) + 1
        counts_ok = set(per_pair.values()) == {k}
        report(
            "log audit: no-repeat and slate-size invariants over records.jsonl",
            repeat_free and slate_sizes_ok and counts_ok,
            f"{len(records)} records, {len(slates)} slates",
        )
