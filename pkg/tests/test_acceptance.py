"""Acceptance criteria, one test (or real/proxy pair) per criterion.

Criteria 4-9 are stated on the Mafengwo dataset. When no local copy is found
(see ``conftest.mafengwo_location``) those tests are skipped and reported as
BLOCKED; a synthetic dataset of the same shape then exercises the same
pipeline and its numbers are reported as PROXY lines, which are measurements
and not substitutes for the criteria.
"""

import dataclasses
import logging
import time

import numpy as np
import pytest

from aligngroup.cli import main as cli_main
from aligngroup.data import build_hypergraph, group_overlap, load_dataset_dir, save_dataset
from aligngroup.evaluation import evaluate, evaluate_scorer, popularity_baseline, rank_metrics
from aligngroup.gradcheck import check_gradients
from aligngroup.model import AlignGroupModel
from aligngroup.params import TrainConfig, init_parameters
from aligngroup.propagation import build_operators, propagate, propagate_reference
from aligngroup.scoring import sample_training_pairs
from aligngroup.synthetic import mafengwo_like, random_tiny, topic_dataset
from aligngroup.train import run_experiment
from aligngroup.train import test_candidates as make_test_candidates

from conftest import mafengwo_location, record

MAFENGWO = mafengwo_location()
needs_mafengwo = pytest.mark.skipif(MAFENGWO is None, reason="Mafengwo dataset not found")
DEFAULTS = TrainConfig()  # d=32, L=3, tau=0.2, lambda=0.1, lr=1e-3, centroid-small, 100 negatives, <=200 epochs


def blocked(criterion):
    if MAFENGWO is None:
        record(criterion, "BLOCKED", "Mafengwo not available locally (set ALIGNGROUP_MAFENGWO_DIR)")


@pytest.fixture(scope="module")
def mafengwo():
    root, layout = MAFENGWO
    return load_dataset_dir(root, layout)


@pytest.fixture(scope="module")
def proxy_full():
    return mafengwo_like(seed=0)


@pytest.fixture(scope="module")
def proxy_small():
    return topic_dataset(2000, 600, 400, num_topics=12, user_interactions=15000, group_interactions=1440, seed=1)


_RUNS = {}


def run_cached(tag, ds, config):
    key = (tag, tuple(sorted(config.to_dict().items())))
    if key not in _RUNS:
        t0 = time.perf_counter()
        result, report = run_experiment(ds, config)
        _RUNS[key] = (result, report, time.perf_counter() - t0)
    return _RUNS[key]


@pytest.fixture(autouse=True)
def quiet_logs():
    logging.disable(logging.INFO)
    yield
    logging.disable(logging.NOTSET)


# --------------------------------------------------------------------------- #
# 1-3: correctness properties
# --------------------------------------------------------------------------- #


def test_criterion_01_gradient_check():
    t0 = time.perf_counter()
    worst, kinks, checked = 0.0, 0, 0
    for seed in range(20):
        for infonce in ("literal", "cross-pair"):
            for bpr in ("literal", "log-sigmoid"):
                ds = random_tiny(seed)  # 5 users, 4 items, 3 groups
                cfg = TrainConfig(d=8, layers=2, seed=seed, infonce_mode=infonce, bpr_mode=bpr, lambda_align=0.5,
                                  strategy=("centroid", "barycenter")[seed % 2],
                                  scope=("small", "big")[(seed // 2) % 2])
                model = AlignGroupModel(ds, cfg)
                params = init_parameters(cfg, ds.num_users, ds.num_items, ds.num_groups)
                batch = sample_training_pairs(ds, 1, np.random.default_rng(seed))
                res = check_gradients(model, params, batch, eps=1e-4)
                worst = max(worst, res.worst)
                kinks += res.kink_coordinates
                checked += res.checked_coordinates
    seconds = time.perf_counter() - t0
    ok = worst < 1e-3 and seconds < 60
    record(1, "PASS" if ok else "FAIL",
           f"max rel error {worst:.2e} over {checked} coordinates (80 runs, {kinks} at LeakyReLU/extreme kinks "
           f"re-measured with a smaller step), {seconds:.1f}s")
    assert ok


def test_criterion_02_forward_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        ds = random_tiny(seed)
        p = init_parameters(TrainConfig(d=8, seed=seed), ds.num_users, ds.num_items, ds.num_groups)
        hg = build_hypergraph(ds)
        ops = build_operators(hg)
        for interrl in (True, False):
            fast = propagate(p, ops, 2, interrl)
            slow = propagate_reference(p, hg, group_overlap(hg), 2, interrl)
            for a, b in ((fast.users, slow.users), (fast.items, slow.items), (fast.groups, slow.groups)):
                worst = max(worst, float(np.max(np.abs(a - b))))
    seconds = time.perf_counter() - t0
    ok = worst < 1e-6 and seconds < 60
    record(2, "PASS" if ok else "FAIL", f"max abs difference {worst:.1e} on 100 instances x 2 modes, {seconds:.1f}s")
    assert ok


def _full_sort_rank(row):
    order = sorted(range(len(row)), key=lambda j: -row[j])  # Python's sort is stable
    return order.index(0) + 1


def test_criterion_03_metric_oracle():
    rng = np.random.default_rng(123)
    mismatches, ties = 0, 0
    for t in range(1000):
        scores = rng.integers(0, 3 if t % 3 == 0 else 10_000, size=(int(rng.integers(1, 15)), 101)).astype(float)
        r = [_full_sort_rank(list(row)) for row in scores]
        ties += int(np.any(scores[:, 1:] == scores[:, :1]))
        expect = {}
        for k in (5, 10):
            expect[f"HR@{k}"] = sum(x <= k for x in r) / len(r)
            expect[f"NDCG@{k}"] = sum(1 / np.log2(x + 1) for x in r if x <= k) / len(r)
        got = rank_metrics(scores, 0, (5, 10))
        mismatches += any(abs(got[m] - expect[m]) > 1e-15 for m in expect)
    record(3, "PASS" if mismatches == 0 else "FAIL", f"{1000 - mismatches}/1000 tables identical ({ties} with ties)")
    assert mismatches == 0


# --------------------------------------------------------------------------- #
# 4: null model
# --------------------------------------------------------------------------- #


def null_model_hr10(ds):
    cfg = DEFAULTS
    params = init_parameters(cfg, ds.num_users, ds.num_items, ds.num_groups)
    model = AlignGroupModel(ds, cfg)
    rep = evaluate(model.embed(params), params, ds, make_test_candidates(ds, cfg, ("group",)))
    return rep.metrics["group"]["HR@10"]


@needs_mafengwo
def test_criterion_04_null_model(mafengwo):
    hr = null_model_hr10(mafengwo)
    ok = 0.05 <= hr <= 0.15
    record(4, "PASS" if ok else "FAIL", f"Mafengwo untrained group HR@10 = {hr:.4f} (target [0.05, 0.15])")
    assert ok


def test_criterion_04_null_model_proxy(proxy_full):
    blocked(4)
    hr = null_model_hr10(proxy_full)
    ok = 0.05 <= hr <= 0.15
    record(4, "PROXY", f"synthetic Mafengwo-shaped data: untrained group HR@10 = {hr:.4f} "
                       f"({'inside' if ok else 'outside'} [0.05, 0.15])")
    # the null model does not depend on the data, so the range applies here too
    assert ok


# --------------------------------------------------------------------------- #
# 5: popularity baseline
# --------------------------------------------------------------------------- #


def pop_group_metrics(ds):
    cands = make_test_candidates(ds, DEFAULTS, ("group",))
    return evaluate_scorer(popularity_baseline(ds), cands).metrics["group"]


@needs_mafengwo
def test_criterion_05_popularity(mafengwo):
    m = pop_group_metrics(mafengwo)
    ok = abs(m["HR@5"] - 0.3115) <= 0.05 and abs(m["HR@10"] - 0.4251) <= 0.05
    protocol = "negatives file" if mafengwo.eval_negatives_group else "sampled negatives"
    record(5, "PASS" if ok else "FAIL",
           f"Pop group H@5 {m['HR@5']:.4f} (0.3115+-0.05), H@10 {m['HR@10']:.4f} (0.4251+-0.05), {protocol}")
    assert ok


def test_criterion_05_blocked_note():
    blocked(5)
    if MAFENGWO is None:
        record(5, "INFO", "no proxy: the published Pop numbers only make sense on the real interaction counts")


# --------------------------------------------------------------------------- #
# 6: end-to-end training
# --------------------------------------------------------------------------- #


def end_to_end(tag, ds):
    pop = pop_group_metrics(ds)["HR@10"]
    rows = {}
    for mode in ("literal", "log-sigmoid"):
        _, report, seconds = run_cached(tag, ds, dataclasses.replace(DEFAULTS, bpr_mode=mode))
        rows[mode] = (report.metrics["group"]["HR@10"], seconds)
    best = max(rows, key=lambda m: rows[m][0])
    hr, _ = rows[best]
    total = sum(s for _, s in rows.values())
    detail = (f"group H@10 literal {rows['literal'][0]:.4f}, log-sigmoid {rows['log-sigmoid'][0]:.4f} "
              f"(best {best}); Pop {pop:.4f}; needs >= 0.80 and >= Pop+0.30 = {pop + 0.30:.4f}; "
              f"both runs {total / 60:.1f} min")
    return hr, pop, rows, detail


@needs_mafengwo
def test_criterion_06_end_to_end(mafengwo):
    hr, pop, rows, detail = end_to_end("real", mafengwo)
    ok = hr >= 0.80 and hr - pop >= 0.30 and max(s for _, s in rows.values()) < 30 * 60
    record(6, "PASS" if ok else "FAIL", detail)
    assert ok


def test_criterion_06_end_to_end_proxy(proxy_full):
    blocked(6)
    hr, pop, rows, detail = end_to_end("proxy", proxy_full)
    met = hr >= 0.80 and hr - pop >= 0.30
    record(6, "PROXY", f"synthetic: {detail}; thresholds {'met' if met else 'not met'} on this data")
    # on the proxy only the pipeline is checked: training must beat popularity within the time budget
    assert hr > pop
    assert max(s for _, s in rows.values()) < 30 * 60


# --------------------------------------------------------------------------- #
# 7-9: ablation directions
# --------------------------------------------------------------------------- #


def interrl_direction(tag, ds):
    def ndcg5(seed, interrl):
        cfg = dataclasses.replace(DEFAULTS, seed=seed, interrl_enabled=interrl)
        return run_cached(tag, ds, cfg)[1].metrics["group"]["NDCG@5"]

    full, ablated = ndcg5(0, True), ndcg5(0, False)
    if ablated <= full:
        return True, f"seed 0: w/o InterRL NDCG@5 {ablated:.4f} <= full {full:.4f}"
    fulls = [ndcg5(s, True) for s in range(3)]
    abls = [ndcg5(s, False) for s in range(3)]
    ok = np.mean(abls) <= np.mean(fulls)
    return ok, (f"seed 0 violated ({ablated:.4f} > {full:.4f}); 3-seed mean w/o InterRL {np.mean(abls):.4f} "
                f"vs full {np.mean(fulls):.4f}")


def alignment_direction(tag, ds):
    gaps = {}
    for lam in (0.1, 0.0):
        gaps[lam] = [run_cached(tag, ds, dataclasses.replace(DEFAULTS, seed=s, lambda_align=lam))[1].consensus_gap
                     for s in range(3)]
    ok = np.mean(gaps[0.1]) < np.mean(gaps[0.0])
    return ok, f"3-seed mean consensus gap lambda=0.1 {np.mean(gaps[0.1]):.4f} vs lambda=0 {np.mean(gaps[0.0]):.4f}"


def strategy_shape(tag, ds):
    h5 = {}
    for strategy in ("centroid", "barycenter"):
        for scope in ("small", "big"):
            cfg = dataclasses.replace(DEFAULTS, strategy=strategy, scope=scope)
            h5[f"{strategy}-{scope}"] = run_cached(tag, ds, cfg)[1].metrics["group"]["HR@5"]
    ok = h5["centroid-small"] >= max(h5.values())
    return ok, "group H@5 " + ", ".join(f"{k} {v:.4f}" for k, v in h5.items())


@needs_mafengwo
def test_criterion_07_interrl(mafengwo):
    ok, detail = interrl_direction("real", mafengwo)
    record(7, "PASS" if ok else "FAIL", detail)
    assert ok


@needs_mafengwo
def test_criterion_08_alignment_gap(mafengwo):
    ok, detail = alignment_direction("real", mafengwo)
    record(8, "PASS" if ok else "FAIL", detail)
    assert ok


@needs_mafengwo
def test_criterion_09_strategy(mafengwo):
    ok, detail = strategy_shape("real", mafengwo)
    # soft criterion: a miss is reported for investigation, not treated as a build failure
    record(9, "PASS" if ok else "SOFT-FAIL", detail)


@pytest.mark.parametrize("criterion, check", [(7, interrl_direction), (8, alignment_direction), (9, strategy_shape)])
def test_ablation_proxies(criterion, check, proxy_small):
    blocked(criterion)
    ok, detail = check("small", proxy_small)
    record(criterion, "PROXY", f"synthetic 2000/600/400: {detail} ({'holds' if ok else 'does not hold'} here)")
    # the directions are claims about the real data; here only the runs themselves are checked
    for result, report, _ in _RUNS.values():
        assert np.isfinite(report.consensus_gap)
        assert all(np.isfinite(v) for m in report.metrics.values() for v in m.values())


# --------------------------------------------------------------------------- #
# 10: determinism
# --------------------------------------------------------------------------- #


def test_criterion_10_determinism(tmp_path):
    ds = topic_dataset(600, 300, 200, user_interactions=4800, group_interactions=800, num_topics=10, seed=0)
    save_dataset(ds, tmp_path / "data")
    for name in ("a", "b"):
        code = cli_main(["train", "--dataset-dir", str(tmp_path / "data"), "--out", str(tmp_path / name),
                         "--set", "epochs=15"])
        assert code == 0
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in ("trace.tsv", "report.kv")}
    ok = all(same.values())
    record(10, "PASS" if ok else "FAIL", "two identical train invocations: " +
           ", ".join(f"{f} {'byte-identical' if v else 'DIFFERENT'}" for f, v in same.items()))
    assert ok
