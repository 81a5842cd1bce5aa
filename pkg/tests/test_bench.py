import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import pair_count_auc, pattern_scores
from thalbench.bench import (AGREEMENT_CLASSES, RunConfig, adjusted_volumes,
                             atrophy_effect_map, classify_agreement, discrimination_auc,
                             load_manifest, rank_methods, run_benchmark, run_clinical,
                             select_best, summarize_ranks, ManifestError)
from thalbench.cohort import NUCLEUS_COLUMNS
from thalbench.phantom import CohortSpec, gen_benchmark_set, gen_cohort


# ---- agreement -----------------------------------------------------------------

@pytest.mark.parametrize("d,expected", [
    (0.0, "none"), (1e-12, "slight"), (0.1, "slight"), (0.19999, "slight"), (0.2, "fair"),
    (0.4, "moderate"), (0.6, "substantial"), (0.79999, "substantial"), (0.8, "almost_perfect"),
    (1.0, "almost_perfect")])
def test_agreement_bands(d, expected):
    assert classify_agreement(d) == expected


@pytest.mark.parametrize("d", [-0.01, 1.01, float("nan")])
def test_agreement_out_of_range(d):
    with pytest.raises(ValueError):
        classify_agreement(d)


@given(st.floats(0, 1), st.floats(0, 1))
def test_agreement_monotone(a, b):
    lo, hi = sorted((a, b))
    assert AGREEMENT_CLASSES.index(classify_agreement(lo)) <= \
        AGREEMENT_CLASSES.index(classify_agreement(hi))


# ---- ranking -------------------------------------------------------------------

def test_rank_one_significantly_worse():
    row = rank_methods(pattern_scores(20, [0, 0, -0.1, 0]), "ABCD")
    assert [row.ranks[m] for m in "ABCD"] == [1, 1, 4, 1]
    assert row.significantly_better("A", "C") and not row.significant("A", "B")


def test_rank_chain_and_lower_is_better():
    row = rank_methods(pattern_scores(20, [0.2, 0.1, 0.0]), "XYZ")
    assert row.ranks == {"X": 1, "Y": 2, "Z": 3}
    low = rank_methods(pattern_scores(20, [0.2, 0.1, 0.0]), "XYZ", better="lower")
    assert low.ranks == {"X": 3, "Y": 2, "Z": 1}


def test_rank_identical_methods_all_first():
    x = np.tile(np.linspace(0.5, 0.9, 8)[:, None], (1, 4))
    row = rank_methods(x, "ABCD")
    assert set(row.ranks.values()) == {1}


def test_rank_drops_incomplete_subjects_and_errors():
    x = pattern_scores(20, [0, -0.1])
    x[3, 1] = np.nan
    assert rank_methods(x, "AB").n_subjects == 19
    with pytest.raises(ValueError):
        rank_methods(x[:, :1], "A")
    with pytest.raises(ValueError):
        rank_methods(x[:1], "AB")
    with pytest.raises(ValueError):
        rank_methods(x, "AB", better="up")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(range(4)))
def test_rank_permutation_invariance_and_order(seed, perm):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.8, 0.05, (12, 4)) + rng.choice([0, 0.05, 0.1], 4)
    methods = ("A", "B", "C", "D")
    row = rank_methods(x, methods)
    perm = list(perm)
    row_p = rank_methods(x[:, perm], [methods[i] for i in perm])
    assert row.ranks == row_p.ranks
    for a in methods:
        assert 1 <= row.ranks[a] <= 4
        for b in methods:
            if row.significantly_better(a, b):
                assert row.ranks[a] < row.ranks[b]


def test_summarize_ranks():
    s = summarize_ranks([1, 2, 4, 1, 1, 1, 3, 2, 2, 2])
    assert s.mean == 1.9 and s.n == 10
    assert s.sd_population == pytest.approx(np.std([1, 2, 4, 1, 1, 1, 3, 2, 2, 2]), rel=1e-15)
    assert s.sd_sample == pytest.approx(np.std([1, 2, 4, 1, 1, 1, 3, 2, 2, 2], ddof=1), rel=1e-15)
    assert np.isnan(summarize_ranks([3]).sd_sample)
    with pytest.raises(ValueError):
        summarize_ranks([])


# ---- best-method selection -----------------------------------------------------

def _decide(offsets, mni):
    methods = "ABCD"[:len(offsets)]
    row = rank_methods(pattern_scores(20, offsets), methods)
    return select_best(row, dict(zip(methods, mni)))


def test_select_single_winner():
    d = _decide([0.1, 0, 0, 0], [0.9, 0.8, 0.8, 0.7])
    assert d.outcome == "single" and d.winners == ("A",)


def test_select_joint_rule_a():
    d = _decide([0, 0.001, -0.1, -0.1], [0.9, 0.85, 0.7, 0.7])
    assert d.outcome == "joint" and d.winners == ("A", "B")
    assert any("rule a" in line for line in d.trace)


def test_select_joint_rule_b():
    d = _decide([0, 0.1, -0.1, -0.2], [0.9, 0.85, 0.7, 0.7])
    assert d.outcome == "joint" and d.winners == ("A", "B")
    assert any("rule b" in line for line in d.trace)


def test_select_none_with_three_candidates():
    d = _decide([0, 0.001, 0.002, -0.1], [0.9, 0.85, 0.8, 0.7])
    assert d.outcome == "none" and d.winners == ()


def test_select_none_lone_leader():
    d = _decide([0.001, 0, 0, 0], [0.9, 0.85, 0.8, 0.7])
    assert d.outcome == "none"


def test_select_tied_leader_noted():
    d = _decide([0.1, 0, 0, 0], [0.9, 0.9, 0.8, 0.7])
    assert d.outcome == "single" and any("tied" in line for line in d.trace)


def test_select_method_mismatch():
    row = rank_methods(pattern_scores(20, [0, 0]), "AB")
    with pytest.raises(ValueError):
        select_best(row, {"A": 0.5})


# ---- clinical ------------------------------------------------------------------

def _planted(seed, n=100):
    return gen_cohort(CohortSpec(group_sizes={"HC": n, "AD": n}, noise_sd=0.03, seed=seed,
                                 atrophy={"AD": {"L_Pul": 0.9, "R_Pul": 0.9}}))


def test_effect_map_flags_planted_nucleus():
    rows = atrophy_effect_map(_planted(3), draws=100_000)
    shown = {r.nucleus for r in rows if r.shown}
    assert {"L_Pul", "R_Pul"} <= shown
    for r in rows:
        if r.nucleus.endswith("Pul"):
            assert r.d < 0 and r.d_raw < 0 and r.estimate < 0
        assert r.shown == (r.p_familywise < 0.05)


def test_effect_map_d_modes_and_errors():
    c = _planted(4, n=20)
    adj = atrophy_effect_map(c, draws=20_000)
    raw = atrophy_effect_map(c, d_mode="raw", draws=20_000)
    assert [r.d for r in adj] == [r.d_adjusted for r in adj]
    assert [r.d for r in raw] == [r.d_raw for r in raw]
    with pytest.raises(ValueError):
        atrophy_effect_map(c, d_mode="median")
    with pytest.raises(ValueError):
        atrophy_effect_map(c, control="LMCI")


def test_effect_map_workers_identical():
    c = gen_cohort(CohortSpec(group_sizes={"HC": 15, "EMCI": 15, "AD": 15}, seed=5))
    a = atrophy_effect_map(c, draws=50_000, workers=1)
    b = atrophy_effect_map(c, draws=50_000, workers=4)
    assert a == b


def test_adjusted_volumes_remove_control_slopes():
    c = gen_cohort(CohortSpec(group_sizes={"HC": 80, "AD": 40}, seed=6,
                              covariate_effects={"age": -0.01}))
    adj = adjusted_volumes(c, "HC")
    hc = c.group == "HC"
    x = np.column_stack([np.ones(hc.sum()), c.age[hc], c.etiv_mm3[hc]])
    beta, *_ = np.linalg.lstsq(x, adj[hc], rcond=None)
    assert np.max(np.abs(beta[1:])) < 1e-8
    assert np.allclose(adj[hc].mean(axis=0), c.volumes[hc].mean(axis=0))


def test_auc_separable_and_whole_thalamus_oracle():
    c = _planted(7, n=40)
    c.volumes[c.group == "AD"] *= 0.5
    assert discrimination_auc(c, "HC", "AD").auc == 1.0
    c = _planted(8, n=40)
    res = discrimination_auc(c, "HC", "AD", "whole_thalamus")
    adj = adjusted_volumes(c, "HC")
    mask = np.isin(c.group, ("HC", "AD"))
    labels = (c.group[mask] == "AD").astype(int)
    # one feature: the fitted model is monotone, so AUC is the rank AUC of the
    # sum, oriented toward the target group
    oracle = pair_count_auc(adj[mask].sum(axis=1), labels)
    assert res.auc == pytest.approx(float(max(oracle, 1 - oracle)), abs=1e-12)


def _null_auc(mode, n=200, seeds=range(10)):
    return float(np.mean([discrimination_auc(
        gen_cohort(CohortSpec(group_sizes={"HC": n, "AD": n}, seed=s)), "HC", "AD", mode).auc
        for s in seeds]))


def test_auc_null_whole_thalamus_near_half():
    assert abs(_null_auc("whole_thalamus") - 0.5) < 0.05


@pytest.mark.xfail(strict=True, reason="in-sample fit of 20 features is optimistic on null "
                                       "data (mean AUC about 0.61 at n=200/group)")
def test_auc_null_nuclei_near_half():
    assert abs(_null_auc("nuclei") - 0.5) < 0.05


def test_auc_null_nuclei_optimism_shrinks_with_n():
    small, large = _null_auc("nuclei", 100, range(4)), _null_auc("nuclei", 1600, range(4))
    assert 0.5 < large < small


def test_auc_errors():
    c = _planted(1, n=10)
    with pytest.raises(ValueError):
        discrimination_auc(c, "HC", "LMCI")
    with pytest.raises(ValueError):
        discrimination_auc(c, "HC", "AD", "voxels")


def test_run_clinical_tables():
    cohorts = {"m1": _planted(2, n=20), "m2": _planted(3, n=20)}
    rep = run_clinical(cohorts, RunConfig(mc_draws=20_000))
    assert len(rep.tables["effects"]) == 2 * 20
    assert {r["comparison"] for r in rep.tables["auc"]} == {"HC-AD"}
    labels, comps, values, hidden = rep.matrices["effect_d_m1"]
    assert len(labels) == 20 and comps == ["HC-AD"]
    pul = labels.index("L_Pul")
    assert values[pul, 0] < 0 and not hidden[pul, 0]


# ---- evaluate ------------------------------------------------------------------

def _bench_set(tmp_path, n_subjects=3):
    spec = {"n_subjects": n_subjects, "seed": 2,
            "methods": {"exact": {"jitter": 0}, "thin": {"erode": [1, 6, 16]},
                        "moved": {"jitter": 1}}}
    gen_benchmark_set(spec, tmp_path)
    return load_manifest(tmp_path / "manifest.json")


def test_run_benchmark_exact_method_ranks_first(tmp_path):
    rep = run_benchmark(_bench_set(tmp_path), RunConfig(workers=2))
    sm = rep.tables["subject_metrics"]
    assert len(sm) == 3 * 3 * 20
    assert all(r["dice"] == 1.0 and r["ahd"] == 0.0 for r in sm if r["method"] == "exact")
    for r in rep.tables["ranks"]:
        if r["method"] == "exact" and r["metric"] == "dice":
            assert r["rank"] == 1
    assert {r["effect"] for r in rep.tables["anova"]} == {"method", "hemisphere",
                                                           "method:hemisphere"}
    assert all(r["agreement"] == classify_agreement(r["dice"])
               for r in rep.tables["agreement"])
    assert len(rep.tables["agreement"]) == 3 * 20
    assert "best_method" in rep.tables
    assert "group_dice_exact" in rep.matrices and "group_ahd_thin" in rep.matrices


def test_run_benchmark_single_subject_warns(tmp_path, caplog):
    manifest = _bench_set(tmp_path, n_subjects=1)
    with caplog.at_level(logging.WARNING):
        rep = run_benchmark(manifest, RunConfig())
    assert "ranks" not in rep.tables
    assert any("skipped" in n for n in rep.notes)
    assert any("skipped" in r.message for r in caplog.records)
    assert rep.tables["subject_metrics"]


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(p)
    p.write_text('{"reference": {"subjects": {"s1": "a.nii"}}, '
                 '"methods": {"x": {"subjects": {}}}}')
    with pytest.raises(ManifestError, match="lacks"):
        load_manifest(p)
    p.write_text('{"methods": {}}')
    with pytest.raises(ManifestError):
        load_manifest(p)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(threshold=0)
    with pytest.raises(ValueError):
        RunConfig(alpha=1.0)
    with pytest.raises(ValueError):
        RunConfig(workers=0)
    assert RunConfig(physical_distances=True).as_metadata()["distance_units"] == "mm"
    assert len(NUCLEUS_COLUMNS) == 20
