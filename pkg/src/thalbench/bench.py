"""Benchmark orchestration: method ranking, agreement classes, best-method
selection, atrophy effect maps and disease-stage discrimination."""
from __future__ import annotations

import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .cohort import COVARIATE_COLUMNS, GROUPS, NUCLEUS_COLUMNS, CohortTable
from .harmonize import ALL_NUCLEI, NUCLEI, load_label_map, remap
from .metrics import (EmptySetError, average_hausdorff, binarize_atlas,
                      build_prob_atlas, cross_nucleus_ahd_matrix,
                      cross_nucleus_dice_matrix, dice)
from .stats import (DEFAULT_MC_DRAWS, DEFAULT_MC_SEED, cohens_d,
                    dunnett_test, fit_ancova, paired_t_test, rm_anova_2way,
                    roc_analysis)
from .volgrid import LabelVolume, read_volume, voxel_set

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "1.0"
AGREEMENT_CLASSES = ("none", "slight", "fair", "moderate", "substantial", "almost_perfect")


class ManifestError(ValueError):
    pass


# --------------------------------------------------------------------------
# agreement and ranking
# --------------------------------------------------------------------------

def classify_agreement(dice_value: float) -> str:
    if not (0.0 <= dice_value <= 1.0):
        raise ValueError(f"Dice must lie in [0, 1], got {dice_value}")
    if dice_value == 0.0:
        return "none"
    for bound, name in ((0.2, "slight"), (0.4, "fair"), (0.6, "moderate"),
                        (0.8, "substantial")):
        if dice_value < bound:
            return name
    return "almost_perfect"


@dataclass
class RankRow:
    """Significance-based ranks of methods for one nucleus and metric.

    ``better[i][j]`` is True when method i beats method j, either directly
    (Bonferroni-adjusted paired t-test) or through a chain of such wins.
    """

    methods: tuple
    means: dict
    ranks: dict
    better: np.ndarray
    direct: np.ndarray
    tests: dict
    direction: str
    n_subjects: int

    def significantly_better(self, a: str, b: str) -> bool:
        return bool(self.direct[self.methods.index(a), self.methods.index(b)])

    def significant(self, a: str, b: str) -> bool:
        return self.significantly_better(a, b) or self.significantly_better(b, a)

    @property
    def order(self) -> list:
        sign = -1 if self.direction == "higher" else 1
        return sorted(self.methods, key=lambda m: (sign * self.means[m], self.methods.index(m)))


def rank_methods(values, methods: Sequence[str], better: str = "higher",
                 family_size: int = 6, alpha: float = 0.05) -> RankRow:
    """Rank methods by pairwise significance on per-subject scores.

    ``values`` is subjects x methods. A method's rank is 1 + the number of
    methods significantly better than it, so ties share the best rank
    (competition ranking, e.g. 1, 1, 1, 4). Subjects with a missing value for
    any method are dropped.
    """
    if better not in ("higher", "lower"):
        raise ValueError("better must be 'higher' or 'lower'")
    x = np.asarray(values, dtype=float)
    methods = tuple(methods)
    if x.ndim != 2 or x.shape[1] != len(methods):
        raise ValueError("values must be subjects x methods")
    if len(methods) < 2:
        raise ValueError("need at least 2 methods to rank")
    x = x[np.all(np.isfinite(x), axis=1)]
    if len(x) < 2:
        raise ValueError("need at least 2 complete subjects to rank")
    k = len(methods)
    sign = 1.0 if better == "higher" else -1.0
    direct = np.zeros((k, k), dtype=bool)
    tests: dict = {}
    for i in range(k):
        for j in range(i + 1, k):
            res = paired_t_test(x[:, i], x[:, j], family_size)
            tests[(methods[i], methods[j])] = res
            if res.p_adjusted < alpha and res.mean_diff != 0:
                if sign * res.mean_diff > 0:
                    direct[i, j] = True
                else:
                    direct[j, i] = True
    closure = direct.copy()
    for m in range(k):  # Warshall
        closure |= closure[:, [m]] & closure[[m], :]
    ranks = {methods[j]: 1 + int(closure[:, j].sum()) for j in range(k)}
    means = {m: float(np.mean(x[:, i])) for i, m in enumerate(methods)}
    return RankRow(methods, means, ranks, closure, direct, tests, better, len(x))


@dataclass(frozen=True)
class RankSummary:
    mean: float
    sd_population: float
    sd_sample: float
    n: int


def summarize_ranks(ranks: Sequence[int]) -> RankSummary:
    """Mean and SD (population and sample) of a method's ranks over nuclei."""
    n = len(ranks)
    if n == 0:
        raise ValueError("no ranks to summarize")
    mean = Fraction(sum(int(r) for r in ranks), n)
    ss = sum((Fraction(int(r)) - mean) ** 2 for r in ranks)
    sd_pop = math.sqrt(ss / n)
    sd_samp = math.sqrt(ss / (n - 1)) if n > 1 else float("nan")
    return RankSummary(float(mean), sd_pop, sd_samp, n)


@dataclass
class BestMethodDecision:
    outcome: str  # "single", "joint" or "none"
    winners: tuple
    trace: list = field(default_factory=list)


def select_best(subject: RankRow, mni_dice: Mapping[str, float]) -> BestMethodDecision:
    """Pick the best method for a nucleus from subject- and group-level Dice.

    Single winner: highest group Dice and significantly higher subject Dice
    than every other method. Otherwise a method X joins the group-Dice
    leader M when the subject-level means favour X over M, whether that
    difference is non-significant (directions disagree) or significant (the
    group result inverts the test). Two candidates are joint winners; more
    than two, or a leader that is neither significantly best nor joined,
    gives no winner.
    """
    if set(mni_dice) != set(subject.methods):
        raise ValueError("subject and group evidence cover different methods")
    order = sorted(subject.methods, key=lambda m: (-mni_dice[m], subject.methods.index(m)))
    leader = order[0]
    trace = [f"group Dice leader: {leader} ({mni_dice[leader]:.4f})"]
    ties = [m for m in order[1:] if mni_dice[m] == mni_dice[leader]]
    if ties:
        trace.append(f"group Dice tied with {ties}; leader chosen by method order")
    others = [m for m in subject.methods if m != leader]
    if all(subject.significantly_better(leader, m) for m in others):
        trace.append(f"{leader} significantly better than all others at subject level")
        return BestMethodDecision("single", (leader,), trace)

    candidates = [leader]
    for m in others:
        sig = subject.significant(leader, m)
        favours_m = subject.means[m] > subject.means[leader]
        if favours_m and not sig:
            candidates.append(m)
            trace.append(f"{m}: non-significant vs {leader}, subject mean favours {m} "
                         f"but group Dice favours {leader} (rule a)")
        elif favours_m and sig:
            candidates.append(m)
            trace.append(f"{m}: significantly better than {leader} at subject level, "
                         f"group Dice inverts this (rule b)")
        elif sig:
            trace.append(f"{m}: significantly worse than {leader}")
        else:
            trace.append(f"{m}: non-significant vs {leader}, same direction in both spaces")
    if len(candidates) == 2:
        return BestMethodDecision("joint", tuple(candidates), trace)
    if len(candidates) > 2:
        trace.append(f"{len(candidates)} methods qualify; no single best")
    else:
        trace.append(f"{leader} leads but is not significantly better than every method")
    return BestMethodDecision("none", (), trace)


# --------------------------------------------------------------------------
# clinical statistics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EffectRow:
    nucleus: str
    treatment: str
    ancova_F: float
    ancova_p: float
    estimate: float
    t: float
    p_familywise: float
    d_adjusted: float
    d_raw: float
    d: float
    shown: bool


def _adjusted_for_ancova(y, cohort: CohortTable, anc, covariates) -> np.ndarray:
    adj = np.array(y, dtype=float)
    for name in covariates:
        adj = adj - anc.coefficients[name] * (getattr(cohort, name) - anc.covariate_means[name])
    return adj


def atrophy_effect_map(cohort: CohortTable, control: str = "HC",
                       treatments: Sequence[str] | None = None, alpha: float = 0.05,
                       d_mode: str = "adjusted", covariates=COVARIATE_COLUMNS,
                       draws: int = DEFAULT_MC_DRAWS, seed: int = DEFAULT_MC_SEED,
                       workers: int = 1) -> list:
    """Per-nucleus group effects against ``control``.

    Each nucleus gets an ANCOVA on group plus covariates, Dunnett comparisons
    of every treatment against the control, and Cohen's d (treatment minus
    control; negative means smaller volumes). An effect is ``shown`` when its
    Dunnett familywise p is below alpha; the ANCOVA group test is reported
    alongside.
    """
    if d_mode not in ("adjusted", "raw"):
        raise ValueError("d_mode must be 'adjusted' or 'raw'")
    present = [g for g in GROUPS if np.any(cohort.group == g)]
    if control not in present:
        raise ValueError(f"control group {control!r} missing from cohort")
    if treatments is None:
        treatments = [g for g in present if g != control]
    missing = [t for t in treatments if t not in present]
    if missing:
        raise ValueError(f"treatment groups missing from cohort: {missing}")
    keep = np.isin(cohort.group, [control, *treatments])
    sub = cohort.subset(keep)
    covs = sub.covariates(covariates)
    order = [control, *treatments]

    def one(col):
        y = sub.column(col)
        anc = fit_ancova(y, sub.group, covs, reference=control, group_order=order)
        dun = dunnett_test(anc, control, alpha, draws, seed)
        adj = _adjusted_for_ancova(y, sub, anc, covariates)
        rows = []
        for comp in dun.comparisons:
            t_mask, c_mask = sub.group == comp.treatment, sub.group == control
            d_adj = cohens_d(adj[t_mask], adj[c_mask])
            d_raw = cohens_d(y[t_mask], y[c_mask])
            shown = comp.p_familywise < alpha
            rows.append(EffectRow(col, comp.treatment, anc.F, anc.p, comp.estimate,
                                  comp.t, comp.p_familywise, d_adj, d_raw,
                                  d_adj if d_mode == "adjusted" else d_raw, shown))
        return rows

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_nucleus = list(pool.map(one, NUCLEUS_COLUMNS))
    return [row for rows in per_nucleus for row in rows]


def adjusted_volumes(cohort: CohortTable, control: str = "HC",
                     covariates=("age", "etiv_mm3")) -> np.ndarray:
    """Residualize nucleus volumes on covariates using control-group slopes.

    Returns subjects x 20 volumes with covariates moved to the control
    means: v - (c - mean_control(c)) @ slope_control.
    """
    ctrl = cohort.group == control
    cov = np.column_stack([getattr(cohort, c) for c in covariates]) if covariates \
        else np.zeros((len(cohort), 0))
    if int(ctrl.sum()) <= cov.shape[1] + 1:
        raise ValueError("too few control subjects to estimate covariate slopes")
    x = np.column_stack([np.ones(int(ctrl.sum())), cov[ctrl]])
    beta, *_ = np.linalg.lstsq(x, cohort.volumes[ctrl], rcond=None)
    centered = cov - cov[ctrl].mean(axis=0)
    return cohort.volumes - centered @ beta[1:]


@dataclass(frozen=True)
class AucResult:
    control: str
    target: str
    feature_mode: str
    auc: float
    n_control: int
    n_target: int
    converged: bool


def discrimination_auc(cohort: CohortTable, control: str, target: str,
                       feature_mode: str = "nuclei",
                       adjust_covariates=("age", "etiv_mm3")) -> AucResult:
    """In-sample ROC AUC of a logistic model separating ``target`` from ``control``.

    ``nuclei`` uses the 20 adjusted nucleus volumes; ``whole_thalamus`` uses
    their bilateral sum as a single feature.
    """
    if feature_mode not in ("nuclei", "whole_thalamus"):
        raise ValueError("feature_mode must be 'nuclei' or 'whole_thalamus'")
    for g in (control, target):
        if not np.any(cohort.group == g):
            raise ValueError(f"group {g!r} missing from cohort")
    adj = adjusted_volumes(cohort, control, adjust_covariates)
    mask = np.isin(cohort.group, (control, target))
    features = adj[mask]
    if feature_mode == "whole_thalamus":
        features = features.sum(axis=1)[:, None]
    labels = (cohort.group[mask] == target).astype(int)
    roc = roc_analysis(features, labels)
    return AucResult(control, target, feature_mode, roc.auc,
                     int((labels == 0).sum()), int((labels == 1).sum()), roc.model.converged)


# --------------------------------------------------------------------------
# report container
# --------------------------------------------------------------------------

@dataclass
class BenchmarkReport:
    """Everything a benchmark or clinical run produces.

    Tables are lists of flat dicts (one CSV row each); matrices map a name to
    (row labels, column labels, values, absent mask).
    """

    kind: str
    methods: list
    metadata: dict
    tables: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


@dataclass
class RunConfig:
    threshold: float = 0.25
    alpha: float = 0.05
    family_size: int = 6
    seed: int = DEFAULT_MC_SEED
    workers: int = 1
    mc_draws: int = DEFAULT_MC_DRAWS
    physical_distances: bool = False

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.family_size < 1:
            raise ValueError("family size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def as_metadata(self) -> dict:
        return {"threshold": self.threshold, "alpha": self.alpha,
                "family_size": self.family_size, "seed": self.seed,
                "mc_draws": self.mc_draws,
                "distance_units": "mm" if self.physical_distances else "voxels"}


# --------------------------------------------------------------------------
# evaluate workflow
# --------------------------------------------------------------------------

@dataclass
class Manifest:
    root: Path
    reference: dict           # subject -> path
    reference_map: str
    methods: dict             # method -> {"label_map", "subjects", "mni_subjects"}
    mni_reference: str | None = None
    mni_reference_map: str = "unified"
    source: str = ""


def load_manifest(path) -> Manifest:
    """Read an evaluate manifest (JSON); paths are relative to its folder."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from None
    try:
        ref = doc["reference"]
        methods = doc["methods"]
        manifest = Manifest(
            root=path.parent,
            reference=dict(ref["subjects"]),
            reference_map=ref.get("label_map", "unified"),
            methods={m: {"label_map": spec.get("label_map", "unified"),
                         "subjects": dict(spec.get("subjects", {})),
                         "mni_subjects": dict(spec.get("mni_subjects", {}))}
                     for m, spec in methods.items()},
            source=path.name,
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from None
    if "mni_reference" in doc:
        manifest.mni_reference = doc["mni_reference"]["path"]
        manifest.mni_reference_map = doc["mni_reference"].get("label_map", "unified")
    if len(manifest.methods) < 1:
        raise ManifestError("manifest lists no methods")
    for m, spec in manifest.methods.items():
        missing = sorted(set(manifest.reference) - set(spec["subjects"]))
        if missing:
            raise ManifestError(f"method {m!r} lacks subjects {missing}")
    return manifest


class _MapCache:
    def __init__(self, root: Path):
        self.root = root
        self._maps: dict = {}
        self._lock = threading.Lock()

    def get(self, name: str):
        with self._lock:
            if name not in self._maps:
                candidate = self.root / name
                self._maps[name] = load_label_map(str(candidate) if candidate.is_file() else name)
            return self._maps[name]


def _load_harmonized(root: Path, rel: str, map_name: str, maps: _MapCache):
    vol = read_volume(root / rel)
    return remap(vol, maps.get(map_name))


def _nucleus_metrics(seg: LabelVolume, ref: LabelVolume, physical: bool) -> list:
    rows = []
    vv_seg, vv_ref = seg.geometry.voxel_volume, ref.geometry.voxel_volume
    for nid in ALL_NUCLEI:
        s, r = voxel_set(seg, nid.code), voxel_set(ref, nid.code)
        ov = dice(s, r)
        try:
            dist = average_hausdorff(s, r, physical)
            d_sr, d_rs, ahd = dist.d_ab, dist.d_ba, dist.ahd
        except EmptySetError:
            d_sr = d_rs = ahd = None
        rows.append({"hemisphere": nid.hemisphere, "nucleus": nid.nucleus,
                     "dice": ov.dice, "intersection": ov.intersection_count,
                     "seg_voxels": ov.size_x, "ref_voxels": ov.size_y,
                     "seg_volume_mm3": ov.size_x * vv_seg,
                     "ref_volume_mm3": ov.size_y * vv_ref,
                     "ahd": ahd, "d_seg_to_ref": d_sr, "d_ref_to_seg": d_rs})
    return rows


def _nan(v):
    return float("nan") if v is None else v


def run_benchmark(manifest: Manifest, config: RunConfig) -> BenchmarkReport:
    methods = list(manifest.methods)
    subjects = list(manifest.reference)
    maps = _MapCache(manifest.root)
    report = BenchmarkReport(
        kind="evaluate", methods=methods,
        metadata={"tool_version": __version__, "schema_version": REPORT_SCHEMA_VERSION,
                  "manifest": manifest.source, "subjects": subjects,
                  "config": config.as_metadata(),
                  "computation_space": {
                      "subject": "each subject's reference grid (inputs must be voxel-aligned)",
                      "group": "shared common grid of the group-level inputs",
                      "volumes": "mm^3 in the grid of the input file"},
                  "rank_sd": "sd_population divides by n, sd_sample by n - 1; both are "
                             "given because published rank SDs do not consistently "
                             "follow either convention",
                  "label_maps": {"reference": manifest.reference_map,
                                 **{m: s["label_map"] for m, s in manifest.methods.items()}}})

    def per_subject(sid):
        ref, _ = _load_harmonized(manifest.root, manifest.reference[sid],
                                  manifest.reference_map, maps)
        out = []
        for m in methods:
            spec = manifest.methods[m]
            seg, tally = _load_harmonized(manifest.root, spec["subjects"][sid],
                                          spec["label_map"], maps)
            for row in _nucleus_metrics(seg, ref, config.physical_distances):
                out.append({"subject": sid, "method": m, **row,
                            "dropped_voxels": tally.total})
        return out

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        rows = [r for chunk in pool.map(per_subject, subjects) for r in chunk]
    report.tables["subject_metrics"] = rows

    lookup = {(r["subject"], r["method"], r["hemisphere"], r["nucleus"]): r for r in rows}

    rank_rows = {}
    if len(subjects) < 2 or len(methods) < 2:
        msg = ("ranking and ANOVA skipped: need at least 2 subjects and 2 methods "
               f"(have {len(subjects)} subjects, {len(methods)} methods)")
        log.warning(msg)
        report.notes.append(msg)
    else:
        anova_rows, rank_table = [], []
        for metric, better in (("dice", "higher"), ("ahd", "lower")):
            for nucleus in NUCLEI:
                per = {}
                for hemi in ("L", "R"):
                    table = np.array([[_nan(lookup[(s, m, hemi, nucleus)][metric])
                                       for m in methods] for s in subjects])
                    per[hemi] = table
                    try:
                        row = rank_methods(table, methods, better, config.family_size,
                                           config.alpha)
                    except ValueError as exc:
                        report.notes.append(f"{metric} ranking skipped for "
                                            f"{hemi}_{nucleus}: {exc}")
                        continue
                    rank_rows[(metric, hemi, nucleus)] = row
                    for m in methods:
                        rank_table.append({"metric": metric, "hemisphere": hemi,
                                           "nucleus": nucleus, "method": m,
                                           "mean": row.means[m], "rank": row.ranks[m],
                                           "n_subjects": row.n_subjects})
                    for (a, b), t in row.tests.items():
                        report.tables.setdefault("pairwise_tests", []).append(
                            {"metric": metric, "hemisphere": hemi, "nucleus": nucleus,
                             "method_a": a, "method_b": b, "mean_diff": t.mean_diff,
                             "t": t.t, "df": t.df, "p_raw": t.p_raw,
                             "p_bonferroni": t.p_adjusted, "degenerate": t.degenerate})
                data = np.stack([per["L"], per["R"]], axis=2)
                data = data[np.all(np.isfinite(data), axis=(1, 2))]
                if len(data) >= 2:
                    res = rm_anova_2way(data)
                    for effect, label in (("A", "method"), ("B", "hemisphere"),
                                          ("A:B", "method:hemisphere")):
                        e = res[effect]
                        anova_rows.append({"metric": metric, "nucleus": nucleus,
                                           "effect": label, "DFn": e.df_num, "DFd": e.df_den,
                                           "F": e.F, "p": e.p, "ges": e.ges,
                                           "epsilon": e.epsilon, "n_subjects": res.n_subjects})
        report.tables["anova"] = anova_rows
        report.tables["ranks"] = rank_table
        report.tables["rank_summary"] = _rank_summary_rows(rank_rows, methods, anova_rows,
                                                           config.alpha)

    # group-level (common grid) analysis
    mni_dice = {}
    have_mni = manifest.mni_reference is not None and all(
        manifest.methods[m]["mni_subjects"] for m in methods)
    if have_mni:
        mni_ref, _ = _load_harmonized(manifest.root, manifest.mni_reference,
                                      manifest.mni_reference_map, maps)
        agreement, group_rows = [], []
        for m in methods:
            spec = manifest.methods[m]
            vols = [_load_harmonized(manifest.root, p, spec["label_map"], maps)[0]
                    for _, p in sorted(spec["mni_subjects"].items())]
            atlas_labels = binarize_atlas(build_prob_atlas(vols), config.threshold)
            dm = cross_nucleus_dice_matrix(atlas_labels, mni_ref)
            am = cross_nucleus_ahd_matrix(atlas_labels, mni_ref,
                                          physical=config.physical_distances,
                                          workers=config.workers)
            labels = [str(n) for n in ALL_NUCLEI]
            report.matrices[f"group_dice_{m}"] = (labels, labels, dm.values, dm.absent)
            report.matrices[f"group_ahd_{m}"] = (labels, labels, am.values, am.absent)
            for i, nid in enumerate(ALL_NUCLEI):
                s, r = voxel_set(atlas_labels, nid.code), voxel_set(mni_ref, nid.code)
                d = dice(s, r).dice
                mni_dice[(m, nid.hemisphere, nid.nucleus)] = d
                ahd = None if am.absent[i, i] else float(am.values[i, i])
                group_rows.append({"method": m, "hemisphere": nid.hemisphere,
                                   "nucleus": nid.nucleus, "dice": d, "ahd": ahd,
                                   "atlas_voxels": len(s), "reference_voxels": len(r)})
                agreement.append({"method": m, "hemisphere": nid.hemisphere,
                                  "nucleus": nid.nucleus, "dice": d,
                                  "agreement": classify_agreement(d)})
        report.tables["group_metrics"] = group_rows
        report.tables["agreement"] = agreement
        report.metadata["group_subjects"] = {m: len(manifest.methods[m]["mni_subjects"])
                                             for m in methods}
    else:
        report.notes.append("group-level analysis skipped: manifest has no "
                            "mni_reference or a method lacks mni_subjects")

    if have_mni and rank_rows:
        best = []
        for hemi in ("L", "R"):
            for nucleus in NUCLEI:
                row = rank_rows.get(("dice", hemi, nucleus))
                if row is None:
                    continue
                decision = select_best(row, {m: mni_dice[(m, hemi, nucleus)] for m in methods})
                best.append({"hemisphere": hemi, "nucleus": nucleus,
                             "outcome": decision.outcome,
                             "winners": ";".join(decision.winners),
                             "trace": " | ".join(decision.trace)})
        report.tables["best_method"] = best
    return report


def _rank_summary_rows(rank_rows, methods, anova_rows, alpha) -> list:
    method_effect = {(r["metric"], r["nucleus"]): r["p"] < alpha
                     for r in anova_rows if r["effect"] == "method"}
    out = []
    for metric in ("dice", "ahd"):
        for subset in ("all", "method_effect"):
            for hemi in ("L", "R"):
                for m in methods:
                    ranks = [rank_rows[(metric, hemi, n)].ranks[m] for n in NUCLEI
                             if (metric, hemi, n) in rank_rows
                             and (subset == "all" or method_effect.get((metric, n), False))]
                    if not ranks:
                        continue
                    s = summarize_ranks(ranks)
                    out.append({"metric": metric, "nuclei": subset, "hemisphere": hemi,
                                "method": m, "mean_rank": s.mean,
                                "sd_population": s.sd_population,
                                "sd_sample": s.sd_sample, "n_nuclei": s.n})
    return out


# --------------------------------------------------------------------------
# clinical workflow
# --------------------------------------------------------------------------

def run_clinical(cohorts: Mapping[str, CohortTable], config: RunConfig,
                 control: str = "HC", d_mode: str = "adjusted") -> BenchmarkReport:
    """Effect maps and AUC tables for one cohort table per method."""
    if not cohorts:
        raise ValueError("no cohorts given")
    methods = list(cohorts)
    report = BenchmarkReport(
        kind="clinical", methods=methods,
        metadata={"tool_version": __version__, "schema_version": REPORT_SCHEMA_VERSION,
                  "config": config.as_metadata(), "control": control,
                  "effect_size": f"Cohen's d (treatment - control), {d_mode} volumes; "
                                 "both adjusted and raw values are tabulated",
                  "significance_gate": "Dunnett familywise p < alpha",
                  "ancova_covariates": list(COVARIATE_COLUMNS),
                  "auc_adjustment": "volumes residualized on age and eTIV using control-group slopes",
                  "classification": "logistic regression fit and evaluated in-sample "
                                    "(no cross-validation)",
                  "whole_thalamus": "bilateral sum of the 20 harmonized nucleus volumes",
                  "computation_space": {"volumes": "as supplied in the cohort tables"},
                  "n_subjects": {m: len(c) for m, c in cohorts.items()}})
    effects, aucs = [], []
    for m in methods:
        cohort = cohorts[m]
        treatments = [g for g in GROUPS if g != control and np.any(cohort.group == g)]
        for row in atrophy_effect_map(cohort, control, treatments, config.alpha, d_mode,
                                      draws=config.mc_draws, seed=config.seed,
                                      workers=config.workers):
            hemi, nucleus = row.nucleus.split("_", 1)
            effects.append({"method": m, "hemisphere": hemi, "nucleus": nucleus,
                            "comparison": f"{control}-{row.treatment}",
                            "ancova_F": row.ancova_F, "ancova_p": row.ancova_p,
                            "estimate": row.estimate, "t": row.t,
                            "p_familywise": row.p_familywise, "d": row.d,
                            "d_adjusted": row.d_adjusted, "d_raw": row.d_raw,
                            "shown": row.shown})
        for target in treatments:
            res = {mode: discrimination_auc(cohort, control, target, mode)
                   for mode in ("nuclei", "whole_thalamus")}
            aucs.append({"method": m, "comparison": f"{control}-{target}",
                         "auc_nuclei": res["nuclei"].auc,
                         "auc_whole_thalamus": res["whole_thalamus"].auc,
                         "n_control": res["nuclei"].n_control,
                         "n_target": res["nuclei"].n_target})
    report.tables["effects"] = effects
    report.tables["auc"] = aucs
    for m in methods:
        rows = [e for e in effects if e["method"] == m]
        comps = sorted({e["comparison"] for e in rows},
                       key=lambda c: GROUPS.index(c.split("-")[1]))
        labels = [str(n) for n in ALL_NUCLEI]
        values = np.full((len(labels), len(comps)), np.nan)
        hidden = np.ones_like(values, dtype=bool)
        for e in rows:
            i = labels.index(f"{e['hemisphere']}_{e['nucleus']}")
            j = comps.index(e["comparison"])
            values[i, j] = e["d"]
            hidden[i, j] = not e["shown"]
        report.matrices[f"effect_d_{m}"] = (labels, comps, values, hidden)
    return report
