import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thalbench.cohort import NUCLEUS_COLUMNS, read_cohort_csv, write_cohort_csv
from thalbench.metrics import average_hausdorff, dice
from thalbench.phantom import (CohortSpec, Ellipsoid, PhantomError, PhantomSpec,
                               gen_benchmark_set, gen_cohort, gen_phantom_volume, perturb,
                               thalamus_layout)
from thalbench.volgrid import LabelVolume, VolumeGeometry, read_volume, voxel_set


def test_unit_sphere_is_plus_sign():
    spec = PhantomSpec(VolumeGeometry((5, 5, 5)), (Ellipsoid(1, (2, 2, 2), (1, 1, 1)),))
    v = gen_phantom_volume(spec)
    coords = {tuple(c) for c in voxel_set(v, 1).coords.tolist()}
    assert coords == {(2, 2, 2), (1, 2, 2), (3, 2, 2), (2, 1, 2), (2, 3, 2), (2, 2, 1), (2, 2, 3)}


def test_generation_deterministic_and_overlap_error():
    spec = thalamus_layout(seed=4, jitter=1)
    assert gen_phantom_volume(spec) == gen_phantom_volume(spec)
    bad = PhantomSpec(VolumeGeometry((9, 9, 9)),
                      (Ellipsoid(1, (4, 4, 4), (2, 2, 2)), Ellipsoid(2, (5, 4, 4), (2, 2, 2))))
    with pytest.raises(PhantomError, match="overlap"):
        gen_phantom_volume(bad)


@pytest.mark.parametrize("seed", range(10))
def test_thalamus_layout_has_all_twenty(seed):
    v = gen_phantom_volume(thalamus_layout(seed=seed, jitter=1))
    assert v.present_labels() == list(range(1, 21))


def _cuboid_volume(dims, lo, size, label=1):
    arr = np.zeros(dims, dtype=np.int32)
    arr[lo[0]:lo[0] + size[0], lo[1]:lo[1] + size[1], lo[2]:lo[2] + size[2]] = label
    return LabelVolume(arr)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.data())
def test_translated_cuboid_dice_is_analytic(w, h, d, data):
    t = data.draw(st.integers(0, w))
    v = _cuboid_volume((w + 17, h + 2, d + 2), (1, 1, 1), (w, h, d))
    moved = perturb(v, "translate", 1, offset=(t, 0, 0))
    r = dice(voxel_set(v, 1), voxel_set(moved, 1))
    assert r.intersection_count == (w - t) * h * d
    assert r.fraction * w == w - t


def test_translate_identity_and_errors():
    v = _cuboid_volume((6, 6, 6), (1, 1, 1), (2, 2, 2))
    assert perturb(v, "translate", 1, offset=(0, 0, 0)) == v
    with pytest.raises(PhantomError):
        perturb(v, "translate", 1, offset=(5, 0, 0))
    arr = v.array.copy()
    arr[4, 1, 1] = 2
    with pytest.raises(PhantomError):
        perturb(LabelVolume(arr), "translate", 1, offset=(2, 0, 0))


def test_translate_moves_only_target_label():
    arr = np.zeros((10, 6, 6), dtype=np.int32)
    arr[1:3, 1:3, 1:3] = 1
    arr[6:8, 1:3, 1:3] = 2
    moved = perturb(LabelVolume(arr), "translate", 1, offset=(1, 2, 0))
    assert np.array_equal(moved.array == 2, arr == 2)
    assert len(voxel_set(moved, 1)) == 8


def test_single_voxel_translation_ahd():
    v = _cuboid_volume((14, 3, 3), (0, 1, 1), (1, 1, 1))
    for t in range(1, 11):
        moved = perturb(v, "translate", 1, offset=(t, 0, 0))
        assert average_hausdorff(voxel_set(v, 1), voxel_set(moved, 1)).ahd == t


def test_dilate_erode():
    v = _cuboid_volume((9, 9, 9), (3, 3, 3), (3, 3, 3))
    grown = perturb(v, "dilate", 1, k=1)
    assert len(voxel_set(grown, 1)) == 27 + 6 * 9
    shrunk = perturb(v, "erode", 1, k=1)
    assert len(voxel_set(shrunk, 1)) == 1
    arr = v.array.copy()
    arr[6, 4, 4] = 2
    with pytest.raises(PhantomError, match="collid"):
        perturb(LabelVolume(arr), "dilate", 1, k=1)
    with pytest.raises(ValueError):
        perturb(v, "dilate", 1, k=0)
    with pytest.raises(ValueError):
        perturb(v, "rotate", 1)


@pytest.mark.parametrize("k", [1, 2])
def test_open_is_subset(k):
    spec = PhantomSpec(VolumeGeometry((21, 21, 21)), (Ellipsoid(5, (10, 10, 10), (6, 4, 5)),))
    v = gen_phantom_volume(spec)
    opened = perturb(perturb(v, "erode", 5, k=k), "dilate", 5, k=k)
    assert np.all(voxel_set(v, 5).mask() | ~voxel_set(opened, 5).mask())


def test_phantom_spec_roundtrip():
    spec = PhantomSpec(VolumeGeometry((9, 8, 7), (1.0, 0.5, 2.0)),
                       (Ellipsoid(3, (4, 4, 3), (2, 2, 1.5)),), seed=9)
    assert PhantomSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


# ---- cohorts -------------------------------------------------------------------

def test_cohort_zero_noise_equals_baseline():
    spec = CohortSpec(group_sizes={"HC": 5, "AD": 4}, noise_sd=0.0, seed=1)
    t = gen_cohort(spec)
    assert np.array_equal(t.volumes, np.tile(spec.baseline_vector(), (9, 1)))


def test_cohort_planted_ratio():
    spec = CohortSpec(group_sizes={"HC": 100, "AD": 100}, noise_sd=0.03,
                      atrophy={"AD": {"L_Pul": 0.9}}, seed=2)
    t = gen_cohort(spec)
    col = t.column("L_Pul")
    ratio = col[t.group == "AD"].mean() / col[t.group == "HC"].mean()
    assert 0.88 <= ratio <= 0.92


def test_cohort_deterministic_and_covariate_ranges():
    spec = CohortSpec(seed=7)
    a, b = gen_cohort(spec), gen_cohort(spec)
    assert a == b
    assert a.age.min() >= 55 and a.age.max() <= 90
    assert a.education_years.min() >= 8 and a.education_years.max() <= 20
    assert set(np.unique(a.sex).tolist()) == {0.0, 1.0}
    assert abs(a.etiv_mm3.mean() - 1.5e6) < 3e4


def test_cohort_spec_validation():
    with pytest.raises(PhantomError):
        CohortSpec(group_sizes={"HC": 1})
    with pytest.raises(PhantomError):
        CohortSpec(noise_sd=-0.1)
    with pytest.raises(PhantomError):
        CohortSpec(atrophy={"AD": {"L_Pul": 0.0}})
    with pytest.raises(PhantomError):
        CohortSpec(atrophy={"AD": {"X_Pul": 0.9}})


def test_cohort_csv_roundtrip(tmp_path):
    t = gen_cohort(CohortSpec(group_sizes={"HC": 3, "EMCI": 3}, seed=3))
    write_cohort_csv(t, tmp_path / "c.csv")
    assert read_cohort_csv(tmp_path / "c.csv") == t
    header = (tmp_path / "c.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["subject_id", "group", "age", "sex", "education_years", "etiv_mm3"]
    assert tuple(header[6:]) == NUCLEUS_COLUMNS


def test_benchmark_set(tmp_path):
    spec = {"n_subjects": 2, "seed": 1,
            "methods": {"same": {"jitter": 0}, "thin": {"erode": [6]}}}
    manifest = gen_benchmark_set(spec, tmp_path)
    again = gen_benchmark_set(spec, tmp_path / "again")
    assert manifest == again
    for sid, rel in manifest["reference"]["subjects"].items():
        ref = read_volume(tmp_path / rel)
        same = read_volume(tmp_path / manifest["methods"]["same"]["subjects"][sid])
        thin = read_volume(tmp_path / manifest["methods"]["thin"]["subjects"][sid])
        assert same == ref
        assert len(voxel_set(thin, 6)) < len(voxel_set(ref, 6))
        assert (tmp_path / rel).read_bytes() == (tmp_path / "again" / rel).read_bytes()
