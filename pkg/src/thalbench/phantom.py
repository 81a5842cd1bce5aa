"""Deterministic synthetic label volumes and cohorts with known ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import ndimage

from .cohort import GROUPS, NUCLEUS_COLUMNS, CohortTable
from .harmonize import ALL_NUCLEI, NUCLEI
from .volgrid import LabelVolume, VolumeGeometry, write_volume

SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)

# Covariate sampling for synthetic cohorts and the centers used in the
# volume model (volume multiplier is exp(sum coef * (value - center))).
COVARIATE_CENTERS = {"age": 72.5, "sex": 0.5, "education_years": 14.0, "etiv_mm3": 1.5e6}


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class Ellipsoid:
    code: int
    center: tuple
    semi_axes: tuple

    def __post_init__(self):
        if self.code <= 0:
            raise PhantomError("ellipsoid label must be positive")
        if len(self.center) != 3 or len(self.semi_axes) != 3:
            raise PhantomError("center and semi_axes need 3 components")
        if any(a <= 0 for a in self.semi_axes):
            raise PhantomError("semi-axes must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    geometry: VolumeGeometry
    shapes: tuple
    seed: int = 0

    @classmethod
    def from_dict(cls, d: Mapping) -> "PhantomSpec":
        geometry = VolumeGeometry(d["dims"], d.get("spacing", (1.0, 1.0, 1.0)))
        seed = int(d.get("seed", 0))
        if d.get("layout") == "thalamus":
            return thalamus_layout(seed=seed, spacing=geometry.spacing,
                                   jitter=int(d.get("jitter", 0)), dims=geometry.dims)
        shapes = tuple(Ellipsoid(int(s["code"]), tuple(s["center"]), tuple(s["semi_axes"]))
                       for s in d["nuclei"])
        return cls(geometry, shapes, seed)

    def to_dict(self) -> dict:
        return {
            "kind": "volume",
            "dims": list(self.geometry.dims),
            "spacing": list(self.geometry.spacing),
            "seed": self.seed,
            "nuclei": [{"code": s.code, "center": list(s.center),
                        "semi_axes": list(s.semi_axes)} for s in self.shapes],
        }


def ellipsoid_mask(dims, center, semi_axes) -> np.ndarray:
    """Voxels whose centers satisfy sum(((x - c) / r) ** 2) <= 1."""
    grids = np.ogrid[tuple(slice(0, d) for d in dims)]
    total = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, semi_axes))
    return total <= 1.0


def gen_phantom_volume(spec: PhantomSpec) -> LabelVolume:
    out = np.zeros(spec.geometry.dims, dtype=np.int32)
    for shape in spec.shapes:
        mask = ellipsoid_mask(spec.geometry.dims, shape.center, shape.semi_axes)
        clash = mask & (out != 0)
        if clash.any():
            others = sorted(set(out[clash].tolist()))
            raise PhantomError(f"shape for label {shape.code} overlaps labels {others}")
        out[mask] = shape.code
    return LabelVolume(out, spec.geometry.spacing)


# semi-axes in voxels for the synthetic layout, by nucleus
_LAYOUT_AXES = {
    "AV": (1.5, 1.5, 2.0), "VA": (3.0, 2.5, 2.5), "VLa": (2.0, 2.0, 2.5),
    "VLp": (3.0, 3.0, 3.0), "VPL": (3.0, 2.5, 2.5), "Pul": (3.5, 3.0, 3.0),
    "LGN": (1.5, 2.0, 1.5), "MGN": (1.5, 1.5, 1.5), "CM": (2.0, 2.0, 2.0),
    "MD-Pf": (3.0, 3.0, 2.5),
}
LAYOUT_CELL = 12
LAYOUT_MARGIN = 2
LAYOUT_DIMS = (2 * LAYOUT_CELL + 2 * LAYOUT_MARGIN,
               5 * LAYOUT_CELL + 2 * LAYOUT_MARGIN,
               2 * LAYOUT_CELL + 2 * LAYOUT_MARGIN)


def thalamus_layout(seed: int = 0, jitter: int = 0, spacing=(1.0, 1.0, 1.0),
                    dims=None) -> PhantomSpec:
    """Twenty disjoint ellipsoids, one per harmonized nucleus code.

    Each nucleus sits in its own 12-voxel cell (hemisphere along x, nuclei
    on a 5 x 2 grid in y/z). ``jitter`` shifts every center by a random
    integer offset in [-jitter, jitter] per axis; a total shift of up to 2
    per shape keeps shapes disjoint.
    """
    rng = np.random.default_rng(seed)
    dims = tuple(dims) if dims is not None else LAYOUT_DIMS
    if any(d < m for d, m in zip(dims, LAYOUT_DIMS)):
        raise PhantomError(f"thalamus layout needs dims >= {LAYOUT_DIMS}")
    shapes = []
    for nid in ALL_NUCLEI:
        idx = NUCLEI.index(nid.nucleus)
        cell = (0 if nid.hemisphere == "L" else 1, idx % 5, idx // 5)
        center = np.array([LAYOUT_MARGIN + LAYOUT_CELL * c + LAYOUT_CELL // 2 for c in cell])
        if jitter:
            center = center + rng.integers(-jitter, jitter + 1, size=3)
        shapes.append(Ellipsoid(nid.code, tuple(int(c) for c in center),
                                _LAYOUT_AXES[nid.nucleus]))
    return PhantomSpec(VolumeGeometry(dims, spacing), tuple(shapes), seed)


# --------------------------------------------------------------------------
# perturbations
# --------------------------------------------------------------------------

def perturb(v: LabelVolume, op: str, label: int, *, offset=(0, 0, 0), k: int = 1
            ) -> LabelVolume:
    """Move, grow or shrink one label.

    ``op`` is ``"translate"`` (by integer ``offset``), ``"dilate"`` or
    ``"erode"`` (``k`` iterations of 6-connected morphology against
    background; the volume border counts as background).
    """
    arr = np.array(v.array)
    mask = arr == label
    if op == "translate":
        offset = np.asarray(offset, dtype=np.int64)
        if not offset.any():
            return v
        coords = np.argwhere(mask) + offset
        if len(coords) and (coords.min() < 0 or np.any(coords.max(axis=0) >= arr.shape)):
            raise PhantomError(f"translation {offset.tolist()} leaves the volume")
        arr[mask] = 0
        target = tuple(coords.T)
        if np.any(arr[target] != 0):
            raise PhantomError(f"translated label {label} collides with another label")
        arr[target] = label
    elif op in ("dilate", "erode"):
        if k < 1:
            raise PhantomError("k must be >= 1")
        if op == "dilate":
            grown = ndimage.binary_dilation(mask, SIX_CONNECTED, iterations=k)
            if np.any(grown & (arr != 0) & ~mask):
                raise PhantomError(f"dilating label {label} collides with another label")
            arr[grown] = label
        else:
            kept = ndimage.binary_erosion(mask, SIX_CONNECTED, iterations=k, border_value=0)
            arr[mask & ~kept] = 0
    else:
        raise PhantomError(f"unknown perturbation {op!r}")
    return v.with_array(arr)


# --------------------------------------------------------------------------
# cohorts
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CohortSpec:
    """Synthetic cohort model.

    volume = baseline * atrophy[group] * exp(sum coef * (cov - center))
             * (1 + noise_sd * N(0, 1))
    """

    group_sizes: Mapping = field(default_factory=lambda: {g: 100 for g in GROUPS})
    baseline: Mapping = field(default_factory=dict)
    atrophy: Mapping = field(default_factory=dict)
    covariate_effects: Mapping = field(default_factory=dict)
    noise_sd: float = 0.03
    seed: int = 0

    def __post_init__(self):
        for g, count in self.group_sizes.items():
            if g not in GROUPS:
                raise PhantomError(f"unknown group {g!r}")
            if int(count) < 2:
                raise PhantomError(f"group {g} needs at least 2 subjects")
        if self.noise_sd < 0:
            raise PhantomError("noise_sd must be >= 0")
        for g, factors in self.atrophy.items():
            if g not in GROUPS:
                raise PhantomError(f"unknown group {g!r} in atrophy")
            for col, f in factors.items():
                if col not in NUCLEUS_COLUMNS:
                    raise PhantomError(f"unknown nucleus column {col!r}")
                if f <= 0:
                    raise PhantomError("atrophy factors must be positive")
        for col in self.baseline:
            if col not in NUCLEUS_COLUMNS:
                raise PhantomError(f"unknown nucleus column {col!r}")
        for name in self.covariate_effects:
            if name not in COVARIATE_CENTERS:
                raise PhantomError(f"unknown covariate {name!r}")

    def baseline_vector(self) -> np.ndarray:
        return np.array([float(self.baseline.get(c, DEFAULT_BASELINE[c.split("_", 1)[1]]))
                         for c in NUCLEUS_COLUMNS])

    @classmethod
    def from_dict(cls, d: Mapping) -> "CohortSpec":
        baseline = d.get("baseline", {})
        if isinstance(baseline, (int, float)):
            baseline = {c: float(baseline) for c in NUCLEUS_COLUMNS}
        return cls(group_sizes=dict(d.get("groups", {g: 100 for g in GROUPS})),
                   baseline=dict(baseline), atrophy={g: dict(f) for g, f in d.get("atrophy", {}).items()},
                   covariate_effects=dict(d.get("covariate_effects", {})),
                   noise_sd=float(d.get("noise_sd", 0.03)), seed=int(d.get("seed", 0)))


# rough nucleus volumes in mm^3 used when a spec gives no baseline
DEFAULT_BASELINE = {
    "AV": 150.0, "VA": 450.0, "VLa": 250.0, "VLp": 900.0, "VPL": 500.0,
    "Pul": 1500.0, "LGN": 180.0, "MGN": 120.0, "CM": 200.0, "MD-Pf": 1000.0,
}


def gen_cohort(spec: CohortSpec) -> CohortTable:
    """Draw a cohort. Covariates: age ~ U(55, 90), education ~ U(8, 20),
    eTIV ~ N(1.5e6, 1.5e5) mm^3, sex ~ fair coin (M = 1)."""
    rng = np.random.default_rng(spec.seed)
    groups = [g for g in GROUPS if g in spec.group_sizes]
    labels = np.concatenate([[g] * int(spec.group_sizes[g]) for g in groups])
    n = len(labels)
    age = rng.uniform(55.0, 90.0, n)
    education = rng.uniform(8.0, 20.0, n)
    etiv = rng.normal(1.5e6, 1.5e5, n)
    sex = rng.integers(0, 2, n).astype(float)
    noise = rng.standard_normal((n, len(NUCLEUS_COLUMNS)))

    covs = {"age": age, "sex": sex, "education_years": education, "etiv_mm3": etiv}
    linear = np.zeros(n)
    for name, coef in spec.covariate_effects.items():
        linear = linear + coef * (covs[name] - COVARIATE_CENTERS[name])
    factors = np.ones((n, len(NUCLEUS_COLUMNS)))
    for g, per_col in spec.atrophy.items():
        rows = labels == g
        for col, f in per_col.items():
            factors[rows, NUCLEUS_COLUMNS.index(col)] = f
    volumes = (spec.baseline_vector()[None, :] * factors * np.exp(linear)[:, None]
               * (1.0 + spec.noise_sd * noise))
    ids = [f"sub-{i + 1:04d}" for i in range(n)]
    return CohortTable(ids, labels, age, sex, education, etiv, volumes)


# --------------------------------------------------------------------------
# benchmark sets for the evaluate workflow
# --------------------------------------------------------------------------

def gen_benchmark_set(spec: Mapping, out_dir) -> dict:
    """Write reference and per-method subject volumes plus a manifest.

    ``spec`` keys: ``n_subjects``, ``seed``, ``spacing`` and ``methods``
    mapping method name to ``{"jitter": int, "erode": [codes], "dilate":
    [codes], "drop": [codes]}``. Subjects differ by a jittered layout; each
    method's segmentation is that subject's reference re-rasterized with
    its own jitter and then eroded/dilated/dropped for the listed codes.
    The unjittered layout doubles as the common-grid reference.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_subjects = int(spec.get("n_subjects", 4))
    seed = int(spec.get("seed", 0))
    spacing = tuple(spec.get("spacing", (1.0, 1.0, 1.0)))
    methods = spec.get("methods") or {"exact": {"jitter": 0}, "shifted": {"jitter": 1}}
    seeds = np.random.SeedSequence(seed).generate_state(n_subjects * (len(methods) + 1))

    manifest = {"reference": {"label_map": "unified", "subjects": {}},
                "mni_reference": {"label_map": "unified", "path": "mni_reference.nii"},
                "methods": {m: {"label_map": "unified", "subjects": {}, "mni_subjects": {}}
                            for m in methods}}
    write_volume(gen_phantom_volume(thalamus_layout(seed, 0, spacing)),
                 out / "mni_reference.nii")
    k = 0
    for s in range(n_subjects):
        sid = f"sub-{s + 1:02d}"
        base = thalamus_layout(int(seeds[k]), 1, spacing)
        k += 1
        write_volume(gen_phantom_volume(base), out / f"ref_{sid}.nii")
        manifest["reference"]["subjects"][sid] = f"ref_{sid}.nii"
        for name, params in methods.items():
            jitter = int(params.get("jitter", 0))
            rng = np.random.default_rng(int(seeds[k]))
            k += 1
            shapes = []
            for shape in base.shapes:
                shift = rng.integers(-jitter, jitter + 1, size=3) if jitter else np.zeros(3, int)
                shapes.append(Ellipsoid(shape.code,
                                        tuple(int(c + d) for c, d in zip(shape.center, shift)),
                                        shape.semi_axes))
            vol = gen_phantom_volume(PhantomSpec(base.geometry, tuple(shapes), base.seed))
            for code in params.get("erode", []):
                vol = perturb(vol, "erode", int(code), k=1)
            for code in params.get("dilate", []):
                vol = perturb(vol, "dilate", int(code), k=1)
            for code in params.get("drop", []):
                vol = vol.with_array(np.where(vol.array == int(code), 0, vol.array))
            path = f"{name}_{sid}.nii"
            write_volume(vol, out / path)
            manifest["methods"][name]["subjects"][sid] = path
            manifest["methods"][name]["mni_subjects"][sid] = path
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
