"""Overlap and distance metrics between voxel sets, and group atlases."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .edt import squared_edt
from .harmonize import N_CODES
from .volgrid import LabelVolume, VolumeGeometry, VoxelSet, voxel_set


class GeometryMismatch(ValueError):
    pass


class EmptySetError(ValueError):
    """A distance was requested for an empty voxel set (absent nucleus)."""


@dataclass(frozen=True)
class OverlapResult:
    dice: float
    intersection_count: int
    size_x: int
    size_y: int

    @property
    def fraction(self) -> Fraction:
        total = self.size_x + self.size_y
        return Fraction(1) if total == 0 else Fraction(2 * self.intersection_count, total)


@dataclass(frozen=True)
class DistanceResult:
    d_ab: float
    d_ba: float
    ahd: float


def _check_geometry(a: VolumeGeometry, b: VolumeGeometry):
    if a.dims != b.dims:
        raise GeometryMismatch(f"grid mismatch: {a.dims} vs {b.dims}")
    if a.spacing != b.spacing:
        raise GeometryMismatch(f"spacing mismatch: {a.spacing} vs {b.spacing}")


def dice(x: VoxelSet, y: VoxelSet) -> OverlapResult:
    """Dice overlap. Two empty sets count as perfect agreement (1.0)."""
    _check_geometry(x.geometry, y.geometry)
    inter = len(np.intersect1d(x.linear_indices(), y.linear_indices(),
                               assume_unique=True))
    total = len(x) + len(y)
    value = 1.0 if total == 0 else (2 * inter) / total
    return OverlapResult(value, inter, len(x), len(y))


def _bbox(*sets: VoxelSet) -> tuple[np.ndarray, np.ndarray]:
    coords = np.concatenate([s.coords for s in sets])
    return coords.min(axis=0), coords.max(axis=0) + 1


def _distances_to(target: VoxelSet, points: np.ndarray, lo, hi, spacing):
    shape = tuple(int(v) for v in hi - lo)
    sites = np.zeros(shape, dtype=bool)
    local = target.coords - lo
    sites[tuple(local.T)] = True
    sq = squared_edt(sites, spacing)
    p = points - lo
    return np.sqrt(sq[tuple(p.T)])


def _spacing(geometry: VolumeGeometry, physical: bool):
    return geometry.spacing if physical else None


def directed_avg_distance(a: VoxelSet, b: VoxelSet, physical: bool = False) -> float:
    """Mean over voxels of ``a`` of the distance to the nearest voxel of ``b``.

    Distances are in voxel index units unless ``physical`` is set, in which
    case voxel spacing turns them into mm.
    """
    _check_geometry(a.geometry, b.geometry)
    if not a or not b:
        raise EmptySetError("directed distance needs two non-empty sets")
    # the EDT of b restricted to the joint bounding box is exact: every site
    # of b lies inside it
    lo, hi = _bbox(a, b)
    d = _distances_to(b, a.coords, lo, hi, _spacing(a.geometry, physical))
    return math.fsum(d.tolist()) / len(a)


def average_hausdorff(a: VoxelSet, b: VoxelSet, physical: bool = False) -> DistanceResult:
    _check_geometry(a.geometry, b.geometry)
    if not a or not b:
        raise EmptySetError("average Hausdorff distance needs two non-empty sets")
    lo, hi = _bbox(a, b)
    spacing = _spacing(a.geometry, physical)
    d_ab = math.fsum(_distances_to(b, a.coords, lo, hi, spacing).tolist()) / len(a)
    d_ba = math.fsum(_distances_to(a, b.coords, lo, hi, spacing).tolist()) / len(b)
    return DistanceResult(d_ab, d_ba, max(d_ab, d_ba))


@dataclass(frozen=True, eq=False)
class CrossMatrix:
    """Nucleus-by-nucleus matrix; rows index ``seg`` codes, columns ``ref``.

    Entries involving a nucleus missing from either volume are NaN and
    flagged in ``absent``.
    """

    values: np.ndarray
    absent: np.ndarray
    codes: tuple


def _label_sets(v: LabelVolume, codes) -> list[VoxelSet]:
    return [voxel_set(v, c) for c in codes]


def cross_nucleus_dice_matrix(seg: LabelVolume, ref: LabelVolume,
                              codes: Sequence[int] = tuple(range(1, N_CODES + 1))
                              ) -> CrossMatrix:
    _check_geometry(seg.geometry, ref.geometry)
    s_sets, r_sets = _label_sets(seg, codes), _label_sets(ref, codes)
    n = len(codes)
    values = np.full((n, n), np.nan)
    absent = np.zeros((n, n), dtype=bool)
    for i, s in enumerate(s_sets):
        for j, r in enumerate(r_sets):
            if not s or not r:
                absent[i, j] = True
            else:
                values[i, j] = dice(s, r).dice
    return CrossMatrix(values, absent, tuple(codes))


def cross_nucleus_ahd_matrix(seg: LabelVolume, ref: LabelVolume,
                             codes: Sequence[int] = tuple(range(1, N_CODES + 1)),
                             physical: bool = False, workers: int = 1) -> CrossMatrix:
    """AHD between every segmented nucleus and every reference nucleus."""
    _check_geometry(seg.geometry, ref.geometry)
    s_sets, r_sets = _label_sets(seg, codes), _label_sets(ref, codes)
    present = [s for s in s_sets + r_sets if s]
    n = len(codes)
    values = np.full((n, n), np.nan)
    absent = np.ones((n, n), dtype=bool)
    if not present:
        return CrossMatrix(values, absent, tuple(codes))
    lo, hi = _bbox(*present)
    shape = tuple(int(v) for v in hi - lo)
    spacing = _spacing(seg.geometry, physical)

    def field(vs: VoxelSet):
        if not vs:
            return None
        sites = np.zeros(shape, dtype=bool)
        sites[tuple((vs.coords - lo).T)] = True
        return np.sqrt(squared_edt(sites, spacing))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        fields = list(pool.map(field, s_sets + r_sets))
    s_fields, r_fields = fields[:n], fields[n:]

    def mean_at(dist, vs):
        p = vs.coords - lo
        return math.fsum(dist[tuple(p.T)].tolist()) / len(vs)

    for i, s in enumerate(s_sets):
        for j, r in enumerate(r_sets):
            if s and r:
                d_sr = mean_at(r_fields[j], s)
                d_rs = mean_at(s_fields[i], r)
                values[i, j] = max(d_sr, d_rs)
                absent[i, j] = False
    return CrossMatrix(values, absent, tuple(codes))


@dataclass(frozen=True, eq=False)
class ProbAtlas:
    """Per-nucleus label counts across subjects, stored inside a bounding box.

    ``counts[c - 1]`` holds, for code ``c``, how many subjects carry that
    label at each voxel of the box starting at ``origin``.
    """

    geometry: VolumeGeometry
    origin: tuple
    counts: np.ndarray
    n_subjects: int

    def frequency(self, code: int) -> np.ndarray:
        """Full-grid frequency map for one nucleus code."""
        out = np.zeros(self.geometry.dims)
        box = self._box()
        out[box] = self.counts[code - 1] / self.n_subjects
        return out

    def _box(self):
        return tuple(slice(o, o + s) for o, s in zip(self.origin, self.counts.shape[1:]))


def build_prob_atlas(volumes: Sequence[LabelVolume]) -> ProbAtlas:
    if not volumes:
        raise ValueError("need at least one volume to build an atlas")
    geometry = volumes[0].geometry
    for v in volumes[1:]:
        _check_geometry(geometry, v.geometry)
    support = np.zeros(geometry.dims, dtype=bool)
    for v in volumes:
        if v.array.size and v.array.max() > N_CODES:
            raise ValueError(f"atlas inputs must be harmonized (labels <= {N_CODES})")
        support |= v.array > 0
    if support.any():
        idx = np.nonzero(support)
        origin = tuple(int(i.min()) for i in idx)
        stop = tuple(int(i.max()) + 1 for i in idx)
    else:
        origin, stop = (0, 0, 0), (1, 1, 1)
    box = tuple(slice(o, s) for o, s in zip(origin, stop))
    shape = tuple(s - o for o, s in zip(origin, stop))
    counts = np.zeros((N_CODES,) + shape, dtype=np.int32)
    for v in volumes:
        crop = v.array[box]
        for code in range(1, N_CODES + 1):
            counts[code - 1] += crop == code
    return ProbAtlas(geometry, origin, counts, len(volumes))


def binarize_atlas(atlas: ProbAtlas, threshold: float = 0.25) -> LabelVolume:
    """Hard labels from an atlas.

    A voxel gets nucleus ``n`` when its frequency reaches ``threshold``
    (inclusive). When several nuclei pass, the most frequent wins and ties go
    to the lowest code.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    best = np.argmax(atlas.counts, axis=0)  # first max -> lowest code
    top = np.take_along_axis(atlas.counts, best[None], axis=0)[0]
    keep = top / atlas.n_subjects >= threshold
    out = np.zeros(atlas.geometry.dims, dtype=np.int32)
    out[atlas._box()] = np.where(keep, best + 1, 0)
    return LabelVolume(out, atlas.geometry.spacing)
