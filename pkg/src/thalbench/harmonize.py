"""Map segmentation nomenclatures onto the unified 10-nucleus scheme.

Harmonized volumes carry hemisphere in the label code: the ten nuclei are
coded 1-10 on the left and 11-20 on the right, in the order of ``NUCLEI``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from os import PathLike
from typing import Union

import numpy as np

from .volgrid import LabelVolume

NUCLEI = ("AV", "VA", "VLa", "VLp", "VPL", "Pul", "LGN", "MGN", "CM", "MD-Pf")
HEMISPHERES = ("L", "R")
N_CODES = 2 * len(NUCLEI)
DROP = "DROP"
BUILTIN_MAPS = ("freesurfer", "krauth", "unified")


class LabelMapError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class NucleusId:
    hemisphere: str
    nucleus: str

    def __post_init__(self):
        if self.nucleus not in NUCLEI:
            raise LabelMapError(f"unknown nucleus {self.nucleus!r}")
        if self.hemisphere not in HEMISPHERES:
            raise LabelMapError(f"unknown hemisphere {self.hemisphere!r}")

    @property
    def code(self) -> int:
        offset = 0 if self.hemisphere == "L" else len(NUCLEI)
        return offset + NUCLEI.index(self.nucleus) + 1

    @property
    def column(self) -> str:
        """Column name used in cohort tables, e.g. ``L_MD-Pf``."""
        return f"{self.hemisphere}_{self.nucleus}"

    @classmethod
    def from_code(cls, code: int) -> "NucleusId":
        if not 1 <= code <= N_CODES:
            raise LabelMapError(f"code {code} outside 1..{N_CODES}")
        hemi, idx = divmod(code - 1, len(NUCLEI))
        return cls(HEMISPHERES[hemi], NUCLEI[idx])

    def __str__(self):
        return self.column


ALL_NUCLEI = tuple(NucleusId.from_code(c) for c in range(1, N_CODES + 1))


@dataclass(frozen=True)
class LabelMap:
    """Source label -> NucleusId, or ``None`` for labels explicitly dropped."""

    name: str
    entries: dict
    coverage: frozenset = field(default=frozenset())

    def __post_init__(self):
        mapped = {n for n in self.entries.values() if n is not None}
        missing = set(self.coverage) - mapped
        if missing:
            names = ", ".join(sorted(str(n) for n in missing))
            raise LabelMapError(f"scheme {self.name!r} declares coverage of "
                                f"{names} but maps no label to them")

    def lookup_table(self, max_label: int) -> np.ndarray:
        lut = np.zeros(max(max_label, 0) + 1, dtype=np.int32)
        for src, target in self.entries.items():
            if target is not None and src <= max_label:
                lut[src] = target.code
        return lut

    def sources_for(self, nucleus: NucleusId) -> list[int]:
        return sorted(s for s, n in self.entries.items() if n == nucleus)


@dataclass
class RemapTally:
    """Voxel counts of source labels that did not survive harmonization."""

    dropped: dict = field(default_factory=dict)
    unmapped: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.dropped.values()) + sum(self.unmapped.values())


def _parse_coverage(value: str) -> frozenset:
    value = value.strip()
    if value == "all":
        return frozenset(ALL_NUCLEI)
    out = set()
    for token in value.split(","):
        hemi, _, nucleus = token.strip().partition("_")
        out.add(NucleusId(hemi, nucleus))
    return frozenset(out)


def parse_label_map(text: str, source: str = "<string>") -> LabelMap:
    name = None
    coverage = frozenset()
    entries: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].partition(":")
            key = key.strip().lower()
            if sep and key == "scheme":
                name = value.strip()
            elif sep and key == "coverage":
                coverage = _parse_coverage(value)
            continue
        if name is None:
            raise LabelMapError(f"{source}: missing '# scheme: <name>' header")
        row = line.split("#", 1)[0].rstrip().split("\t")
        row = [c.strip() for c in row]
        if len(row) == 2 and row[1] == DROP:
            row.append("")
        if len(row) != 3:
            raise LabelMapError(f"{source}:{lineno}: expected 3 tab-separated "
                                f"fields, got {len(row)}")
        try:
            src = int(row[0])
        except ValueError:
            raise LabelMapError(f"{source}:{lineno}: bad source label {row[0]!r}") from None
        if src <= 0:
            raise LabelMapError(f"{source}:{lineno}: source label must be positive")
        if src in entries:
            raise LabelMapError(f"{source}:{lineno}: duplicate source label {src}")
        if row[1] == DROP:
            entries[src] = None
            continue
        if row[1] not in NUCLEI:
            raise LabelMapError(f"{source}:{lineno}: unknown nucleus {row[1]!r}")
        if row[2] not in HEMISPHERES:
            raise LabelMapError(f"{source}:{lineno}: unknown hemisphere {row[2]!r}")
        entries[src] = NucleusId(row[2], row[1])
    if name is None:
        raise LabelMapError(f"{source}: missing '# scheme: <name>' header")
    return LabelMap(name, entries, coverage)


def load_label_map(path: Union[str, PathLike]) -> LabelMap:
    """Load a label map from a TSV file, or a builtin map by name."""
    if isinstance(path, str) and path in BUILTIN_MAPS:
        return builtin_label_map(path)
    with open(path, encoding="utf-8") as fh:
        return parse_label_map(fh.read(), str(path))


def builtin_label_map(name: str) -> LabelMap:
    if name not in BUILTIN_MAPS:
        raise LabelMapError(f"no builtin label map {name!r}; have {BUILTIN_MAPS}")
    text = resources.files("thalbench.data").joinpath(f"{name}.tsv").read_text("utf-8")
    return parse_label_map(text, f"builtin:{name}")


def remap(v: LabelVolume, m: LabelMap) -> tuple[LabelVolume, RemapTally]:
    """Relabel ``v`` into harmonized codes.

    Dropped and unmapped source labels become background; their voxel counts
    are returned in the tally.
    """
    values, counts = np.unique(v.array, return_counts=True)
    tally = RemapTally()
    for value, count in zip(values.tolist(), counts.tolist()):
        if value == 0:
            continue
        if value not in m.entries:
            tally.unmapped[value] = count
        elif m.entries[value] is None:
            tally.dropped[value] = count
    max_label = int(values[-1]) if len(values) else 0
    lut = m.lookup_table(max_label)
    return v.with_array(lut[v.array]), tally
