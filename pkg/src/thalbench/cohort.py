"""Cohort tables: per-subject group, covariates and harmonized nucleus volumes.

CSV layout::

    subject_id,group,age,sex,education_years,etiv_mm3,L_AV,...,L_MD-Pf,R_AV,...,R_MD-Pf

``sex`` is ``F`` or ``M`` in the file and 0/1 (M = 1) in memory.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from os import PathLike
from typing import Union

import numpy as np

from .harmonize import ALL_NUCLEI, NUCLEI

GROUPS = ("HC", "EMCI", "LMCI", "AD")
COVARIATE_COLUMNS = ("age", "sex", "education_years", "etiv_mm3")
NUCLEUS_COLUMNS = tuple(n.column for n in ALL_NUCLEI)
CSV_HEADER = ("subject_id", "group") + COVARIATE_COLUMNS + NUCLEUS_COLUMNS


class CohortFormatError(ValueError):
    pass


@dataclass(eq=False)
class CohortTable:
    subject_id: list
    group: np.ndarray
    age: np.ndarray
    sex: np.ndarray
    education_years: np.ndarray
    etiv_mm3: np.ndarray
    volumes: np.ndarray  # subjects x 20, columns in NUCLEUS_COLUMNS order

    def __post_init__(self):
        n = len(self.subject_id)
        self.group = np.asarray(self.group).astype(str)
        for name in ("age", "sex", "education_years", "etiv_mm3"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.volumes = np.asarray(self.volumes, dtype=float).reshape(n, len(NUCLEUS_COLUMNS))
        for name in ("group", "age", "sex", "education_years", "etiv_mm3"):
            if len(getattr(self, name)) != n:
                raise CohortFormatError(f"column {name} has wrong length")
        bad = sorted(set(self.group.tolist()) - set(GROUPS))
        if bad:
            raise CohortFormatError(f"unknown groups {bad}; expected {GROUPS}")

    def __len__(self):
        return len(self.subject_id)

    def covariates(self, names=COVARIATE_COLUMNS) -> dict:
        return {name: getattr(self, name) for name in names}

    def column(self, name: str) -> np.ndarray:
        return self.volumes[:, NUCLEUS_COLUMNS.index(name)]

    def whole_thalamus(self, hemisphere: str | None = None) -> np.ndarray:
        """Sum of harmonized nucleus volumes, one or both hemispheres."""
        if hemisphere is None:
            return self.volumes.sum(axis=1)
        start = 0 if hemisphere == "L" else len(NUCLEI)
        return self.volumes[:, start:start + len(NUCLEI)].sum(axis=1)

    def subset(self, mask) -> "CohortTable":
        mask = np.asarray(mask, dtype=bool)
        return CohortTable([s for s, m in zip(self.subject_id, mask) if m],
                           self.group[mask], self.age[mask], self.sex[mask],
                           self.education_years[mask], self.etiv_mm3[mask],
                           self.volumes[mask])

    def __eq__(self, other):
        if not isinstance(other, CohortTable):
            return NotImplemented
        return (self.subject_id == other.subject_id
                and np.array_equal(self.group, other.group)
                and all(np.array_equal(getattr(self, c), getattr(other, c))
                        for c in ("age", "sex", "education_years", "etiv_mm3", "volumes")))


def _float(value: str, where: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise CohortFormatError(f"{where}: not a number: {value!r}") from None
    if not np.isfinite(out):
        raise CohortFormatError(f"{where}: non-finite value")
    return out


def read_cohort_csv(path: Union[str, PathLike]) -> CohortTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise CohortFormatError(f"{path}: missing columns {missing}")
        rows = list(reader)
    if not rows:
        raise CohortFormatError(f"{path}: no subjects")
    sex_codes = {"F": 0.0, "M": 1.0}
    cols = {c: [] for c in CSV_HEADER}
    for i, row in enumerate(rows, 2):
        where = f"{path}:{i}"
        cols["subject_id"].append(row["subject_id"])
        cols["group"].append(row["group"])
        if row["sex"] not in sex_codes:
            raise CohortFormatError(f"{where}: sex must be F or M, got {row['sex']!r}")
        cols["sex"].append(sex_codes[row["sex"]])
        for c in ("age", "education_years", "etiv_mm3") + NUCLEUS_COLUMNS:
            cols[c].append(_float(row[c], f"{where} [{c}]"))
    return CohortTable(cols["subject_id"], cols["group"], cols["age"], cols["sex"],
                       cols["education_years"], cols["etiv_mm3"],
                       np.array([cols[c] for c in NUCLEUS_COLUMNS]).T)


def write_cohort_csv(table: CohortTable, path: Union[str, PathLike]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for i, sid in enumerate(table.subject_id):
            writer.writerow(
                [sid, table.group[i], repr(float(table.age[i])),
                 "M" if table.sex[i] == 1 else "F",
                 repr(float(table.education_years[i])), repr(float(table.etiv_mm3[i]))]
                + [repr(float(v)) for v in table.volumes[i]])
