"""Count data for single and stratified two-arm binary experiments."""

from __future__ import annotations

import csv
import numbers
import hashlib
import io
from dataclasses import dataclass
from importlib import resources


class DataError(ValueError):
    """Malformed or inconsistent count data."""


@dataclass(frozen=True)
class TrialData:
    """Adverse-event counts: y0 of N0 under control, y1 of N1 under treatment."""

    y0: int
    N0: int
    y1: int
    N1: int

    @property
    def N(self) -> int:
        return self.N0 + self.N1

    def counts(self) -> tuple[int, int, int, int]:
        return (self.y0, self.N0, self.y1, self.N1)

    def fingerprint(self) -> str:
        key = ",".join(str(int(c)) for c in self.counts())
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def swapped(self) -> "TrialData":
        """The same trial with the roles of the two arms exchanged."""
        return TrialData(self.y1, self.N1, self.y0, self.N0)

    def checked(self) -> "TrialData":
        problems = validate(self)
        if problems:
            raise DataError("; ".join(problems))
        return self


def validate(data: TrialData) -> list[str]:
    """Every violated count constraint; an empty list means the data are valid."""
    out = []
    for name in ("y0", "N0", "y1", "N1"):
        v = getattr(data, name)
        if isinstance(v, bool) or not isinstance(v, numbers.Integral):
            out.append(f"{name} is not an integer")
        elif v < 0:
            out.append(f"{name} < 0")
    if not out:
        if data.y0 > data.N0:
            out.append("y0 > N0")
        if data.y1 > data.N1:
            out.append("y1 > N1")
    return out


@dataclass(frozen=True)
class StudyCorpus:
    studies: tuple[tuple[str, TrialData], ...]

    def __post_init__(self):
        ids = [s for s, _ in self.studies]
        if len(set(ids)) != len(ids):
            raise DataError("study ids must be unique")

    def __len__(self):
        return len(self.studies)

    def __iter__(self):
        return iter(self.studies)

    def __getitem__(self, key):
        if isinstance(key, str):
            for sid, d in self.studies:
                if sid == key:
                    return d
            raise KeyError(key)
        return self.studies[key]


@dataclass(frozen=True)
class StratifiedTrialData:
    strata: tuple[tuple[str, TrialData], ...]

    def __post_init__(self):
        if not self.strata:
            raise DataError("at least one stratum is required")
        labels = [s for s, _ in self.strata]
        if len(set(labels)) != len(labels):
            raise DataError("stratum labels must be unique")

    @property
    def labels(self) -> list[str]:
        return [s for s, _ in self.strata]

    @property
    def trials(self) -> list[TrialData]:
        return [d for _, d in self.strata]

    def __len__(self):
        return len(self.strata)


TRIAL_COLUMNS = ["study", "y0", "N0", "y1", "N1"]
STRATA_COLUMNS = ["stratum"] + TRIAL_COLUMNS


def _rows(text: str, columns: list[str]):
    lines = [(i + 1, line) for i, line in enumerate(text.splitlines())]
    body = [(n, line) for n, line in lines if line.strip() and not line.lstrip().startswith("#")]
    if not body:
        raise DataError("no header row found")
    hn, header = body[0]
    names = [c.strip() for c in next(csv.reader([header]))]
    if names != columns:
        raise DataError(f"line {hn}: expected header {','.join(columns)}, got {header.strip()}")
    for n, line in body[1:]:
        cells = [c.strip() for c in next(csv.reader([line]))]
        if len(cells) != len(columns):
            raise DataError(f"line {n}: expected {len(columns)} fields, got {len(cells)}")
        yield n, cells


def _trial(n: int, cells: list[str]) -> TrialData:
    try:
        counts = [int(c) for c in cells]
    except ValueError:
        raise DataError(f"line {n}: counts must be integers") from None
    d = TrialData(*counts)
    problems = validate(d)
    if problems:
        raise DataError(f"line {n}: " + "; ".join(problems))
    return d


def parse_trials(text: str | bytes) -> StudyCorpus:
    """Parse a `study,y0,N0,y1,N1` CSV; `#` lines are comments."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    studies = [(cells[0], _trial(n, cells[1:])) for n, cells in _rows(text, TRIAL_COLUMNS)]
    return StudyCorpus(tuple(studies))


def serialize_trials(corpus: StudyCorpus) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    for sid, d in corpus:
        w.writerow([sid, *d.counts()])
    return buf.getvalue()


def parse_strata(text: str | bytes) -> StratifiedTrialData:
    """Parse a stratified CSV: the trial schema with a leading `stratum` column.

    The study column is kept in the file for compatibility but a file holds a
    single study, so only the stratum label identifies a row.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    strata = [(cells[0], _trial(n, cells[2:])) for n, cells in _rows(text, STRATA_COLUMNS)]
    return StratifiedTrialData(tuple(strata))


def serialize_strata(data: StratifiedTrialData, study: str = "study") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STRATA_COLUMNS)
    for label, d in data.strata:
        w.writerow([label, study, *d.counts()])
    return buf.getvalue()


# Bundled case studies.
ASPIRIN_PHS = TrialData(26, 11034, 10, 11037)
COVID_PFIZER = TrialData(169, 20172, 9, 19965)
PATHOLOGICAL = TrialData(20, 1000, 40, 1000)


def covid_age_strata() -> StratifiedTrialData:
    text = resources.files("brease").joinpath("datasets/covid_age_strata.csv").read_text("utf-8")
    return parse_strata(text)
