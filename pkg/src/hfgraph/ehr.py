"""Patient/visit/code data model, embedding loading, HF labeling, and
hierarchical patient representations.

A patient is an ordered sequence of hospital visits, each carrying a set of
diagnosis, procedure, and prescription codes.  Codes are mapped to dense
pretrained vectors; a visit is the mean of its embeddable codes and a patient
is the mean of its visit vectors.  Labeling scans visits for heart-failure
diagnosis codes and truncates the history at the first hit so that no
HF-coded visit leaks into the features.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

DEFAULT_HF_PREFIXES = ("428",)


class CodeKind(Enum):
    DIAGNOSIS = "diagnosis"
    PROCEDURE = "procedure"
    PRESCRIPTION = "prescription"


class Label(Enum):
    NEGATIVE = 0
    POSITIVE = 1


class CohortExclusion(Exception):
    """Patient fails the cohort rules (fewer than 2 retained visits)."""


class UnrepresentablePatient(Exception):
    """No visit of the patient has any embeddable code."""


class EmbeddingParseError(ValueError):
    """Malformed embedding file; message names the offending line."""


@dataclass(frozen=True, order=True)
class MedicalCode:
    """A single clinical code, e.g. an ICD-9 diagnosis or an NDC token."""

    kind: CodeKind
    value: str

    def __post_init__(self):
        if not self.value:
            raise ValueError("medical code value must be non-empty")
        if any(ch.isspace() for ch in self.value):
            raise ValueError(f"medical code value contains whitespace: {self.value!r}")


@dataclass(frozen=True)
class Visit:
    visit_id: str
    ordinal: int
    codes: frozenset[MedicalCode]

    def __post_init__(self):
        if self.ordinal < 0:
            raise ValueError(f"visit ordinal must be non-negative, got {self.ordinal}")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    visits: tuple[Visit, ...]
    label: Label

    def all_codes(self) -> set[MedicalCode]:
        out: set[MedicalCode] = set()
        for v in self.visits:
            out |= v.codes
        return out


@dataclass(frozen=True)
class PatientVector:
    patient_id: str
    features: np.ndarray
    label: Label


class EmbeddingStore:
    """Map from code value to a fixed-dimension float64 vector."""

    def __init__(self, dimension: int, table: dict[str, np.ndarray]):
        if dimension <= 0:
            raise ValueError("embedding dimension must be positive")
        self.dimension = dimension
        self.table = table

    def __len__(self) -> int:
        return len(self.table)

    def __contains__(self, code_value: str) -> bool:
        return code_value in self.table

    def get(self, code_value: str) -> Optional[np.ndarray]:
        return self.table.get(code_value)

    def max_norm(self) -> float:
        return max((float(np.linalg.norm(v)) for v in self.table.values()), default=0.0)


@dataclass
class CoverageReport:
    """Tally of how much of a cohort the embedding store actually covers."""

    codes_seen: int = 0
    codes_embeddable: int = 0
    unknown_codes: set[str] = field(default_factory=set)
    visits_seen: int = 0
    visits_missing: int = 0
    patients_seen: int = 0
    patients_dropped: int = 0

    def as_dict(self) -> dict:
        return {
            "codes_seen": self.codes_seen,
            "codes_embeddable": self.codes_embeddable,
            "code_coverage": (self.codes_embeddable / self.codes_seen) if self.codes_seen else 0.0,
            "n_unknown_codes": len(self.unknown_codes),
            "visits_seen": self.visits_seen,
            "visits_missing": self.visits_missing,
            "patients_seen": self.patients_seen,
            "patients_dropped": self.patients_dropped,
        }


def load_embeddings(path) -> EmbeddingStore:
    """Parse an embedding file, one ``code<TAB>v1 v2 ... vd`` line each.

    The dimension is inferred from the first line; any later line with a
    different float count (or a non-finite value) raises EmbeddingParseError
    naming the line number.
    """
    table: dict[str, np.ndarray] = {}
    dimension = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                code, vec_text = line.split("\t", 1)
            except ValueError:
                raise EmbeddingParseError(f"line {lineno}: expected 'code<TAB>floats'")
            try:
                vec = np.array([float(tok) for tok in vec_text.split()], dtype=np.float64)
            except ValueError:
                raise EmbeddingParseError(f"line {lineno}: non-numeric embedding value")
            if vec.size == 0:
                raise EmbeddingParseError(f"line {lineno}: empty vector")
            if not np.all(np.isfinite(vec)):
                raise EmbeddingParseError(f"line {lineno}: non-finite embedding value")
            if dimension is None:
                dimension = vec.size
            elif vec.size != dimension:
                raise EmbeddingParseError(
                    f"line {lineno}: dimension {vec.size} != expected {dimension}"
                )
            table[code] = vec
    if dimension is None:
        raise EmbeddingParseError("empty embedding file")
    return EmbeddingStore(dimension=int(dimension), table=table)


def is_hf_code(code: MedicalCode, hf_prefixes: Sequence[str] = DEFAULT_HF_PREFIXES) -> bool:
    """True for heart-failure diagnosis codes (ICD-9 prefix match).

    Only diagnosis codes are eligible: NDC prescription tokens may share
    leading digits with ICD-9 prefixes and must not trigger labeling.
    """
    if code.kind is not CodeKind.DIAGNOSIS:
        return False
    return any(code.value.startswith(p) for p in hf_prefixes)


def label_patient(
    patient_id: str,
    raw_visits: Sequence[Visit],
    hf_prefixes: Sequence[str] = DEFAULT_HF_PREFIXES,
) -> PatientRecord:
    """Apply the HF labeling and leakage-exclusion rule to one patient.

    If any visit carries an HF diagnosis code, the patient is Positive and
    only visits strictly before the first such visit are retained.  Patients
    left with fewer than 2 visits raise CohortExclusion.
    """
    if not raw_visits:
        raise CohortExclusion(f"{patient_id}: no visits")
    ordinals = [v.ordinal for v in raw_visits]
    if any(b <= a for a, b in zip(ordinals, ordinals[1:])):
        raise ValueError(f"{patient_id}: visit ordinals must be strictly increasing")

    first_hf = None
    for i, visit in enumerate(raw_visits):
        if any(is_hf_code(c, hf_prefixes) for c in visit.codes):
            first_hf = i
            break

    if first_hf is None:
        retained = tuple(raw_visits)
        label = Label.NEGATIVE
    else:
        retained = tuple(raw_visits[:first_hf])
        label = Label.POSITIVE

    if len(retained) < 2:
        raise CohortExclusion(
            f"{patient_id}: {len(retained)} retained visit(s), need at least 2"
        )
    return PatientRecord(patient_id=patient_id, visits=retained, label=label)


def visit_vector(visit: Visit, store: EmbeddingStore) -> Optional[np.ndarray]:
    """Mean embedding of the visit's codes, or None when nothing is embeddable.

    Codes absent from the store are skipped.  Summation runs in sorted
    (value, kind) order so the result is bit-for-bit reproducible.
    """
    known = sorted(
        (c for c in visit.codes if c.value in store),
        key=lambda c: (c.value, c.kind.value),
    )
    if not known:
        return None
    acc = np.zeros(store.dimension, dtype=np.float64)
    for code in known:
        acc += store.table[code.value]
    return acc / len(known)


def patient_representation(record: PatientRecord, store: EmbeddingStore) -> PatientVector:
    """Mean over the record's non-missing visit vectors, carrying its label."""
    acc = np.zeros(store.dimension, dtype=np.float64)
    count = 0
    for visit in record.visits:
        vec = visit_vector(visit, store)
        if vec is not None:
            acc += vec
            count += 1
    if count == 0:
        raise UnrepresentablePatient(record.patient_id)
    return PatientVector(
        patient_id=record.patient_id, features=acc / count, label=record.label
    )


def load_cohort(path) -> list[tuple[str, list[Visit]]]:
    """Read a cohort file (one JSON object per line) into raw visit lists."""
    patients: list[tuple[str, list[Visit]]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"cohort line {lineno}: invalid JSON ({exc})")
            visits = []
            for vobj in obj["visits"]:
                codes: set[MedicalCode] = set()
                for value in vobj.get("diagnoses", []):
                    codes.add(MedicalCode(CodeKind.DIAGNOSIS, value))
                for value in vobj.get("procedures", []):
                    codes.add(MedicalCode(CodeKind.PROCEDURE, value))
                for value in vobj.get("prescriptions", []):
                    codes.add(MedicalCode(CodeKind.PRESCRIPTION, value))
                visits.append(
                    Visit(
                        visit_id=str(vobj["visit_id"]),
                        ordinal=int(vobj["ordinal"]),
                        codes=frozenset(codes),
                    )
                )
            visits.sort(key=lambda v: v.ordinal)
            patients.append((str(obj["patient_id"]), visits))
    return patients


def filter_code_kinds(
    visits: Iterable[Visit],
    drop: Optional[CodeKind] = None,
    only: Optional[CodeKind] = None,
) -> list[Visit]:
    """Restrict visit code sets to a kind subset (ablation support).

    Exactly one of drop/only may be given; with neither, visits pass through.
    """
    if drop is not None and only is not None:
        raise ValueError("specify at most one of drop/only")
    for name, value in (("drop", drop), ("only", only)):
        if value is not None and not isinstance(value, CodeKind):
            raise TypeError(f"{name} must be a CodeKind, got {type(value).__name__}")
    out = []
    for v in visits:
        if drop is not None:
            kept = frozenset(c for c in v.codes if c.kind is not drop)
        elif only is not None:
            kept = frozenset(c for c in v.codes if c.kind is only)
        else:
            kept = v.codes
        out.append(Visit(visit_id=v.visit_id, ordinal=v.ordinal, codes=kept))
    return out


def build_cohort(
    raw_patients: Sequence[tuple[str, list[Visit]]],
    hf_prefixes: Sequence[str] = DEFAULT_HF_PREFIXES,
) -> tuple[list[PatientRecord], int]:
    """Label every patient, dropping the ones the cohort rules exclude.

    Returns the retained records plus the number of exclusions.
    """
    records: list[PatientRecord] = []
    excluded = 0
    for patient_id, visits in raw_patients:
        try:
            records.append(label_patient(patient_id, visits, hf_prefixes))
        except CohortExclusion:
            excluded += 1
    return records, excluded


def represent_cohort(
    records: Sequence[PatientRecord],
    store: EmbeddingStore,
    drop: Optional[CodeKind] = None,
    only: Optional[CodeKind] = None,
) -> tuple[list[PatientVector], CoverageReport]:
    """Turn labeled records into patient vectors, tracking coverage.

    Patients with no embeddable visit are dropped (and counted); a code-kind
    filter may be applied first for ablation runs.
    """
    vectors: list[PatientVector] = []
    cov = CoverageReport()
    for record in records:
        cov.patients_seen += 1
        visits = filter_code_kinds(record.visits, drop=drop, only=only)
        filtered = PatientRecord(record.patient_id, tuple(visits), record.label)
        for v in filtered.visits:
            cov.visits_seen += 1
            known = 0
            for c in v.codes:
                cov.codes_seen += 1
                if c.value in store:
                    cov.codes_embeddable += 1
                    known += 1
                else:
                    cov.unknown_codes.add(c.value)
            if known == 0:
                cov.visits_missing += 1
        try:
            vectors.append(patient_representation(filtered, store))
        except UnrepresentablePatient:
            cov.patients_dropped += 1
    return vectors, cov


def save_vectors(path, vectors: Sequence[PatientVector]) -> None:
    """Write patient vectors as ``patient_id<TAB>label<TAB>floats`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for pv in vectors:
            floats = " ".join(repr(float(x)) for x in pv.features)
            fh.write(f"{pv.patient_id}\t{pv.label.value}\t{floats}\n")


def load_vectors(path) -> list[PatientVector]:
    vectors = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            pid, label, floats = line.split("\t")
            features = np.array([float(t) for t in floats.split()], dtype=np.float64)
            vectors.append(PatientVector(pid, features, Label(int(label))))
    return vectors
