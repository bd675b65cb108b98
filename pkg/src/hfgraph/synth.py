"""Seeded synthetic EHR cohort generator.

Produces a cohort file, an embedding file, and a truth CSV shaped like the
real dataset the pipeline targets: a few thousand patients, three code
vocabularies (diagnoses, procedures, prescriptions), and a controllable
heart-failure signal.  The signal is concentrated in prescription codes,
with a moderate share in diagnoses and essentially none in procedures,
which is what the ablation workflow expects to find.

Every patient belongs to some clinical profile: positives to one of two HF
variants, negatives to one of many background comorbidity profiles.  All
profile pools sit at the same embedding radius around their kind's centroid,
just in different directions, so the class means nearly coincide and a
linear readout of the averaged vectors has little to work with.  Patients of
the same profile, however, are strongly aligned, which is exactly what a
cosine-KNN graph needs: neighborhoods are label-homogeneous, and models that
aggregate over them recover the signal a linear baseline cannot.

Positive patients additionally receive one trailing visit carrying a real
HF ICD-9 marker code (428.x family); the labeling step finds it, truncates
the history there, and assigns the positive label, so generator truth and
pipeline labels agree by construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Marker codes injected into the final visit of positive patients.
HF_MARKER_CODES = ("4280", "4281", "42820", "42830", "42840")

# Share of each kind's vocabulary reserved for the HF profile pools
# (split evenly between the two variants).
HF_POOL_FRACTION = 0.1

# Number of background comorbidity profiles the remaining vocabulary is
# partitioned into.  Many same-radius clusters saturate the embedding space,
# which is what keeps a single hyperplane from explaining the label.
N_BACKGROUND_PROFILES = 24

# Per-kind multiplier on signal_strength when patients sample profile codes.
SIGNAL_WEIGHTS = {"diagnosis": 0.4, "procedure": 0.0, "prescription": 1.0}

# Split of a visit's code budget across kinds (prescription-heavy, like the
# 817/517/3454 vocabulary shape).
KIND_SHARES = {"diagnosis": 0.3, "procedure": 0.2, "prescription": 0.5}

# Distance of every profile pool's centroid from its kind's centroid, as a
# fraction of the centroid norm.  Small enough that patient averages overlap
# across profiles, large enough that cosine neighborhoods stay informative.
HF_OFFSET_FRACTION = 0.2

# P(variant A) for a positive patient.  Balanced variants keep either HF
# cluster equally populated, so no single linear direction explains the label.
VARIANT_A_SHARE = 0.5


@dataclass
class SynthConfig:
    seed: int = 1
    n_patients: int = 4760
    positive_rate: float = 0.2871
    n_diag: int = 817
    n_proc: int = 517
    n_rx: int = 3454
    embed_dim: int = 32
    visits_per_patient: tuple[int, int] = (2, 6)
    codes_per_visit: tuple[int, int] = (3, 15)
    signal_strength: float = 0.7

    def validate(self) -> None:
        if self.n_patients <= 0:
            raise ValueError("n_patients must be positive")
        if not (0.0 < self.positive_rate < 1.0):
            raise ValueError("positive_rate must be in (0,1)")
        for name, size in (("n_diag", self.n_diag), ("n_proc", self.n_proc), ("n_rx", self.n_rx)):
            if size <= 0:
                raise ValueError(f"{name} must be positive")
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")
        for name, rng in (
            ("visits_per_patient", self.visits_per_patient),
            ("codes_per_visit", self.codes_per_visit),
        ):
            lo, hi = rng
            if lo > hi or lo < 1:
                raise ValueError(f"{name} range {rng} is empty or invalid")
        if not (0.0 <= self.signal_strength <= 1.0):
            raise ValueError("signal_strength must be in [0,1]")


def _vocabulary(config: SynthConfig) -> dict[str, list[str]]:
    # Numeric ranges chosen so no background token starts with "428".
    return {
        "diagnosis": [str(1000 + i) for i in range(config.n_diag)],
        "procedure": [str(50000 + i) for i in range(config.n_proc)],
        "prescription": [f"{60000000000 + i:011d}" for i in range(config.n_rx)],
    }


@dataclass
class _KindPools:
    """One kind's vocabulary partitioned into profile pools."""

    hf_a: list[str]
    hf_b: list[str]
    background: list[list[str]]  # one pool per background profile
    background_all: list[str]  # flat view for unconcentrated draws


def _pools(vocab: dict[str, list[str]]) -> dict[str, _KindPools]:
    """Split each kind's vocabulary into HF variant and background pools."""
    pools = {}
    for kind, tokens in vocab.items():
        cut = max(2, round(HF_POOL_FRACTION * len(tokens)))
        cut = min(cut, len(tokens) - 1)
        half = cut // 2
        rest = tokens[cut:]
        n_profiles = min(N_BACKGROUND_PROFILES, len(rest))
        bounds = np.linspace(0, len(rest), n_profiles + 1).round().astype(int)
        background = [rest[bounds[i] : bounds[i + 1]] for i in range(n_profiles)]
        pools[kind] = _KindPools(tokens[:half], tokens[half:cut], background, rest)
    return pools


def _embeddings(
    config: SynthConfig,
    vocab: dict[str, list[str]],
    pools: dict[str, _KindPools],
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Code embeddings: every profile pool is a cluster at the same radius
    around its kind's centroid, each in its own direction.

    The two HF variant directions are kept exactly orthogonal; background
    profile directions are random (near-orthogonal in high dimension).  With
    all clusters on one shell, the class means nearly coincide, but patients
    sharing a profile stay far more aligned than patients who do not.
    """
    table: dict[str, np.ndarray] = {}
    centroid_norm = 3.0
    sigma = 0.1 * centroid_norm
    offset = HF_OFFSET_FRACTION * centroid_norm

    def unit() -> np.ndarray:
        v = rng.standard_normal(config.embed_dim)
        return v / np.linalg.norm(v)

    for kind in ("diagnosis", "procedure", "prescription"):
        kp = pools[kind]
        centroid = centroid_norm * unit()
        dir_a = unit()
        dir_b = rng.standard_normal(config.embed_dim)
        dir_b -= (dir_b @ dir_a) * dir_a
        dir_b /= np.linalg.norm(dir_b)
        clusters = [(kp.hf_a, dir_a), (kp.hf_b, dir_b)]
        clusters += [(pool, unit()) for pool in kp.background]
        for pool, direction in clusters:
            shifted = centroid + offset * direction
            for token in pool:
                table[token] = shifted + sigma * rng.standard_normal(config.embed_dim)
    # Marker codes are only seen in truncated visits, but give them vectors
    # anyway so the embedding file covers everything the cohort can mention.
    marker_centroid = centroid_norm * unit()
    for token in HF_MARKER_CODES:
        table[token] = marker_centroid + sigma * rng.standard_normal(config.embed_dim)
    return table


def _visit_codes(
    variant: int,
    profile: int,
    config: SynthConfig,
    pools: dict[str, _KindPools],
    rng: np.random.Generator,
) -> dict[str, list[str]]:
    """One visit's codes.

    variant is 0 for negatives, 1 or 2 for the HF variants; profile indexes
    the patient's background comorbidity pool.  Profile draws happen with
    probability signal_strength scaled by the per-kind weight, so setting
    signal_strength to zero collapses everyone to uniform background noise.
    """
    lo, hi = config.codes_per_visit
    total = int(rng.integers(lo, hi + 1))
    counts = {
        "diagnosis": max(1, round(KIND_SHARES["diagnosis"] * total)),
        "prescription": max(1, round(KIND_SHARES["prescription"] * total)),
    }
    counts["procedure"] = max(1, total - counts["diagnosis"] - counts["prescription"])
    out: dict[str, list[str]] = {}
    for kind in ("diagnosis", "procedure", "prescription"):
        kp = pools[kind]
        if variant:
            pool = kp.hf_a if variant == 1 else kp.hf_b
        else:
            pool = kp.background[profile % len(kp.background)]
        p_pool = config.signal_strength * SIGNAL_WEIGHTS[kind]
        n_pool = int(rng.binomial(counts[kind], p_pool)) if p_pool > 0 else 0
        n_bg = counts[kind] - n_pool
        chosen: set[str] = set()
        if n_pool:
            take = min(n_pool, len(pool))
            chosen.update(pool[i] for i in rng.choice(len(pool), size=take, replace=False))
        if n_bg:
            take = min(n_bg, len(kp.background_all))
            chosen.update(
                kp.background_all[i]
                for i in rng.choice(len(kp.background_all), size=take, replace=False)
            )
        out[kind] = sorted(chosen)
    return out


def generate(config: SynthConfig, out_dir) -> dict[str, Path]:
    """Write cohort.jsonl, embeddings.tsv, and truth.csv under out_dir.

    Deterministic for a fixed config: identical configs produce byte-identical
    files.  Returns the three paths keyed by artifact name.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    vocab = _vocabulary(config)
    pools = _pools(vocab)
    table = _embeddings(config, vocab, pools, rng)

    n_pos = round(config.positive_rate * config.n_patients)
    labels = np.zeros(config.n_patients, dtype=np.int64)
    labels[rng.permutation(config.n_patients)[:n_pos]] = 1

    cohort_path = out_dir / "cohort.jsonl"
    truth_path = out_dir / "truth.csv"
    emb_path = out_dir / "embeddings.tsv"

    lo, hi = config.visits_per_patient
    with open(cohort_path, "w", encoding="utf-8") as coh, open(
        truth_path, "w", encoding="utf-8"
    ) as tru:
        tru.write("patient_id,label\n")
        for i in range(config.n_patients):
            pid = f"p{i:06d}"
            positive = bool(labels[i])
            variant = (1 if rng.random() < VARIANT_A_SHARE else 2) if positive else 0
            profile = int(rng.integers(N_BACKGROUND_PROFILES))
            n_visits = int(rng.integers(lo, hi + 1))
            visits = []
            for j in range(n_visits):
                codes = _visit_codes(variant, profile, config, pools, rng)
                visits.append(
                    {
                        "visit_id": f"{pid}v{j}",
                        "ordinal": j,
                        "diagnoses": codes["diagnosis"],
                        "procedures": codes["procedure"],
                        "prescriptions": codes["prescription"],
                    }
                )
            if positive:
                # Trailing HF-coded visit; labeling truncates it away, keeping
                # the n_visits profile visits above.
                marker = HF_MARKER_CODES[int(rng.integers(len(HF_MARKER_CODES)))]
                codes = _visit_codes(variant, profile, config, pools, rng)
                visits.append(
                    {
                        "visit_id": f"{pid}v{n_visits}",
                        "ordinal": n_visits,
                        "diagnoses": sorted(set(codes["diagnosis"]) | {marker}),
                        "procedures": codes["procedure"],
                        "prescriptions": codes["prescription"],
                    }
                )
            coh.write(json.dumps({"patient_id": pid, "visits": visits}, separators=(",", ":")))
            coh.write("\n")
            tru.write(f"{pid},{int(positive)}\n")

    with open(emb_path, "w", encoding="utf-8") as emb:
        for token in sorted(table):
            floats = " ".join(repr(float(x)) for x in table[token])
            emb.write(f"{token}\t{floats}\n")

    return {"cohort": cohort_path, "embeddings": emb_path, "truth": truth_path}


def load_truth(path) -> dict[str, int]:
    truth = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "patient_id,label":
            raise ValueError(f"unexpected truth header: {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            pid, label = line.split(",")
            truth[pid] = int(label)
    return truth
