"""Data model, embedding parsing, labeling/leakage, and representations."""
import numpy as np
import pytest

from hfgraph.ehr import (
    CodeKind,
    CohortExclusion,
    EmbeddingParseError,
    EmbeddingStore,
    Label,
    MedicalCode,
    PatientRecord,
    UnrepresentablePatient,
    Visit,
    build_cohort,
    filter_code_kinds,
    is_hf_code,
    label_patient,
    load_cohort,
    load_embeddings,
    load_vectors,
    patient_representation,
    represent_cohort,
    save_vectors,
    visit_vector,
)


def dx(value):
    return MedicalCode(CodeKind.DIAGNOSIS, value)


def rx(value):
    return MedicalCode(CodeKind.PRESCRIPTION, value)


def px(value):
    return MedicalCode(CodeKind.PROCEDURE, value)


def visit(ordinal, *codes):
    return Visit(visit_id=f"v{ordinal}", ordinal=ordinal, codes=frozenset(codes))


# ---------------------------------------------------------------------------
# data model validation


def test_medical_code_rejects_empty_value():
    with pytest.raises(ValueError):
        MedicalCode(CodeKind.DIAGNOSIS, "")


def test_medical_code_rejects_whitespace():
    with pytest.raises(ValueError, match="whitespace"):
        MedicalCode(CodeKind.DIAGNOSIS, "42 8")


def test_visit_rejects_negative_ordinal():
    with pytest.raises(ValueError):
        Visit(visit_id="v", ordinal=-1, codes=frozenset())


def test_all_codes_unions_visits():
    rec = PatientRecord(
        "p1",
        (visit(0, dx("100"), rx("200")), visit(1, dx("100"), px("300"))),
        Label.NEGATIVE,
    )
    assert rec.all_codes() == {dx("100"), rx("200"), px("300")}


# ---------------------------------------------------------------------------
# embedding file parsing


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_embeddings_parses_table(tmp_path):
    p = tmp_path / "emb.tsv"
    write_lines(p, ["alpha\t1.0 2.0 3.0", "beta\t-0.5 0.25 0.0"])
    store = load_embeddings(p)
    assert store.dimension == 3
    assert len(store) == 2
    assert "alpha" in store and "gamma" not in store
    np.testing.assert_array_equal(store.get("beta"), [-0.5, 0.25, 0.0])
    assert store.get("gamma") is None
    assert store.max_norm() == pytest.approx(np.sqrt(14.0))


def test_load_embeddings_skips_blank_lines(tmp_path):
    p = tmp_path / "emb.tsv"
    p.write_text("a\t1.0\n\nb\t2.0\n", encoding="utf-8")
    assert len(load_embeddings(p)) == 2


@pytest.mark.parametrize(
    "bad_line, fragment",
    [
        ("no-tab-here 1.0 2.0", "expected"),
        ("c\tx y", "non-numeric"),
        ("c\t", "empty vector"),
        ("c\t1.0 inf", "non-finite"),
        ("c\t1.0 2.0 3.0", "dimension"),
    ],
)
def test_load_embeddings_names_bad_line(tmp_path, bad_line, fragment):
    p = tmp_path / "emb.tsv"
    write_lines(p, ["a\t1.0 2.0", bad_line])
    with pytest.raises(EmbeddingParseError, match=f"line 2.*{fragment}"):
        load_embeddings(p)


def test_load_embeddings_rejects_empty_file(tmp_path):
    p = tmp_path / "emb.tsv"
    p.write_text("", encoding="utf-8")
    with pytest.raises(EmbeddingParseError, match="empty"):
        load_embeddings(p)


def test_embedding_store_rejects_bad_dimension():
    with pytest.raises(ValueError):
        EmbeddingStore(dimension=0, table={})


# ---------------------------------------------------------------------------
# HF labeling and leakage exclusion


def test_is_hf_code_matches_diagnosis_prefix():
    assert is_hf_code(dx("428"))
    assert is_hf_code(dx("4280"))
    assert is_hf_code(dx("42832"))
    assert not is_hf_code(dx("427"))
    assert not is_hf_code(dx("1428"))


def test_is_hf_code_ignores_non_diagnosis_kinds():
    # NDC tokens may share leading digits with ICD-9 prefixes.
    assert not is_hf_code(rx("42800000000"))
    assert not is_hf_code(px("4280"))


def test_is_hf_code_custom_prefixes():
    assert is_hf_code(dx("39891"), hf_prefixes=("428", "39891"))
    assert not is_hf_code(dx("39891"))


def test_label_patient_negative_keeps_all_visits():
    visits = [visit(0, dx("100")), visit(1, dx("101")), visit(2, dx("102"))]
    rec = label_patient("p", visits)
    assert rec.label is Label.NEGATIVE
    assert len(rec.visits) == 3


def test_label_patient_truncates_at_first_hf_visit():
    visits = [
        visit(0, dx("100")),
        visit(1, dx("101")),
        visit(2, dx("4280"), dx("102")),
        visit(3, dx("103")),
    ]
    rec = label_patient("p", visits)
    assert rec.label is Label.POSITIVE
    assert [v.ordinal for v in rec.visits] == [0, 1]
    # Nothing at or after the first HF visit survives.
    assert not any(is_hf_code(c) for v in rec.visits for c in v.codes)


def test_label_patient_excludes_early_hf():
    # HF in the second visit leaves one retained visit: excluded.
    visits = [visit(0, dx("100")), visit(1, dx("4280"))]
    with pytest.raises(CohortExclusion):
        label_patient("p", visits)


def test_label_patient_excludes_single_visit_negative():
    with pytest.raises(CohortExclusion):
        label_patient("p", [visit(0, dx("100"))])


def test_label_patient_excludes_no_visits():
    with pytest.raises(CohortExclusion):
        label_patient("p", [])


def test_label_patient_rejects_unordered_visits():
    visits = [visit(1, dx("100")), visit(0, dx("101")), visit(2, dx("102"))]
    visits_bad = [visits[1], visits[1], visits[2]]  # duplicate ordinal
    with pytest.raises(ValueError, match="strictly increasing"):
        label_patient("p", visits)
    with pytest.raises(ValueError, match="strictly increasing"):
        label_patient("p", visits_bad)


def test_build_cohort_counts_exclusions():
    ok = ("keep", [visit(0, dx("100")), visit(1, dx("101"))])
    early_hf = ("drop1", [visit(0, dx("4280")), visit(1, dx("100")), visit(2, dx("101"))])
    single = ("drop2", [visit(0, dx("100"))])
    records, excluded = build_cohort([ok, early_hf, single])
    assert [r.patient_id for r in records] == ["keep"]
    assert excluded == 2


# ---------------------------------------------------------------------------
# hierarchical averaging


@pytest.fixture()
def small_store():
    return EmbeddingStore(
        dimension=2,
        table={
            "a": np.array([1.0, 0.0]),
            "b": np.array([0.0, 1.0]),
            "c": np.array([2.0, 2.0]),
        },
    )


def test_visit_vector_is_mean_of_embeddable_codes(small_store):
    v = visit(0, dx("a"), rx("b"), px("unknown"))
    np.testing.assert_allclose(visit_vector(v, small_store), [0.5, 0.5])


def test_visit_vector_none_when_nothing_embeddable(small_store):
    assert visit_vector(visit(0, dx("zz")), small_store) is None


def test_patient_representation_is_mean_of_visit_means(small_store):
    rec = PatientRecord(
        "p",
        (visit(0, dx("a"), rx("b")), visit(1, dx("c"))),  # means (.5,.5) and (2,2)
        Label.POSITIVE,
    )
    pv = patient_representation(rec, small_store)
    np.testing.assert_allclose(pv.features, [1.25, 1.25])
    assert pv.label is Label.POSITIVE
    assert pv.patient_id == "p"


def test_patient_representation_skips_missing_visits(small_store):
    rec = PatientRecord(
        "p",
        (visit(0, dx("a")), visit(1, dx("unknown"))),
        Label.NEGATIVE,
    )
    np.testing.assert_allclose(
        patient_representation(rec, small_store).features, [1.0, 0.0]
    )


def test_patient_representation_unrepresentable(small_store):
    rec = PatientRecord("p", (visit(0, dx("zz")), visit(1, rx("yy"))), Label.NEGATIVE)
    with pytest.raises(UnrepresentablePatient):
        patient_representation(rec, small_store)


def test_hierarchical_average_differs_from_flat_average(small_store):
    # Visit sizes are uneven, so visit-then-patient averaging is not the same
    # as pooling all codes; guard against silently flattening the hierarchy.
    rec = PatientRecord(
        "p",
        (visit(0, dx("a"), rx("b")), visit(1, dx("c"))),
        Label.NEGATIVE,
    )
    pv = patient_representation(rec, small_store)
    flat = np.mean([small_store.table[t] for t in ("a", "b", "c")], axis=0)
    assert not np.allclose(pv.features, flat)


# ---------------------------------------------------------------------------
# cohort file parsing


def test_load_cohort_parses_and_sorts_visits(tmp_path):
    p = tmp_path / "cohort.jsonl"
    lines = [
        '{"patient_id": "p1", "visits": ['
        '{"visit_id": "b", "ordinal": 1, "diagnoses": ["101"], "procedures": [], "prescriptions": ["500"]},'
        '{"visit_id": "a", "ordinal": 0, "diagnoses": ["100"], "procedures": ["300"], "prescriptions": []}'
        "]}"
    ]
    write_lines(p, lines)
    patients = load_cohort(p)
    assert len(patients) == 1
    pid, visits = patients[0]
    assert pid == "p1"
    assert [v.ordinal for v in visits] == [0, 1]
    assert visits[0].codes == frozenset({dx("100"), px("300")})
    assert visits[1].codes == frozenset({dx("101"), rx("500")})


def test_load_cohort_names_bad_json_line(tmp_path):
    p = tmp_path / "cohort.jsonl"
    write_lines(p, ['{"patient_id": "p1", "visits": []}', "{not json"])
    with pytest.raises(ValueError, match="line 2"):
        load_cohort(p)


def test_load_cohort_roundtrips_synthetic_fixture(tiny_paths, tiny_config):
    patients = load_cohort(tiny_paths["cohort"])
    assert len(patients) == tiny_config.n_patients
    assert all(visits for _, visits in patients)


# ---------------------------------------------------------------------------
# code-kind filtering (ablation support)


def test_filter_code_kinds_drop():
    visits = [visit(0, dx("100"), rx("200"), px("300"))]
    out = filter_code_kinds(visits, drop=CodeKind.PRESCRIPTION)
    assert out[0].codes == frozenset({dx("100"), px("300")})
    assert out[0].visit_id == "v0" and out[0].ordinal == 0


def test_filter_code_kinds_only():
    visits = [visit(0, dx("100"), rx("200"), px("300"))]
    out = filter_code_kinds(visits, only=CodeKind.DIAGNOSIS)
    assert out[0].codes == frozenset({dx("100")})


def test_filter_code_kinds_passthrough():
    visits = [visit(0, dx("100"), rx("200"))]
    assert filter_code_kinds(visits)[0].codes == visits[0].codes


def test_filter_code_kinds_rejects_both():
    with pytest.raises(ValueError, match="at most one"):
        filter_code_kinds([], drop=CodeKind.DIAGNOSIS, only=CodeKind.PROCEDURE)


@pytest.mark.parametrize("kwargs", [{"drop": "prescription"}, {"only": {"diagnosis"}}])
def test_filter_code_kinds_rejects_non_enum(kwargs):
    # Strings and collections must not silently filter nothing.
    with pytest.raises(TypeError, match="CodeKind"):
        filter_code_kinds([], **kwargs)


# ---------------------------------------------------------------------------
# cohort representation and coverage


def test_represent_cohort_counts_coverage(small_store):
    records = [
        PatientRecord("p1", (visit(0, dx("a")), visit(1, dx("b"), rx("zz"))), Label.NEGATIVE),
        PatientRecord("p2", (visit(0, dx("qq")), visit(1, rx("ww"))), Label.POSITIVE),
    ]
    vectors, cov = represent_cohort(records, small_store)
    assert [v.patient_id for v in vectors] == ["p1"]
    assert cov.patients_seen == 2
    assert cov.patients_dropped == 1
    assert cov.visits_seen == 4
    assert cov.visits_missing == 2
    assert cov.codes_seen == 5
    assert cov.codes_embeddable == 2
    assert cov.unknown_codes == {"zz", "qq", "ww"}
    d = cov.as_dict()
    assert d["code_coverage"] == pytest.approx(0.4)
    assert d["n_unknown_codes"] == 3


def test_represent_cohort_drop_changes_vectors(tiny_records, tiny_paths):
    store = load_embeddings(tiny_paths["embeddings"])
    full, _ = represent_cohort(tiny_records, store)
    dropped, _ = represent_cohort(tiny_records, store, drop=CodeKind.PRESCRIPTION)
    assert len(full) == len(dropped)
    diffs = [
        not np.allclose(a.features, b.features) for a, b in zip(full, dropped)
    ]
    assert all(diffs), "dropping prescriptions must change every patient vector"


def test_represent_cohort_full_coverage_on_synthetic_data(tiny_records, tiny_paths):
    store = load_embeddings(tiny_paths["embeddings"])
    _, cov = represent_cohort(tiny_records, store)
    assert cov.as_dict()["code_coverage"] == 1.0
    assert cov.patients_dropped == 0


# ---------------------------------------------------------------------------
# vector serialization


def test_save_load_vectors_roundtrip(tmp_path, rng):
    from hfgraph.ehr import PatientVector

    # Awkward floats must survive the round trip bit-for-bit.
    vectors = [
        PatientVector("p1", rng.standard_normal(5), Label.POSITIVE),
        PatientVector("p2", np.array([1e-300, -0.1, 1 / 3, 2e17, 0.0]), Label.NEGATIVE),
    ]
    path = tmp_path / "vectors.tsv"
    save_vectors(path, vectors)
    loaded = load_vectors(path)
    assert len(loaded) == 2
    for orig, back in zip(vectors, loaded):
        assert back.patient_id == orig.patient_id
        assert back.label is orig.label
        np.testing.assert_array_equal(back.features, orig.features)
