import json

import pytest

from dialex.corpus import (
    CorpusError,
    DialogueRecord,
    DomainSchema,
    EntityAnnotation,
    EntityTypeDef,
    KeyInfo,
    Turn,
    build_entity_examples,
    load_corpus,
    load_schemas,
    record_from_dict,
    serialize_corpus,
    validate_record,
)

RE_SCHEMA = DomainSchema(
    domain="real_estate",
    entity_types=(
        EntityTypeDef("layout", "Room layout the user wants."),
        EntityTypeDef("location", "Area where the user wants property."),
        EntityTypeDef("budget", "Amount the user will spend."),
    ),
)

HOME_SCHEMA = DomainSchema(
    domain="home",
    entity_types=(EntityTypeDef("layout", "Room layout."),),
)


def make_record(**overrides):
    base = dict(
        id="re-1",
        domain="real_estate",
        turns=(
            Turn("user", "looking for a three bedroom near riverside", 0),
            Turn("assistant", "what is your budget", 1),
            Turn("user", "around 2 million", 2),
            Turn("assistant", "noted", 3),
        ),
        entities=(
            EntityAnnotation("layout", "three bedroom", turn_index=0),
            EntityAnnotation("location", "riverside", turn_index=0),
            EntityAnnotation("budget", "2 million", turn_index=2),
        ),
        key_info=KeyInfo(("three bedroom", "riverside", "2 million"), ("what is your budget",)),
    )
    base.update(overrides)
    return DialogueRecord(**base)


def write_corpus(tmp_path, records):
    path = tmp_path / "corpus.jsonl"
    path.write_text(serialize_corpus(records), encoding="utf-8")
    return path


class TestLoadCorpus:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_corpus(path, {"real_estate": RE_SCHEMA}) == []

    def test_single_real_estate_record(self, tmp_path):
        path = write_corpus(tmp_path, [make_record()])
        records = load_corpus(path, {"real_estate": RE_SCHEMA})
        assert len(records) == 1
        assert len(records[0].entities) == 3
        assert {e.entity_type for e in records[0].entities} == {"layout", "location", "budget"}

    def test_unknown_type_for_domain_rejected(self, tmp_path):
        bad = make_record(
            id="home-1",
            domain="home",
            entities=(EntityAnnotation("engine_type", "diesel", turn_index=0),),
        )
        path = write_corpus(tmp_path, [bad])
        with pytest.raises(CorpusError) as exc:
            load_corpus(path, {"home": HOME_SCHEMA, "real_estate": RE_SCHEMA})
        assert "engine_type" in str(exc.value)
        assert "home" in str(exc.value)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a"\n', encoding="utf-8")
        with pytest.raises(CorpusError, match="line 1"):
            load_corpus(path, {"real_estate": RE_SCHEMA})

    def test_duplicate_id_rejected(self, tmp_path):
        path = write_corpus(tmp_path, [make_record(), make_record()])
        with pytest.raises(CorpusError, match="duplicate"):
            load_corpus(path, {"real_estate": RE_SCHEMA})

    def test_round_trip_canonical(self, tmp_path):
        path = write_corpus(tmp_path, [make_record(), make_record(id="re-2")])
        original = path.read_text(encoding="utf-8")
        records = load_corpus(path, {"real_estate": RE_SCHEMA})
        assert serialize_corpus(records) == original


class TestValidateRecord:
    def test_valid_record_ok(self):
        assert validate_record(make_record(), RE_SCHEMA) == []

    def test_duplicate_turn_index(self):
        rec = make_record(
            turns=(
                Turn("user", "a", 0),
                Turn("assistant", "b", 0),
            ),
            entities=(),
        )
        violations = validate_record(rec, RE_SCHEMA)
        assert any("non-contiguous" in v for v in violations)

    def test_out_of_range_turn_index(self):
        rec = make_record(
            entities=(EntityAnnotation("layout", "three bedroom", turn_index=7),),
        )
        violations = validate_record(rec, RE_SCHEMA)
        assert any("turn_index 7" in v for v in violations)

    def test_unknown_domain(self):
        assert any("unknown domain" in v for v in validate_record(make_record(), None))

    def test_empty_turn_text(self):
        rec = make_record(turns=(Turn("user", "   ", 0),), entities=())
        assert any("empty text" in v for v in validate_record(rec, RE_SCHEMA))


class TestBuildEntityExamples:
    def test_one_example_per_entity(self):
        examples = build_entity_examples([make_record()])
        assert len(examples) == 3

    def test_window_clamps_at_start(self):
        rec = make_record(
            turns=tuple(
                Turn("user" if i % 2 == 0 else "assistant", f"turn {i}", i)
                for i in range(5)
            ),
            entities=(EntityAnnotation("layout", "three bedroom", turn_index=0),),
        )
        [ex] = build_entity_examples([rec], window=2)
        assert [t.index for t in ex.local_context] == [0, 1, 2]

    def test_no_entities_no_examples(self):
        assert build_entity_examples([make_record(entities=())]) == []

    def test_ungrounded_entity_attaches_to_last_user_turn(self):
        rec = make_record(
            entities=(EntityAnnotation("budget", "2 million", turn_index=None),),
        )
        [ex] = build_entity_examples([rec], window=1)
        # last user turn is index 2; window 1 -> turns 1..3
        assert [t.index for t in ex.local_context] == [1, 2, 3]

    @pytest.mark.parametrize("window", [0, 1, 2, 5])
    def test_cardinality_invariant(self, window, golden):
        examples = build_entity_examples(golden.records, window=window)
        assert len(examples) == sum(len(r.entities) for r in golden.records)

    @pytest.mark.parametrize("window", [0, 1, 3])
    def test_context_is_contiguous_slice_containing_grounding(self, window, golden):
        by_id = {r.id: r for r in golden.records}
        for ex in build_entity_examples(golden.records, window=window):
            source = by_id[ex.source_dialogue_id]
            indices = [t.index for t in ex.local_context]
            assert indices == list(range(indices[0], indices[-1] + 1))
            assert source.turns[indices[0]:indices[-1] + 1] == ex.local_context


class TestSchemas:
    def test_load_schemas_list(self, tmp_path):
        path = tmp_path / "schemas.json"
        path.write_text(json.dumps([
            {"domain": "a", "entity_types": [{"name": "x", "definition": "an x"}]},
            {"domain": "b", "entity_types": [{"name": "y", "definition": "a y"}]},
        ]))
        schemas = load_schemas(path)
        assert set(schemas) == {"a", "b"}

    def test_empty_definition_rejected(self, tmp_path):
        path = tmp_path / "schemas.json"
        path.write_text(json.dumps(
            {"domain": "a", "entity_types": [{"name": "x", "definition": " "}]}
        ))
        with pytest.raises(CorpusError, match="definition"):
            load_schemas(path)

    def test_duplicate_type_rejected(self, tmp_path):
        path = tmp_path / "schemas.json"
        path.write_text(json.dumps(
            {"domain": "a", "entity_types": [
                {"name": "x", "definition": "an x"},
                {"name": "x", "definition": "again"},
            ]}
        ))
        with pytest.raises(CorpusError, match="duplicate"):
            load_schemas(path)


def test_record_from_dict_fills_turn_indices():
    rec = record_from_dict({
        "id": "r", "domain": "real_estate",
        "turns": [{"speaker": "user", "text": "hi"}],
    })
    assert rec.turns[0].index == 0
