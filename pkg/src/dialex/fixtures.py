"""Deterministic synthetic corpora for tests, demos, and acceptance runs.

Two corpora are generated:

* A five-domain customer-service fixture (general, automotive, home,
  real_estate, legal) together with scripted-mock rules that reproduce the
  gold annotations exactly, for golden end-to-end runs.

* An adversarial retrieval corpus where example contexts are misleading
  (decoy-token traps) while key-info stays clean, so query formulation
  strategies separate measurably: key-info recall survives the traps that
  fool holistic user-text and full-history queries.

Token pools for the adversarial corpus are chosen so no two tokens share a
hash bucket under the built-in embedder; this keeps cosine scores exactly
zero between unrelated texts and makes the constructed orderings provable
rather than probabilistic.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .corpus import (
    DialogueRecord,
    DomainSchema,
    EntityAnnotation,
    EntityTypeDef,
    KeyInfo,
    Turn,
)
from .embedding import DEFAULT_DIM, token_bucket
from .inference import MockRule, ScriptedMock, render_tagged_lines

# -- five-domain golden fixture ----------------------------------------------

_DOMAIN_SPECS = {
    "general": {
        "types": {
            "contact_info": "A phone number, email address, or messaging handle the user provides.",
            "budget": "A monetary amount or range the user is willing to spend.",
        },
        "dialogues": [
            ("gen-001", {"contact_info": "13800138000", "budget": "2000 yuan"}),
            ("gen-002", {"budget": "500 dollars"}),
        ],
    },
    "automotive": {
        "types": {
            "engine_type": "The engine or energy type of a vehicle, such as diesel, petrol, hybrid, or electric.",
            "brand": "The vehicle manufacturer brand the user mentions.",
        },
        "dialogues": [
            ("auto-001", {"engine_type": "diesel", "brand": "toyota"}),
            ("auto-002", {"engine_type": "electric"}),
        ],
    },
    "home": {
        "types": {
            "layout": "The room layout or floor plan the user wants, such as three bedroom.",
            "style": "The renovation or furnishing style the user prefers.",
        },
        "dialogues": [
            ("home-001", {"layout": "three bedroom", "style": "minimalist"}),
            ("home-002", {"style": "industrial"}),
        ],
    },
    "real_estate": {
        "types": {
            "location": "The district, city, or address area where the user wants property.",
            "property_type": "The kind of property, such as apartment, villa, or office.",
        },
        "dialogues": [
            ("re-001", {"location": "riverside district", "property_type": "apartment"}),
            ("re-002", {"location": "north hills"}),
        ],
    },
    "legal": {
        "types": {
            "dispute_type": "The category of legal dispute, such as contract dispute or labor dispute.",
            "amount": "The monetary amount involved in the dispute.",
        },
        "dialogues": [
            ("legal-001", {"dispute_type": "contract dispute", "amount": "50000 yuan"}),
            ("legal-002", {"dispute_type": "labor dispute"}),
        ],
    },
}


@dataclass(frozen=True)
class GoldenFixture:
    schemas: dict[str, DomainSchema]
    records: list[DialogueRecord]
    mock: ScriptedMock


def build_golden_fixture() -> GoldenFixture:
    schemas: dict[str, DomainSchema] = {}
    records: list[DialogueRecord] = []
    rules: list[MockRule] = []
    for domain, spec in _DOMAIN_SPECS.items():
        schemas[domain] = DomainSchema(
            domain=domain,
            entity_types=tuple(
                EntityTypeDef(name=n, definition=d) for n, d in spec["types"].items()
            ),
        )
        for dialogue_id, gold in spec["dialogues"]:
            marker = f"case {dialogue_id}"
            # Anchor on the query section of the prompt: exemplars rendered
            # into few-shot prompts repeat dialogue text, so a bare substring
            # match on the marker would fire on the wrong dialogue's rule.
            query_anchor = rf"Latest user message: [^\n]*{re.escape(marker)}"
            mention = " and ".join(gold.values())
            turns = (
                Turn("user", f"hello i am looking for help with {mention}", 0),
                Turn("assistant", "sure, could you tell me more about what you need", 1),
                Turn("user", f"yes, {mention} is what i want, reference {marker}", 2),
            )
            entities = tuple(
                EntityAnnotation(entity_type=t, value=v, turn_index=2)
                for t, v in gold.items()
            )
            records.append(
                DialogueRecord(
                    id=dialogue_id,
                    domain=domain,
                    turns=turns,
                    entities=entities,
                    cot=f"the user states {mention} directly",
                    key_info=KeyInfo(
                        user_key_info=tuple(gold.values()),
                        assistant_key_info=("could you tell me more",),
                    ),
                )
            )
            # Manager rule: this dialogue activates exactly its gold types.
            rules.append(
                MockRule(
                    contains=(f"domain: {domain}",),
                    pattern=query_anchor,
                    response=render_tagged_lines(
                        [(t, "yes" if t in gold else "no") for t in spec["types"]]
                    ),
                )
            )
            # Expert rules: one per gold type, answering the gold value.
            for t, v in gold.items():
                rules.append(
                    MockRule(
                        contains=(f"entity type: {t}",),
                        pattern=query_anchor,
                        response=render_tagged_lines([("value", v)]),
                    )
                )
            # Baseline rule: all gold entities in one shot.
            rules.append(
                MockRule(
                    contains=("All entity types:",),
                    pattern=query_anchor,
                    response=render_tagged_lines(
                        [(f"{domain}/{t}", v) for t, v in gold.items()]
                    ),
                )
            )
    return GoldenFixture(
        schemas=schemas,
        records=records,
        mock=ScriptedMock(rules=tuple(rules), default=""),
    )


# -- adversarial retrieval corpus ---------------------------------------------

ADVERSARIAL_DOMAIN = "adversarial"
ADVERSARIAL_TYPE = "item"

# Fixed words used in adversarial turn templates; their hash buckets are
# reserved so generated tokens cannot collide with them.
_RESERVED_WORDS = ("need", "ref", "about", "asking", "earlier", "stock")

_N_EASY = 44          # all strategies retrieve the true example
_N_AGENT_TRAP = 4     # agent-side decoys fool only the full-history strategy
_N_USER_TRAP = 12     # user-side decoys fool both holistic strategies
_N_UNCOVERED = 12     # no matching example exists at all
_DECOYS_PER_TRAP = 6


def _collision_free_tokens(count: int, dim: int = DEFAULT_DIM) -> list[str]:
    """Deterministic token pool where every token occupies a distinct hash
    bucket, disjoint from the reserved template words."""
    used = {token_bucket(w, dim) for w in _RESERVED_WORDS}
    tokens: list[str] = []
    i = 0
    while len(tokens) < count:
        candidate = f"tok{i:05d}"
        bucket = token_bucket(candidate, dim)
        if bucket not in used:
            used.add(bucket)
            tokens.append(candidate)
        i += 1
    return tokens


@dataclass(frozen=True)
class AdversarialFixture:
    schema: DomainSchema
    corpus_records: list[DialogueRecord]   # retrieval side (build the index from these)
    query_records: list[DialogueRecord]    # evaluation side
    groups: dict[str, int]


def build_adversarial_fixture() -> AdversarialFixture:
    n_values = _N_EASY + _N_AGENT_TRAP + _N_USER_TRAP
    n_traps = _N_AGENT_TRAP + _N_USER_TRAP
    pool = _collision_free_tokens(
        n_values + _N_UNCOVERED + n_traps * _DECOYS_PER_TRAP + 3
    )
    values = pool[:n_values]
    uncovered = pool[n_values:n_values + _N_UNCOVERED]
    decoy_pool = pool[n_values + _N_UNCOVERED:n_values + _N_UNCOVERED + n_traps * _DECOYS_PER_TRAP]
    junk = pool[-3:]

    schema = DomainSchema(
        domain=ADVERSARIAL_DOMAIN,
        entity_types=(
            EntityTypeDef(
                name=ADVERSARIAL_TYPE,
                definition="The product item the user asks about.",
            ),
        ),
    )

    corpus_records: list[DialogueRecord] = []
    query_records: list[DialogueRecord] = []
    trap_index = 0

    def add_true_record(i: int, value: str, context_has_value: bool) -> None:
        ctx = f"earlier stock about {value}" if context_has_value else "earlier stock"
        corpus_records.append(
            DialogueRecord(
                id=f"adv-ex-{i:03d}",
                domain=ADVERSARIAL_DOMAIN,
                turns=(
                    Turn("assistant", "asking about stock", 0),
                    Turn("user", ctx, 1),
                ),
                entities=(
                    EntityAnnotation(ADVERSARIAL_TYPE, value, turn_index=1),
                ),
                key_info=KeyInfo(
                    user_key_info=(value,),
                    assistant_key_info=("asking about stock",),
                ),
            )
        )

    def add_trap_record(i: int, decoys: list[str]) -> None:
        # Misleading context: dense decoy text, junk values, junk key-info.
        corpus_records.append(
            DialogueRecord(
                id=f"adv-trap-{i:03d}",
                domain=ADVERSARIAL_DOMAIN,
                turns=(Turn("user", " ".join(decoys * 2), 0),),
                entities=tuple(
                    EntityAnnotation(ADVERSARIAL_TYPE, j, turn_index=0) for j in junk
                ),
                key_info=KeyInfo(user_key_info=tuple(junk)),
            )
        )

    for i, value in enumerate(values):
        group = (
            "easy" if i < _N_EASY
            else "agent_trap" if i < _N_EASY + _N_AGENT_TRAP
            else "user_trap"
        )
        add_true_record(i, value, context_has_value=group in ("easy", "agent_trap"))
        if group == "easy":
            turns = (
                Turn("assistant", "asking", 0),
                Turn("user", f"need {value}", 1),
            )
        else:
            decoys = decoy_pool[trap_index * _DECOYS_PER_TRAP:(trap_index + 1) * _DECOYS_PER_TRAP]
            add_trap_record(i, decoys)
            trap_index += 1
            if group == "agent_trap":
                turns = (
                    Turn("assistant", " ".join(decoys), 0),
                    Turn("user", f"need {value}", 1),
                )
            else:
                turns = (
                    Turn("user", " ".join(decoys), 0),
                    Turn("assistant", "asking", 1),
                    Turn("user", f"need {value}", 2),
                )
        query_records.append(
            DialogueRecord(
                id=f"adv-q-{i:03d}",
                domain=ADVERSARIAL_DOMAIN,
                turns=turns,
                entities=(EntityAnnotation(ADVERSARIAL_TYPE, value, turn_index=len(turns) - 1),),
                key_info=KeyInfo(user_key_info=(value,)),
            )
        )

    for i, value in enumerate(uncovered):
        query_records.append(
            DialogueRecord(
                id=f"adv-q-u{i:03d}",
                domain=ADVERSARIAL_DOMAIN,
                turns=(
                    Turn("assistant", "asking", 0),
                    Turn("user", f"need {value}", 1),
                ),
                entities=(EntityAnnotation(ADVERSARIAL_TYPE, value, turn_index=1),),
                key_info=KeyInfo(user_key_info=(value,)),
            )
        )

    return AdversarialFixture(
        schema=schema,
        corpus_records=corpus_records,
        query_records=query_records,
        groups={
            "easy": _N_EASY,
            "agent_trap": _N_AGENT_TRAP,
            "user_trap": _N_USER_TRAP,
            "uncovered": _N_UNCOVERED,
        },
    )
