from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptmix.backends import CompletionParams, EmbeddingVector, cosine
from promptmix.data import ClassSpec, DatasetSpec, compute_relabel_stats
from promptmix.mixgen import GenerationRecord, MixupAssignment
from promptmix.relabel import (
    ClassEmbeddingIndex,
    RelabelRecord,
    build_index,
    build_relabel_prompt,
    rank_candidates,
    relabel_all,
    resolve_prediction,
)

from helpers import (
    bank_dataset,
    many_class_dataset,
    relabel_request,
    rule_backends,
    scripted_backends,
    zero_shot_dataset,
)
from oracles import brute_force_rank, reference_buckets, reference_cosine_from_buckets

PARAMS = CompletionParams(model="mock", temperature=0.0, max_tokens=64, request_timeout=5.0)

REFUSAL = "This sentence does not belong to any of the provided classes."


class TestBuildIndex:
    def test_wide_two_shot_vector_count(self):
        ds = many_class_dataset(77, k=2)
        backends = rule_backends()
        index = build_index(ds, backends)
        total = sum(len(v) for v in index.per_class_vectors.values())
        assert total == 154
        assert backends.ledger.count("embed") == 154

    def test_zero_shot_uses_class_names(self):
        ds = many_class_dataset(6, k=0)
        backends = rule_backends()
        index = build_index(ds, backends)
        assert sum(len(v) for v in index.per_class_vectors.values()) == 6
        assert backends.ledger.count("embed") == 6

    def test_deterministic(self):
        ds = bank_dataset()
        assert build_index(ds, rule_backends()) == build_index(ds, rule_backends())

    def test_dimension_consistency_enforced(self):
        with pytest.raises(ValueError, match="dimension"):
            ClassEmbeddingIndex(
                {"a": (EmbeddingVector((1.0, 0.0)),), "b": (EmbeddingVector((1.0, 0.0, 0.0)),)},
                dimension=2,
            )


def scripted_dataset_and_vectors(class_vectors: dict[str, list[tuple[float, ...]]]):
    """Dataset whose seed texts map 1:1 onto scripted vectors."""
    classes = []
    mapping: dict[str, tuple[float, ...]] = {}
    for name, vectors in class_vectors.items():
        seeds = []
        for i, vector in enumerate(vectors):
            text = f"seed {i} of {name}"
            seeds.append(text)
            mapping[text] = vector
        classes.append(ClassSpec(name, f"class {name} description", tuple(seeds)))
    return DatasetSpec("scripted", tuple(classes)), mapping


class TestRankCandidates:
    def test_one_hot_orthogonal_construction(self):
        e1, e2, e3 = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)
        ds, mapping = scripted_dataset_and_vectors({"c1": [e1], "c2": [e2], "c3": [e3]})
        mapping["the query"] = e2
        backends = scripted_backends(mapping)
        index = build_index(ds, backends)
        ranked = rank_candidates(index, "the query", backends, m=3)
        assert ranked[0] == "c2"
        assert set(ranked) == {"c1", "c2", "c3"}

    def test_m_clamped_to_class_count(self):
        e1, e2 = (1.0, 0.0), (0.0, 1.0)
        ds, mapping = scripted_dataset_and_vectors({"a": [e1], "b": [e2]})
        mapping["q"] = (0.7, 0.3)
        backends = scripted_backends(mapping)
        index = build_index(ds, backends)
        assert rank_candidates(index, "q", backends, m=5) == ["a", "b"]

    def test_matches_brute_force_oracle_with_forced_ties(self):
        rng = random.Random(42)
        for trial in range(30):
            k = rng.randint(1, 3)

            def unit() -> tuple[float, ...]:
                raw = [rng.gauss(0, 1) for _ in range(16)]
                norm = sum(x * x for x in raw) ** 0.5
                return tuple(x / norm for x in raw)

            class_vectors = {
                f"cls_{trial}_{c:02d}": [unit() for _ in range(k)] for c in range(10)
            }
            # force an exact tie: one class's vectors become copies of another's best
            names = list(class_vectors)
            tied, other = names[rng.randrange(10)], None
            other = names[(names.index(tied) + 1) % 10]
            class_vectors[other] = [class_vectors[tied][0]] * k
            query = unit()

            ds, mapping = scripted_dataset_and_vectors(class_vectors)
            mapping["the query text"] = query
            backends = scripted_backends(mapping)
            index = build_index(ds, backends)
            got = rank_candidates(index, "the query text", backends, m=5)
            expected = brute_force_rank(
                {name: [v.values for v in vs] for name, vs in index.per_class_vectors.items()},
                backends.embedder.embed("the query text").values,
                5,
            )
            assert got == expected, f"trial {trial}"

    def test_no_duplicates_and_class_order_invariance(self):
        ds = bank_dataset()
        backends = rule_backends()
        index = build_index(ds, backends)
        ranked = rank_candidates(index, "my new card never arrived", backends, m=4)
        assert len(set(ranked)) == len(ranked)
        reversed_ds = DatasetSpec(ds.name, tuple(reversed(ds.classes)))
        backends2 = rule_backends()
        index2 = build_index(reversed_ds, backends2)
        assert rank_candidates(index2, "my new card never arrived", backends2, m=4) == ranked

    def test_m_must_be_positive(self):
        ds = bank_dataset()
        backends = rule_backends()
        index = build_index(ds, backends)
        with pytest.raises(ValueError):
            rank_candidates(index, "text", backends, m=0)

    def test_intended_class_is_not_force_inserted(self):
        # the candidate list is purely similarity-ranked: a query far from the
        # intended class simply does not include it
        e1, e2, e3, e4 = ((1.0, 0, 0, 0), (0, 1.0, 0, 0), (0, 0, 1.0, 0), (0, 0, 0, 1.0))
        ds, mapping = scripted_dataset_and_vectors({"a": [e1], "b": [e2], "c": [e3], "d": [e4]})
        mapping["drifted query"] = (0.0, 0.6, 0.6, 0.5)
        backends = scripted_backends(mapping)
        index = build_index(ds, backends)
        candidates = rank_candidates(index, "drifted query", backends, m=3)
        assert "a" not in candidates
        assert candidates == ["b", "c", "d"]


class TestRelabelPrompt:
    def test_candidate_counting_contract(self):
        ds = many_class_dataset(8, k=2)
        candidates = list(ds.class_names()[:5])
        content = build_relabel_prompt(ds, candidates, "some sentence to label")[0].content
        assert content.count("Description:") == 5
        assert content.count("\n1. ") == 5 and content.count("\n2. ") == 5  # 10 examples
        assert "Sentence: some sentence to label" in content

    def test_zero_shot_descriptions_only(self):
        ds = zero_shot_dataset()
        content = build_relabel_prompt(ds, ["age_limit", "atm_support"], "a sentence")[0].content
        assert content.count("Description:") == 2
        assert "Examples:" not in content

    def test_byte_deterministic(self):
        ds = bank_dataset()
        one = build_relabel_prompt(ds, ["age_limit"], "s")[0].content
        two = build_relabel_prompt(ds, ["age_limit"], "s")[0].content
        assert one.encode() == two.encode()

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            build_relabel_prompt(bank_dataset(), [], "s")

    def test_unknown_candidate_rejected(self):
        with pytest.raises(KeyError):
            build_relabel_prompt(bank_dataset(), ["ghost"], "s")


class TestResolvePrediction:
    def test_exact_match_zero_embed_calls(self):
        ds = bank_dataset()
        backends = rule_backends()
        resolved, similarity = resolve_prediction("atm_support", ds, backends)
        assert (resolved, similarity) == ("atm_support", 1.0)
        assert backends.ledger.count("embed") == 0

    def test_quotes_and_period_stripped(self):
        ds = bank_dataset()
        backends = rule_backends()
        resolved, similarity = resolve_prediction(' "age_limit".  ', ds, backends)
        assert (resolved, similarity) == ("age_limit", 1.0)
        assert backends.ledger.count("embed") == 0

    def test_near_name_resolves_by_shared_tokens(self):
        # oracle first: hand-compute both cosines from independent bucket math
        ds = bank_dataset()
        query = reference_buckets("ATM support")
        sim_atm = reference_cosine_from_buckets(query, reference_buckets("atm_support"))
        sim_age = reference_cosine_from_buckets(query, reference_buckets("age_limit"))
        assert sim_atm == pytest.approx(1.0)
        assert sim_atm > sim_age
        backends = rule_backends()
        resolved, similarity = resolve_prediction("ATM support", ds, backends)
        assert resolved == "atm_support"
        assert similarity == pytest.approx(sim_atm)

    def test_refusal_string_resolves_to_tiebreak_argmax(self):
        ds = bank_dataset()
        # oracle: the refusal shares no buckets with any class name, so all
        # similarities are exactly zero and the ascending-name tie-break wins
        refusal_buckets = reference_buckets(REFUSAL)
        for name in ds.class_names():
            assert not set(refusal_buckets) & set(reference_buckets(name))
        backends = rule_backends()
        resolved, similarity = resolve_prediction(REFUSAL, ds, backends)
        assert resolved == min(ds.class_names())
        assert similarity == 0.0
        assert similarity < 0.35  # flagged out-of-scope-suspect downstream

    def test_empty_prediction_rejected(self):
        with pytest.raises(ValueError):
            resolve_prediction("  ", bank_dataset(), rule_backends())

    def test_idempotent_on_resolved_labels(self):
        ds = bank_dataset()
        backends = rule_backends()
        for name in ds.class_names():
            first = resolve_prediction(name, ds, backends)
            assert first == (name, 1.0)
            again = resolve_prediction(first[0], ds, backends)
            assert again == first


def make_generation(text: str, intended: str, classes: tuple[str, ...]) -> GenerationRecord:
    subset = (intended,) + tuple(c for c in classes if c != intended)[:1]
    return GenerationRecord(
        text=text,
        assignment=MixupAssignment(intended, subset[1], 0.75, subset),
        intended_label=intended,
        batch_index=0,
        raw_completion_digest="digest",
    )


class TestRelabelAll:
    def test_intended_answer_not_relabeled(self, bank_ds):
        record = make_generation(
            "what age do i need to be to open an account", "age_limit", bank_ds.class_names()
        )

        def rule(messages):
            assert relabel_request(messages) is not None
            return "age_limit"

        backends = rule_backends(rule=rule)
        index = build_index(bank_ds, backends)
        results = relabel_all([record], bank_ds, index, backends, params=PARAMS)
        assert len(results) == 1
        assert results[0].was_relabeled is False
        assert results[0].resolved_label == "age_limit"

    def test_leaked_generation_flipped(self, bank_ds):
        record = make_generation(
            "is there a minimum age to withdraw cash at an ATM", "age_limit", bank_ds.class_names()
        )
        backends = rule_backends(rule=lambda messages: "atm_support")
        index = build_index(bank_ds, backends)
        results = relabel_all([record], bank_ds, index, backends, params=PARAMS)
        assert results[0].was_relabeled is True
        assert results[0].resolved_label == "atm_support"
        assert results[0].generation is record

    def test_hundred_records_with_scripted_34_flips(self, bank_ds):
        names = bank_ds.class_names()
        records = []
        plan: dict[str, str] = {}
        flips = 0
        for i in range(100):
            intended = names[i % 4]
            text = f"scripted record number {i} about {intended}"
            records.append(make_generation(text, intended, names))
            if i < 34:
                plan[text] = names[(i + 1) % 4]
                flips += 1
            else:
                plan[text] = intended
        assert flips == 34

        def rule(messages):
            sentence, _ = relabel_request(messages)
            return plan[sentence]

        backends = rule_backends(rule=rule)
        index = build_index(bank_ds, backends)
        results = relabel_all([r for r in records], bank_ds, index, backends, params=PARAMS)
        stats = compute_relabel_stats(list(zip(records, results)))
        assert stats.percent_relabeled == pytest.approx(34.0)
        assert len(results) == len(records)

    def test_candidates_have_m_entries_and_chat_per_record(self, bank_ds):
        records = [
            make_generation(f"utterance number {i} about cards", "card_arrival", bank_ds.class_names())
            for i in range(5)
        ]
        backends = rule_backends(rule=lambda m: "card_arrival")
        index = build_index(bank_ds, backends)
        before = backends.ledger.count("chat")
        results = relabel_all(records, bank_ds, index, backends, params=PARAMS, candidate_m=3)
        assert backends.ledger.count("chat") - before == 5
        assert all(len(r.candidates) == 3 for r in results)

    def test_done_records_skipped_on_resume(self, bank_ds):
        records = [
            make_generation(f"resume target {i} about atm things", "atm_support", bank_ds.class_names())
            for i in range(10)
        ]
        backends = rule_backends(rule=lambda m: "atm_support")
        index = build_index(bank_ds, backends)
        full = relabel_all(records, bank_ds, index, backends, params=PARAMS)
        done = {i: full[i] for i in range(4)}
        resumed_backends = rule_backends(rule=lambda m: "atm_support")
        resumed_index = build_index(bank_ds, resumed_backends)
        before = resumed_backends.ledger.count("chat")
        resumed = relabel_all(
            records, bank_ds, resumed_index, resumed_backends, params=PARAMS, done=done
        )
        assert resumed == full
        assert resumed_backends.ledger.count("chat") - before == 6

    def test_concurrent_equals_sequential(self, bank_ds):
        records = [
            make_generation(f"parallel record {i} about exchange rates", "exchange_rate", bank_ds.class_names())
            for i in range(12)
        ]
        backends_seq = rule_backends()
        index_seq = build_index(bank_ds, backends_seq)
        sequential = relabel_all(records, bank_ds, index_seq, backends_seq, params=PARAMS)
        backends_par = rule_backends()
        index_par = build_index(bank_ds, backends_par)
        parallel = relabel_all(
            records, bank_ds, index_par, backends_par, params=PARAMS, max_workers=4
        )
        assert parallel == sequential

    def test_failure_mid_batch_keeps_earlier_results(self, bank_ds):
        from promptmix.backends import PermanentError

        records = [
            make_generation(f"failing run record {i} text", "age_limit", bank_ds.class_names())
            for i in range(6)
        ]
        calls = {"n": 0}

        def fragile_rule(messages):
            calls["n"] += 1
            if calls["n"] > 3:
                raise PermanentError("quota exhausted")
            return "age_limit"

        backends = rule_backends(rule=fragile_rule)
        index = build_index(bank_ds, backends)
        persisted: dict[int, RelabelRecord] = {}
        with pytest.raises(PermanentError):
            relabel_all(
                records,
                bank_ds,
                index,
                backends,
                params=PARAMS,
                on_record=lambda i, r: persisted.__setitem__(i, r),
            )
        assert sorted(persisted) == [0, 1, 2]  # progress survives the failure

    def test_record_invariants(self, bank_ds):
        record = make_generation("text about something", "age_limit", bank_ds.class_names())
        with pytest.raises(ValueError):
            RelabelRecord(
                generation=record,
                candidates=("age_limit", "age_limit"),
                raw_prediction="x",
                resolved_label="age_limit",
                resolution_similarity=1.0,
                was_relabeled=False,
            )
        with pytest.raises(ValueError):
            RelabelRecord(
                generation=record,
                candidates=("age_limit",),
                raw_prediction="x",
                resolved_label="atm_support",
                resolution_similarity=1.0,
                was_relabeled=False,  # inconsistent
            )


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["age_limit", "atm_support", "card_arrival", "exchange_rate"]))
def test_resolved_label_always_valid(name):
    ds = bank_dataset()
    backends = rule_backends()
    resolved, _ = resolve_prediction(f"maybe {name} or something", ds, backends)
    assert resolved in ds.class_names()
