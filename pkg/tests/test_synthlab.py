import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from oracles import bleu4_reference
from spamgraph.fixtures import make_genuine_corpus
from spamgraph.records import ReviewRecord
from spamgraph.synthlab import (
    INJECTION_WINDOW_SECONDS,
    GenerationRequest, ParseReport, StubChatClient, SynthesisPlan,
    assign_compromised_users, bleu4, build_plan, corpus_stats, fill_plan_texts,
    first_genuine_review, generate_reviews, inject_spam, parse_judge_scores,
    parse_reviews, product_mean_ratings, render_generation_prompt,
    render_judge_prompt, select_target_products,
)

DATA_DIR = Path(__file__).parent / "data"


def rec(i, product="p", rating=3, user=None, ts=1_650_000_000, text="fine"):
    return ReviewRecord(review_id=i, user_id=user or f"u{i}", product_id=product,
                        rating=rating, timestamp=ts, text=text, label=-1)


class TestTargetSelection:
    def test_mean_ratings(self):
        records = [rec(0, "a", 5), rec(1, "a", 2), rec(2, "b", 4)]
        means = product_mean_ratings(records)
        assert means == {"a": 3.5, "b": 4.0}

    def test_only_low_performers_eligible(self):
        records = [rec(0, "low", 3), rec(1, "high", 5), rec(2, "edge", 4)]
        got = select_target_products(records, threshold=4.3, count=10)
        assert got == ["edge", "low"]

    def test_threshold_is_strict(self):
        records = [rec(0, "a", 4), rec(1, "a", 5)]  # mean exactly 4.5
        with pytest.raises(ValueError, match="no products"):
            select_target_products(records, threshold=4.5)

    def test_all_five_star_corpus_rejected(self):
        records = [rec(i, f"p{i}", 5) for i in range(5)]
        with pytest.raises(ValueError, match="no products"):
            select_target_products(records)

    def test_count_clamped_to_eligible(self):
        records = [rec(i, f"p{i}", 2) for i in range(4)]
        got = select_target_products(records, count=500)
        assert sorted(got) == [f"p{i}" for i in range(4)]

    def test_sampling_is_seeded_subset(self):
        records = [rec(i, f"p{i:03d}", 2) for i in range(50)]
        a = select_target_products(records, count=10, seed=1)
        b = select_target_products(records, count=10, seed=1)
        c = select_target_products(records, count=10, seed=2)
        assert a == b and len(a) == 10
        assert a != c
        assert set(a) <= {f"p{i:03d}" for i in range(50)}

    def test_first_genuine_review_ties_on_id(self):
        records = [rec(2, "p", ts=100), rec(1, "p", ts=100), rec(3, "p", ts=50)]
        assert first_genuine_review(records, "p").review_id == 3
        records = [rec(2, "p", ts=100), rec(1, "p", ts=100)]
        assert first_genuine_review(records, "p").review_id == 1

    def test_first_genuine_review_unknown_product(self):
        with pytest.raises(ValueError, match="no reviews"):
            first_genuine_review([rec(0, "p")], "q")


class TestGenerationPrompt:
    def test_matches_golden_file(self):
        request = GenerationRequest(
            product_name="Acme Steel Water Bottle",
            product_category="Kitchen & Dining",
            product_description=(
                "A vacuum-insulated 24 oz bottle that keeps drinks cold for 24 hours."
            ),
            reference_reviews=[
                "Keeps my water cold all day at work.",
                "Solid bottle, though the lid squeaks a little.",
            ],
            review_number=5,
            sentiment="positive",
            max_words=100,
        )
        golden = (DATA_DIR / "generation_prompt.golden").read_text()
        assert render_generation_prompt(request) + "\n" == golden

    def test_request_validation(self):
        kwargs = dict(product_name="n", product_category="c",
                      product_description="d", reference_reviews=["r"])
        with pytest.raises(ValueError, match="review_number"):
            GenerationRequest(review_number=0, **kwargs)
        with pytest.raises(ValueError, match="max_words"):
            GenerationRequest(max_words=5, **kwargs)
        with pytest.raises(ValueError, match="sentiment"):
            GenerationRequest(sentiment="mixed", **kwargs)

    def test_negative_sentiment_rendered(self):
        request = GenerationRequest(
            product_name="n", product_category="c", product_description="d",
            reference_reviews=["r"], review_number=3, sentiment="negative")
        prompt = render_generation_prompt(request)
        assert "output 3 negative reviews" in prompt


def make_request(n=5, name="Widget"):
    return GenerationRequest(
        product_name=name, product_category="Tools",
        product_description="A widget.", reference_reviews=["It works."],
        review_number=n)


class TestStubClient:
    def test_deterministic_across_instances(self):
        a = generate_reviews(make_request(), StubChatClient(seed=1))
        b = generate_reviews(make_request(), StubChatClient(seed=1))
        assert a == b

    def test_seed_and_prompt_sensitivity(self):
        base = generate_reviews(make_request(), StubChatClient(seed=1))
        assert base != generate_reviews(make_request(), StubChatClient(seed=2))
        assert base != generate_reviews(make_request(name="Gadget"), StubChatClient(seed=1))

    def test_parses_back_to_requested_count(self):
        for n in (1, 3, 5, 8):
            completion = generate_reviews(make_request(n), StubChatClient(seed=0))
            texts, report = parse_reviews(completion, n)
            assert report.ok
            assert len(texts) == n
            assert all(not t.lower().startswith("review") for t in texts)


class TestParseReviews:
    def test_plain_numbered_markers(self):
        texts, report = parse_reviews("1. Great!\n\n2) Also great.", 2)
        assert texts == ["Great!", "Also great."]
        assert report.parsed == 2 and report.shortfall == 0

    def test_review_word_markers_case_insensitive(self):
        completion = "REVIEW 1. First one.\nreview 2. Second one."
        texts, _ = parse_reviews(completion, 2)
        assert texts == ["First one.", "Second one."]

    def test_multiline_reviews_joined(self):
        completion = "Review 1. Starts here\nand continues here.\n\nReview 2. Short."
        texts, _ = parse_reviews(completion, 2)
        assert texts == ["Starts here and continues here.", "Short."]

    def test_preamble_ignored(self):
        completion = "Sure, here are the reviews you asked for:\n\nReview 1. Nice."
        texts, _ = parse_reviews(completion, 1)
        assert texts == ["Nice."]

    def test_shortfall_reported_not_raised(self):
        texts, report = parse_reviews("Review 1. Only one.", 5)
        assert texts == ["Only one."]
        assert report.shortfall == 4 and not report.ok

    def test_garbage_input_never_raises(self):
        texts, report = parse_reviews("no markers at all \x00 ???", 5)
        assert texts == []
        assert report.parsed == 0

    def test_empty_marker_dropped(self):
        texts, _ = parse_reviews("Review 1.\n\nReview 2. Real text.", 2)
        assert texts == ["Real text."]


class TestAssignCompromisedUsers:
    def corpus(self, user_counts):
        records = []
        i = 0
        for user, count in user_counts.items():
            for _ in range(count):
                records.append(rec(i, product=f"p{i}", user=user))
                i += 1
        return records

    def test_two_two_one_pattern(self):
        records = self.corpus({f"u{k}": 1 for k in range(10)})
        groups = assign_compromised_users(records, 10, seed=0)
        assert len(groups) == 2
        for group in groups:
            assert len(group) == 5
            counts = sorted(Counter(group).values())
            assert counts == [1, 2, 2]

    def test_users_not_shared_across_products(self):
        records = self.corpus({f"u{k}": 1 for k in range(20)})
        groups = assign_compromised_users(records, 25, seed=3)
        all_users = [u for g in groups for u in set(g)]
        assert len(all_users) == len(set(all_users)) == 15

    def test_insufficient_pool_rejected(self):
        records = self.corpus({"u0": 5, "u1": 5})
        with pytest.raises(ValueError, match="distinct users"):
            assign_compromised_users(records, 5)

    def test_non_multiple_rejected(self):
        records = self.corpus({f"u{k}": 1 for k in range(10)})
        with pytest.raises(ValueError, match="multiple"):
            assign_compromised_users(records, 7)

    def test_activity_weighted_selection(self):
        # One account with 50x the activity of the rest should almost always
        # be drafted into the campaign.
        counts = {f"u{k}": 1 for k in range(12)}
        counts["whale"] = 50
        records = self.corpus(counts)
        hits = sum(
            "whale" in {u for g in assign_compromised_users(records, 5, seed=s) for u in g}
            for s in range(100)
        )
        assert hits >= 90

    def test_uniform_weights_roughly_uniform(self):
        records = self.corpus({f"u{k}": 1 for k in range(8)})
        tally = Counter()
        for s in range(400):
            for g in assign_compromised_users(records, 5, seed=s):
                tally.update(set(g))
        # Each of 8 users expected 400 * 3/8 = 150 selections.
        assert min(tally.values()) > 100
        assert max(tally.values()) < 200


class TestPlanAndInjection:
    def setup_method(self):
        self.records = make_genuine_corpus(seed=0)

    def test_build_fill_inject_pipeline(self):
        plan = build_plan(self.records, n_products=20, seed=1)
        assert len(plan.entries) == 20
        reports = fill_plan_texts(plan, self.records, StubChatClient(seed=1))
        assert all(r.ok for r in reports)
        combined = inject_spam(self.records, plan, seed=1)

        spam = [r for r in combined if r.label == 1]
        genuine = [r for r in combined if r.label == 0]
        assert len(spam) == 100
        assert len(genuine) == len(self.records)
        assert all(r.rating == 5 for r in spam)
        assert [r.review_id for r in combined] == list(range(len(combined)))

        t0 = {}
        for r in self.records:
            t0[r.product_id] = min(t0.get(r.product_id, r.timestamp), r.timestamp)
        for r in spam:
            assert 0 <= r.timestamp - t0[r.product_id] <= INJECTION_WINDOW_SECONDS

    def test_genuine_rows_untouched_except_label(self):
        plan = build_plan(self.records, n_products=5, seed=0)
        fill_plan_texts(plan, self.records, StubChatClient(seed=0))
        combined = inject_spam(self.records, plan, seed=0)
        for before, after in zip(self.records, combined):
            assert after.label == 0
            assert (before.user_id, before.product_id, before.rating,
                    before.timestamp, before.text) == (
                after.user_id, after.product_id, after.rating,
                after.timestamp, after.text)

    def test_spam_users_follow_plan(self):
        plan = build_plan(self.records, n_products=5, seed=2)
        fill_plan_texts(plan, self.records, StubChatClient(seed=2))
        combined = inject_spam(self.records, plan, seed=2)
        by_product = {}
        for r in combined[len(self.records):]:
            by_product.setdefault(r.product_id, []).append(r.user_id)
        for entry in plan.entries:
            assert by_product[entry.product_id] == entry.user_ids

    def test_injection_deterministic(self):
        plan = build_plan(self.records, n_products=5, seed=3)
        fill_plan_texts(plan, self.records, StubChatClient(seed=3))
        a = inject_spam(self.records, plan, seed=3)
        b = inject_spam(self.records, plan, seed=3)
        assert a == b

    def test_mismatched_texts_rejected(self):
        plan = build_plan(self.records, n_products=2, seed=0)
        plan.entries[0].texts = ["only one"]
        with pytest.raises(ValueError, match="texts"):
            inject_spam(self.records, plan, seed=0)

    def test_plan_roundtrip(self, tmp_path):
        plan = build_plan(self.records, n_products=3, seed=4)
        fill_plan_texts(plan, self.records, StubChatClient(seed=4))
        path = tmp_path / "plan.json"
        plan.save(path)
        loaded = SynthesisPlan.load(path)
        assert loaded == plan
        assert set(json.loads(path.read_text())) == {
            "reviews_per_product", "seed", "entries"}


class TestBleu:
    def test_identical_texts_score_one(self):
        text = "this product works very well and arrived quickly"
        assert bleu4(text, text) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_texts_score_zero(self):
        assert bleu4("alpha beta gamma delta epsilon", "one two three four five") == 0.0

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(0)
        vocab = ["good", "bad", "fast", "slow", "item", "works", "broke",
                 "love", "hate", "price", "cheap", "quality"]
        for _ in range(50):
            cand = " ".join(rng.choice(vocab, size=rng.integers(5, 25)))
            ref = " ".join(rng.choice(vocab, size=rng.integers(5, 25)))
            assert bleu4(cand, ref) == pytest.approx(
                bleu4_reference(cand, ref), abs=1e-9)

    def test_empty_candidate_zero(self):
        assert bleu4("", "anything here") == 0.0

    def test_smoothing_rescues_missing_higher_ngrams(self):
        cand = "good fast item"
        ref = "good slow item"  # shares unigrams but no 2-grams
        assert bleu4(cand, ref) == 0.0
        assert bleu4(cand, ref, smoothing=True) > 0.0

    def test_brevity_penalty_applied(self):
        ref = "one two three four five six seven eight"
        short = "one two three four"
        long_ = "one two three four five six seven eight nine"
        assert bleu4(short, ref) < bleu4(ref, ref)
        # Longer than the reference: no penalty.
        assert bleu4(long_, ref) > 0.0


class TestCorpusStats:
    def test_hand_computed_group(self):
        texts = {"p": ["a b c d", "a b c d"], "q": ["e f", "g h"]}
        stats = corpus_stats(texts)
        assert stats["max_words"] == 4
        assert stats["mean_words"] == pytest.approx((4 + 2) / 2)
        # Group p: identical pair -> BLEU 1; group q: disjoint -> 0.
        assert stats["mean_pairwise_bleu"] == pytest.approx(0.5)
        assert stats["std_pairwise_bleu"] == pytest.approx(0.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            corpus_stats({})
        with pytest.raises(ValueError):
            corpus_stats({"p": []})

    def test_singleton_groups_have_nan_bleu(self):
        stats = corpus_stats({"p": ["just one text"]})
        assert np.isnan(stats["mean_pairwise_bleu"])


class TestJudge:
    def test_prompt_contains_scale_and_review(self):
        system, user = render_judge_prompt("Widget", "Tools", "It broke fast.")
        assert "from 1 (totally no) to 5 (totally yes)" in user
        assert "It broke fast." in user
        assert "Widget" in user and "Tools" in user
        assert "e-commerce" in system

    def test_prompt_lists_five_aspects(self):
        _, user = render_judge_prompt("n", "c", "r")
        assert user.count("Will the user") == 5

    def test_parse_blank_line_blocks(self):
        reply = (
            "Rating: 4. The tone is upbeat.\n\n"
            "Rating: 3. Some details given.\n\n"
            "Rating: 5. Very convincing.\n\n"
            "Rating: 2. Sounds templated.\n\n"
            "Rating: 4. Mildly persuasive."
        )
        assert parse_judge_scores(reply) == [4, 3, 5, 2, 4]

    def test_parse_numbered_blocks(self):
        reply = (
            "1. 5 - clearly positive\n"
            "2. 4 - useful details\n"
            "3. 3 - somewhat convincing\n"
            "4. 1 - reads like an ad\n"
            "5. 2 - not persuasive"
        )
        assert parse_judge_scores(reply) == [5, 4, 3, 1, 2]

    def test_zero_accepted(self):
        assert parse_judge_scores("0 - no\n\n5 - yes")[:2] == [0, 5]

    def test_missing_scores_none_padded(self):
        reply = "4 good\n\nno rating here sorry"
        scores = parse_judge_scores(reply)
        assert scores[0] == 4
        assert scores[1] is None
        assert scores[2:] == [None, None, None]
        assert len(scores) == 5

    def test_out_of_range_numbers_ignored(self):
        assert parse_judge_scores("I'd say 10 out of 10, truly a 4")[0] == 4

    def test_extra_blocks_truncated(self):
        reply = "\n\n".join(str(k) for k in [1, 2, 3, 4, 5, 1, 2])
        assert parse_judge_scores(reply) == [1, 2, 3, 4, 5]
