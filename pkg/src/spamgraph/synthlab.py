"""Synthetic spam-campaign construction: target selection, prompt rendering,
chat dispatch (with an offline stub), review parsing, corpus injection,
diversity statistics, and judge-prompt tooling.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
import requests

from .records import ReviewRecord

CHAT_API_KEY_ENV = "CHAT_API_KEY"

INJECTION_WINDOW_SECONDS = 5 * 86400  # spam lands within five days of the first real review

GENERATION_PROMPT_TEMPLATE = (
    "I need your help to write reviews for a product {product_name} on Amazon "
    "in the category of {product_category}. "
    "The official description of the product given by the store is as follows: "
    "{product_description}\n"
    "Besides, I will give you a set of review of this product for reference: "
    "{reference_reviews}\n"
    "Now, please output {review_number} {sentiment} reviews. "
    "Each review contains no more than {max_words} words. "
    "Please write diversified reviews as if they were written by different "
    "customers, for example, with different lengths and styles. "
    "Start with another paragraph for each review and begin with Review 1. 2. 3., etc."
)

JUDGE_SYSTEM_MESSAGE = (
    "You are a helpful assistant and know a lot about e-commerce on Amazon, "
    "especially about how the reviews influence potential customers."
)

JUDGE_USER_TEMPLATE = (
    "Please first read a review about the product titled {product_name} "
    "in the category of {product_category}:\n"
    "{review}\n"
    "Now, please evaluate the influence of the given review on a potential "
    "customer on Amazon in the following five aspects:\n"
    "- Will the user feel the review is positive?\n"
    "- Will the user feel the review contains useful details?\n"
    "- Will the user feel the review is convincing?\n"
    "- Will the user feel the review is written by a normal user?\n"
    "- Will the user be more willing to buy the product after reading the review?\n"
    "For each question, please first answer with a rating ranging from "
    "1 (totally no) to 5 (totally yes) and then give a brief reason for the rating."
)


@dataclass(frozen=True)
class GenerationRequest:
    product_name: str
    product_category: str
    product_description: str
    reference_reviews: list[str]
    review_number: int = 5
    sentiment: str = "positive"
    max_words: int = 100

    def __post_init__(self):
        if self.review_number < 1:
            raise ValueError("review_number must be >= 1")
        if self.max_words < 10:
            raise ValueError("max_words must be >= 10")
        if self.sentiment not in ("positive", "negative"):
            raise ValueError("sentiment must be positive or negative")


@dataclass
class PlanEntry:
    product_id: str
    user_ids: list[str]          # one per review, e.g. [u1, u1, u2, u2, u3]
    texts: list[str] = field(default_factory=list)
    timestamps: list[int] = field(default_factory=list)
    rating: int = 5


@dataclass
class SynthesisPlan:
    entries: list[PlanEntry]
    reviews_per_product: int = 5
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "reviews_per_product": self.reviews_per_product,
            "seed": self.seed,
            "entries": [
                {
                    "product_id": e.product_id,
                    "user_ids": e.user_ids,
                    "texts": e.texts,
                    "timestamps": e.timestamps,
                    "rating": e.rating,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SynthesisPlan":
        return cls(
            entries=[PlanEntry(**e) for e in obj["entries"]],
            reviews_per_product=obj.get("reviews_per_product", 5),
            seed=obj.get("seed", 0),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SynthesisPlan":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def product_mean_ratings(records: list[ReviewRecord]) -> dict[str, float]:
    totals: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for r in records:
        acc = totals[r.product_id]
        acc[0] += r.rating
        acc[1] += 1
    return {pid: s / c for pid, (s, c) in totals.items()}


def select_target_products(
    records: list[ReviewRecord],
    threshold: float = 4.3,
    count: int = 500,
    seed: int = 0,
) -> list[str]:
    """Low-performing products (mean rating below threshold), sampled uniformly.

    Returns all eligible products when fewer than ``count`` exist.
    """
    if not records:
        raise ValueError("corpus is empty")
    means = product_mean_ratings(records)
    eligible = sorted(pid for pid, mean in means.items() if mean < threshold)
    if not eligible:
        raise ValueError(f"no products with mean rating below {threshold}")
    rng = np.random.default_rng(seed)
    if len(eligible) <= count:
        return eligible
    picked = rng.choice(len(eligible), size=count, replace=False)
    return [eligible[i] for i in sorted(picked)]


def first_genuine_review(records: list[ReviewRecord], product_id: str) -> ReviewRecord:
    """Earliest review of the product; ties break on review_id."""
    candidates = [r for r in records if r.product_id == product_id]
    if not candidates:
        raise ValueError(f"product {product_id!r} has no reviews")
    return min(candidates, key=lambda r: (r.timestamp, r.review_id))


def render_generation_prompt(request: GenerationRequest) -> str:
    return GENERATION_PROMPT_TEMPLATE.format(
        product_name=request.product_name,
        product_category=request.product_category,
        product_description=request.product_description,
        reference_reviews="\n\n".join(request.reference_reviews),
        review_number=request.review_number,
        sentiment=request.sentiment,
        max_words=request.max_words,
    )


class StubChatClient:
    """Deterministic offline chat stand-in.

    For a generation prompt it emits exactly ``review_number`` paragraphs
    prefixed "Review k." with template-varied wording, so the downstream
    parser and injection pipeline run without any network.
    """

    _OPENERS = [
        "Absolutely love this product!",
        "This exceeded my expectations in every way.",
        "What a pleasant surprise this turned out to be.",
        "I was skeptical at first, but this won me over.",
        "Five stars without hesitation.",
        "Couldn't be happier with this purchase.",
        "This has quickly become a favorite in our home.",
        "Hands down one of my better buys this year.",
    ]
    _BODIES = [
        "The quality feels far above the price point and setup took no time at all.",
        "It works exactly as described and the attention to detail shows.",
        "After several weeks of daily use it still performs like new.",
        "The design is thoughtful and it fits seamlessly into my routine.",
        "Shipping was fast and the packaging kept everything pristine.",
        "Even my skeptical family members were impressed once they tried it.",
        "Customer support was responsive when I had a quick question.",
        "I compared several alternatives and this one clearly came out ahead.",
    ]
    _CLOSERS = [
        "Highly recommend to anyone on the fence.",
        "A must-have for anyone shopping in this category.",
        "I'll definitely be ordering again.",
        "Worth every penny in my book.",
        "You won't regret picking this one up.",
        "It makes a great gift too.",
    ]

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, messages: list[dict]) -> str:
        prompt = messages[-1]["content"]
        match = re.search(r"please output (\d+)", prompt)
        n = int(match.group(1)) if match else 1
        # Derive the stream from the seed and the prompt so distinct products
        # get distinct (but reproducible) texts.
        digest = hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng([self.seed, int.from_bytes(digest, "little")])
        paragraphs = []
        for k in range(1, n + 1):
            opener = self._OPENERS[rng.integers(len(self._OPENERS))]
            body = self._BODIES[rng.integers(len(self._BODIES))]
            extra = self._BODIES[rng.integers(len(self._BODIES))]
            closer = self._CLOSERS[rng.integers(len(self._CLOSERS))]
            parts = [opener, body]
            if rng.random() < 0.5 and extra != body:
                parts.append(extra)
            parts.append(closer)
            paragraphs.append(f"Review {k}. " + " ".join(parts))
        return "\n\n".join(paragraphs)


class HttpChatClient:
    """Client for a role-tagged chat endpoint.

    POST {"messages": [{"role": ..., "content": ...}]} -> {"content": ...};
    auth from the CHAT_API_KEY environment variable; 3 attempts with
    exponential backoff.
    """

    def __init__(self, endpoint: str, max_attempts: int = 3, backoff: float = 0.5,
                 timeout: float = 60.0, session=None):
        self.endpoint = endpoint
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self.session = session or requests.Session()

    def complete(self, messages: list[dict]) -> str:
        headers = {}
        api_key = os.environ.get(CHAT_API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_exc = None
        for attempt in range(self.max_attempts):
            try:
                resp = self.session.post(
                    self.endpoint, json={"messages": messages},
                    headers=headers, timeout=self.timeout,
                )
                if resp.status_code >= 500:
                    raise requests.HTTPError(f"server error {resp.status_code}")
                resp.raise_for_status()
                return resp.json()["content"]
            except (requests.ConnectionError, requests.Timeout, requests.HTTPError) as exc:
                last_exc = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(self.backoff * (2 ** attempt))
        raise RuntimeError(f"chat request failed after {self.max_attempts} attempts: {last_exc}")


def generate_reviews(request: GenerationRequest, client) -> str:
    """Send the generation prompt as a user message; return the raw completion."""
    prompt = render_generation_prompt(request)
    return client.complete([{"role": "user", "content": prompt}])


@dataclass
class ParseReport:
    expected: int
    parsed: int

    @property
    def shortfall(self) -> int:
        return max(0, self.expected - self.parsed)

    @property
    def ok(self) -> bool:
        return self.parsed >= self.expected


_MARKER_RE = re.compile(r"^\s*(?:review\s+)?(\d+)\s*[.)]\s*", re.IGNORECASE)


def parse_reviews(completion: str, expected: int) -> tuple[list[str], ParseReport]:
    """Extract review texts from a completion; never raises on messy input.

    A review starts at a paragraph-leading marker "Review <k>." (case
    insensitive) or a bare "<k>."; the marker is stripped. The report records
    parsed vs expected counts.
    """
    texts: list[str] = []
    current: list[str] | None = None
    for raw_line in completion.splitlines():
        line = raw_line.rstrip()
        match = _MARKER_RE.match(line)
        if match:
            if current is not None:
                text = " ".join(current).strip()
                if text:
                    texts.append(text)
            current = [line[match.end():].strip()]
        elif current is not None and line.strip():
            current.append(line.strip())
    if current is not None:
        text = " ".join(current).strip()
        if text:
            texts.append(text)
    return texts, ParseReport(expected=expected, parsed=len(texts))


def assign_compromised_users(
    records: list[ReviewRecord],
    n_spam_reviews: int,
    seed: int = 0,
    reviews_per_product: int = 5,
) -> list[list[str]]:
    """Pick compromised accounts, activity-weighted, without replacement.

    Each target product's five reviews go to three users in a 2/2/1 pattern;
    every selected user serves exactly one product. Returns one per-review
    user list per product.
    """
    if n_spam_reviews % reviews_per_product:
        raise ValueError("n_spam_reviews must be a multiple of reviews_per_product")
    n_products = n_spam_reviews // reviews_per_product
    users_per_product = math.ceil(reviews_per_product / 2)
    n_users = n_products * users_per_product
    counts = Counter(r.user_id for r in records)
    pool = sorted(counts)
    if len(pool) < n_users:
        raise ValueError(
            f"need {n_users} distinct users for {n_spam_reviews} spam reviews, "
            f"corpus has {len(pool)}"
        )
    weights = np.array([counts[u] for u in pool], dtype=np.float64)
    rng = np.random.default_rng(seed)
    picked_idx = rng.choice(len(pool), size=n_users, replace=False, p=weights / weights.sum())
    picked = [pool[i] for i in picked_idx]
    assignments = []
    for p in range(n_products):
        trio = picked[p * users_per_product:(p + 1) * users_per_product]
        per_review = []
        remaining = reviews_per_product
        for u in trio:
            take = min(2, remaining)
            per_review.extend([u] * take)
            remaining -= take
        assignments.append(per_review)
    return assignments


def build_plan(
    records: list[ReviewRecord],
    n_products: int = 500,
    reviews_per_product: int = 5,
    threshold: float = 4.3,
    seed: int = 0,
) -> SynthesisPlan:
    """Target selection plus user assignment; texts and timestamps come later."""
    products = select_target_products(records, threshold=threshold, count=n_products, seed=seed)
    assignments = assign_compromised_users(
        records, len(products) * reviews_per_product, seed=seed,
        reviews_per_product=reviews_per_product,
    )
    entries = [
        PlanEntry(product_id=pid, user_ids=users)
        for pid, users in zip(products, assignments)
    ]
    return SynthesisPlan(entries=entries, reviews_per_product=reviews_per_product, seed=seed)


def fill_plan_texts(
    plan: SynthesisPlan,
    records: list[ReviewRecord],
    client,
    product_meta: dict[str, dict] | None = None,
    max_words: int = 100,
) -> list[ParseReport]:
    """Generate and parse review texts for every plan entry, in place."""
    reports = []
    for entry in plan.entries:
        meta = (product_meta or {}).get(entry.product_id, {})
        reference = first_genuine_review(records, entry.product_id)
        request = GenerationRequest(
            product_name=meta.get("name", entry.product_id),
            product_category=meta.get("category", "General"),
            product_description=meta.get("description", "No description provided."),
            reference_reviews=[reference.text],
            review_number=plan.reviews_per_product,
            sentiment="positive",
            max_words=max_words,
        )
        completion = generate_reviews(request, client)
        texts, report = parse_reviews(completion, plan.reviews_per_product)
        entry.texts = texts[:plan.reviews_per_product]
        reports.append(report)
    return reports


def inject_spam(
    records: list[ReviewRecord],
    plan: SynthesisPlan,
    seed: int = 0,
) -> list[ReviewRecord]:
    """Append the planned spam reviews to the genuine corpus.

    Genuine records are relabeled 0 but otherwise untouched; spam records get
    rating 5, label 1, and a timestamp uniform in the five-day window after
    the product's first real review. Ids stay dense.
    """
    product_t0: dict[str, int] = {}
    for r in records:
        t0 = product_t0.get(r.product_id)
        if t0 is None or r.timestamp < t0:
            product_t0[r.product_id] = r.timestamp
    out = [
        ReviewRecord(
            review_id=r.review_id,
            user_id=r.user_id,
            product_id=r.product_id,
            rating=r.rating,
            timestamp=r.timestamp,
            text=r.text,
            label=0,
        )
        for r in records
    ]
    rng = np.random.default_rng(seed)
    next_id = len(out)
    for entry in plan.entries:
        if entry.product_id not in product_t0:
            raise ValueError(f"plan targets unknown product {entry.product_id!r}")
        if len(entry.texts) != len(entry.user_ids):
            raise ValueError(
                f"plan entry for {entry.product_id!r} has {len(entry.texts)} texts "
                f"for {len(entry.user_ids)} user slots"
            )
        t0 = product_t0[entry.product_id]
        entry.timestamps = []
        for user_id, text in zip(entry.user_ids, entry.texts):
            ts = int(t0 + rng.integers(0, INJECTION_WINDOW_SECONDS + 1))
            entry.timestamps.append(ts)
            out.append(
                ReviewRecord(
                    review_id=next_id,
                    user_id=user_id,
                    product_id=entry.product_id,
                    rating=entry.rating,
                    timestamp=ts,
                    text=text,
                    label=1,
                )
            )
            next_id += 1
    return out


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str, reference: str, smoothing: bool = False) -> float:
    """Sentence BLEU-4 against a single reference, uniform weights.

    Without smoothing any zero n-gram precision makes the score 0; with the
    add-one flag, counts for n >= 2 get +1 in numerator and denominator.
    """
    cand = candidate.split()
    ref = reference.split()
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        total = sum(cand_counts.values())
        clipped = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        if smoothing and n >= 2:
            clipped += 1
            total += 1
        if total == 0 or clipped == 0:
            return 0.0
        log_sum += 0.25 * math.log(clipped / total)
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def corpus_stats(texts_by_product: dict[str, list[str]], smoothing: bool = False) -> dict:
    """Length and diversity statistics over generated texts, grouped by product.

    Pairwise BLEU is averaged over ordered pairs within a group; group means
    are then averaged across groups, with the std taken across groups.
    """
    if not texts_by_product:
        raise ValueError("no text groups given")
    group_word_means = []
    group_bleus = []
    max_words = 0
    for texts in texts_by_product.values():
        if not texts:
            raise ValueError("every group must contain at least one text")
        lengths = [len(t.split()) for t in texts]
        max_words = max(max_words, max(lengths))
        group_word_means.append(float(np.mean(lengths)))
        if len(texts) >= 2:
            pair_scores = [
                bleu4(texts[i], texts[j], smoothing=smoothing)
                for i in range(len(texts))
                for j in range(len(texts))
                if i != j
            ]
            group_bleus.append(float(np.mean(pair_scores)))
    return {
        "max_words": max_words,
        "mean_words": float(np.mean(group_word_means)),
        "std_words": float(np.std(group_word_means)),
        "mean_pairwise_bleu": float(np.mean(group_bleus)) if group_bleus else float("nan"),
        "std_pairwise_bleu": float(np.std(group_bleus)) if group_bleus else float("nan"),
    }


def render_judge_prompt(product_name: str, product_category: str, review: str) -> tuple[str, str]:
    """(system, user) messages asking a judge model to score one review."""
    user = JUDGE_USER_TEMPLATE.format(
        product_name=product_name, product_category=product_category, review=review
    )
    return JUDGE_SYSTEM_MESSAGE, user


_SCORE_RE = re.compile(r"\b([0-5])\b")


def parse_judge_scores(text: str) -> list[int | None]:
    """First in-range integer from each of up to five reply blocks.

    Blocks are separated by blank lines (or numbered list items); a block
    without a score is recorded as None, never fabricated. Accepts 0-5 even
    though the prompt asks for 1-5.
    """
    blocks: list[str] = []
    current: list[str] = []
    for line in text.splitlines():
        if not line.strip():
            if current:
                blocks.append(" ".join(current))
                current = []
            continue
        item = re.match(r"^\s*\d+\s*[.)]\s+", line)
        if item:
            if current:
                blocks.append(" ".join(current))
                current = []
            # Drop the list marker so it cannot be mistaken for the score.
            line = line[item.end():]
        current.append(line.strip())
    if current:
        blocks.append(" ".join(current))
    scores: list[int | None] = []
    for block in blocks[:5]:
        match = _SCORE_RE.search(block)
        scores.append(int(match.group(1)) if match else None)
    while len(scores) < 5:
        scores.append(None)
    return scores
