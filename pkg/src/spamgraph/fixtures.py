"""Deterministic synthetic corpora for tests, demos, and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .records import ReviewRecord

# Vocabulary pools with disjoint wording so hash embeddings of the two classes
# are linearly separable by construction.
_SPAM_TOKENS = [
    "amazing", "incredible", "must-have", "flawless", "perfect", "unbeatable",
    "life-changing", "stunning", "exceptional", "outstanding", "phenomenal",
    "best", "purchase", "ever", "highly", "recommend", "five", "stars",
]
_NORMAL_TOKENS = [
    "arrived", "box", "works", "okay", "decent", "average", "price", "size",
    "color", "shipping", "returned", "instructions", "battery", "plastic",
    "fits", "expected", "month", "daily",
]

_MONTH = 30 * 86400


def _make_text(rng: np.random.Generator, vocab: list[str], n_tokens: int) -> str:
    return " ".join(vocab[i] for i in rng.integers(0, len(vocab), size=n_tokens))


def make_separable_corpus(
    n_nodes: int = 300,
    spam_fraction: float = 0.3,
    seed: int = 0,
) -> list[ReviewRecord]:
    """Two-cluster labeled corpus: coordinated spam vs organic reviews.

    Spam reviews come from a small pool of accounts posting several five-star
    reviews each (dense same-user cliques) with disjoint promotional wording;
    normal reviews are spread across many users, products, and months.
    """
    rng = np.random.default_rng(seed)
    n_spam = int(round(n_nodes * spam_fraction))
    n_normal = n_nodes - n_spam
    rows = []
    # Coordinated campaign: ~3 reviews per spammer account, few target products.
    n_spammers = max(1, n_spam // 3)
    n_targets = max(1, n_spam // 5)
    base_time = 1_650_000_000
    for i in range(n_spam):
        rows.append(
            dict(
                user_id=f"spammer{i % n_spammers}",
                product_id=f"target{i % n_targets}",
                rating=5,
                timestamp=int(base_time + rng.integers(0, 5 * 86400)),
                text=_make_text(rng, _SPAM_TOKENS, int(rng.integers(8, 16))),
                label=1,
            )
        )
    n_users = max(1, n_normal // 2)
    n_products = max(1, n_normal // 3)
    for i in range(n_normal):
        rows.append(
            dict(
                user_id=f"user{i % n_users}",
                product_id=f"prod{i % n_products}",
                rating=int(rng.integers(1, 6)),
                timestamp=int(base_time + rng.integers(0, 12) * _MONTH + rng.integers(0, _MONTH)),
                text=_make_text(rng, _NORMAL_TOKENS, int(rng.integers(6, 14))),
                label=0,
            )
        )
    order = rng.permutation(len(rows))
    return [
        ReviewRecord(review_id=new_id, **rows[old_id])
        for new_id, old_id in enumerate(order)
    ]


def make_genuine_corpus(
    n_products: int = 600,
    n_users: int = 2000,
    n_reviews: int = 4000,
    seed: int = 0,
) -> list[ReviewRecord]:
    """Unlabeled genuine corpus sized for injection experiments.

    Ratings skew low so most products fall under the target-selection
    threshold.
    """
    rng = np.random.default_rng(seed)
    base_time = 1_640_000_000
    records = []
    for i in range(n_reviews):
        records.append(
            ReviewRecord(
                review_id=i,
                user_id=f"user{rng.integers(0, n_users)}",
                product_id=f"prod{i % n_products}",
                rating=int(rng.choice([1, 2, 3, 4, 5], p=[0.15, 0.2, 0.3, 0.25, 0.1])),
                timestamp=int(base_time + rng.integers(0, 365 * 86400)),
                text=_make_text(rng, _NORMAL_TOKENS, int(rng.integers(5, 12))),
            )
        )
    return records
