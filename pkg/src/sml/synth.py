"""Synthetic session corpora with a known sequential rule.

Sessions are contiguous runs through a fixed item cycle: after item ``i``
the next event is always ``(i + 1) mod vocab_size``.  The rule gives every
prefix a deterministic continuation, so a sequence-aware recommender can in
principle score perfectly while pure popularity stays near chance — handy
for smoke-testing that training extracts sequential signal at all.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, ItemVocab, Session


def next_item(item: int, vocab_size: int) -> int:
    return (item + 1) % vocab_size


def cycle_sessions(n_sessions: int = 200, vocab_size: int = 50,
                   min_length: int = 3, max_length: int = 8,
                   seed: int = 7) -> Dataset:
    """A corpus of cycle runs with strictly increasing session start times."""
    if not 2 <= min_length <= max_length:
        raise ValueError("need 2 <= min_length <= max_length")
    if vocab_size < 2 or n_sessions < 1:
        raise ValueError("need at least 2 items and 1 session")

    rng = np.random.default_rng(seed)
    vocab = ItemVocab()
    for i in range(vocab_size):
        vocab.add(f"i{i:03d}")

    sessions = []
    for k in range(n_sessions):
        length = int(rng.integers(min_length, max_length + 1))
        start = int(rng.integers(vocab_size))
        items = [start]
        while len(items) < length:
            items.append(next_item(items[-1], vocab_size))
        base = k * 1000
        sessions.append(Session(f"syn{k:04d}", items,
                                [base + j for j in range(length)]))

    counts = [0] * vocab_size
    for s in sessions:
        for item in s.items:
            counts[item] += 1
    vocab.counts = counts
    return Dataset(sessions, vocab)
