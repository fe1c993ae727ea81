"""Synthetic question pairs in LCQMC TSV layout, for desk-scale runs without the real corpus.

Sentences are drawn from topic-specific character pools plus shared
function characters. A positive pair is a paraphrase (synonym swaps,
a dropped or inserted filler, one local transposition); a negative pair is
another question on the same topic, one on a different topic that reuses a
few of the first question's characters, or a near-duplicate whose content
characters are partly swapped for unrelated ones from the same topic.
"""

from __future__ import annotations

import numpy as np

from .data import Record

CJK_START = 0x4E00


class QuestionGrammar:
    def __init__(self, seed: int = 0, n_topics: int = 24, topic_size: int = 10, n_fillers: int = 12):
        rng = np.random.default_rng(seed)
        n_chars = n_topics * topic_size * 2 + n_fillers
        pool = [chr(CJK_START + int(c)) for c in rng.choice(20000, size=n_chars, replace=False)]
        content, synonyms, self.fillers = (
            pool[: n_topics * topic_size],
            pool[n_topics * topic_size : 2 * n_topics * topic_size],
            pool[2 * n_topics * topic_size :],
        )
        self.topics = [content[t * topic_size : (t + 1) * topic_size] for t in range(n_topics)]
        self.synonym = dict(zip(content, synonyms))

    def question(self, rng: np.random.Generator, topic: int | None = None) -> tuple[int, list[str]]:
        topic = int(rng.integers(len(self.topics))) if topic is None else topic
        words = list(rng.choice(self.topics[topic], size=int(rng.integers(4, 8)), replace=False))
        for _ in range(int(rng.integers(1, 4))):
            words.insert(int(rng.integers(len(words) + 1)), str(rng.choice(self.fillers)))
        return topic, words

    def paraphrase(self, rng: np.random.Generator, words: list[str]) -> list[str]:
        out = [self.synonym.get(w, w) if rng.random() < 0.25 else w for w in words]
        if rng.random() < 0.5:
            out.insert(int(rng.integers(len(out) + 1)), str(rng.choice(self.fillers)))
        elif len(out) > 4:
            del out[int(rng.integers(len(out)))]
        if len(out) > 2 and rng.random() < 0.5:
            i = int(rng.integers(len(out) - 1))
            out[i], out[i + 1] = out[i + 1], out[i]
        return out

    def distractor(self, rng: np.random.Generator, topic: int, words: list[str]) -> list[str]:
        roll = rng.random()
        if roll < 0.35:
            return self.question(rng, topic)[1]
        if roll < 0.65:
            return self.near_duplicate(rng, topic, words)
        other = (topic + int(rng.integers(1, len(self.topics)))) % len(self.topics)
        _, out = self.question(rng, other)
        for w in rng.choice(words, size=min(2, len(words)), replace=False):
            out.insert(int(rng.integers(len(out) + 1)), str(w))
        return out

    def near_duplicate(self, rng: np.random.Generator, topic: int, words: list[str]) -> list[str]:
        pool = self.topics[topic]
        slots = [i for i, w in enumerate(words) if w in pool]
        unused = [w for w in pool if w not in words]
        out = list(words)
        k = min(len(unused), max(2, len(slots) // 2))
        for i, w in zip(rng.choice(slots, size=k, replace=False), rng.choice(unused, size=k, replace=False)):
            out[int(i)] = str(w)
        return out


def make_pairs(n: int, seed: int = 0, positive_rate: float = 0.55, grammar_seed: int = 0) -> list[Record]:
    """``n`` labelled records; the grammar is fixed by ``grammar_seed`` so splits share a vocabulary."""
    grammar = QuestionGrammar(grammar_seed)
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        topic, words = grammar.question(rng)
        if rng.random() < positive_rate:
            records.append(Record("".join(words), "".join(grammar.paraphrase(rng, words)), 1))
        else:
            records.append(Record("".join(words), "".join(grammar.distractor(rng, topic, words)), 0))
    return records
