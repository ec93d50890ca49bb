"""Metrics over emergent languages: topographic similarity, lengths, uniqueness."""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .agents import EOS, Sender, message_effective_length
from .world import Dataset


class UndefinedCorrelation(ValueError):
    """Raised when a rank correlation has a constant argument."""


@dataclass
class LanguageTable:
    objects: list[tuple[int, ...]]
    messages: list[tuple[int, ...]]

    def __post_init__(self):
        if len(self.objects) != len(self.messages):
            raise ValueError(f"{len(self.objects)} objects but {len(self.messages)} messages")

    def __len__(self) -> int:
        return len(self.objects)

    def records(self) -> list[dict]:
        return [
            {"attrs": list(o), "message": list(m), "length": message_effective_length(m)}
            for o, m in zip(self.objects, self.messages)
        ]


def dump_language(sender: Sender, objects: Dataset) -> LanguageTable:
    """Greedy message for every object, in dataset order."""
    x = objects.onehots()
    if x.shape[1] != sender.input_dim:
        raise ValueError(f"sender expects {sender.input_dim}-dim inputs, objects encode to {x.shape[1]}")
    sample = sender.generate(x, "greedy")
    return LanguageTable(list(objects), sample.messages.as_tuples())


def write_language_dump(table: LanguageTable, path) -> None:
    with open(path, "w") as fh:
        for rec in table.records():
            fh.write(json.dumps(rec) + "\n")


def read_language_dump(path) -> LanguageTable:
    objects, messages = [], []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            objects.append(tuple(rec["attrs"]))
            messages.append(tuple(rec["message"]))
    return LanguageTable(objects, messages)


def _content(m) -> tuple:
    return tuple(s for s in m if s != EOS)


def levenshtein(m1, m2) -> int:
    """Unit-cost edit distance between the content symbols of two messages."""
    a, b = _content(m1), _content(m2)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def hamming(a, b) -> int:
    return sum(int(x != y) for x, y in zip(a, b))


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks."""
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("spearman needs two equal-length sequences of at least 2 values")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise UndefinedCorrelation("rank correlation is undefined for a constant sequence")
    rx, ry = rankdata(xs), rankdata(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    rho = float((rx @ ry) / math.sqrt((rx @ rx) * (ry @ ry)))
    return max(-1.0, min(1.0, rho))


def pairwise_distances(table: LanguageTable) -> tuple[list[int], list[int]]:
    meaning, form = [], []
    for (o1, m1), (o2, m2) in itertools.combinations(zip(table.objects, table.messages), 2):
        meaning.append(hamming(o1, o2))
        form.append(levenshtein(m1, m2))
    return meaning, form


def topographic_similarity(table: LanguageTable) -> float:
    """Spearman correlation of Hamming (objects) vs Levenshtein (messages) over all pairs."""
    if len(table) < 2:
        raise ValueError("topographic similarity needs at least two objects")
    meaning, form = pairwise_distances(table)
    return spearman(meaning, form)


def length_stats(table: LanguageTable, max_len: int | None = None) -> dict:
    if not len(table):
        raise ValueError("length statistics of an empty table")
    lengths = [message_effective_length(m) for m in table.messages]
    top = max_len if max_len is not None else max(lengths)
    hist = [0] * (top + 1)
    for n in lengths:
        hist[n] += 1
    counts = Counter(table.messages)
    types = list(counts)
    freq_len = None
    if len(types) >= 2:
        try:
            freq_len = spearman([counts[t] for t in types], [message_effective_length(t) for t in types])
        except UndefinedCorrelation:
            freq_len = None
    return {"mean_length": float(np.mean(lengths)), "histogram": hist, "frequency_length_correlation": freq_len}


def uniqueness_and_entropy(table: LanguageTable) -> dict:
    if not len(table):
        raise ValueError("uniqueness of an empty table")
    counts = np.array(list(Counter(table.messages).values()), dtype=np.float64)
    p = counts / counts.sum()
    return {"distinct_ratio": len(counts) / len(table), "message_entropy": float(-(p * np.log(p)).sum())}


def compositional_table(n_attributes: int, n_values: int) -> LanguageTable:
    """Positional code: symbol at position i names attribute i's value (no symbol shared across positions)."""
    objects = list(itertools.product(range(n_values), repeat=n_attributes))
    messages = [tuple(1 + i * n_values + v for i, v in enumerate(o)) for o in objects]
    return LanguageTable(objects, messages)
