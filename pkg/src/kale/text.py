"""Tokenization and caption normalization shared by the vocabulary builder,
the n-gram extractor, the dedup pass, and the evaluation metrics.

One tokenizer everywhere: lowercase, Unicode word characters, punctuation
dropped. Metric scores and vocabulary contents stay comparable because they
never disagree on token boundaries.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

# Word = letters/digits across scripts; underscore excluded on purpose.
_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word tokens, stripping punctuation."""
    return _WORD_RE.findall(text.lower())


def normalize_caption(text: str) -> str:
    """Canonical caption form: lowercased, punctuation-stripped,
    whitespace-collapsed. Used for exact-match dedup between splits."""
    return " ".join(tokenize(text))


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    """Bundled English stopword list (~120 function words)."""
    raw = resources.files("kale.data").joinpath("stopwords_en.txt").read_text("utf-8")
    return frozenset(w.strip() for w in raw.splitlines() if w.strip())


def ngrams(tokens: list[str], n: int) -> list[str]:
    """Contiguous n-grams joined by single spaces."""
    return [" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]
