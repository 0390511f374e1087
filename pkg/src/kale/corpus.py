"""Artwork corpus ingestion: parsing, technique cleanup, title n-gram
vocabularies, spherical title clustering, and split-overlap dedup."""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInput,
    DuplicateId,
    EmptyVocabulary,
    MalformedRecord,
    MissingField,
)
from .text import default_stopwords, ngrams, normalize_caption, tokenize

logger = logging.getLogger(__name__)

CAPTION_CATEGORIES = ("visual", "contextual", "form", "content", "context", "unlabeled")

JSONL_FIELDS = (
    "id",
    "image",
    "author",
    "title",
    "technique",
    "type",
    "school",
    "timeframe",
    "date",
    "captions",
)


@dataclass
class Caption:
    text: str
    category: str = "unlabeled"


@dataclass
class ArtworkRecord:
    """One artwork: image reference, metadata fields, reference captions.

    ``date`` is parsed from input files but deliberately never consumed by
    any downstream stage (it carries overly specific year information).
    """

    id: str
    image_ref: object  # path/URI string or precomputed feature payload
    author: str = ""
    title: str = ""
    technique: str = ""
    type_: str = ""
    school: str = ""
    timeframe: str = ""
    date: str = ""
    captions: list[Caption] = field(default_factory=list)


# --- parsing -------------------------------------------------------------


def _record_from_mapping(obj: dict, line_no: int) -> ArtworkRecord:
    for key in JSONL_FIELDS:
        if key not in obj:
            raise MissingField(key, line_no)
    raw_captions = obj["captions"]
    if not isinstance(raw_captions, list):
        raise MalformedRecord(line_no, "captions must be a list")
    captions = []
    for cap in raw_captions:
        if not isinstance(cap, dict) or "text" not in cap:
            raise MalformedRecord(line_no, "caption entries need a 'text' key")
        category = cap.get("category", "unlabeled")
        if category not in CAPTION_CATEGORIES:
            raise MalformedRecord(line_no, f"unknown caption category {category!r}")
        captions.append(Caption(text=str(cap["text"]), category=category))
    return ArtworkRecord(
        id=str(obj["id"]),
        image_ref=obj["image"],
        author=str(obj["author"]),
        title=str(obj["title"]),
        technique=str(obj["technique"]),
        type_=str(obj["type"]),
        school=str(obj["school"]),
        timeframe=str(obj["timeframe"]),
        date=str(obj["date"]),
        captions=captions,
    )


def parse_corpus(path, format: str = "jsonl") -> list[ArtworkRecord]:
    """Parse a corpus file into records, preserving file order.

    JSONL: one object per line with keys
    ``id, image, author, title, technique, type, school, timeframe, date,
    captions:[{text, category}]``. CSV: same columns with captions in one
    pipe-delimited cell (categories default to "unlabeled").

    Raises MalformedRecord, MissingField, or DuplicateId.
    """
    if format not in ("jsonl", "csv"):
        raise ValueError(f"unknown corpus format {format!r}")
    records: list[ArtworkRecord] = []
    seen_ids: set[str] = set()

    if format == "jsonl":
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from None
                if not isinstance(obj, dict):
                    raise MalformedRecord(line_no, "line is not a JSON object")
                rec = _record_from_mapping(obj, line_no)
                if rec.id in seen_ids:
                    raise DuplicateId(rec.id)
                seen_ids.add(rec.id)
                records.append(rec)
    else:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for key in JSONL_FIELDS:
                if key not in header:
                    raise MissingField(key, line_no=1)
            for line_no, row in enumerate(reader, start=2):
                captions = [
                    {"text": part, "category": "unlabeled"}
                    for part in (row["captions"] or "").split("|")
                    if part.strip()
                ]
                obj = {k: (row.get(k) or "") for k in JSONL_FIELDS}
                obj["captions"] = captions
                rec = _record_from_mapping(obj, line_no)
                if rec.id in seen_ids:
                    raise DuplicateId(rec.id)
                seen_ids.add(rec.id)
                records.append(rec)
    return records


# --- technique cleanup ----------------------------------------------------

_NUM = r"\d+(?:[.,]\d+)?"
_UNIT = r"(?:mm|cm|m)"

# Versioned dimension-noise patterns (see README, "Technique cleanup").
DIMENSION_PATTERNS = [
    # "167 x 124 cm", "167×124cm", "41,5 x 32 mm", optional unit after each number
    rf"{_NUM}\s*{_UNIT}?\s*[x×]\s*{_NUM}\s*{_UNIT}\b",
    # "height 85 cm", "height: 85cm"
    rf"height\s*:?\s*{_NUM}\s*{_UNIT}\b",
    # "diameter 30 cm"
    rf"diameter\s*:?\s*{_NUM}\s*{_UNIT}\b",
]

_DIMENSION_RE = re.compile("|".join(f"(?:{p})" for p in DIMENSION_PATTERNS), re.IGNORECASE)
_SEP_RUN_RE = re.compile(r"\s*[,;]\s*(?=[,;])")
_EDGE_SEP_RE = re.compile(r"^[\s,;:()]+|[\s,;:()]+$")
_EMPTY_PARENS_RE = re.compile(r"\(\s*[,;]?\s*\)")


def clean_technique(raw: str) -> str:
    """Strip dimension noise from a technique string and lowercase it.

    Total function: any input maps to a (possibly empty) cleaned string,
    and cleaning is idempotent.
    """
    s = _DIMENSION_RE.sub(" ", raw)
    s = _EMPTY_PARENS_RE.sub(" ", s)
    s = _SEP_RUN_RE.sub("", s)  # ", ," -> ","
    s = re.sub(r"\s+", " ", s)
    s = _EDGE_SEP_RE.sub("", s)
    return s.lower()


# --- n-gram vocabulary ------------------------------------------------------

DEFAULT_NGRAM_CAPS = (2000, 1500, 1000)


@dataclass
class NgramEntry:
    n: int
    corpus_frequency: int
    rank: int  # dense rank within this n, 0 = most frequent


@dataclass
class NgramVocab:
    entries: dict[str, NgramEntry]
    caps: tuple[int, int, int]

    def for_n(self, n: int) -> list[str]:
        """N-grams of one order, most frequent first."""
        picked = [(e.rank, g) for g, e in self.entries.items() if e.n == n]
        return [g for _, g in sorted(picked)]


def extract_ngrams(
    titles: list[str],
    caps: tuple[int, int, int] = DEFAULT_NGRAM_CAPS,
    stopwords=None,
) -> NgramVocab:
    """Count 1/2/3-grams over title tokens and keep the most common ones.

    1-grams pass through the stopword filter before ranking (pass
    ``stopwords=()`` to disable); 2/3-grams are kept unfiltered. Ties in
    frequency break lexicographically. Raises EmptyVocabulary when nothing
    survives filtering.
    """
    if not titles:
        raise EmptyVocabulary("no titles given")
    if stopwords is None:
        stopwords = default_stopwords()
    stopset = frozenset(stopwords)

    counters = {1: Counter(), 2: Counter(), 3: Counter()}
    for title in titles:
        tokens = tokenize(title)
        for n in (1, 2, 3):
            counters[n].update(ngrams(tokens, n))
    for gram in list(counters[1]):
        if gram in stopset:
            del counters[1][gram]

    entries: dict[str, NgramEntry] = {}
    for n, cap in zip((1, 2, 3), caps):
        ranked = sorted(counters[n].items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
        for rank, (gram, freq) in enumerate(ranked):
            entries[gram] = NgramEntry(n=n, corpus_frequency=freq, rank=rank)
    if not entries:
        raise EmptyVocabulary("no n-gram survived tokenization and filtering")
    return NgramVocab(entries=entries, caps=tuple(caps))


# --- spherical k-means over title embeddings --------------------------------


@dataclass
class TitleClustering:
    k: int
    centroids: np.ndarray  # (k, d), rows unit-norm
    assignment: dict[str, int]  # record id -> cluster index

    def assign_vector(self, vec: np.ndarray) -> int:
        """Nearest centroid by cosine; used for titles unseen at build time."""
        v = np.asarray(vec, dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise DegenerateInput("zero-norm title embedding")
        return int(np.argmax(self.centroids @ (v / norm)))


def cluster_titles(
    title_embeddings: list[tuple[str, np.ndarray]],
    k: int = 100,
    seed: int = 0,
    max_iters: int = 100,
) -> TitleClustering:
    """Spherical k-means: normalized inputs, cosine assignment, centroids
    re-normalized each step. Deterministic for a fixed seed; empty clusters
    are reseeded with the point farthest from its current centroid.
    """
    if not title_embeddings:
        raise DegenerateInput("no embeddings to cluster")
    ids = [rid for rid, _ in title_embeddings]
    mat = np.stack([np.asarray(v, dtype=np.float64) for _, v in title_embeddings])
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0):
        bad = ids[int(np.argmin(norms))]
        raise DegenerateInput(f"zero-norm embedding for record {bad!r}")
    x = mat / norms[:, None]

    distinct = np.unique(x, axis=0)
    if k > len(distinct):
        raise DegenerateInput(f"k={k} exceeds the {len(distinct)} distinct embeddings")

    rng = np.random.default_rng(seed)
    # Sample initial centroids from the distinct points so no two coincide.
    init_idx = rng.choice(len(distinct), size=k, replace=False)
    centroids = distinct[init_idx].copy()

    assign = np.zeros(len(x), dtype=np.int64)
    for _ in range(max_iters):
        sims = x @ centroids.T
        new_assign = np.argmax(sims, axis=1)
        new_centroids = np.zeros_like(centroids)
        counts = np.bincount(new_assign, minlength=k)
        np.add.at(new_centroids, new_assign, x)
        for c in range(k):
            if counts[c] == 0:
                # Reseed with the globally worst-fitting point.
                fit = sims[np.arange(len(x)), new_assign]
                worst = int(np.argmin(fit))
                new_centroids[c] = x[worst]
                new_assign[worst] = c
                counts[c] = 1
                sims[worst, :] = 2.0  # don't steal it twice
            norm = np.linalg.norm(new_centroids[c])
            new_centroids[c] = new_centroids[c] / norm if norm > 0 else centroids[c]
        converged = np.array_equal(new_assign, assign) and np.allclose(
            new_centroids, centroids, rtol=0, atol=0
        )
        centroids, assign = new_centroids, new_assign
        if converged:
            break

    # Final pass so every point sits with its argmax-cosine centroid.
    assign = np.argmax(x @ centroids.T, axis=1)
    return TitleClustering(
        k=k,
        centroids=centroids,
        assignment={rid: int(c) for rid, c in zip(ids, assign)},
    )


# --- split dedup ------------------------------------------------------------


@dataclass
class DedupRemoval:
    record_id: str
    caption: str
    matched_split: str  # "val" or "test"


def dedup_training_split(
    train: list[ArtworkRecord],
    val: list[ArtworkRecord],
    test: list[ArtworkRecord],
) -> tuple[list[ArtworkRecord], list[DedupRemoval]]:
    """Drop training captions whose normalized form also appears in the
    validation or test split; records left with no captions are dropped too.

    Matching is exact on the normalized form (lowercase, punctuation
    stripped, whitespace collapsed). Returns the cleaned training list and
    a removal report.
    """
    val_forms = {normalize_caption(c.text) for r in val for c in r.captions}
    test_forms = {normalize_caption(c.text) for r in test for c in r.captions}

    cleaned: list[ArtworkRecord] = []
    report: list[DedupRemoval] = []
    for rec in train:
        kept = []
        for cap in rec.captions:
            form = normalize_caption(cap.text)
            if form in val_forms:
                report.append(DedupRemoval(rec.id, cap.text, "val"))
            elif form in test_forms:
                report.append(DedupRemoval(rec.id, cap.text, "test"))
            else:
                kept.append(cap)
        if kept:
            cleaned.append(
                ArtworkRecord(
                    id=rec.id,
                    image_ref=rec.image_ref,
                    author=rec.author,
                    title=rec.title,
                    technique=rec.technique,
                    type_=rec.type_,
                    school=rec.school,
                    timeframe=rec.timeframe,
                    date=rec.date,
                    captions=kept,
                )
            )
        else:
            logger.info("dedup dropped record %s entirely (no captions left)", rec.id)
    return cleaned, report
