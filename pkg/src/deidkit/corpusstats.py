"""Corpus profiling and cross-corpus comparison.

Summary statistics, n-gram profiles (whole-text or near-PHI), vocabulary
Jaccard distance, greedy-matching BERTScore, class weights for imbalanced
token classification, and deterministic train/val/test splits.

Conventions that matter downstream: token counts use the core tokenizer;
vocabularies are case-sensitive; n-gram tokens are lowercased with
punctuation stripped inside the token ("mg/dl" counts as "mgdl"); class
weights use the natural logarithm.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Corpus, DeidError, tokenize
from .evalmetrics import label_tokens

logger = logging.getLogger("deidkit.corpusstats")

WHOLE_TEXT = "whole_text"
PHI_ADJACENT = "phi_adjacent"


class BothEmpty(DeidError):
    """Jaccard distance over two empty vocabularies is undefined."""


class DimensionMismatch(DeidError):
    """Embedding sides with different vector widths."""


class EmptySide(DeidError):
    """An embedding comparison side with no vectors."""


class EmptyCorpus(DeidError):
    """An operation that needs a non-empty corpus got an empty one."""


class RatioMismatch(DeidError):
    """Split ratios inconsistent with the corpus size."""


# --- summary ---------------------------------------------------------------

@dataclass(frozen=True)
class CorpusSummary:
    n_summaries: int
    n_tokens_total: int
    n_unique_tokens: int
    max_len: int
    min_len: int
    avg_len: float
    n_original_tags: int
    char_counts: int
    word_length: dict  # mean, se, median, min, max over per-word char counts


def summarize(corpus: Corpus) -> CorpusSummary:
    lengths: list[int] = []
    vocab: set = set()
    tags: set = set()
    chars = 0
    word_lens: list[int] = []
    for doc in corpus:
        toks = tokenize(doc.text)
        lengths.append(len(toks.tokens))
        chars += len(doc.text)
        for tok in toks.tokens:
            vocab.add(tok.surface)
            if any(ch.isalnum() for ch in tok.surface):
                word_lens.append(len(tok.surface))
        for ent in doc.entities:
            tags.add(ent.tag)
    if word_lens:
        arr = np.asarray(word_lens, dtype=float)
        se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        word_length = {
            "mean": float(arr.mean()), "se": se, "median": float(np.median(arr)),
            "min": int(arr.min()), "max": int(arr.max()),
        }
    else:
        word_length = {"mean": 0.0, "se": 0.0, "median": 0.0, "min": 0, "max": 0}
    total = sum(lengths)
    return CorpusSummary(
        n_summaries=len(corpus),
        n_tokens_total=total,
        n_unique_tokens=len(vocab),
        max_len=max(lengths) if lengths else 0,
        min_len=min(lengths) if lengths else 0,
        avg_len=total / len(lengths) if lengths else 0.0,
        n_original_tags=len(tags),
        char_counts=chars,
        word_length=word_length,
    )


# --- n-grams ---------------------------------------------------------------

@dataclass(frozen=True)
class NGramProfile:
    n: int
    scope: str
    k: int
    top: tuple  # ((ngram, count), ...) counts descending, ties alphabetical


def _clean_token(surface: str) -> str:
    return "".join(ch for ch in surface.lower() if ch.isalnum())


def ngram_profile(corpus: Corpus, n: int, k: int = 10, scope: str = WHOLE_TEXT,
                  stoplist: Optional[set] = None, window: int = 3) -> NGramProfile:
    """Top-k n-grams. phi_adjacent keeps only windows within `window` tokens
    of a non-OTHERS entity."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if scope not in (WHOLE_TEXT, PHI_ADJACENT):
        raise ValueError(f"bad scope {scope!r}")
    stop = {s.lower() for s in (stoplist or ())}
    other = corpus.schema.other
    counts: dict = {}
    for doc in corpus:
        toks = tokenize(doc.text)
        phi = [ent for ent in doc.entities if ent.tag != other]
        cleaned: list[str] = []
        near: list[bool] = []
        for tok in toks.tokens:
            c = _clean_token(tok.surface)
            if not c or c in stop:
                continue
            cleaned.append(c)
            near.append(any(e.start < tok.end and tok.start < e.end for e in phi))
        if scope == PHI_ADJACENT:
            near = _dilate(near, window)
        for i in range(len(cleaned) - n + 1):
            if scope == PHI_ADJACENT and not any(near[i : i + n]):
                continue
            gram = " ".join(cleaned[i : i + n])
            counts[gram] = counts.get(gram, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return NGramProfile(n=n, scope=scope, k=k, top=tuple(ranked))


def _dilate(flags: list, window: int) -> list:
    """True positions spread `window` steps in both directions."""
    n = len(flags)
    out = [False] * n
    for i, flag in enumerate(flags):
        if flag:
            lo = max(0, i - window)
            hi = min(n, i + window + 1)
            for j in range(lo, hi):
                out[j] = True
    return out


# --- vocabulary distance and BERTScore -------------------------------------

def vocabulary(corpus: Corpus) -> set:
    vocab: set = set()
    for doc in corpus:
        for tok in tokenize(doc.text).tokens:
            vocab.add(tok.surface)
    return vocab


def jaccard_distance(a: Corpus, b: Corpus) -> float:
    va, vb = vocabulary(a), vocabulary(b)
    union = va | vb
    if not union:
        raise BothEmpty("both vocabularies are empty")
    return 1.0 - len(va & vb) / len(union)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    out = np.zeros_like(matrix)
    np.divide(matrix, norms, out=out, where=norms > 0)
    return out


def bertscore_greedy(cand: Sequence, ref: Sequence) -> dict:
    """Greedy max-cosine matching, no idf weighting, no baseline rescaling.

    P averages, over candidate vectors, the best cosine against any
    reference vector; R is symmetric; F1 is their harmonic mean. A vector
    bitwise-identical to one on the other side scores exactly 1, which keeps
    self-comparison at (1, 1, 1) despite rounding."""
    c = np.asarray(cand, dtype=float)
    r = np.asarray(ref, dtype=float)
    if c.ndim != 2 or c.shape[0] == 0 or r.ndim != 2 or r.shape[0] == 0:
        raise EmptySide("both sides need at least one vector")
    if c.shape[1] != r.shape[1]:
        raise DimensionMismatch(f"dim {c.shape[1]} vs {r.shape[1]}")
    sim = np.clip(_unit_rows(c) @ _unit_rows(r).T, -1.0, 1.0)
    ref_rows = {row.tobytes() for row in r}
    cand_rows = {row.tobytes() for row in c}
    p_scores = [
        1.0 if c[i].tobytes() in ref_rows else float(sim[i].max())
        for i in range(c.shape[0])
    ]
    r_scores = [
        1.0 if r[j].tobytes() in cand_rows else float(sim[:, j].max())
        for j in range(r.shape[0])
    ]
    precision = sum(p_scores) / len(p_scores)
    recall = sum(r_scores) / len(r_scores)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def hash_vector(token: str, dim: int) -> list[float]:
    """Unit vector from the token's sha256; identical tokens get identical
    vectors, so self-comparison scores exactly 1."""
    raw = hashlib.sha256(token.encode()).digest()
    vals = []
    stretch = raw
    while len(vals) < dim:
        for i in range(0, len(stretch), 2):
            vals.append(int.from_bytes(stretch[i : i + 2], "big") / 65535.0 - 0.5)
            if len(vals) == dim:
                break
        stretch = hashlib.sha256(stretch).digest()
    norm = sum(v * v for v in vals) ** 0.5 or 1.0
    return [v / norm for v in vals]


def hash_embedding(tokens: Sequence[str], dim: int = 32) -> np.ndarray:
    """Deterministic per-token unit vectors; the in-repo stand-in for a
    contextual embedding backend."""
    if not tokens:
        return np.zeros((0, dim))
    return np.asarray([hash_vector(t, dim) for t in tokens], dtype=float)


class EmbeddingClient:
    """Wire-protocol embeddings: {"id", "tokens"} -> {"id", "vectors"}."""

    def __init__(self, backend) -> None:
        from .recognize import open_wire

        self._wire = open_wire(backend)
        self._n = 0

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        self._n += 1
        resp = self._wire.request({"id": f"embed-{self._n}", "tokens": list(tokens)})
        return np.asarray(resp["vectors"], dtype=float)

    def close(self) -> None:
        self._wire.close()

    def __enter__(self) -> "EmbeddingClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


Embedder = Callable[[Sequence[str]], np.ndarray]


# --- class weights ---------------------------------------------------------

@dataclass(frozen=True)
class ClassWeights:
    n: int  # total token count
    per_tag: dict  # tag -> {"n_t": int, "w_t": float}


def tag_weight(n: int, n_t: int) -> float:
    """w_t = ln(4 n / n_t)."""
    return math.log(4 * n / n_t)


def class_weights(corpus: Corpus, cap: float = 20.0) -> ClassWeights:
    """Token counts per tag (tokens labeled by entity overlap, OTHERS for
    the rest) fed through the weight formula. Unseen tags get the cap."""
    if len(corpus) == 0:
        raise EmptyCorpus("cannot weight an empty corpus")
    counts = {tag: 0 for tag in corpus.schema.tags}
    total = 0
    for doc in corpus:
        toks = tokenize(doc.text)
        for label in label_tokens(doc.text, doc.entities, corpus.schema.other, toks):
            counts[label] += 1
            total += 1
    if total == 0:
        raise EmptyCorpus("corpus has no tokens")
    per_tag = {}
    for tag, n_t in counts.items():
        if n_t > 0:
            w = tag_weight(total, n_t)
        else:
            w = cap
            logger.warning("tag %s has no tokens; weight capped at %s", tag, cap)
        per_tag[tag] = {"n_t": n_t, "w_t": w}
    return ClassWeights(n=total, per_tag=per_tag)


# --- splits ----------------------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")


def _split_sizes(ratios: Sequence, n: int) -> list[int]:
    if len(ratios) != len(SPLIT_NAMES):
        raise RatioMismatch(f"need {len(SPLIT_NAMES)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise RatioMismatch("ratios must be non-negative")
    if all(isinstance(r, int) for r in ratios):
        if sum(ratios) != n:
            raise RatioMismatch(f"integer ratios sum to {sum(ratios)}, corpus has {n}")
        return list(ratios)
    total = float(sum(ratios))
    if abs(total - 1.0) > 1e-9:
        raise RatioMismatch(f"fractional ratios sum to {total}, expected 1.0")
    exact = [r * n for r in ratios]
    sizes = [int(x) for x in exact]
    # largest-remainder rounding; ties resolved by position
    remainders = sorted(
        range(len(sizes)), key=lambda i: (-(exact[i] - sizes[i]), i)
    )
    for i in range(n - sum(sizes)):
        sizes[remainders[i]] += 1
    return sizes


def split(corpus: Corpus, ratios: Sequence, seed: int = 0) -> dict:
    """Deterministic, disjoint, exhaustive train/val/test partition. Integer
    ratios are absolute sizes; fractions are shares of the corpus."""
    sizes = _split_sizes(ratios, len(corpus))
    docs = list(corpus)
    random.Random(seed).shuffle(docs)
    out = {}
    cursor = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        part = [doc.with_meta(split=name) for doc in docs[cursor : cursor + size]]
        out[name] = Corpus(documents=tuple(part), schema=corpus.schema)
        cursor += size
    return out


def summary_to_dict(summary: CorpusSummary) -> dict:
    return {
        "n_summaries": summary.n_summaries,
        "n_tokens_total": summary.n_tokens_total,
        "n_unique_tokens": summary.n_unique_tokens,
        "max_len": summary.max_len,
        "min_len": summary.min_len,
        "avg_len": summary.avg_len,
        "n_original_tags": summary.n_original_tags,
        "char_counts": summary.char_counts,
        "word_length": dict(summary.word_length),
    }
