"""Vocabulary, sparse utterance-by-word matrices, TF-IDF and label manifests."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .confnet import BagOfWords
from .errors import DuplicateUttId, EmptyVocabulary, MalformedLine, NotFitted

ENGLISH = "english"
NON_ENGLISH = "non_english"
MIXED = "mixed"
UNKNOWN = "unknown"
TAGS = (ENGLISH, NON_ENGLISH, MIXED, UNKNOWN)


@dataclass
class Vocabulary:
    tokens: list[str]
    total_count: np.ndarray
    doc_freq: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary tokens are not unique")
        self.total_count = np.asarray(self.total_count, dtype=float)
        self.doc_freq = np.asarray(self.doc_freq, dtype=np.int64)

    def __len__(self):
        return len(self.tokens)


@dataclass
class DocTermMatrix:
    """Rows are utterances, columns vocabulary entries; stored as CSR."""

    utt_ids: list[str]
    X: sp.csr_matrix

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=float)
        X.eliminate_zeros()
        X.sort_indices()
        self.X = X
        if X.shape[0] != len(self.utt_ids):
            raise ValueError(f"{len(self.utt_ids)} ids for {X.shape[0]} rows")

    @property
    def V(self) -> int:
        return self.X.shape[1]

    @property
    def D(self) -> int:
        return self.X.shape[0]

    def row_totals(self) -> np.ndarray:
        return np.asarray(self.X.sum(axis=1)).ravel()

    def subset(self, ids: Sequence[str]) -> "DocTermMatrix":
        pos = {u: i for i, u in enumerate(self.utt_ids)}
        rows = [pos[u] for u in ids]
        return DocTermMatrix(list(ids), self.X[rows])


def build_vocabulary(bows: Iterable[BagOfWords], min_total_count: float = 1e-3) -> Vocabulary:
    """Keep tokens whose soft-count total over `bows` is at least `min_total_count`.

    Columns are assigned in lexicographic token order so the result is
    independent of document order.
    """
    if not min_total_count >= 0:
        raise ValueError("min_total_count must be >= 0")
    parts = defaultdict(list)
    df = defaultdict(int)
    for bow in bows:
        for t, c in bow.counts.items():
            if c > 0:
                parts[t].append(c)
                df[t] += 1
    # fsum is exactly rounded, so totals do not depend on accumulation order
    totals = {t: math.fsum(cs) for t, cs in parts.items()}
    kept = sorted(t for t, c in totals.items() if c >= min_total_count)
    if not kept:
        raise EmptyVocabulary(
            f"no token reaches total count {min_total_count} ({len(totals)} observed)"
        )
    return Vocabulary(kept, [totals[t] for t in kept], [df[t] for t in kept])


def vectorize(bows: Sequence[BagOfWords], vocab: Vocabulary):
    """Map bags of words onto `vocab` columns.

    Returns ``(matrix, empty_ids)``; out-of-vocabulary tokens are dropped and
    utterances left with no in-vocabulary mass are kept as zero rows and listed
    in `empty_ids`.
    """
    if len(vocab) == 0:
        raise EmptyVocabulary("cannot vectorize against an empty vocabulary")
    indptr = [0]
    indices = []
    data = []
    empty = []
    for bow in bows:
        row = sorted((vocab.index[t], c) for t, c in bow.counts.items() if t in vocab.index and c > 0)
        if not row:
            empty.append(bow.utt_id)
        indices.extend(j for j, _ in row)
        data.extend(c for _, c in row)
        indptr.append(len(indices))
    X = sp.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(len(bows), len(vocab)),
    )
    return DocTermMatrix([b.utt_id for b in bows], X), empty


class Tfidf:
    """Smoothed TF-IDF with row L2 normalisation.

    ``idf(v) = ln((1 + D) / (1 + df_v)) + 1`` with D and df taken from the
    matrix passed to :meth:`fit`.
    """

    def __init__(self, idf: np.ndarray | None = None):
        self.idf = None if idf is None else np.asarray(idf, dtype=float)

    def fit(self, m: DocTermMatrix) -> "Tfidf":
        if m.D < 1:
            raise ValueError("TF-IDF needs at least one training row")
        df = np.bincount(m.X.indices, minlength=m.V)
        self.idf = np.log((1.0 + m.D) / (1.0 + df)) + 1.0
        return self

    def transform(self, m: DocTermMatrix) -> DocTermMatrix:
        if self.idf is None:
            raise NotFitted("TF-IDF weights used before fit()")
        if m.V != self.idf.size:
            raise ValueError(f"matrix has {m.V} columns, idf has {self.idf.size}")
        W = m.X.multiply(self.idf[None, :]).tocsr()
        norms = np.sqrt(np.asarray(W.multiply(W).sum(axis=1)).ravel())
        scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        W = sp.diags(scale) @ W
        return DocTermMatrix(list(m.utt_ids), W)

    def fit_transform(self, m: DocTermMatrix) -> DocTermMatrix:
        return self.fit(m).transform(m)


def tfidf_transform(m: DocTermMatrix, model: Tfidf | None = None) -> DocTermMatrix:
    """Weight `m` with `model`'s stored idf, or fit one on `m` if none is given."""
    if model is None:
        model = Tfidf().fit(m)
    return model.transform(m)


# -- file formats ---------------------------------------------------------


def write_vocabulary(vocab: Vocabulary, stream: TextIO) -> None:
    for i, t in enumerate(vocab.tokens):
        stream.write(f"{t} {i} {float(vocab.total_count[i])!r} {int(vocab.doc_freq[i])}\n")


def read_vocabulary(stream: TextIO | Iterable[str]) -> Vocabulary:
    tokens, totals, dfs = [], [], []
    for lineno, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 4:
            raise MalformedLine("expected '<token> <column-id> <total_count> <doc_freq>'", lineno)
        try:
            col, total, df = int(fields[1]), float(fields[2]), int(fields[3])
        except ValueError:
            raise MalformedLine("non-numeric vocabulary field", lineno) from None
        if col != len(tokens):
            raise MalformedLine(f"column id {col} out of order (expected {len(tokens)})", lineno)
        tokens.append(fields[0])
        totals.append(total)
        dfs.append(df)
    return Vocabulary(tokens, totals, dfs)


def write_matrix(m: DocTermMatrix, stream: TextIO) -> None:
    stream.write(f"V={m.V} D={m.D}\n")
    X = m.X
    for i, u in enumerate(m.utt_ids):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        items = " ".join(f"{j}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
        stream.write(f"{u} {items}".rstrip() + "\n")


def read_matrix(stream: TextIO | Iterable[str]) -> DocTermMatrix:
    lines = iter(enumerate(stream, start=1))
    header = None
    for lineno, line in lines:
        if line.strip():
            header = line.split()
            break
    if header is None:
        raise MalformedLine("missing 'V=<int> D=<int>' header", 1)
    try:
        meta = dict(f.split("=", 1) for f in header)
        V, D = int(meta["V"]), int(meta["D"])
    except (ValueError, KeyError):
        raise MalformedLine("bad header, expected 'V=<int> D=<int>'", lineno) from None

    ids, indptr, indices, data = [], [0], [], []
    seen = set()
    for lineno, line in lines:
        fields = line.split()
        if not fields:
            continue
        u = fields[0]
        if u in seen:
            raise DuplicateUttId(f"line {lineno}: duplicate utterance id {u!r}")
        seen.add(u)
        prev = -1
        for item in fields[1:]:
            try:
                j_s, v_s = item.split(":")
                j, v = int(j_s), float(v_s)
            except ValueError:
                raise MalformedLine(f"expected <col>:<val>, got {item!r}", lineno) from None
            if not (prev < j < V):
                raise MalformedLine(f"column {j} out of range or not increasing", lineno)
            if not math.isfinite(v):
                raise MalformedLine(f"non-finite value {v_s!r}", lineno)
            prev = j
            indices.append(j)
            data.append(v)
        ids.append(u)
        indptr.append(len(indices))
    if len(ids) != D:
        raise MalformedLine(f"header announces D={D} rows, found {len(ids)}")
    X = sp.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
        shape=(D, V),
    )
    return DocTermMatrix(ids, X)


def write_idf(model: Tfidf, stream: TextIO) -> None:
    if model.idf is None:
        raise NotFitted("TF-IDF weights used before fit()")
    stream.write(f"TFIDF v1 V={model.idf.size}\n")
    for v in model.idf:
        stream.write(f"{float(v)!r}\n")


def read_idf(stream: TextIO | Iterable[str]) -> Tfidf:
    lines = [ln for ln in stream if ln.strip()]
    if not lines or not lines[0].startswith("TFIDF v1"):
        raise MalformedLine("missing 'TFIDF v1' header", 1)
    idf = np.array([float(ln) for ln in lines[1:]])
    return Tfidf(idf)


class LabelManifest(dict):
    """Mapping utt_id -> tag, one of ``english``, ``non_english``, ``mixed``, ``unknown``."""

    def scorable(self, ids: Iterable[str] | None = None) -> list[str]:
        """Ids whose tag is english or non_english, in the given (or file) order."""
        ids = self.keys() if ids is None else ids
        return [u for u in ids if self.get(u) in (ENGLISH, NON_ENGLISH)]

    def is_english(self, ids: Iterable[str]) -> np.ndarray:
        return np.array([self[u] == ENGLISH for u in ids], dtype=bool)


def read_manifest(stream: TextIO | Iterable[str]) -> LabelManifest:
    out = LabelManifest()
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise MalformedLine("expected '<utt-id>\\t<tag>'", lineno)
        u, tag = fields[0].strip(), fields[1].strip()
        if tag not in TAGS:
            raise MalformedLine(f"unknown tag {tag!r}; expected one of {TAGS}", lineno)
        if u in out:
            raise DuplicateUttId(f"line {lineno}: duplicate utterance id {u!r}")
        out[u] = tag
    return out


def write_manifest(manifest: dict, stream: TextIO) -> None:
    for u, tag in manifest.items():
        stream.write(f"{u}\t{tag}\n")
