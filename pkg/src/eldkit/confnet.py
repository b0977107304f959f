"""Confusion-network parsing and soft bag-of-words accumulation.

Line format, one utterance per line::

    <utt-id> [ <token> <posterior> <token> <posterior> ... ] [ ... ] ...

Bag-of-words format, one utterance per line::

    <utt-id> <token>:<count> <token>:<count> ...
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, TextIO

from .errors import DuplicateUttId, MalformedLine, UttIdMismatch

EPS_TOKEN = "<eps>"
POSTERIOR_TOL = 1e-6
BIN_MASS_TOL = 1e-4

Bin = list  # list of (token, posterior)


@dataclass
class ConfusionNetwork:
    utt_id: str
    bins: list[Bin] = field(default_factory=list)


@dataclass
class BagOfWords:
    utt_id: str
    counts: dict[str, float] = field(default_factory=dict)

    def total(self) -> float:
        return math.fsum(self.counts.values())


def _parse_float(text, lineno):
    try:
        value = float(text)
    except ValueError:
        raise MalformedLine(f"posterior {text!r} is not a number", lineno) from None
    if not math.isfinite(value):
        raise MalformedLine(f"posterior {text!r} is not finite", lineno)
    return value


def parse_confnet_line(line: str, lineno: int | None = None) -> ConfusionNetwork:
    fields = line.split()
    if not fields:
        raise MalformedLine("empty line", lineno)
    utt_id, rest = fields[0], fields[1:]
    if utt_id in ("[", "]"):
        raise MalformedLine("missing utterance id", lineno)

    bins: list[Bin] = []
    current = None
    for tok in rest:
        if tok == "[":
            if current is not None:
                raise MalformedLine("unbalanced brackets: nested '['", lineno)
            current = []
        elif tok == "]":
            if current is None:
                raise MalformedLine("unbalanced brackets: ']' without '['", lineno)
            if len(current) % 2:
                raise MalformedLine("odd token/posterior pairing inside a bin", lineno)
            pairs = []
            for word, score in zip(current[::2], current[1::2]):
                p = _parse_float(score, lineno)
                if p < 0.0 or p > 1.0 + POSTERIOR_TOL:
                    raise MalformedLine(f"posterior {p} of {word!r} outside [0, 1]", lineno)
                pairs.append((word, p))
            if math.fsum(p for _, p in pairs) > 1.0 + BIN_MASS_TOL:
                raise MalformedLine(f"bin {len(bins)} posteriors sum above 1", lineno)
            bins.append(pairs)
            current = None
        else:
            if current is None:
                raise MalformedLine(f"token {tok!r} outside of a bin", lineno)
            current.append(tok)
    if current is not None:
        raise MalformedLine("unbalanced brackets: missing ']'", lineno)
    return ConfusionNetwork(utt_id, bins)


def parse_confnet_file(stream: TextIO | Iterable[str]) -> list[ConfusionNetwork]:
    """Parse every non-empty line of `stream` into a ConfusionNetwork.

    Epsilon arcs are kept; they are dropped only by :func:`accumulate_bow`.
    """
    out = []
    seen = set()
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        cn = parse_confnet_line(line, lineno)
        if cn.utt_id in seen:
            raise DuplicateUttId(f"line {lineno}: duplicate utterance id {cn.utt_id!r}")
        seen.add(cn.utt_id)
        out.append(cn)
    return out


def format_confnet(cn: ConfusionNetwork) -> str:
    parts = [cn.utt_id]
    for b in cn.bins:
        parts.append("[")
        for word, p in b:
            parts.append(word)
            parts.append(repr(float(p)))
        parts.append("]")
    return " ".join(parts)


def write_confnet_file(cns: Iterable[ConfusionNetwork], stream: TextIO) -> None:
    for cn in cns:
        stream.write(format_confnet(cn) + "\n")


def accumulate_bow(cn: ConfusionNetwork) -> BagOfWords:
    """Sum posteriors per lowercased token over all bins, dropping epsilon arcs.

    Bin posteriors are not renormalized after the epsilon arc is removed.
    """
    acc = defaultdict(list)
    for b in cn.bins:
        for word, p in b:
            if word == EPS_TOKEN:
                continue
            acc[word.lower()].append(p)
    counts = {}
    for word, ps in acc.items():
        total = math.fsum(ps)
        if total > 0.0:
            counts[word] = total
    return BagOfWords(cn.utt_id, counts)


def pool_bows(bow_a: BagOfWords, bow_b: BagOfWords, tag_a: str, tag_b: str) -> BagOfWords:
    """Union two systems' statistics for one utterance under `tag:` namespaces."""
    if not tag_a or not tag_b:
        raise ValueError("pooling tags must be non-empty")
    if tag_a == tag_b:
        raise ValueError(f"pooling tags must differ, got {tag_a!r} twice")
    if bow_a.utt_id != bow_b.utt_id:
        raise UttIdMismatch(f"cannot pool {bow_a.utt_id!r} with {bow_b.utt_id!r}")
    counts = {f"{tag_a}:{t}": c for t, c in bow_a.counts.items()}
    counts.update({f"{tag_b}:{t}": c for t, c in bow_b.counts.items()})
    return BagOfWords(bow_a.utt_id, counts)


def pool_bow_lists(bows_a, bows_b, tag_a, tag_b):
    """Pool two per-system lists utterance by utterance (order follows `bows_a`)."""
    by_id = {b.utt_id: b for b in bows_b}
    ids_a = [b.utt_id for b in bows_a]
    if set(ids_a) != set(by_id):
        missing = sorted(set(ids_a) ^ set(by_id))
        raise UttIdMismatch(f"utterance sets differ between systems, e.g. {missing[:5]}")
    return [pool_bows(b, by_id[b.utt_id], tag_a, tag_b) for b in bows_a]


def format_bow(bow: BagOfWords) -> str:
    items = " ".join(f"{t}:{bow.counts[t]!r}" for t in sorted(bow.counts))
    return f"{bow.utt_id} {items}".rstrip()


def write_bow_file(bows: Iterable[BagOfWords], stream: TextIO) -> None:
    for bow in bows:
        stream.write(format_bow(bow) + "\n")


def read_bow_file(stream: TextIO | Iterable[str]) -> list[BagOfWords]:
    out = []
    seen = set()
    for lineno, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields:
            continue
        utt_id = fields[0]
        if utt_id in seen:
            raise DuplicateUttId(f"line {lineno}: duplicate utterance id {utt_id!r}")
        seen.add(utt_id)
        counts = {}
        for item in fields[1:]:
            # namespaced tokens contain ':' themselves, so split on the last one
            token, sep, value = item.rpartition(":")
            if not sep or not token:
                raise MalformedLine(f"expected <token>:<count>, got {item!r}", lineno)
            try:
                c = float(value)
            except ValueError:
                raise MalformedLine(f"count {value!r} is not a number", lineno) from None
            if not math.isfinite(c) or c < 0:
                raise MalformedLine(f"count {value!r} must be finite and >= 0", lineno)
            if c > 0:
                counts[token] = counts.get(token, 0.0) + c
        out.append(BagOfWords(utt_id, counts))
    return out
