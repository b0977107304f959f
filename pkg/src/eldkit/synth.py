"""Synthetic bilingual code-switching confusion-network corpora.

Two languages (``english`` and ``non_english``) each own a private vocabulary
and share a small set of greeting/call-sign tokens.  A language's unigram is
Zipfian over its private tokens plus the shared ones; the shared tokens sit
at the same, evenly spaced ranks in both languages (the most frequent token is
always shared), so they carry no language information.

Each segment has one true language.  Every bin draws its top token from that
language, or with probability ``code_switch_rate`` from the other one, gives
it posterior ``1 - confusion_noise`` and spreads the remaining mass over
``confusion_depth - 1`` distinct distractors drawn uniformly from all tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .confnet import EPS_TOKEN, ConfusionNetwork
from .corpus import ENGLISH, NON_ENGLISH, LabelManifest


@dataclass
class SynthConfig:
    vocab_size_per_lang: int = 950
    shared_vocab_size: int = 100
    zipf_exponent: float = 1.1
    segment_length_range: tuple[int, int] = (5, 15)
    code_switch_rate: float = 0.1
    confusion_depth: int = 3
    confusion_noise: float = 0.2
    n_segments: int = 200
    seed: int = 42
    id_prefix: str = "syn"

    def __post_init__(self):
        self.segment_length_range = tuple(int(v) for v in self.segment_length_range)
        lo, hi = self.segment_length_range
        if not 0 <= self.code_switch_rate <= 1 or not 0 <= self.confusion_noise <= 1:
            raise ValueError("rates must lie in [0, 1]")
        if min(self.vocab_size_per_lang, self.shared_vocab_size, self.confusion_depth,
               self.n_segments, lo) < 1 or hi < lo:
            raise ValueError("sizes must be >= 1 and segment_length_range ordered")
        if self.zipf_exponent <= 0:
            raise ValueError("zipf_exponent must be > 0")


class _Language:
    def __init__(self, name, own, shared, exponent):
        n = len(own) + len(shared)
        # shared tokens at ranks 0, stride, 2*stride, ... identical for both languages
        stride = n / len(shared)
        shared_ranks = [int(round(i * stride)) for i in range(len(shared))]
        ranked = [None] * n
        for r, t in zip(shared_ranks, shared):
            ranked[r] = t
        it = iter(own)
        ranked = [t if t is not None else next(it) for t in ranked]
        p = np.arange(1, n + 1, dtype=float) ** (-exponent)
        self.name = name
        self.tokens = np.array(ranked)
        self.own = frozenset(own)
        self.probs = p / p.sum()


def languages(cfg: SynthConfig):
    width = len(str(cfg.vocab_size_per_lang))
    shared = [f"sh{i:0{width}d}" for i in range(cfg.shared_vocab_size)]
    en = [f"en{i:0{width}d}" for i in range(cfg.vocab_size_per_lang)]
    nx = [f"nx{i:0{width}d}" for i in range(cfg.vocab_size_per_lang)]
    return (
        _Language(ENGLISH, en, shared, cfg.zipf_exponent),
        _Language(NON_ENGLISH, nx, shared, cfg.zipf_exponent),
        shared,
    )


def _bin(rng, top, all_tokens, cfg):
    if cfg.confusion_noise == 0.0:
        return [(top, 1.0)]
    if cfg.confusion_depth == 1:
        return [(top, 1.0 - cfg.confusion_noise), (EPS_TOKEN, cfg.confusion_noise)]
    picked = []
    while len(picked) < cfg.confusion_depth - 1:
        t = all_tokens[rng.integers(len(all_tokens))]
        if t != top and t not in picked:
            picked.append(t)
    mass = cfg.confusion_noise * rng.dirichlet(np.ones(len(picked)))
    return [(top, 1.0 - cfg.confusion_noise)] + [(t, float(p)) for t, p in zip(picked, mass)]


def generate(cfg: SynthConfig):
    """Return ``(confusion_networks, manifest)`` for ``2 * n_segments`` segments."""
    rng = np.random.default_rng(cfg.seed)
    en, nx, shared = languages(cfg)
    all_tokens = list(shared) + sorted(en.own) + sorted(nx.own)
    langs = {ENGLISH: (en, nx), NON_ENGLISH: (nx, en)}

    labels = np.array([ENGLISH] * cfg.n_segments + [NON_ENGLISH] * cfg.n_segments)
    rng.shuffle(labels)
    lo, hi = cfg.segment_length_range
    width = max(5, len(str(labels.size)))
    cns = []
    manifest = LabelManifest()
    for i, label in enumerate(labels):
        own, other = langs[str(label)]
        n_bins = int(rng.integers(lo, hi + 1))
        switched = rng.random(n_bins) < cfg.code_switch_rate
        bins = []
        for sw in switched:
            src = other if sw else own
            top = src.tokens[rng.choice(src.tokens.size, p=src.probs)]
            bins.append(_bin(rng, str(top), all_tokens, cfg))
        utt_id = f"{cfg.id_prefix}{i:0{width}d}"
        cns.append(ConfusionNetwork(utt_id, bins))
        manifest[utt_id] = str(label)
    return cns, manifest
