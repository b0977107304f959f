"""EER and DET points, stratified k-fold splits and the BaySMM grid search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, TextIO

import numpy as np

from .baysmm import REG_TYPES, SmmTrainConfig, extract, train
from .classifiers import (
    score_glc,
    score_glcu,
    score_logreg,
    train_glc,
    train_glcu,
    train_logreg,
)
from .corpus import ENGLISH, NON_ENGLISH, DocTermMatrix
from .errors import DuplicateUttId, MalformedLine, SingleClass, TooFewExamples

log = logging.getLogger(__name__)

GRID_REG_WEIGHTS = tuple(
    float(f"{mant}e{exp}") for exp in range(-5, -2) for mant in (1, 2, 5)
) + (1e-2,)
GRID_DIMS = (32, 64, 96, 128, 160)


@dataclass
class ScoredSet:
    utt_ids: list[str]
    scores: np.ndarray
    labels: np.ndarray  # True for english

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels, dtype=bool)
        if not (len(self.utt_ids) == self.scores.size == self.labels.size):
            raise ValueError("ids, scores and labels differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    @classmethod
    def from_scores(cls, english, non_english):
        """Build an anonymous set from two score lists (handy for fixtures)."""
        en, non = list(english), list(non_english)
        ids = [f"en{i}" for i in range(len(en))] + [f"non{i}" for i in range(len(non))]
        return cls(ids, np.array(en + non, dtype=float), np.array([True] * len(en) + [False] * len(non)))


def _operating_points(s: ScoredSet):
    """Thresholds (-inf, midpoints between distinct scores, +inf) with FAR and FRR.

    Accept when score >= threshold. Counting is done on value ranks, so no
    threshold arithmetic can misplace a score.
    """
    n_en = int(s.labels.sum())
    n_non = s.labels.size - n_en
    if n_en == 0 or n_non == 0:
        raise SingleClass(f"EER needs both classes, got {n_en} english / {n_non} non_english")
    values, inv = np.unique(s.scores, return_inverse=True)
    en_at = np.bincount(inv[s.labels], minlength=values.size)
    non_at = np.bincount(inv[~s.labels], minlength=values.size)
    # index i: threshold between values[i-1] and values[i]
    en_below = np.concatenate([[0], np.cumsum(en_at)])
    non_below = np.concatenate([[0], np.cumsum(non_at)])
    far = (n_non - non_below) / n_non
    frr = en_below / n_en
    mids = values[:-1] / 2 + values[1:] / 2
    thresholds = np.concatenate([[-np.inf], mids, [np.inf]])
    return thresholds, far, frr


def compute_eer(s: ScoredSet) -> tuple[float, float]:
    """Equal error rate and the threshold where it is attained.

    FAR and FRR are linearly interpolated between the two operating points
    that bracket their crossing.
    """
    t, far, frr = _operating_points(s)
    diff = far - frr
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0:
        return float(far[i]), float(t[i])
    d0, d1 = diff[i - 1], diff[i]
    a = d0 / (d0 - d1)
    eer = far[i - 1] + a * (far[i] - far[i - 1])
    t0, t1 = t[i - 1], t[i]
    if math.isinf(t0):
        thr = t1
    elif math.isinf(t1):
        thr = t0
    else:
        thr = t0 + a * (t1 - t0)
    return float(eer), float(thr)


def det_points(s: ScoredSet) -> list[tuple[float, float, float]]:
    t, far, frr = _operating_points(s)
    return [(float(a), float(b), float(c)) for a, b, c in zip(t, far, frr)]


def write_det(points, stream: TextIO) -> None:
    stream.write("threshold\tfar\tfrr\n")
    for t, far, frr in points:
        stream.write(f"{t!r}\t{far!r}\t{frr!r}\n")


# -- cross-validation -----------------------------------------------------


def stratified_kfold(manifest: dict, k: int = 5, seed: int = 42):
    """Split english/non_english ids into `k` folds, stratified by tag.

    Returns a list of ``(train_ids, test_ids)``; ids keep manifest order.
    Mixed and unknown ids are ignored.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold_of = {}
    offset = 0
    for tag in (ENGLISH, NON_ENGLISH):
        ids = [u for u, t in manifest.items() if t == tag]
        if len(ids) < k:
            raise TooFewExamples(f"{tag} has {len(ids)} examples, fewer than k={k}")
        for pos, j in enumerate(rng.permutation(len(ids))):
            fold_of[ids[j]] = (pos + offset) % k
        # continue dealing where the previous class stopped to even out fold sizes
        offset = (offset + len(ids)) % k
    ordered = [u for u in manifest if u in fold_of]
    return [
        ([u for u in ordered if fold_of[u] != f], [u for u in ordered if fold_of[u] == f])
        for f in range(k)
    ]


# -- classifier plumbing shared by CV and the pipeline ---------------------

BACKENDS = ("glc", "glcu", "logreg")


def fit_backend(backend: str, posteriors, labels, l2_weight=1e-4, em_iters=50):
    if backend == "glc":
        return train_glc([q.nu for q in posteriors], labels)
    if backend == "glcu":
        return train_glcu(posteriors, labels, em_iters)
    if backend == "logreg":
        return train_logreg(np.array([q.nu for q in posteriors]), labels, l2_weight)
    raise ValueError(f"unknown backend {backend!r}")


def score_backend(backend: str, model, posteriors) -> np.ndarray:
    if backend == "glc":
        return np.atleast_1d(score_glc(model, np.array([q.nu for q in posteriors])))
    if backend == "glcu":
        return np.atleast_1d(score_glcu(model, list(posteriors)))
    if backend == "logreg":
        return np.atleast_1d(score_logreg(model, np.array([q.nu for q in posteriors])))
    raise ValueError(f"unknown backend {backend!r}")


# -- grid search ----------------------------------------------------------


@dataclass
class GridSpec:
    reg_types: tuple[str, ...] = REG_TYPES
    reg_weights: tuple[float, ...] = GRID_REG_WEIGHTS
    dims: tuple[int, ...] = GRID_DIMS

    def __post_init__(self):
        self.reg_types = tuple(self.reg_types)
        self.reg_weights = tuple(float(w) for w in self.reg_weights)
        self.dims = tuple(int(k) for k in self.dims)
        if not (self.reg_types and self.reg_weights and self.dims):
            raise ValueError("every grid axis needs at least one value")
        bad = set(self.reg_types) - set(REG_TYPES)
        if bad:
            raise ValueError(f"unknown reg types {sorted(bad)}")

    def configs(self):
        for r in self.reg_types:
            for lam in self.reg_weights:
                for K in self.dims:
                    yield r, lam, K

    def __len__(self):
        return len(self.reg_types) * len(self.reg_weights) * len(self.dims)


@dataclass
class GridResult:
    reg_type: str
    reg_weight: float
    K: int
    fold_eers: list[float] = field(default_factory=list)

    @property
    def mean_eer(self) -> float:
        return float(np.mean(self.fold_eers))

    def sort_key(self):
        return (self.mean_eer, self.K, self.reg_weight, REG_TYPES.index(self.reg_type))


def grid_search(
    matrix: DocTermMatrix,
    manifest: dict,
    grid: GridSpec,
    k: int = 5,
    seed: int = 42,
    smm_cfg: SmmTrainConfig | None = None,
    backend: str = "glcu",
    reextract: bool = True,
    progress=None,
) -> list[GridResult]:
    """Rank every grid configuration by its mean k-fold CV EER.

    BaySMM is trained once per configuration on all rows of `matrix`
    (unsupervised); only the classifier is cross-validated.
    """
    base = smm_cfg or SmmTrainConfig(seed=seed)
    folds = stratified_kfold({u: manifest[u] for u in matrix.utt_ids if u in manifest}, k, seed)
    results = []
    for reg_type, lam, K in grid.configs():
        cfg = replace(base, K=K, reg_type=reg_type, reg_weight=lam)
        res = train(matrix, cfg)
        posts = extract(matrix, res.params, cfg) if reextract else res.posteriors
        by_id = {q.utt_id: q for q in posts}
        gr = GridResult(reg_type, lam, K)
        for train_ids, test_ids in folds:
            model = fit_backend(backend, [by_id[u] for u in train_ids], [manifest[u] for u in train_ids])
            scores = score_backend(backend, model, [by_id[u] for u in test_ids])
            labels = [manifest[u] == ENGLISH for u in test_ids]
            gr.fold_eers.append(compute_eer(ScoredSet(list(test_ids), scores, labels))[0])
        log.info("grid %s lambda=%g K=%d mean EER %.4f", reg_type, lam, K, gr.mean_eer)
        if progress is not None:
            progress(gr)
        results.append(gr)
    return sorted(results, key=GridResult.sort_key)


def write_cv_report(results: Sequence[GridResult], stream: TextIO) -> None:
    stream.write("reg_type\tlambda\tK\tfold\teer\n")
    for r in results:
        for f, e in enumerate(r.fold_eers):
            stream.write(f"{r.reg_type}\t{r.reg_weight!r}\t{r.K}\t{f}\t{e!r}\n")


def write_cv_summary(results: Sequence[GridResult], stream: TextIO) -> None:
    stream.write("rank\treg_type\tlambda\tK\tmean_eer\n")
    for i, r in enumerate(sorted(results, key=GridResult.sort_key), start=1):
        stream.write(f"{i}\t{r.reg_type}\t{r.reg_weight!r}\t{r.K}\t{r.mean_eer!r}\n")


# -- score files ----------------------------------------------------------


def write_scores(ids: Sequence[str], scores, labels: Sequence[str], stream: TextIO) -> None:
    for u, s, lab in zip(ids, scores, labels):
        stream.write(f"{u} {float(s)!r} {lab}\n")


def read_scores(stream: TextIO | Iterable[str]):
    """Return ``(ids, scores, tags)`` from a score file."""
    ids, scores, tags = [], [], []
    seen = set()
    for lineno, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 3:
            raise MalformedLine("expected '<utt-id> <score> <label>'", lineno)
        try:
            v = float(fields[1])
        except ValueError:
            raise MalformedLine(f"score {fields[1]!r} is not a number", lineno) from None
        if not math.isfinite(v):
            raise MalformedLine(f"score {fields[1]!r} is not finite", lineno)
        if fields[0] in seen:
            raise DuplicateUttId(f"line {lineno}: duplicate utterance id {fields[0]!r}")
        seen.add(fields[0])
        ids.append(fields[0])
        scores.append(v)
        tags.append(fields[2])
    return ids, np.array(scores), tags


def scored_set_from_file(ids, scores, tags) -> ScoredSet:
    """Keep english/non_english rows only."""
    keep = [i for i, t in enumerate(tags) if t in (ENGLISH, NON_ENGLISH)]
    return ScoredSet([ids[i] for i in keep], scores[keep], [tags[i] == ENGLISH for i in keep])
