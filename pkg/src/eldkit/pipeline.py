"""In-process synthetic train/eval experiment shared by tests and scripts."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baysmm import SmmTrainConfig, extract, train
from .classifiers import score_logreg, train_logreg
from .confnet import accumulate_bow
from .corpus import ENGLISH, NON_ENGLISH, DocTermMatrix, Tfidf, build_vocabulary, vectorize
from .evaluation import ScoredSet, compute_eer, fit_backend, score_backend, write_scores
from .synth import SynthConfig, generate

# systems on BaySMM embeddings plus the sparse TF-IDF baseline
SYSTEMS = ("glc", "glcu", "logreg", "tfidf_lr")


@dataclass
class SyntheticSplit:
    train: DocTermMatrix
    train_manifest: dict
    eval: DocTermMatrix
    eval_manifest: dict


def synthetic_split(cfg: SynthConfig, eval_seed: int | None = None, eval_prefix: str = "ev") -> SyntheticSplit:
    """Train set from `cfg`, a held-out eval set from the same languages with another seed.

    The vocabulary is built on the training side only.
    """
    tr_cns, tr_man = generate(cfg)
    ev_cfg = dataclasses.replace(cfg, seed=cfg.seed + 1 if eval_seed is None else eval_seed, id_prefix=eval_prefix)
    ev_cns, ev_man = generate(ev_cfg)
    tr_bows = [accumulate_bow(cn) for cn in tr_cns]
    vocab = build_vocabulary(tr_bows)
    tr, _ = vectorize(tr_bows, vocab)
    ev, _ = vectorize([accumulate_bow(cn) for cn in ev_cns], vocab)
    return SyntheticSplit(tr, tr_man, ev, ev_man)


def _labelled(matrix, manifest):
    return [u for u in matrix.utt_ids if manifest.get(u) in (ENGLISH, NON_ENGLISH)]


@dataclass
class ExperimentResult:
    scores: dict[str, ScoredSet] = field(default_factory=dict)
    elbo_trace: list[float] = field(default_factory=list)

    @property
    def eers(self) -> dict[str, float]:
        return {name: compute_eer(s)[0] for name, s in self.scores.items()}

    def write(self, out_dir, prefix=""):
        """One ``<prefix><system>.scores`` file per system; returns the paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, s in self.scores.items():
            p = out_dir / f"{prefix}{name}.scores"
            tags = [ENGLISH if y else NON_ENGLISH for y in s.labels]
            with open(p, "w", encoding="utf-8", newline="\n") as f:
                write_scores(s.utt_ids, s.scores, tags, f)
            paths.append(p)
        return paths


def run_experiment(
    split: SyntheticSplit,
    smm_cfg: SmmTrainConfig,
    systems=("glcu", "tfidf_lr"),
    l2_weight: float = 1e-4,
    em_iters: int = 50,
) -> ExperimentResult:
    """Train every requested system on the train split and score the eval split.

    Embeddings of both splits are re-extracted with the trained model so that
    train and eval posteriors come from the same procedure.
    """
    unknown = set(systems) - set(SYSTEMS)
    if unknown:
        raise ValueError(f"unknown systems {sorted(unknown)}")
    tr_ids = _labelled(split.train, split.train_manifest)
    ev_ids = _labelled(split.eval, split.eval_manifest)
    tr_labels = [split.train_manifest[u] for u in tr_ids]
    ev_labels = np.array([split.eval_manifest[u] == ENGLISH for u in ev_ids])
    out = ExperimentResult()

    if any(s != "tfidf_lr" for s in systems):
        res = train(split.train, smm_cfg)
        out.elbo_trace = list(res.elbo_trace)
        tr_post = {q.utt_id: q for q in extract(split.train, res.params, smm_cfg)}
        ev_post = {q.utt_id: q for q in extract(split.eval, res.params, smm_cfg)}
        for name in systems:
            if name == "tfidf_lr":
                continue
            model = fit_backend(name, [tr_post[u] for u in tr_ids], tr_labels, l2_weight, em_iters)
            scores = score_backend(name, model, [ev_post[u] for u in ev_ids])
            out.scores[name] = ScoredSet(ev_ids, scores, ev_labels)

    if "tfidf_lr" in systems:
        tfidf = Tfidf().fit(split.train)
        Xtr = tfidf.transform(split.train.subset(tr_ids)).X
        Xev = tfidf.transform(split.eval.subset(ev_ids)).X
        model = train_logreg(Xtr, tr_labels, l2_weight)
        out.scores["tfidf_lr"] = ScoredSet(ev_ids, np.atleast_1d(score_logreg(model, Xev)), ev_labels)
    return out
