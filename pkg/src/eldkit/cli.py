"""Command-line driver: one subcommand per pipeline stage.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.  Every
run that writes files also writes ``<output>.run.json`` recording the
command, the effective parameters and SHA-256 hashes of the inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .baysmm import (
    REG_TYPES,
    extract,
    read_embeddings,
    read_model,
    train,
    write_embeddings,
    write_model,
)
from .classifiers import (
    GlcuModel,
    LogRegModel,
    read_classifier,
    score_glc,
    score_glcu,
    score_logreg,
    train_glc,
    train_glcu,
    train_logreg,
    write_classifier,
)
from .confnet import (
    accumulate_bow,
    parse_confnet_file,
    pool_bow_lists,
    read_bow_file,
    write_bow_file,
    write_confnet_file,
)
from .config import DEFAULT_SEED, PipelineConfig, build_config, load_config
from .corpus import (
    ENGLISH,
    NON_ENGLISH,
    Tfidf,
    build_vocabulary,
    read_idf,
    read_manifest,
    read_matrix,
    read_vocabulary,
    vectorize,
    write_idf,
    write_manifest,
    write_matrix,
    write_vocabulary,
)
from .errors import EldError, UttIdMismatch
from .evaluation import (
    BACKENDS,
    GridSpec,
    compute_eer,
    det_points,
    grid_search,
    read_scores,
    scored_set_from_file,
    write_cv_report,
    write_cv_summary,
    write_det,
    write_scores,
)
from .synth import generate

log = logging.getLogger("eldkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _open_in(path):
    try:
        return open(path, encoding="utf-8")
    except FileNotFoundError:
        raise EldError(f"{path}: no such file") from None


def _open_out(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_manifest(output, command, inputs, params):
    record = {
        "command": command,
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "params": params,
    }
    with _open_out(f"{output}.run.json") as f:
        json.dump(record, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def _csv(cast):
    def parse(text):
        try:
            return tuple(cast(t) for t in text.split(",") if t.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None

    return parse


# -- subcommands ----------------------------------------------------------


def cmd_bow(args, cfg):
    with _open_in(args.confnet) as f:
        bows = [accumulate_bow(cn) for cn in parse_confnet_file(f)]
    inputs = [args.confnet]
    if args.pool:
        tags = args.tags.split(",")
        if len(tags) != 2:
            raise UsageError("--tags needs exactly two comma-separated tags")
        with _open_in(args.pool) as f:
            other = [accumulate_bow(cn) for cn in parse_confnet_file(f)]
        try:
            bows = pool_bow_lists(bows, other, tags[0], tags[1])
        except ValueError as e:
            if isinstance(e, UttIdMismatch):
                raise
            raise UsageError(str(e)) from None
        inputs.append(args.pool)
    with _open_out(args.output) as f:
        write_bow_file(bows, f)
    return inputs, {"pool": bool(args.pool), "tags": args.tags}


def cmd_vocab(args, cfg):
    bows = []
    for path in args.bows:
        with _open_in(path) as f:
            bows.extend(read_bow_file(f))
    min_count = cfg.min_count if args.min_count is None else args.min_count
    vocab = build_vocabulary(bows, min_count)
    with _open_out(args.output) as f:
        write_vocabulary(vocab, f)
    log.info("vocabulary: %d tokens", len(vocab))
    return args.bows, {"min_count": min_count}


def cmd_vectorize(args, cfg):
    with _open_in(args.vocab) as f:
        vocab = read_vocabulary(f)
    with _open_in(args.bows) as f:
        bows = read_bow_file(f)
    m, empty = vectorize(bows, vocab)
    with _open_out(args.output) as f:
        write_matrix(m, f)
    if empty:
        log.warning("%d utterances have no in-vocabulary tokens", len(empty))
    if args.empty_out:
        with _open_out(args.empty_out) as f:
            f.writelines(u + "\n" for u in empty)
    return [args.bows, args.vocab], {"empty_rows": len(empty)}


def cmd_tfidf(args, cfg):
    with _open_in(args.matrix) as f:
        m = read_matrix(f)
    if args.fit:
        model = Tfidf().fit(m)
        with _open_out(args.idf) as f:
            write_idf(model, f)
        inputs = [args.matrix]
    else:
        with _open_in(args.idf) as f:
            model = read_idf(f)
        inputs = [args.matrix, args.idf]
    with _open_out(args.output) as f:
        write_matrix(model.transform(m), f)
    return inputs, {"fit": args.fit}


def _smm_cfg(args, cfg):
    over = {}
    for name in ("K", "reg_type", "reg_weight", "step_size", "mc_samples", "iters", "extract_iters"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    return dataclasses.replace(cfg.smm, seed=cfg.seed, **over)


def cmd_smm_train(args, cfg):
    with _open_in(args.matrix) as f:
        m = read_matrix(f)
    smm = _smm_cfg(args, cfg)
    res = train(m, smm)
    with _open_out(args.output) as f:
        write_model(res.params, f)
    if args.trace_out:
        with _open_out(args.trace_out) as f:
            f.write("round\telbo\n")
            f.writelines(f"{i}\t{v!r}\n" for i, v in enumerate(res.elbo_trace))
    if args.embeddings_out:
        posts = res.posteriors if args.keep_train_posteriors else extract(m, res.params, smm)
        with _open_out(args.embeddings_out) as f:
            write_embeddings(posts, f)
    log.info("ELBO %.3f -> %.3f", res.elbo_trace[0], res.elbo_trace[-1])
    return [args.matrix], dataclasses.asdict(smm)


def cmd_smm_extract(args, cfg):
    with _open_in(args.model) as f:
        params = read_model(f)
    with _open_in(args.matrix) as f:
        m = read_matrix(f)
    smm = _smm_cfg(args, cfg)
    posts = extract(m, params, smm)
    with _open_out(args.output) as f:
        write_embeddings(posts, f)
    return [args.matrix, args.model], dataclasses.asdict(smm)


def _load_features(args):
    if bool(args.embeddings) == bool(args.features):
        raise UsageError("give exactly one of --embeddings / --features")
    if args.embeddings:
        with _open_in(args.embeddings) as f:
            posts = read_embeddings(f)
        return [q.utt_id for q in posts], posts, args.embeddings
    with _open_in(args.features) as f:
        m = read_matrix(f)
    return list(m.utt_ids), m, args.features


def cmd_clf_train(args, cfg):
    clf = dataclasses.replace(cfg.clf, **{k: v for k, v in (
        ("backend", args.backend), ("l2_weight", args.l2_weight), ("em_iters", args.em_iters)
    ) if v is not None})
    with _open_in(args.manifest) as f:
        manifest = read_manifest(f)
    ids, feats, feat_path = _load_features(args)
    rows = [i for i, u in enumerate(ids) if manifest.get(u) in (ENGLISH, NON_ENGLISH)]
    labels = [manifest[ids[i]] for i in rows]
    if clf.backend in ("glc", "glcu"):
        if not args.embeddings:
            raise UsageError(f"--backend {clf.backend} needs --embeddings")
        posts = [feats[i] for i in rows]
        if clf.backend == "glc":
            model = train_glc([q.nu for q in posts], labels)
        else:
            model = train_glcu(posts, labels, clf.em_iters)
    else:
        if args.embeddings:
            X = np.array([feats[i].nu for i in rows])
        else:
            X = feats.X[rows]
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            model = train_logreg(X, labels, clf.l2_weight, clf.max_iters, clf.tol)
    with _open_out(args.output) as f:
        write_classifier(model, f)
    return [args.manifest, feat_path], dataclasses.asdict(clf)


def cmd_score(args, cfg):
    with _open_in(args.model) as f:
        model = read_classifier(f)
    ids, feats, feat_path = _load_features(args)
    if isinstance(model, LogRegModel):
        X = np.array([q.nu for q in feats]) if args.embeddings else feats.X
        scores = np.atleast_1d(score_logreg(model, X))
    else:
        if not args.embeddings:
            raise UsageError("Gaussian backends score --embeddings")
        if isinstance(model, GlcuModel):
            scores = np.atleast_1d(score_glcu(model, feats))
        else:
            scores = np.atleast_1d(score_glc(model, np.array([q.nu for q in feats])))
    tags = ["unknown"] * len(ids)
    inputs = [args.model, feat_path]
    if args.manifest:
        with _open_in(args.manifest) as f:
            manifest = read_manifest(f)
        tags = [manifest.get(u, "unknown") for u in ids]
        inputs.append(args.manifest)
    with _open_out(args.output) as f:
        write_scores(ids, scores, tags, f)
    return inputs, {}


def _read_scored(path):
    with _open_in(path) as f:
        return scored_set_from_file(*read_scores(f))


def cmd_eer(args, cfg):
    eer, thr = compute_eer(_read_scored(args.scores))
    print(f"{eer:.4f}")
    print(f"threshold {thr!r}")
    return None


def cmd_det(args, cfg):
    pts = det_points(_read_scored(args.scores))
    with _open_out(args.output) as f:
        write_det(pts, f)
    return [args.scores], {}


def cmd_filter(args, cfg):
    with _open_in(args.scores) as f:
        ids, scores, tags = read_scores(f)
    keep = [u for u, s in zip(ids, scores) if s >= args.threshold]
    drop = [u for u, s in zip(ids, scores) if s < args.threshold]
    with _open_out(args.keep) as f:
        f.writelines(u + "\n" for u in keep)
    with _open_out(args.drop) as f:
        f.writelines(u + "\n" for u in drop)
    print(f"kept {len(keep)} dropped {len(drop)}")
    _write_run_manifest(args.drop, "filter", [args.scores], {"threshold": args.threshold})
    return [args.scores], {"threshold": args.threshold}


def cmd_cv_grid(args, cfg):
    with _open_in(args.matrix) as f:
        m = read_matrix(f)
    with _open_in(args.manifest) as f:
        manifest = read_manifest(f)
    grid = GridSpec(
        args.reg_types or cfg.grid.reg_types,
        args.reg_weights or cfg.grid.reg_weights,
        args.dims or cfg.grid.dims,
    )
    folds = args.folds or cfg.cv.folds
    backend = args.backend or cfg.cv.backend
    smm = _smm_cfg(args, cfg)
    results = grid_search(m, manifest, grid, folds, cfg.seed, smm, backend)
    with _open_out(args.output) as f:
        write_cv_report(results, f)
    summary = args.summary or f"{args.output}.summary.tsv"
    with _open_out(summary) as f:
        write_cv_summary(results, f)
    best = results[0]
    print(f"best {best.reg_type} lambda={best.reg_weight!r} K={best.K} mean_eer={best.mean_eer:.4f}")
    params = {"grid": dataclasses.asdict(grid), "folds": folds, "backend": backend,
              "smm": dataclasses.asdict(smm)}
    return [args.matrix, args.manifest], params


def cmd_synth(args, cfg):
    over = {}
    for name in ("vocab_size_per_lang", "shared_vocab_size", "zipf_exponent", "code_switch_rate",
                 "confusion_depth", "confusion_noise", "n_segments", "id_prefix"):
        v = getattr(args, name)
        if v is not None:
            over[name] = v
    if args.segment_length_range is not None:
        over["segment_length_range"] = tuple(args.segment_length_range)
    scfg = dataclasses.replace(cfg.synth, seed=cfg.seed, **over)
    cns, manifest = generate(scfg)
    with _open_out(args.output) as f:
        write_confnet_file(cns, f)
    with _open_out(args.manifest_out) as f:
        write_manifest(manifest, f)
    return [], dataclasses.asdict(scfg)


# -- parser ---------------------------------------------------------------


def _add_smm_flags(p):
    g = p.add_argument_group("BaySMM")
    g.add_argument("--K", type=int)
    g.add_argument("--reg-type", dest="reg_type", choices=REG_TYPES)
    g.add_argument("--reg-weight", dest="reg_weight", type=float)
    g.add_argument("--step-size", dest="step_size", type=float)
    g.add_argument("--mc-samples", dest="mc_samples", type=int)
    g.add_argument("--iters", type=int)
    g.add_argument("--extract-iters", dest="extract_iters", type=int)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--seed", type=int, help=f"global seed (default {DEFAULT_SEED})")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="eldkit", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=func)
        return sp

    sp = add("bow", cmd_bow, "confusion networks -> soft bag-of-words")
    sp.add_argument("confnet")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--pool", help="second system's confusion networks for the same utterances")
    sp.add_argument("--tags", default="EN,CZ", help="namespace tags for pooling (default EN,CZ)")

    sp = add("vocab", cmd_vocab, "build the filtered vocabulary")
    sp.add_argument("bows", nargs="+")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--min-count", dest="min_count", type=float)

    sp = add("vectorize", cmd_vectorize, "bag-of-words -> sparse count matrix")
    sp.add_argument("bows")
    sp.add_argument("--vocab", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--empty-out", dest="empty_out", help="write ids of all-zero rows here")

    sp = add("tfidf", cmd_tfidf, "TF-IDF weighting of a count matrix")
    sp.add_argument("matrix")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--idf", required=True, help="idf file (written with --fit, read otherwise)")
    sp.add_argument("--fit", action="store_true", help="estimate idf on this matrix")

    sp = add("smm-train", cmd_smm_train, "train BaySMM on a count matrix")
    sp.add_argument("matrix")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--embeddings-out", dest="embeddings_out")
    sp.add_argument("--keep-train-posteriors", dest="keep_train_posteriors", action="store_true",
                    help="write the jointly trained posteriors instead of re-extracting")
    sp.add_argument("--trace-out", dest="trace_out")
    _add_smm_flags(sp)

    sp = add("smm-extract", cmd_smm_extract, "extract embeddings with a trained model")
    sp.add_argument("matrix")
    sp.add_argument("--model", required=True)
    sp.add_argument("-o", "--output", required=True)
    _add_smm_flags(sp)

    sp = add("clf-train", cmd_clf_train, "train an English/non-English backend")
    sp.add_argument("--backend", choices=BACKENDS)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--embeddings")
    sp.add_argument("--features", help="sparse feature matrix (e.g. TF-IDF) for logreg")
    sp.add_argument("--l2-weight", dest="l2_weight", type=float)
    sp.add_argument("--em-iters", dest="em_iters", type=int)
    sp.add_argument("-o", "--output", required=True)

    sp = add("score", cmd_score, "score utterances with a trained backend")
    sp.add_argument("--model", required=True)
    sp.add_argument("--embeddings")
    sp.add_argument("--features")
    sp.add_argument("--manifest", help="label column source; 'unknown' when absent")
    sp.add_argument("-o", "--output", required=True)

    sp = add("eer", cmd_eer, "equal error rate of a score file")
    sp.add_argument("scores")

    sp = add("det", cmd_det, "DET operating points as TSV")
    sp.add_argument("scores")
    sp.add_argument("-o", "--output", required=True)

    sp = add("cv-grid", cmd_cv_grid, "k-fold CV grid search over BaySMM hyper-parameters")
    sp.add_argument("matrix")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("-o", "--output", required=True, help="per-fold CV report TSV")
    sp.add_argument("--summary", help="ranked summary TSV (default <output>.summary.tsv)")
    sp.add_argument("--reg-types", dest="reg_types", type=_csv(str))
    sp.add_argument("--reg-weights", dest="reg_weights", type=_csv(float))
    sp.add_argument("--dims", type=_csv(int))
    sp.add_argument("--folds", type=int)
    sp.add_argument("--backend", choices=BACKENDS)
    _add_smm_flags(sp)

    sp = add("synth", cmd_synth, "generate a synthetic code-switching corpus")
    sp.add_argument("-o", "--output", required=True, help="confusion-network file")
    sp.add_argument("--manifest-out", dest="manifest_out", required=True)
    sp.add_argument("--vocab-size-per-lang", dest="vocab_size_per_lang", type=int)
    sp.add_argument("--shared-vocab-size", dest="shared_vocab_size", type=int)
    sp.add_argument("--zipf-exponent", dest="zipf_exponent", type=float)
    sp.add_argument("--segment-length-range", dest="segment_length_range", type=int, nargs=2)
    sp.add_argument("--code-switch-rate", dest="code_switch_rate", type=float)
    sp.add_argument("--confusion-depth", dest="confusion_depth", type=int)
    sp.add_argument("--confusion-noise", dest="confusion_noise", type=float)
    sp.add_argument("--n-segments", dest="n_segments", type=int)
    sp.add_argument("--id-prefix", dest="id_prefix")

    sp = add("filter", cmd_filter, "split a score file into keep (English) / drop lists")
    sp.add_argument("scores")
    sp.add_argument("--threshold", type=float, required=True)
    sp.add_argument("--keep", required=True)
    sp.add_argument("--drop", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            cfg = build_config({"seed": str(args.seed)}, cfg)
        result = args.func(args, cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"eldkit: error: {e}", file=sys.stderr)
        return 1
    except (KeyError, ValueError) as e:
        if isinstance(e, EldError):
            print(f"eldkit: data error: {e}", file=sys.stderr)
            return 2
        # bad configuration values or keys
        print(f"eldkit: error: {e}", file=sys.stderr)
        return 1
    if result is not None and args.command != "filter":
        inputs, params = result
        params = dict(params, seed=cfg.seed)
        if args.config:
            inputs = list(inputs) + [args.config]
        _write_run_manifest(args.output, args.command, inputs, params)
    return 0


if __name__ == "__main__":
    sys.exit(main())
