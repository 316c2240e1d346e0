"""Command-line front end: manifest, extract, evaluate, tsne and report.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .config import RunConfig, load_config
from .corpus import CORPORA, CorpusManifest, build_manifest, emotions_for, parse_wav
from .dimred import FeatureNormalizer, SubsetPCA
from .evaluation import HOLDOUT, ScenarioError, accuracy_at_rejection, parse_sweep, run_scenario
from .exceptions import ArgumentError, ConvergenceWarning, EmosetError
from .features import extract_clip
from .functionals import N_FEATURES, feature_names
from .persistence import read_emof, save_model, write_emof, write_feature_csv
from .svm import OneVsAllSVM
from .tsne import tsne_embed, write_tsne_csv

logger = logging.getLogger("emoset")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CACHE_ENV = "EMOSET_CACHE_DIR"
MAX_FAILURE_RATE = 0.01


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# extraction


def _extraction_key(data: bytes, cfg: RunConfig) -> str:
    h = hashlib.sha256()
    h.update(data)
    params = (__version__, cfg.frame_ms, cfg.hop_ms, cfg.vad_energy_floor_db, cfg.vad_rel_db, cfg.vad_voicing_min)
    h.update(repr(params).encode())
    return h.hexdigest()


def _extract_one(path: str, cfg: RunConfig, cache_dir):
    """Returns ``(vector, None)`` or ``(None, error message)``."""
    try:
        data = Path(path).read_bytes()
        cached = None
        if cache_dir is not None:
            key = _extraction_key(data, cfg)
            cached = Path(cache_dir) / key[:2] / f"{key}.npy"
            if cached.exists():
                vec = np.load(cached)
                if vec.shape == (N_FEATURES,):
                    return vec, None
        clip = parse_wav(data, path)
        vec = extract_clip(clip, cfg.frame_ms, cfg.hop_ms, cfg.vad_energy_floor_db,
                           cfg.vad_rel_db, cfg.vad_voicing_min).values
        if cached is not None:
            cached.parent.mkdir(parents=True, exist_ok=True)
            tmp = cached.with_suffix(f".{os.getpid()}.tmp")
            with open(tmp, "wb") as fh:
                np.save(fh, vec)
            os.replace(tmp, cached)
        return vec, None
    except (OSError, EmosetError, ValueError, ArithmeticError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def cmd_manifest(args, cfg):
    manifest = build_manifest(args.root, args.corpus, intensity=args.intensity)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.to_csv(out)
    print(f"{len(manifest)} entries written to {out}")
    return EXIT_OK


def cmd_extract(args, cfg):
    manifest = CorpusManifest.from_csv(args.manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cache_dir = os.environ.get(CACHE_ENV) or str(out.parent / ".emoset_cache")
    results = Parallel(n_jobs=args.jobs)(
        delayed(_extract_one)(path, cfg, cache_dir) for _, path in manifest.entries
    )
    rows, kept, failed = [], [], 0
    for (meta, path), (vec, err) in zip(manifest.entries, results):
        if vec is None:
            failed += 1
            logger.error("skipping %s: %s", path, err)
            continue
        rows.append(vec)
        kept.append((meta, path))
    X = np.vstack(rows) if rows else np.empty((0, N_FEATURES))
    write_emof(out, X, kept)
    if args.csv:
        write_feature_csv(args.csv, X, kept, feature_names())
    cfg.write(out.parent, "extract_config.txt")
    rate = failed / max(len(manifest), 1)
    print(f"extracted {X.shape[0]} x {X.shape[1]} features to {out}; {failed} failed")
    if rate > MAX_FAILURE_RATE:
        logger.error("%.1f%% of utterances failed (limit %.0f%%)", 100 * rate, 100 * MAX_FAILURE_RATE)
        return EXIT_FAIL
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluation


def _load_labelled(path):
    X, entries = read_emof(path)
    if entries is None:
        raise EmosetError(f"{path}: metadata sidecar missing")
    corpora = {m.corpus_id for m, _ in entries}
    if len(corpora) != 1:
        raise EmosetError(f"{path}: expected one corpus, found {sorted(corpora)}")
    corpus = corpora.pop()
    classes = emotions_for(corpus)
    y = np.array([classes.index(m.emotion) for m, _ in entries], dtype=np.int64)
    speakers = np.array([m.speaker_id for m, _ in entries])
    genders = np.array([m.gender for m, _ in entries])
    return X, y, speakers, genders, classes, corpus, entries


def _fit_final_model(X, y, speakers, classes, cfg: RunConfig):
    norm = FeatureNormalizer(cfg.norm_mode).fit(X, speakers=speakers)
    Xn = norm.transform(X, speakers=speakers)
    pca = SubsetPCA(tuple(cfg.pca_components), mode=cfg.pca_mode).fit(Xn)
    clf = OneVsAllSVM(classes=list(classes), C_grid=tuple(cfg.svm_c_grid), inner_folds=cfg.svm_inner_folds,
                      reject_threshold=cfg.reject_threshold, tol=cfg.svm_tol,
                      max_iter=cfg.svm_max_epochs, random_state=cfg.seed)
    labels = np.array(classes, dtype=object)[y]
    clf.fit(pca.transform(Xn), labels)
    return norm, pca, clf


def cmd_evaluate(args, cfg):
    X, y, speakers, genders, classes, corpus, _ = _load_labelled(args.features)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ecfg = cfg.eval_config(n_jobs=args.jobs)
    if args.scenario == "general":
        runs = [("report", None)]
    else:
        runs = [(f"report_{g}", g) for g in ([args.gender] if args.gender else ["male", "female"])]

    reports = {}
    for prefix, gender in runs:
        report = run_scenario(X, y, classes, cfg.split_plan(gender), ecfg, speakers=speakers,
                              genders=genders, scenario=args.scenario if gender is None else f"gender_{gender}",
                              corpus=corpus)
        report.write(out / prefix)
        reports[gender] = report
        print(_summary_line(report))

    if args.scenario == "gender" and len(reports) == 2:
        male, female = reports["male"], reports["female"]
        summary = {
            "female_dl_rate": female.dl_classification_rate,
            "male_dl_rate": male.dl_classification_rate,
            "female_ge_male": female.dl_classification_rate >= male.dl_classification_rate,
            "mean_unweighted_accuracy": 0.5 * (female.unweighted_accuracy + male.unweighted_accuracy),
        }
        (out / "gender_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        print(f"female {summary['female_dl_rate']:.4f} vs male {summary['male_dl_rate']:.4f}; "
              f"mean UA {summary['mean_unweighted_accuracy']:.4f}")

    if args.save_model:
        if args.scenario != "general":
            raise UsageError("--save-model is only available with --scenario general")
        norm, pca, clf = _fit_final_model(X, y, speakers, classes, cfg)
        save_model(out / "model.emop", norm, pca, clf)
    cfg.write(out, "evaluate_config.txt")
    return EXIT_OK


def _summary_line(report) -> str:
    return (f"{report.scenario}: DL rate {report.dl_classification_rate:.4f}, top2 {report.top2:.4f}, "
            f"top3 {report.top3:.4f}, rejection {report.rejection_rate:.4f} at theta {report.threshold}")


# --------------------------------------------------------------------------
# t-SNE and reports


def cmd_tsne(args, cfg):
    X, _, speakers, _, _, _, entries = _load_labelled(args.features)
    n = X.shape[0]
    if not (n >= 4 and cfg.tsne_perplexity < (n - 1) / 3.0):
        raise UsageError(f"{n} points are too few for perplexity {cfg.tsne_perplexity}")
    Z = X
    if args.normalize or args.after_pca:
        norm = FeatureNormalizer(cfg.norm_mode).fit(X, speakers=speakers)
        Z = norm.transform(X, speakers=speakers)
    if args.after_pca:
        Z = SubsetPCA(tuple(cfg.pca_components), mode=cfg.pca_mode).fit_transform(Z)
    emb = tsne_embed(Z, [m.emotion for m, _ in entries], perplexity=cfg.tsne_perplexity,
                     n_iter=cfg.tsne_iterations, learning_rate=cfg.tsne_learning_rate,
                     random_state=cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tsne_csv(out, emb, [m for m, _ in entries])
    cfg.write(out.parent, "tsne_config.txt")
    print(f"final KL {emb.final_kl:.6f} ({n} points) written to {out}")
    return EXIT_OK


def format_report(report: dict) -> str:
    lines = [f"{report['scenario']} [{report['corpus']}]",
             f"  DL classification rate {report['dl_classification_rate']:.4f}",
             f"  top-2 {report['top2']:.4f}  top-3 {report['top3']:.4f}",
             f"  unweighted accuracy {report['unweighted_accuracy']:.4f}",
             f"  rejection rate {report['rejection_rate']:.4f} at theta {report['threshold']}"]
    for emotion, recall in report["recall"].items():
        lines.append(f"  recall {emotion:<10} " + ("n/a" if recall is None else f"{recall:.4f}"))
    rej, acc = accuracy_at_rejection(report["rejection_curve"], 0.5)
    if acc is not None:
        lines.append(f"  accepted accuracy {acc:.4f} at rejection {rej:.4f}")
    return "\n".join(lines)


def cmd_report(args, cfg):
    paths = []
    for p in args.reports:
        p = Path(p)
        paths.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    texts = []
    for p in paths:
        data = json.loads(p.read_text(encoding="utf-8"))
        if "dl_classification_rate" not in data or "rejection_curve" not in data:
            continue
        texts.append(format_report(data))
    if not texts:
        raise EmosetError("no evaluation reports found")
    text = "\n\n".join(texts) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emoset", description="Speech emotion recognition experiments.")
    parser.add_argument("--version", action="version", version=f"emoset {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("manifest", help="scan a corpus directory into a manifest CSV")
    common(p)
    p.add_argument("--corpus", required=True, choices=CORPORA)
    p.add_argument("--root", required=True)
    p.add_argument("--intensity", choices=("normal", "strong"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("extract", help="extract 1582-dim feature vectors")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="EMOF output file")
    p.add_argument("--csv", help="also write the features as CSV")
    p.add_argument("--frame-ms", type=float)
    p.add_argument("--hop-ms", type=float)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="run an evaluation scenario")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenario", choices=("general", "gender"), default="general")
    p.add_argument("--gender", choices=("male", "female"))
    p.add_argument("--folds", type=int)
    p.add_argument("--holdout", action="store_true", help="70/30 stratified split instead of k-fold")
    p.add_argument("--repeats", type=int)
    p.add_argument("--norm", choices=("global", "per_speaker"))
    p.add_argument("--pca-mode", choices=("subset", "joint"))
    p.add_argument("--pca-components", help="comma-separated components per subset")
    p.add_argument("--c-grid", help="comma-separated C values")
    p.add_argument("--reject-threshold", type=float)
    p.add_argument("--reject-sweep", help="start:stop:step thresholds for the rejection curve")
    p.add_argument("--save-model", action="store_true", help="fit on all rows and write model.emop")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tsne", help="2-D t-SNE embedding of a feature file")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--after-pca", action="store_true", help="normalise and reduce before embedding")
    p.add_argument("--normalize", action="store_true", help="z-score raw features before embedding")
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_tsne)

    p = sub.add_parser("report", help="summarise evaluation JSON reports")
    common(p)
    p.add_argument("reports", nargs="+", help="report files or directories")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def resolve_config(args) -> RunConfig:
    over = {"seed": args.seed}
    cmd = args.command
    if cmd == "extract":
        over.update(frame_ms=args.frame_ms, hop_ms=args.hop_ms)
    elif cmd == "evaluate":
        if args.gender and args.scenario != "gender":
            raise UsageError("--gender requires --scenario gender")
        if args.holdout and args.folds is not None:
            raise UsageError("--holdout and --folds are mutually exclusive")
        if args.folds is not None and args.folds < 2:
            raise UsageError("--folds must be at least 2")
        if args.reject_threshold is not None and not 0.0 <= args.reject_threshold <= 1.0:
            raise UsageError("--reject-threshold must lie in [0, 1]")
        over.update(eval_folds=args.folds, eval_repeats=args.repeats, norm_mode=args.norm,
                    pca_mode=args.pca_mode, pca_components=args.pca_components, svm_c_grid=args.c_grid,
                    reject_threshold=args.reject_threshold)
        if args.holdout:
            over["eval_mode"] = HOLDOUT
        if args.reject_sweep:
            over["reject_thresholds"] = tuple(parse_sweep(args.reject_sweep))
    elif cmd == "tsne":
        over.update(tsne_perplexity=args.perplexity, tsne_iterations=args.iterations)
    if args.jobs < 1:
        raise UsageError("--jobs must be positive")
    cfg = load_config(args.config, **over)
    if cmd == "evaluate" and args.scenario == "gender" and args.norm is None and args.config is None:
        cfg = cfg.with_overrides(norm_mode="per_speaker")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verbose == 0:
        warnings.simplefilter("ignore", ConvergenceWarning)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (UsageError, ArgumentError) as exc:
        parser.print_usage(sys.stderr)
        print(f"emoset: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"emoset: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (EmosetError, OSError, ValueError, ArithmeticError) as exc:
        print(f"emoset: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
