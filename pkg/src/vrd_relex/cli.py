"""Command-line entry point: ``vrd-relex <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 invalid input data,
3 numerical failure (non-finite values during training or a failed gradient
check).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from . import numcore as nc
from .decoder import load_predictions, save_predictions
from .docmodel import LabelSet, ParseError, ValidationError, check, corpus_stats, load_corpus, load_funsd_dir, save_corpus
from .featurize import EmbeddingFileError, load_external_embeddings
from .labeler import LabelerConfig, jackknife_autolabel, label_accuracy
from .preprocess import augment_corpus
from .synthgen import LAYOUTS, SynthSpec, generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "VRD_RELEX_SEED"

log = logging.getLogger("vrd_relex")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out) -> Path:
    return Path(f"{out}.manifest.json")


def write_manifest(out, command: str, config: dict, seed: int, inputs: list, started: float, extra: dict | None = None) -> Path:
    """Sidecar describing how ``out`` was produced. Timestamps only live here."""
    hashes = {}
    for p in inputs:
        if p is None:
            continue
        p = Path(p)
        if p.is_file():
            hashes[str(p)] = file_sha256(p)
        elif p.is_dir():
            for f in sorted(p.rglob("*.json")):
                hashes[str(f)] = file_sha256(f)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": hashes,
        "output": str(out),
        "started_unix": started,
        "seconds": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    path = manifest_path(out)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def resolve_seed(flag: int | None, config_value: int | None = None) -> int:
    """Flag, then config file, then ``VRD_RELEX_SEED``, then 0."""
    if flag is not None:
        return flag
    if config_value is not None:
        return int(config_value)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _load_checked(path):
    docs, labels = load_corpus(_require_file(path, "corpus"))
    for d in docs:
        check(d, labels)
    return docs, labels


def _dump_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    started = time.time()
    src = _require_file(args.funsd, "FUNSD directory")
    page = tuple(args.page_dims) if args.page_dims else None
    docs, labels = load_funsd_dir(src, page, LabelSet())
    for d in docs:
        check(d, labels)
    save_corpus(args.out, docs, labels)
    stats = corpus_stats(docs, labels)
    print(stats.line())
    write_manifest(args.out, "ingest", {"page_dims": page}, resolve_seed(None), [src], started, {"stats": dataclasses.asdict(stats)})
    return EXIT_OK


def cmd_autolabel(args) -> int:
    started = time.time()
    seed = resolve_seed(args.seed)
    train_docs, labels = _load_checked(args.train)
    test_docs = None
    if args.test:
        if not args.test_out:
            raise UsageError("--test needs --test-out")
        test_docs, test_labels = _load_checked(args.test)
        if test_labels.names != labels.names:
            raise ValidationError("train and test corpora use different label sets")
    config = LabelerConfig(seed=seed, epochs=args.epochs)
    out_train, out_test = jackknife_autolabel(train_docs, labels, args.folds, seed, test_docs, config)
    save_corpus(args.out, out_train, labels)
    summary = {"train_label_accuracy": label_accuracy(out_train)}
    if test_docs is not None:
        save_corpus(args.test_out, out_test, labels)
        summary["test_label_accuracy"] = label_accuracy(out_test)
    print(" ".join(f"{k}={v:.4f}" for k, v in summary.items() if v is not None))
    cfg = {"folds": args.folds, **dataclasses.asdict(config)}
    for out in filter(None, [args.out, args.test_out if test_docs is not None else None]):
        write_manifest(out, "autolabel", cfg, seed, [args.train, args.test], started, summary)
    return EXIT_OK


def cmd_augment(args) -> int:
    started = time.time()
    seed = resolve_seed(args.seed)
    if not 0.0 <= args.ratio < 1.0:
        raise UsageError("--ratio must be in [0, 1)")
    docs, labels = _load_checked(args.corpus)
    out = augment_corpus(docs, args.ratio, seed)
    save_corpus(args.out, out, labels)
    print(corpus_stats(out, labels).line())
    write_manifest(args.out, "augment", {"ratio": args.ratio}, seed, [args.corpus], started)
    return EXIT_OK


def cmd_synth(args) -> int:
    started = time.time()
    seed = resolve_seed(args.seed)
    try:
        spec = SynthSpec(
            seed=seed,
            docs=args.docs,
            pairs=tuple(args.pairs),
            layouts=tuple(args.layouts),
            distractor_ratio=args.distractors,
            jitter=args.jitter,
            value_noise=args.value_noise,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    docs, labels = generate(spec)
    save_corpus(args.out, docs, labels)
    print(corpus_stats(docs, labels).line())
    write_manifest(args.out, "synth", dataclasses.asdict(spec), seed, [], started)
    return EXIT_OK


def _train_fields():
    from .trainer import TrainConfig

    return [f for f in dataclasses.fields(TrainConfig) if f.name != "seed"]


def resolve_train_config(args):
    """Flags override the config file, which overrides defaults."""
    from .trainer import TrainConfig

    values: dict = {}
    if args.config:
        with open(_require_file(args.config, "config file"), encoding="utf-8") as fh:
            try:
                values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    for f in _train_fields():
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    values["seed"] = resolve_seed(args.seed, values.get("seed"))
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _external(config, docs):
    if not config.external_embeddings:
        return None
    return load_external_embeddings(_require_file(config.external_embeddings, "embedding file"), docs)


def cmd_train(args) -> int:
    from .trainer import evaluate_relations, predict_corpus, save_checkpoint, train

    started = time.time()
    config = resolve_train_config(args)
    train_docs, labels = _load_checked(args.train)
    dev_docs = None
    if args.dev:
        dev_docs, _ = _load_checked(args.dev)
    external = _external(config, train_docs + (dev_docs or []))
    result = train(config, train_docs, labels, dev_docs, external)
    save_checkpoint(args.out, result.model)

    metrics_path = args.metrics or f"{args.out}.metrics.json"
    metrics = {"config": config.to_dict(), "history": result.history, "manifest": manifest_path(args.out).name}
    train_report = evaluate_relations(predict_corpus(result.model, train_docs), train_docs)
    metrics["train"] = {k: v for k, v in train_report.to_dict().items() if k != "per_doc"}
    if dev_docs is not None:
        dev_report = evaluate_relations(predict_corpus(result.model, dev_docs), dev_docs)
        metrics["dev"] = {k: v for k, v in dev_report.to_dict().items() if k != "per_doc"}
    _dump_json(metrics_path, metrics)
    line = f"loss={result.history[-1]['loss']:.6f} train_f1={train_report.f1:.4f}"
    if dev_docs is not None:
        line += f" dev_f1={metrics['dev']['f1']:.4f}"
    print(line)
    write_manifest(args.out, "train", config.to_dict(), config.seed, [args.train, args.dev, args.config], started,
                   {"train_seconds": result.seconds, "metrics": str(metrics_path)})
    return EXIT_OK


def cmd_predict(args) -> int:
    from .trainer import load_checkpoint, predict_corpus

    started = time.time()
    model = load_checkpoint(_require_file(args.model, "checkpoint"))
    docs, _ = _load_checked(args.corpus)
    if model.word_table is None:
        path = args.external or model.config.external_embeddings
        if not path:
            raise UsageError("this checkpoint uses external entity vectors; pass --external")
        model.external = load_external_embeddings(_require_file(path, "embedding file"), docs)
    preds = predict_corpus(model, docs)
    save_predictions(args.out, preds, {"manifest": manifest_path(args.out).name})
    print(f"documents={len(preds)} links={sum(len(p.links) for p in preds)}")
    write_manifest(args.out, "predict", model.config.to_dict(), model.config.seed, [args.model, args.corpus], started)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .trainer import evaluate_relations

    started = time.time()
    preds = load_predictions(_require_file(args.pred, "prediction file"))
    gold, _ = _load_checked(args.gold)
    report = evaluate_relations(preds, gold)
    print(f"precision={report.precision:.6f} recall={report.recall:.6f} f1={report.f1:.6f}")
    if args.out:
        payload = report.to_dict()
        payload["manifest"] = manifest_path(args.out).name
        _dump_json(args.out, payload)
        write_manifest(args.out, "eval", {}, resolve_seed(None), [args.pred, args.gold], started)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    seed = resolve_seed(args.seed)
    entries = run_suite(seed, args.epsilon, args.tolerance, args.coords)
    for e in entries:
        worst = max(r.max_rel_error for r in e.report.results)
        print(f"{'ok  ' if e.passed else 'FAIL'} {e.component:<20} max_rel_err={worst:.3e}")
        if not e.passed or args.verbose:
            print(e.report)
    failed = [e.component for e in entries if not e.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_NUMERIC
    print("all passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and optimization (override --config)")
    for f in _train_fields():
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.type in ("int", int):
            g.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type in ("float", float, "float | None"):
            g.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            g.add_argument(flag, dest=f.name, type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vrd-relex", description="Entity relation extraction for form-like documents.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert a FUNSD split into the corpus format")
    p.add_argument("--funsd", required=True, help="split directory (with or without annotations/)")
    p.add_argument("--out", required=True, help="output corpus (JSON lines)")
    p.add_argument("--page-dims", type=float, nargs=2, metavar=("W", "H"), help="page size used for normalisation")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("autolabel", help="fill auto labels by k-fold jackknifing")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test", help="corpus labelled by a model trained on all of --train")
    p.add_argument("--test-out")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=LabelerConfig.epochs)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_autolabel)

    p = sub.add_parser("augment", help="append one word-dropout copy of every document")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("synth", help="generate a synthetic form corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=SynthSpec.docs)
    p.add_argument("--pairs", type=int, nargs=2, default=list(SynthSpec.pairs), metavar=("MIN", "MAX"))
    p.add_argument("--layouts", nargs="+", choices=LAYOUTS, default=list(SynthSpec.layouts))
    p.add_argument("--distractors", type=float, default=0.0, help="distractor entities per pair entity")
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--value-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a relation model")
    p.add_argument("--train", required=True, help="training corpus")
    p.add_argument("--dev", help="corpus evaluated after the last epoch")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="metrics JSON (default: <out>.metrics.json)")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--seed", type=int)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predicted links for a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--external", help="entity vector file for checkpoints trained on external vectors")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against a gold corpus")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", help="EvalReport JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable block")
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--coords", type=int, default=32)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    from .trainer import CheckpointError, TrainingAborted

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, nc.NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, ValidationError, EmbeddingFileError, CheckpointError, KeyError) as exc:
        print(f"invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
