"""Command-line front-end: ``revsel <subcommand> ...``.

Every subcommand that writes files writes them into ``--out`` together
with a ``manifest.json`` recording the command line, the effective
configuration, input and output checksums and the wall-clock time.
Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import eval_summaries, rank_features
from .corpus import (CorpusError, FilterRules, GoldSummary, apply_filters, corpus_stats,
                     load_corpus, save_corpus)
from .extsum import (EXTRACT_BUDGETS, ORACLE_BUDGETS, TRAIN_POOL_CAP, Budgets, ExtSumConfig,
                     SentenceClassifier, build_pool, extract_summary, load_labels,
                     oracle_labels, random_baseline, save_labels, train_extsum)
from .features import FeatureMatrix, featurize_corpus, load_features, save_features
from .nn import load_checkpoint, save_checkpoint, write_json_atomic
from .prior import (PriorConfig, PriorSelector, distill_tags, load_tags, r1_topk, save_tags,
                    train_prior)
from .reward import UnigramMixtureReward
from .text_metrics import AspectLexicon, Vocab, default_lexicon
from .trainer import SELECTORS, TrainConfig, dump_log, random_subset, train

DATA_ENV = "REVSEL_DATA_DIR"
FIXTURE = Path(__file__).parent / "data" / "fixture_corpus.jsonl"
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- helpers ---------------------------------------------------------------

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _corpus_path(args) -> Path:
    if args.fixture:
        return FIXTURE
    if args.corpus:
        return Path(args.corpus)
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env) / "corpus.jsonl"
    raise UsageError(f"no corpus given: pass --corpus, --fixture or set {DATA_ENV}")


def _lexicon(args) -> AspectLexicon:
    return AspectLexicon.load(args.lexicon) if args.lexicon else default_lexicon()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def _read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_manifest(out: Path, argv: Sequence[str], args, inputs: dict[str, Path],
                   config: dict, seed, started: float) -> None:
    outputs = {p.name: sha256_file(p) for p in sorted(out.iterdir())
               if p.is_file() and p.name != MANIFEST and not p.name.endswith(".tmp")}
    doc = {
        "tool": f"revsel {__version__}",
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in sorted(inputs.items())},
        "outputs": outputs,
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    write_json_atomic(out / MANIFEST, doc)


def _records_by_id(records):
    return {r.id: r for r in records}


# -- subcommands -----------------------------------------------------------
# each returns (inputs, config, seed) for the manifest, or None when it wrote nothing

def cmd_ingest(args):
    src = _corpus_path(args)
    rules = FilterRules(args.min_review_words, args.max_review_words, args.min_reviews,
                        args.min_summary_words, args.n_max)
    kept, report = apply_filters(load_corpus(src), rules)
    out = _out_dir(args)
    save_corpus(kept, out / "corpus.jsonl")
    write_json_atomic(out / "filter_report.json", report.to_json())
    print(f"kept {report.kept_products}/{report.input_products} products, "
          f"{report.kept_reviews}/{report.input_reviews} reviews")
    return {"corpus": src}, {"rules": rules.__dict__}, None


def cmd_stats(args):
    src = _corpus_path(args)
    table = corpus_stats(load_corpus(src))
    text = table.format()
    sys.stdout.write(text)
    if not args.out:
        return None
    out = _out_dir(args)
    with open(out / "stats.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    write_json_atomic(out / "stats.json", table.to_json())
    return {"corpus": src}, {}, None


def cmd_featurize(args):
    src = _corpus_path(args)
    mats = featurize_corpus(load_corpus(src), _lexicon(args))
    out = _out_dir(args)
    save_features(mats, out / "features.jsonl")
    print(f"featurized {len(mats)} products")
    inputs = {"corpus": src}
    if args.lexicon:
        inputs["lexicon"] = Path(args.lexicon)
    return inputs, {}, None


def _train_config(args) -> TrainConfig:
    base: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    for f in fields(TrainConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            base[f.name] = val
    return TrainConfig.from_dict(base)


def cmd_train(args):
    src = _corpus_path(args)
    cfg = _train_config(args)
    records = load_corpus(src)
    mats = load_features(args.features) if args.features else None
    res = train(records, _lexicon(args), cfg, mats)
    out = _out_dir(args)
    res.reward.save(out / "reward.json")
    if res.posterior is not None:
        save_checkpoint(out / "posterior.json", res.posterior, {"train_config": cfg.to_dict()})
    dump_log(res.log, out / "train_log.jsonl")
    write_json_atomic(out / "config.json", cfg.to_dict())
    print(f"best epoch {res.best_epoch}, held-out reward "
          f"{res.epoch_rewards[res.best_epoch - 1] if res.best_epoch else float('nan'):.4f}")
    inputs = {"corpus": src}
    for name in ("config", "features", "lexicon"):
        if getattr(args, name):
            inputs[name] = Path(getattr(args, name))
    return inputs, cfg.to_dict(), cfg.seed


def _prior_config(args) -> PriorConfig:
    return PriorConfig(dim=args.dim, lr=args.lr, warmup=args.warmup, epochs=args.epochs,
                       patience=args.patience, val_fraction=args.val_fraction, seed=args.seed)


def cmd_fit_prior(args):
    src = _corpus_path(args)
    records = load_corpus(src)
    reward = UnigramMixtureReward.load(args.reward)
    inputs = {"corpus": src, "reward": Path(args.reward)}
    if args.tags:
        tags = load_tags(args.tags)
        inputs["tags"] = Path(args.tags)
    else:
        posterior, extra = load_checkpoint(args.posterior)
        inputs["posterior"] = Path(args.posterior)
        k = args.k or extra.get("train_config", {}).get("k")
        if not k:
            raise UsageError("subset size unknown: pass --k")
        n_max = extra.get("train_config", {}).get("n_max", 100)
        records = [r if len(r.reviews) <= n_max else type(r)(r.id, r.reviews[:n_max], r.summary)
                   for r in records]
        if args.features:
            mats = [FeatureMatrix(m.product_id, m.values[:n_max]) for m in load_features(args.features)]
            inputs["features"] = Path(args.features)
        else:
            mats = featurize_corpus(records, _lexicon(args))
        tags = distill_tags(posterior, mats, k)
    pcfg = _prior_config(args)
    res = train_prior(records, tags, reward.vocab, pcfg)
    out = _out_dir(args)
    save_tags(tags, out / "tags.jsonl")
    res.prior.save(out / "prior.json")
    write_json_atomic(out / "prior_log.json", {"train_loss": res.train_loss, "val_f1": res.val_f1,
                                               "best_epoch": res.best_epoch})
    print(f"prior best epoch {res.best_epoch}, held-out tag F1 "
          f"{res.val_f1[res.best_epoch - 1] if res.best_epoch else float('nan'):.4f}")
    return inputs, pcfg.to_dict(), pcfg.seed


def cmd_select(args):
    src = _corpus_path(args)
    records = load_corpus(src)
    inputs = {"corpus": src}
    method = args.method
    prior = None
    if method == "prior":
        if not args.prior:
            raise UsageError("--method prior needs --prior")
        prior = PriorSelector.load(args.prior)
        inputs["prior"] = Path(args.prior)
    rows = []
    for i, rec in enumerate(records):
        reviews = rec.reviews[:args.n_max]
        k = min(args.k, len(reviews))
        if method == "prior":
            idx = prior.select(reviews, k)
        elif method == "random":
            idx = random_subset(len(reviews), k, np.random.default_rng([args.seed, i]))
        else:
            idx = r1_topk(type(rec)(rec.id, reviews, rec.summary), k)
        rows.append({"id": rec.id, "indices": idx})
    out = _out_dir(args)
    _write_jsonl(out / "selections.jsonl", rows)
    print(f"selected up to {args.k} reviews for {len(rows)} products ({method})")
    return inputs, {"method": method, "k": args.k, "n_max": args.n_max}, args.seed


def _budgets(text: str) -> Budgets:
    try:
        v, p, c = (int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"budgets must look like 4,8,4, got {text!r}") from None
    return Budgets(v, p, c)


def cmd_extsum_oracle(args):
    src = _corpus_path(args)
    budgets = _budgets(args.budgets)
    rows = []
    for rec in load_corpus(src):
        pool = build_pool(rec, TRAIN_POOL_CAP)
        rows.append((rec.id, oracle_labels(rec, budgets, pool).labels))
    out = _out_dir(args)
    save_labels(rows, out / "labels.jsonl")
    n_pos = sum(1 for _, y in rows for c in y if c)
    print(f"labeled {len(rows)} products, {n_pos} positive sentences")
    return {"corpus": src}, {"budgets": list(budgets.as_tuple()), "cap": TRAIN_POOL_CAP}, None


def cmd_extsum_train(args):
    src = _corpus_path(args)
    records = _records_by_id(load_corpus(src))
    labels = load_labels(args.labels)
    pools, ys = [], []
    for pid, y in labels:
        if pid not in records:
            raise CorpusError(f"labels for unknown product {pid!r}")
        pools.append(build_pool(records[pid], TRAIN_POOL_CAP))
        ys.append(y)
    vocab = Vocab(t for p in pools for s in p.sentences for t in s.tokens)
    cfg = ExtSumConfig(dim=args.dim, lr=args.lr, warmup=args.warmup, epochs=args.epochs,
                       class_weights=(1.0, args.pos_weight, args.pos_weight, args.pos_weight),
                       seed=args.seed)
    res = train_extsum(pools, ys, vocab, cfg)
    out = _out_dir(args)
    res.classifier.save(out / "classifier.json")
    write_json_atomic(out / "extsum_log.json", {"loss": res.loss})
    print(f"trained sentence classifier, final loss {res.loss[-1] if res.loss else float('nan'):.4f}")
    return {"corpus": src, "labels": Path(args.labels)}, cfg.to_dict(), cfg.seed


def _summary_rows(extractions):
    return [e.to_json() for e in extractions]


def cmd_extsum_extract(args):
    src = _corpus_path(args)
    clf = SentenceClassifier.load(args.model)
    budgets = _budgets(args.budgets)
    ex = [extract_summary(clf, rec, budgets) for rec in load_corpus(src)]
    out = _out_dir(args)
    _write_jsonl(out / "summaries.jsonl", _summary_rows(ex))
    short = sum(e.short for e in ex)
    print(f"extracted {len(ex)} summaries ({short} from pools smaller than the budget)")
    return {"corpus": src, "model": Path(args.model)}, {"budgets": list(budgets.as_tuple())}, None


def cmd_random_baseline(args):
    src = _corpus_path(args)
    budgets = _budgets(args.budgets)
    ex = [random_baseline(rec, np.random.default_rng([args.seed, i]), budgets)
          for i, rec in enumerate(load_corpus(src))]
    out = _out_dir(args)
    _write_jsonl(out / "summaries.jsonl", _summary_rows(ex))
    print(f"sampled {len(ex)} random summaries")
    return {"corpus": src}, {"budgets": list(budgets.as_tuple())}, args.seed


def cmd_mi_rank(args):
    mats = load_features(args.features)
    tags = load_tags(args.tags)
    by_id = {t.product_id: t for t in tags}
    missing = [m.product_id for m in mats if m.product_id not in by_id]
    if missing:
        raise CorpusError(f"no tags for products {missing[:5]}")
    report = rank_features(mats, [by_id[m.product_id] for m in mats], args.k)
    table = report.table()
    print(table)
    if args.out:
        out = _out_dir(args)
        with open(out / "mi.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(table + "\n")
        write_json_atomic(out / "mi.json", report.to_json())
        return {"features": Path(args.features), "tags": Path(args.tags)}, {"k": args.k}, None
    return None


def _load_summaries(path) -> dict[str, GoldSummary]:
    out = {}
    for row in _read_jsonl(path):
        s = row["summary"]
        out[row["id"]] = GoldSummary(s.get("verdict", ""), tuple(s.get("pros", [])),
                                     tuple(s.get("cons", [])))
    return out


def cmd_eval(args):
    src = _corpus_path(args)
    gold = {r.id: r.summary for r in load_corpus(src)}
    scores = eval_summaries(_load_summaries(args.pred), gold)
    for sec, row in scores.items():
        print(f"{sec:8s} R1 {row['R1']:6.2f}  R2 {row['R2']:6.2f}  RL {row['RL']:6.2f}")
    if args.out:
        out = _out_dir(args)
        write_json_atomic(out / "eval.json", scores)
        return {"corpus": src, "pred": Path(args.pred)}, {}, None
    return None


# -- parser ----------------------------------------------------------------

def _add_corpus(p, lexicon: bool = False):
    p.add_argument("--corpus", help=f"product JSONL (default: ${DATA_ENV}/corpus.jsonl)")
    p.add_argument("--fixture", action="store_true", help="use the bundled 20-product fixture corpus")
    if lexicon:
        p.add_argument("--lexicon", help="aspect lexicon file (default: bundled demo lexicon)")


def _add_train_flags(p):
    defaults = TrainConfig()
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        if f.name == "selector":
            p.add_argument(flag, choices=SELECTORS, default=None, help=f"(default {default})")
        elif isinstance(default, bool):
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=None,
                           help=f"(default {default})")
        else:
            p.add_argument(flag, type=type(default), default=None, help=f"(default {default})")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="revsel", description="Review subset selection experiments.")
    ap.add_argument("--version", action="version", version=f"revsel {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("ingest", help="load, filter and write a corpus")
    _add_corpus(p)
    r = FilterRules()
    p.add_argument("--min-review-words", type=int, default=r.min_review_words)
    p.add_argument("--max-review-words", type=int, default=r.max_review_words)
    p.add_argument("--min-reviews", type=int, default=r.min_reviews_per_product)
    p.add_argument("--min-summary-words", type=int, default=r.min_summary_words)
    p.add_argument("--n-max", type=int, default=r.n_max)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="section length and review coverage table")
    _add_corpus(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("featurize", help="compute the 23 review features")
    _add_corpus(p, lexicon=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="joint posterior/reward training")
    _add_corpus(p, lexicon=True)
    p.add_argument("--features", help="precomputed features.jsonl")
    p.add_argument("--config", help="JSON file of training options; flags override it")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit-prior", help="distill posterior tags and train the prior selector")
    _add_corpus(p, lexicon=True)
    p.add_argument("--reward", required=True, help="reward.json from train (provides the vocabulary)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--posterior", help="posterior.json from train")
    src.add_argument("--tags", help="ready-made tags.jsonl")
    p.add_argument("--features")
    p.add_argument("--k", type=int)
    pc = PriorConfig()
    p.add_argument("--dim", type=int, default=pc.dim)
    p.add_argument("--lr", type=float, default=pc.lr)
    p.add_argument("--warmup", type=int, default=pc.warmup)
    p.add_argument("--epochs", type=int, default=pc.epochs)
    p.add_argument("--patience", type=int, default=pc.patience)
    p.add_argument("--val-fraction", type=float, default=pc.val_fraction)
    p.add_argument("--seed", type=int, default=pc.seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_prior)

    p = sub.add_parser("select", help="choose review indices per product")
    _add_corpus(p)
    p.add_argument("--method", choices=("prior", "random", "r1-topk"), default="prior")
    p.add_argument("--prior", help="prior.json from fit-prior")
    p.add_argument("--k", type=int, default=TrainConfig().k)
    p.add_argument("--n-max", type=int, default=TrainConfig().n_max)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("extsum-oracle", help="greedy ROUGE sentence labels")
    _add_corpus(p)
    p.add_argument("--budgets", default=",".join(map(str, ORACLE_BUDGETS.as_tuple())))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extsum_oracle)

    p = sub.add_parser("extsum-train", help="train the 4-class sentence classifier")
    _add_corpus(p)
    p.add_argument("--labels", required=True)
    ec = ExtSumConfig()
    p.add_argument("--dim", type=int, default=ec.dim)
    p.add_argument("--lr", type=float, default=ec.lr)
    p.add_argument("--warmup", type=int, default=ec.warmup)
    p.add_argument("--epochs", type=int, default=ec.epochs)
    p.add_argument("--pos-weight", type=float, default=ec.class_weights[1])
    p.add_argument("--seed", type=int, default=ec.seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extsum_train)

    p = sub.add_parser("extsum-extract", help="extract verdict/pros/cons with a trained classifier")
    _add_corpus(p)
    p.add_argument("--model", required=True)
    p.add_argument("--budgets", default=",".join(map(str, EXTRACT_BUDGETS.as_tuple())))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extsum_extract)

    p = sub.add_parser("random-baseline", help="random verdict/pros/cons sentences")
    _add_corpus(p)
    p.add_argument("--budgets", default=",".join(map(str, EXTRACT_BUDGETS.as_tuple())))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_random_baseline)

    p = sub.add_parser("mi-rank", help="rank features by mutual information with tags")
    p.add_argument("--features", required=True)
    p.add_argument("--tags", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mi_rank)

    p = sub.add_parser("eval", help="section ROUGE F1 of predicted summaries")
    _add_corpus(p)
    p.add_argument("--pred", required=True, help="summaries.jsonl")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        result = args.func(args)
        if result is not None:
            inputs, config, seed = result
            write_manifest(Path(args.out), argv, args, inputs, config, seed, started)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (CorpusError, ValueError, KeyError, OSError, IndexError) as exc:
        print(f"revsel: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
