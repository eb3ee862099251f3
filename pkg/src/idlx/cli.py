"""Command-line entry point: synth, features, train, embed, eval, align.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
failure. All randomness flows from --seed; outputs are written only under
--out (reports also go to stdout as JSON). Embedding binaries keep their
sentence ids in a sibling ``<name>.ids.txt`` file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .align import (
    AlignConfig,
    EmbeddingCache,
    ToyLMConfig,
    build_embedding_cache,
    read_samples_jsonl,
    run_alignment_sft,
)
from .config import build_synth_config, build_train_configs, parse_kv_file
from .corpus import load_corpus, split_by_author, write_corpus_jsonl
from .errors import ConfigError, DataError, NumericError, UsageError
from .evalsuite import (
    EvalReport,
    centroid_report,
    correlation_report,
    cosine_similarity,
    kmeans_cluster_eval,
    retrieval_accuracy,
)
from .features import (
    FeatureCache,
    HttpCompletionClient,
    extract_llm_many,
    extract_rules_many,
    load_inventory,
    marker_rulebook,
    save_inventory,
    spanish_rulebook,
)
from .sampler import sample_anchor_group
from .serialize import read_embeddings, save_checkpoint, write_embeddings
from .synth import generate_corpus, synthetic_inventory
from .trainer import (
    init_train_state,
    load_train_state,
    run_feature_stage,
    run_pretrain_stage,
    save_train_state,
    embed_corpus,
)

log = logging.getLogger(__name__)

API_KEY_VAR = "IDLX_API_KEY"
API_URL_VAR = "IDLX_API_URL"
API_MODEL_VAR = "IDLX_MODEL"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="idlx", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", parents=[], help="generate a synthetic corpus with planted features")
    p.add_argument("--config", help="flat key = value synthesis config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("features", help="extract binary features into a cache file")
    p.add_argument("--mode", choices=("rules", "llm"), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--inventory", required=True,
                   help="'spanish', 'arabic', or a path to a feature-name file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", choices=("pretrain", "feature"), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="flat key = value training config")
    p.add_argument("--features", help="feature cache (required for --stage feature)")
    p.add_argument("--checkpoint", help="initialize from this checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed", help="export style embeddings for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", help="restrict to one split tag (e.g. test)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluation tasks over exported embeddings")
    esub = p.add_subparsers(dest="eval_task")

    e = esub.add_parser("sim", help="mean cosine by proximity level")
    e.add_argument("--embeddings", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--groups", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")

    e = esub.add_parser("classify", help="nearest-centroid baseline")
    e.add_argument("--embeddings", required=True, help="train embeddings")
    e.add_argument("--labels", required=True, help="train labels jsonl")
    e.add_argument("--test-embeddings", required=True)
    e.add_argument("--test-labels", required=True)
    e.add_argument("--out")

    e = esub.add_parser("cluster", help="k-means cluster-to-label baseline")
    e.add_argument("--embeddings", required=True, help="train embeddings")
    e.add_argument("--test-embeddings", required=True)
    e.add_argument("--test-labels", required=True)
    e.add_argument("--k", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")

    e = esub.add_parser("retrieval", help="Accuracy*: positives above negatives")
    e.add_argument("--embeddings", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--trials", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")

    e = esub.add_parser("correlation", help="style-vs-semantic Pearson correlation")
    e.add_argument("--pairs", required=True,
                   help="TSV with columns pair_id, style_sim, semantic_sim[, proximity]")
    e.add_argument("--out")

    p = sub.add_parser("align", help="embedding-alignment SFT on the toy LM")
    asub = p.add_subparsers(dest="align_task")

    a = asub.add_parser("cache", help="precompute target embeddings for responses")
    a.add_argument("--samples", required=True, help="jsonl with id, prompt, response")
    a.add_argument("--checkpoint", required=True, help="trained style encoder")
    a.add_argument("--out", required=True)

    a = asub.add_parser("sft", help="fine-tune the toy LM with the alignment term")
    a.add_argument("--samples", required=True)
    a.add_argument("--cache", required=True, help="cache .bin path from 'align cache'")
    a.add_argument("--alpha", type=float, default=0.5)
    a.add_argument("--epochs", type=int, default=2)
    a.add_argument("--batch-size", type=int, default=16)
    a.add_argument("--lr", type=float, default=1e-3)
    a.add_argument("--lm-layers", type=int, default=2)
    a.add_argument("--lm-hidden", type=int, default=64)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)

    return parser


def _ids_path(bin_path) -> Path:
    return Path(bin_path).with_suffix(".ids.txt")


def _load_labels(path) -> dict[str, str]:
    """JSONL rows with either a 'label' key or a 'community_id' key."""
    labels = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    labels[str(row["id"])] = str(row.get("label", row.get("community_id")))
                except (json.JSONDecodeError, KeyError) as e:
                    raise DataError(f"{path}:{lineno}: bad label row ({e})") from e
    except OSError as e:
        raise DataError(f"cannot read labels {path}: {e}") from e
    if any(v == "None" for v in labels.values()):
        raise DataError(f"{path}: rows need a 'label' or 'community_id' key")
    return labels


def _labelled_embeddings(bin_path, labels_path):
    ids, matrix = read_embeddings(bin_path, _ids_path(bin_path))
    labels = _load_labels(labels_path)
    missing = [i for i in ids if i not in labels]
    if missing:
        raise DataError(f"labels missing for ids: {missing[:5]}")
    return matrix, [labels[i] for i in ids]


def _emit_report(report: EvalReport, out_dir) -> None:
    text = report.to_json()
    print(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(Path(out_dir) / f"report_{report.task}.json", "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


# -- command handlers -------------------------------------------------------------


def _cmd_synth(args) -> int:
    kv = parse_kv_file(args.config) if args.config else {}
    cfg, split = build_synth_config(kv, args.seed)
    corpus, truth = generate_corpus(cfg)
    tagged = split_by_author(
        corpus,
        heldout_per_dialect=split["heldout_per_dialect"],
        train_authors_cap=split["train_authors_cap"],
        seed=cfg.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    out = Path(args.out)
    write_corpus_jsonl(out / "corpus.jsonl", tagged.records)
    inventory = synthetic_inventory(cfg.feature_inventory_size)
    save_inventory(out / "inventory.txt", inventory)
    cache = FeatureCache(inventory.fingerprint(), len(inventory))
    for r in tagged.records:
        cache.put(r.id, truth[r.id])
    cache.save(out / "features.jsonl")
    print(json.dumps({
        "sentences": len(tagged), "communities": len(tagged.communities()),
        "features": len(inventory),
    }, sort_keys=True))
    return 0


def _rulebook_for(inventory):
    if all(n.startswith("FEAT_") for n in inventory.names):
        return marker_rulebook(inventory)
    if inventory.language_tag == "es":
        return spanish_rulebook()
    raise ConfigError(
        "no offline rulebook covers this inventory; use --mode llm for it"
    )


def _cmd_features(args) -> int:
    corpus = load_corpus(args.corpus)
    inventory = load_inventory(args.inventory)
    os.makedirs(args.out, exist_ok=True)
    out_path = Path(args.out) / "features.jsonl"
    if args.mode == "rules":
        cache = extract_rules_many(corpus.records, inventory, _rulebook_for(inventory))
    else:
        api_key = os.environ.get(API_KEY_VAR)
        if not api_key:
            raise ConfigError(f"--mode llm requires the {API_KEY_VAR} environment variable")
        url = os.environ.get(API_URL_VAR)
        if not url:
            raise ConfigError(f"--mode llm requires the {API_URL_VAR} environment variable")
        client = HttpCompletionClient(
            url=url, api_key=api_key, model=os.environ.get(API_MODEL_VAR, "gpt-5-mini")
        )
        cache = None
        if out_path.exists():  # resume an interrupted extraction
            cache = FeatureCache.load(out_path, expected_inventory=inventory)
        cache = extract_llm_many(corpus.records, inventory, client, cache=cache)
    cache.save(out_path)
    print(json.dumps({"extracted": len(cache), "features": len(inventory)}, sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    kv = parse_kv_file(args.config) if args.config else {}
    cfg, enc = build_train_configs(kv, args.seed)
    os.makedirs(args.out, exist_ok=True)
    out = Path(args.out)
    log_path = out / f"train_{args.stage}.jsonl"
    ckpt_path = out / f"checkpoint_{args.stage}.ckpt"
    if args.stage == "pretrain":
        state = load_train_state(args.checkpoint) if args.checkpoint else init_train_state(corpus, cfg, enc)
        state = run_pretrain_stage(corpus, cfg, state=state, log_path=log_path,
                                   checkpoint_path=ckpt_path)
    else:
        if not args.checkpoint:
            raise UsageError("--stage feature requires --checkpoint from the pretrain stage")
        if not args.features:
            raise UsageError("--stage feature requires --features")
        state = load_train_state(args.checkpoint)
        cache = FeatureCache.load(args.features)
        state = run_feature_stage(corpus, cache, cfg, state, log_path=log_path,
                                  checkpoint_path=ckpt_path)
    save_train_state(state, ckpt_path)
    print(json.dumps({
        "stage": args.stage, "steps": state.step,
        "best_dev_metric": state.best_dev_metric,
        "checkpoint": str(ckpt_path),
    }, sort_keys=True))
    return 0


def _cmd_embed(args) -> int:
    corpus = load_corpus(args.corpus)
    if args.split:
        corpus = corpus.subset(args.split)
    if len(corpus) == 0:
        raise DataError("no records to embed after split filtering")
    state = load_train_state(args.checkpoint)
    ids, matrix = embed_corpus(state, corpus.records)
    os.makedirs(args.out, exist_ok=True)
    out = Path(args.out)
    write_embeddings(out / "embeddings.bin", out / "embeddings.ids.txt", ids, matrix)
    print(json.dumps({"count": len(ids), "dim": int(matrix.shape[1])}, sort_keys=True))
    return 0


def _cmd_eval_sim(args) -> int:
    ids, matrix = read_embeddings(args.embeddings, _ids_path(args.embeddings))
    corpus = load_corpus(args.corpus)
    pos = {sid: k for k, sid in enumerate(ids)}
    missing = [r.id for r in corpus.records if r.id not in pos]
    if missing:
        raise DataError(f"embeddings missing for corpus ids: {missing[:5]}")
    rng = np.random.default_rng(args.seed)
    sums = {0: 0.0, 1: 0.0, 2: 0.0, 3: 0.0}
    counts = {0: 0, 1: 0, 2: 0, 3: 0}
    for _ in range(args.groups):
        batch = sample_anchor_group(corpus, rng)
        anchor = batch.sentences[0]
        for other, level in zip(batch.sentences[1:], batch.proximity[0, 1:]):
            sims = cosine_similarity(matrix[pos[anchor.id]], matrix[pos[other.id]])
            sums[int(level)] += sims
            counts[int(level)] += 1
    metrics = {
        f"mean_cos_r{lvl}": (sums[lvl] / counts[lvl]) if counts[lvl] else float("nan")
        for lvl in (0, 1, 2, 3)
    }
    _emit_report(EvalReport(task="sim", metrics=metrics, seed=args.seed), args.out)
    return 0


def _cmd_eval_classify(args) -> int:
    train_X, train_y = _labelled_embeddings(args.embeddings, args.labels)
    test_X, test_y = _labelled_embeddings(args.test_embeddings, args.test_labels)
    report = centroid_report(train_X, train_y, test_X, test_y)
    _emit_report(report, args.out)
    return 0


def _cmd_eval_cluster(args) -> int:
    _, train_X = read_embeddings(args.embeddings, _ids_path(args.embeddings))
    test_X, test_y = _labelled_embeddings(args.test_embeddings, args.test_labels)
    report = kmeans_cluster_eval(train_X, test_X, test_y, k=args.k, seed=args.seed)
    _emit_report(report, args.out)
    return 0


def _cmd_eval_retrieval(args) -> int:
    X, y = _labelled_embeddings(args.embeddings, args.labels)
    report = retrieval_accuracy(X, y, trials=args.trials, seed=args.seed)
    _emit_report(report, args.out)
    return 0


def _cmd_eval_correlation(args) -> int:
    pairs, pair_ids, prox = [], [], []
    try:
        with open(args.pairs, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("pair_id\t"):
                    continue
                cols = line.split("\t")
                if len(cols) < 3:
                    raise DataError(f"{args.pairs}:{lineno}: need at least 3 tab-separated columns")
                pair_ids.append(cols[0])
                pairs.append((float(cols[1]), float(cols[2])))
                prox.append(cols[3] if len(cols) > 3 else "-")
    except OSError as e:
        raise DataError(f"cannot read pairs {args.pairs}: {e}") from e
    except ValueError as e:
        raise DataError(f"{args.pairs}: non-numeric similarity column ({e})") from e
    rep = correlation_report(pairs, pair_ids=pair_ids, proximity=prox)
    report = EvalReport(task="correlation", metrics={"pearson_r": rep.rho, "pairs": len(pairs)})
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        rep.write_scatter_tsv(Path(args.out) / "scatter.tsv")
    _emit_report(report, args.out)
    return 0


def _cmd_align_cache(args) -> int:
    samples = read_samples_jsonl(args.samples)
    state = load_train_state(args.checkpoint)
    cache = build_embedding_cache([(s.id, s.response) for s in samples], state)
    os.makedirs(args.out, exist_ok=True)
    out = Path(args.out)
    cache.save(out / "cache.bin", out / "cache.ids.txt")
    print(json.dumps({"cached": len(cache)}, sort_keys=True))
    return 0


def _cmd_align_sft(args) -> int:
    samples = read_samples_jsonl(args.samples)
    cache = EmbeddingCache.load(args.cache, _ids_path(args.cache))
    cfg = AlignConfig(
        alpha=args.alpha, learning_rate=args.lr, epochs=args.epochs,
        batch_size=args.batch_size, seed=args.seed,
        lm=ToyLMConfig(n_layers=args.lm_layers, hidden_dim=args.lm_hidden),
    )
    os.makedirs(args.out, exist_ok=True)
    out = Path(args.out)
    lm_params, head_params, metrics = run_alignment_sft(
        samples, cache, cfg, log_path=out / "sft_log.jsonl"
    )
    blocks = {k: v.data for k, v in lm_params.items()}
    blocks.update({k: v.data for k, v in head_params.items()})
    save_checkpoint(
        out / "sft_model.ckpt",
        {"kind": "toy_lm", "alpha": cfg.alpha, "lm": {
            "n_layers": cfg.lm.n_layers, "hidden_dim": cfg.lm.hidden_dim,
            "max_len": cfg.lm.max_len, "vocab_size": cfg.lm.vocab_size,
        }},
        blocks,
    )
    summary = {
        "before": metrics["before"], "after": metrics["after"],
        "holdout_size": metrics["holdout_size"], "steps": metrics["steps"],
    }
    with open(out / "sft_metrics.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


_HANDLERS = {
    ("synth", None): _cmd_synth,
    ("features", None): _cmd_features,
    ("train", None): _cmd_train,
    ("embed", None): _cmd_embed,
    ("eval", "sim"): _cmd_eval_sim,
    ("eval", "classify"): _cmd_eval_classify,
    ("eval", "cluster"): _cmd_eval_cluster,
    ("eval", "retrieval"): _cmd_eval_retrieval,
    ("eval", "correlation"): _cmd_eval_correlation,
    ("align", "cache"): _cmd_align_cache,
    ("align", "sft"): _cmd_align_sft,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        subtask = getattr(args, "eval_task", None) or getattr(args, "align_task", None)
        handler = _HANDLERS.get((args.command, subtask))
        if handler is None:
            raise UsageError(f"{args.command} requires a subcommand")
        return handler(args)
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        print("run 'idlx --help' for usage", file=sys.stderr)
        return 1
    except (DataError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


def console_main() -> None:
    sys.exit(main(sys.argv[1:]))
