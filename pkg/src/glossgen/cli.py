"""Command line surface: data preparation, training, evaluation, generation.

Every run records its resolved config, digest, and (out-dir-independent)
command line in the output directory, so identical config+seed invocations
produce byte-identical logs and reports. Exit codes: 0 ok, 1 user error,
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

from .autodiff import ShapeError
from .checkpoint import (CheckpointError, load_checkpoint, load_pretrained,
                         read_meta)
from .config import (Config, ConfigError, apply_overrides, config_digest,
                     config_to_text, default_config, load_config_file, set_key,
                     validate)
from .data import (CorpusError, Vocabulary, apply_split_manifest, build_vocab,
                   corpus_stats, load_corpus, load_stopwords,
                   partition_seen_unseen, split_by_sense, write_split_manifest)
from .embeddings import (ContextualProvider, EmbeddingError,
                         load_contextual_file, load_word_embeddings)
from .metrics import MetricsError, evaluate, format_report, report_lines
from .models import DefinitionModel, expected_param_count
from .training import (TrainingError, load_lm_sentences, make_query_entry,
                       pretrain_decoder, train)

ENV_DATA_DIR = "GLOSSGEN_DATA_DIR"

USER_ERRORS = (ConfigError, CorpusError, EmbeddingError, CheckpointError,
               MetricsError, TrainingError, ShapeError, FileNotFoundError,
               IsADirectoryError, PermissionError)


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def asset_path(name: str) -> str:
    return str(resources.files("glossgen").joinpath("assets").joinpath(name))


def resolve_data_path(value: str, bundled: str | None = None) -> str:
    """Empty -> bundled asset; relative paths fall back to $GLOSSGEN_DATA_DIR."""
    if not value:
        if bundled is None:
            raise CliError("no path configured and no bundled default exists")
        return asset_path(bundled)
    if os.path.isabs(value) or os.path.exists(value):
        return value
    base = os.environ.get(ENV_DATA_DIR, "")
    if base:
        candidate = os.path.join(base, value)
        if os.path.exists(candidate):
            return candidate
        raise CliError(f"{value}: not found here or under {ENV_DATA_DIR}={base}")
    return value


def _clean_argv(argv: list[str]) -> list[str]:
    """Drop --out-dir so embedded command lines match across run directories."""
    out, skip = [], False
    for item in argv:
        if skip:
            skip = False
            continue
        if item == "--out-dir":
            skip = True
            continue
        if item.startswith("--out-dir="):
            continue
        out.append(item)
    return out


def _prepare_out(args, cfg: Config, argv: list[str]) -> str:
    out_dir = args.out_dir
    if out_dir is None:
        raise CliError(f"{args.command}: --out-dir is required")
    os.makedirs(out_dir, exist_ok=True)
    marker = os.path.join(out_dir, "FAILED")
    if os.path.exists(marker):
        os.remove(marker)
    record = {
        "command": _clean_argv(argv),
        "config_digest": config_digest(cfg),
        "seed": cfg.train.seed,
    }
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"# digest {config_digest(cfg)}\n")
        fh.write(config_to_text(cfg))
    return out_dir


def _artifact_header(cfg: Config, argv: list[str]) -> list[str]:
    return [f"# config {config_digest(cfg)}",
            f"# command {' '.join(_clean_argv(argv))}"]


def _load_entries(cfg: Config):
    path = resolve_data_path(cfg.data.corpus, "mini_corpus.jsonl")
    return load_corpus(path)


def _model_vocab(entries, cfg: Config) -> Vocabulary:
    # The decoder must emit function words, so no stopword filter here.
    stream = [t for e in entries
              for seq in ([e.definition] + e.contexts + [e.usage or []])
              for t in seq]
    return build_vocab(stream, cfg.data.vocab_size)


def _contextual(cfg: Config) -> ContextualProvider:
    if cfg.data.contextual_file:
        path = resolve_data_path(cfg.data.contextual_file)
        table = load_contextual_file(path)
        return ContextualProvider("file-backed", cfg.model.d_e,
                                  seed=cfg.train.seed, table=table)
    return ContextualProvider("deterministic-test", cfg.model.d_e,
                              seed=cfg.train.seed)


def _build_model(cfg: Config, vocab: Vocabulary) -> DefinitionModel:
    pretrained = None
    if cfg.data.embeddings_file:
        path = resolve_data_path(cfg.data.embeddings_file)
        table, coverage = load_word_embeddings(path, vocab, seed=cfg.train.seed,
                                               dim=cfg.model.d_w)
        print(f"embedding file covers {coverage:.1%} of the vocabulary")
        pretrained = table.tensor.data
    return DefinitionModel(cfg.model, vocab, seed=cfg.train.seed,
                           pretrained_matrix=pretrained,
                           contextual=_contextual(cfg))


def _splits(entries, cfg: Config, manifest: str | None) -> dict:
    if manifest:
        return apply_split_manifest(entries, manifest)
    parts = split_by_sense(entries, cfg.data.split_ratios, cfg.train.seed)
    return {"train": parts[0], "valid": parts[1], "test": parts[2]}


# -- subcommands -------------------------------------------------------------

def cmd_data_validate(args, cfg, argv) -> int:
    entries, report = _load_entries(cfg)
    print(f"lines {report.total_lines}  loaded {report.loaded}  "
          f"malformed {report.n_malformed}")
    print(f"contexts without a resolvable target occurrence: "
          f"{report.absent_context_targets}")
    print(f"usages without a resolvable target occurrence: "
          f"{report.absent_usage_targets}")
    for line_no, cause in report.malformed[:20]:
        print(f"  line {line_no}: {cause}")
    return 0


def cmd_data_split(args, cfg, argv) -> int:
    out_dir = _prepare_out(args, cfg, argv)
    entries, _ = _load_entries(cfg)
    splits = _splits(entries, cfg, None)
    path = os.path.join(out_dir, "split_manifest.json")
    write_split_manifest(splits, path)
    for name in ("train", "valid", "test"):
        print(f"{name}: {len(splits[name])} entries")
    print(f"manifest: {path}")
    return 0


def cmd_data_stats(args, cfg, argv) -> int:
    entries, _ = _load_entries(cfg)
    if args.manifest:
        splits = apply_split_manifest(entries, args.manifest)
    else:
        splits = {"all": entries}
    table = corpus_stats(splits)
    lines = _artifact_header(cfg, argv)
    header = (f"{'split':<8} {'words':>7} {'entries':>8} {'tokens':>8} "
              f"{'def-len':>8} {'ctx-len':>8} {'usg-len':>8}")
    lines.append(header)
    for name, row in table.items():
        lines.append(f"{name:<8} {row['words']:>7} {row['entries']:>8} "
                     f"{row['tokens']:>8} {row['avg_definition_len']:>8.2f} "
                     f"{row['avg_context_len']:>8.2f} {row['avg_usage_len']:>8.2f}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "stats.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(text)
        with open(os.path.join(args.out_dir, "stats.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_data_vocab(args, cfg, argv) -> int:
    entries, _ = _load_entries(cfg)
    stopwords = None
    if args.stopwords:
        path = (asset_path("stopwords.txt") if args.stopwords == "bundled"
                else args.stopwords)
        stopwords = load_stopwords(path)
    stream = [t for e in entries
              for seq in ([e.definition] + e.contexts + [e.usage or []])
              for t in seq]
    vocab = build_vocab(stream, cfg.data.vocab_size, stopwords)
    print(f"vocabulary size {len(vocab)} (4 specials)  "
          f"fingerprint {vocab.fingerprint()[:12]}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        path = os.path.join(args.out_dir, "vocab.txt")
        vocab.save(path)
        print(f"written: {path}")
    return 0


def cmd_pretrain(args, cfg, argv) -> int:
    out_dir = _prepare_out(args, cfg, argv)
    entries, _ = _load_entries(cfg)
    vocab = _model_vocab(entries, cfg)
    lm_path = resolve_data_path(cfg.data.lm_corpus, "lm_corpus.txt")
    sentences = load_lm_sentences(lm_path, vocab)
    model = _build_model(cfg, vocab)
    out_path = os.path.join(out_dir, "pretrained.npz")
    history = pretrain_decoder(model, cfg, sentences, out_path=out_path,
                               log_path=os.path.join(out_dir, "pretrain_log.jsonl"))
    last = history[-1]["mean_train_loss"] if history else float("nan")
    print(f"pretrained {cfg.train.pretrain_epochs} epochs on "
          f"{len(sentences)} sentences; final mean loss {last:.4f}")
    print(f"saved: {out_path}")
    return 0


def cmd_train(args, cfg, argv) -> int:
    out_dir = _prepare_out(args, cfg, argv)
    entries, _ = _load_entries(cfg)
    vocab = _model_vocab(entries, cfg)
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    splits = _splits(entries, cfg, args.manifest)
    if not args.manifest:
        write_split_manifest(splits, os.path.join(out_dir, "split_manifest.json"))
    model = _build_model(cfg, vocab)
    if args.pretrained:
        names = load_pretrained(args.pretrained, model)
        print(f"warm start: {len(names)} arrays from {args.pretrained}")
    result = train(model, cfg, splits["train"], splits["valid"],
                   checkpoint_path=os.path.join(out_dir, "model.npz"),
                   log_path=os.path.join(out_dir, "train_log.jsonl"),
                   extra_meta={"command": _clean_argv(argv)})
    summary = {
        "config_digest": config_digest(cfg),
        "command": _clean_argv(argv),
        "vocab_fingerprint": vocab.fingerprint(),
        "n_train": len(splits["train"]),
        "n_valid": len(splits["valid"]),
        "n_test": len(splits["test"]),
        "epochs_run": result.epochs_run,
        "best_epoch": result.best_epoch,
        "best_valid_ppl": result.best_ppl,
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {result.epochs_run} epochs; best valid perplexity "
          f"{result.best_ppl:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {os.path.join(out_dir, 'model.npz')}")
    return 0


def cmd_eval(args, cfg, argv) -> int:
    entries, _ = _load_entries(cfg)
    meta = read_meta(args.checkpoint)
    vocab = _model_vocab(entries, cfg)
    if vocab.fingerprint() != meta.get("vocab_fingerprint"):
        raise CliError(
            f"{args.checkpoint}: checkpoint vocabulary does not match this corpus "
            f"(fingerprints {meta.get('vocab_fingerprint', '?')[:12]} vs "
            f"{vocab.fingerprint()[:12]})")
    contextual = _contextual(cfg) if cfg.data.contextual_file else None
    model, ckpt_cfg, _ = load_checkpoint(args.checkpoint, contextual=contextual)
    if args.manifest:
        splits = apply_split_manifest(entries, args.manifest)
        train_set, test_set = splits["train"], splits["test"]
    else:
        train_set, test_set = [], entries
    labeled = partition_seen_unseen(train_set, test_set)
    report = evaluate(model, labeled, seed=cfg.train.seed)
    text = "\n".join(_artifact_header(cfg, argv)) + "\n" + format_report(report)
    print(text, end="")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "report.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(text)
        with open(os.path.join(args.out_dir, "report.jsonl"), "w",
                  encoding="utf-8") as fh:
            fh.write(json.dumps({"config_digest": config_digest(cfg),
                                 "command": _clean_argv(argv)},
                                sort_keys=True) + "\n")
            fh.write("\n".join(report_lines(report)) + "\n")
    return 0


def cmd_generate(args, cfg, argv) -> int:
    contextual = _contextual(cfg) if cfg.data.contextual_file else None
    model, _, _ = load_checkpoint(args.checkpoint, contextual=contextual)
    for i, context in enumerate(args.context):
        entry = make_query_entry(args.word, context, entry_id=f"query-{i}")
        tokens, meta = model.generate(entry, task=args.task,
                                      temperature=args.temperature,
                                      seed=cfg.train.seed)
        record = {"word": entry.word, "context": " ".join(entry.contexts[0]),
                  "output": " ".join(tokens)}
        record.update(meta)
        print(json.dumps(record, sort_keys=True))
    return 0


ABLATION_FEATURES = (("base", {"char_on": False, "contextual_on": False}),
                     ("+ctx", {"char_on": False, "contextual_on": True}),
                     ("+ctx+char", {"char_on": True, "contextual_on": True}))


def cmd_ablate(args, cfg, argv) -> int:
    out_dir = _prepare_out(args, cfg, argv)
    entries, _ = _load_entries(cfg)
    vocab = _model_vocab(entries, cfg)
    rows = []
    for gate in (True, False):
        for feat_name, feat in ABLATION_FEATURES:
            for s0 in ("zeros", "word", "context", "both"):
                run_cfg = cfg
                run_cfg = set_key(run_cfg, "model.gate_on", str(gate))
                for key, value in feat.items():
                    run_cfg = set_key(run_cfg, f"model.{key}", str(value))
                run_cfg = set_key(run_cfg, "model.s0_variant", s0)
                run_cfg = set_key(run_cfg, "train.max_epochs", str(args.epochs))
                model = _build_model(run_cfg, vocab)
                actual = sum(t.size for t in model.params().values())
                expected = expected_param_count(run_cfg.model, len(vocab))
                if actual != expected:
                    raise RuntimeError(
                        f"parameter count mismatch for gate={gate} {feat_name} "
                        f"s0={s0}: built {actual}, formula {expected}")
                result = train(model, run_cfg, entries, entries)
                rows.append({
                    "gate": "on" if gate else "off",
                    "features": feat_name,
                    "s0": s0,
                    "params": actual,
                    "train_loss": result.history[-1]["mean_train_loss"],
                    "valid_ppl": result.history[-1]["valid_ppl"],
                })
                print(f"gate={rows[-1]['gate']:<3} features={feat_name:<9} "
                      f"s0={s0:<7} params={actual:>8} "
                      f"loss={rows[-1]['train_loss']:.4f} "
                      f"ppl={rows[-1]['valid_ppl']:.4f}")
    lines = _artifact_header(cfg, argv)
    lines.append(f"{'gate':<5} {'features':<10} {'s0':<8} {'params':>9} "
                 f"{'train-loss':>11} {'valid-ppl':>10}")
    for r in rows:
        lines.append(f"{r['gate']:<5} {r['features']:<10} {r['s0']:<8} "
                     f"{r['params']:>9} {r['train_loss']:>11.4f} "
                     f"{r['valid_ppl']:>10.4f}")
    with open(os.path.join(out_dir, "ablation.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "ablation.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config_digest": config_digest(cfg),
                             "command": _clean_argv(argv)}, sort_keys=True) + "\n")
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    print(f"table: {os.path.join(out_dir, 'ablation.txt')}")
    return 0


# -- wiring ------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="glossgen",
                     description="Context-aware definition and usage generation.")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="path to a section.key = value file")
    common.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE", help="config override, repeatable")
    common.add_argument("--seed", type=int, help="sets train.seed")
    common.add_argument("--out-dir", help="directory for run artifacts")

    sub = parser.add_subparsers(dest="command", required=True)

    p_data = sub.add_parser("data", help="corpus utilities")
    data_sub = p_data.add_subparsers(dest="data_command", required=True)
    data_sub.add_parser("validate", parents=[common],
                        help="parse the corpus and print a validation report")
    data_sub.add_parser("split", parents=[common],
                        help="write a sense-disjoint train/valid/test manifest")
    p_stats = data_sub.add_parser("stats", parents=[common],
                                  help="per-split corpus statistics")
    p_stats.add_argument("--manifest", help="split manifest to group by")
    p_vocab = data_sub.add_parser("vocab", parents=[common],
                                  help="build and save the token vocabulary")
    p_vocab.add_argument("--stopwords",
                         help="stopword file to filter with, or 'bundled'")

    sub.add_parser("pretrain", parents=[common],
                   help="language-model pretraining of the decoder branch")

    p_train = sub.add_parser("train", parents=[common], help="fit a model")
    p_train.add_argument("--pretrained", help="warm-start file from 'pretrain'")
    p_train.add_argument("--manifest", help="reuse an existing split manifest")

    p_eval = sub.add_parser("eval", parents=[common],
                            help="score a checkpoint on the test split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", help="split manifest; omitted = whole corpus")

    p_gen = sub.add_parser("generate", parents=[common],
                           help="define a word as used in the given context")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--word", required=True)
    p_gen.add_argument("--context", action="append", required=True,
                       help="context sentence, repeatable")
    p_gen.add_argument("--task", choices=("definition", "usage"),
                       default="definition")
    p_gen.add_argument("--temperature", type=float)

    p_abl = sub.add_parser("ablate", parents=[common],
                           help="train every switch combination and tabulate")
    p_abl.add_argument("--epochs", type=int, default=1,
                       help="epochs per combination (default 1)")

    return parser


def _resolve_config(args) -> Config:
    cfg = load_config_file(args.config) if args.config else default_config()
    cfg = apply_overrides(cfg, args.override)
    if args.seed is not None:
        cfg = set_key(cfg, "train.seed", str(args.seed))
    validate(cfg)
    return cfg


COMMANDS = {
    ("data", "validate"): cmd_data_validate,
    ("data", "split"): cmd_data_split,
    ("data", "stats"): cmd_data_stats,
    ("data", "vocab"): cmd_data_vocab,
    ("pretrain", None): cmd_pretrain,
    ("train", None): cmd_train,
    ("eval", None): cmd_eval,
    ("generate", None): cmd_generate,
    ("ablate", None): cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
        handler = COMMANDS[(args.command, getattr(args, "data_command", None))]
        return handler(args, cfg, argv)
    except (CliError, *USER_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _flag_partial(argv)
        return 1
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        _flag_partial(argv)
        return 1
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _flag_partial(argv)
        return 2


def _flag_partial(argv: list[str]) -> None:
    """Mark a run directory whose command died after creating artifacts."""
    out_dir = None
    for i, item in enumerate(argv):
        if item == "--out-dir" and i + 1 < len(argv):
            out_dir = argv[i + 1]
        elif item.startswith("--out-dir="):
            out_dir = item.split("=", 1)[1]
    if out_dir and os.path.isdir(out_dir):
        with open(os.path.join(out_dir, "FAILED"), "w", encoding="utf-8") as fh:
            fh.write("incomplete run; artifacts may be partial\n")


if __name__ == "__main__":
    sys.exit(main())
