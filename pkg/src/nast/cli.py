"""Command line: synth, train, translate, evaluate, gradcheck, oracle.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import TASKS, ConfigError, filter_feasible, load_corpus, read_config, read_lines, read_links, save_corpus, synth_generate, write_lines
from .metrics import PolicyRecord, corpus_bleu, format_report, hallucination_rate, latency_metrics, partition_by_difficulty
from .model import ModelConfig, NASTModel
from .streaming import MODES, ModelChunkDecoder, read_traces, stream_translate, write_traces
from .suites import gradient_suite, lattice_oracle_suite
from .training import Trainer, TrainConfig
from .vocab import Vocab

logger = logging.getLogger("nast")

MODEL_KEYS = [f for f in fields(ModelConfig) if f.name != "vocab_size"]
TRAIN_KEYS = list(fields(TrainConfig))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser, keys, section: str) -> None:
    group = p.add_argument_group(f"[{section}] overrides")
    for f in keys:
        if f.name == "k" and section == "train":
            continue  # shared with the model flag
        group.add_argument(_flag(f.name), dest=f"{section}.{f.name}", default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nast", description="Non-autoregressive streaming translation at desk scale")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic parallel corpus")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--vocab-size", type=int, default=32)
    p.add_argument("--name", default="train")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train stage 1 (CTC) or stage 2 (bigram matching + latency)")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--config", help="INI file with [model] and [train] sections")
    p.add_argument("--init", help="checkpoint to continue from (stage 2)")
    p.add_argument("--log", help="training log file")
    _add_config_flags(p, MODEL_KEYS, "model")
    _add_config_flags(p, TRAIN_KEYS, "train")

    p = sub.add_parser("translate", help="simulate streaming translation of a source file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True, help="hypothesis file")
    p.add_argument("--traces", help="READ/WRITE trace file")
    p.add_argument("--k", type=int, help="chunk wait-k at inference (default: the checkpoint's)")
    p.add_argument("--mode", choices=MODES, default="literal")

    p = sub.add_parser("evaluate", help="BLEU, latency and link-based analyses")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--traces")
    p.add_argument("--links", help="hypothesis-to-source links, for hallucination rate")
    p.add_argument("--gold-links", help="reference-to-source links, for difficulty buckets")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--csv")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("oracle", help="lattice-vs-enumeration suite")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    return parser


def _require(path: Optional[str]) -> None:
    if path is not None and not Path(path).is_file():
        raise FileNotFoundError(path)


# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    corpus = synth_generate(args.task, args.n, args.min_len, args.max_len, args.vocab_size, args.seed)
    paths = save_corpus(corpus, args.out, args.name)
    print(f"wrote {len(corpus)} pairs: " + " ".join(str(p) for p in paths.values()))
    return 0


def _sections(args) -> tuple[dict, dict]:
    model_kv, train_kv = {}, {}
    if args.config:
        _require(args.config)
        cfg = read_config(args.config)
        model_kv.update(cfg.get("model", {}))
        train_kv.update(cfg.get("train", {}))
    for key, val in vars(args).items():
        if val is None or "." not in key:
            continue
        section, name = key.split(".", 1)
        (model_kv if section == "model" else train_kv)[name] = val
    if "k" in model_kv:
        train_kv["k"] = model_kv["k"]
    return model_kv, train_kv


def cmd_train(args) -> int:
    for path in (args.src, args.tgt, args.init):
        _require(path)
    model_kv, train_kv = _sections(args)
    corpus = load_corpus(args.src, args.tgt)
    if args.init:
        model, vocab, saved = load_checkpoint(args.init)
        if "k" in model_kv:
            model.cfg.k = int(model_kv["k"])
        train_kv.setdefault("k", model.cfg.k)
    else:
        vocab = Vocab.build(corpus.src + corpus.tgt)
        try:
            cfg = ModelConfig.from_dict({**model_kv, "vocab_size": len(vocab)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model config: {exc}") from None
        train_kv.setdefault("k", cfg.k)
        torch.manual_seed(int(train_kv.get("seed", 1)))
        model = NASTModel(cfg)
    try:
        tcfg = TrainConfig.from_dict(train_kv)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from None
    pairs, dropped = filter_feasible(corpus.encode(vocab), model.lam)
    print(f"training on {len(pairs)} pairs ({dropped} infeasible dropped), stage {tcfg.stage}, {tcfg.steps} steps")
    log = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        history = Trainer(model, tcfg, log).train(pairs)
    finally:
        if log:
            log.close()
    save_checkpoint(args.out, model, vocab, extra={"train": tcfg.to_dict()})
    print(f"final loss {history[-1]['loss']:.4f}; checkpoint {args.out}")
    return 0


def cmd_translate(args) -> int:
    _require(args.checkpoint)
    _require(args.src)
    model, vocab, _ = load_checkpoint(args.checkpoint)
    if vocab is None:
        raise CheckpointError("checkpoint has no vocabulary")
    model.eval()
    k = model.cfg.k if args.k is None else args.k
    hyps, traces = [], []
    for sent in read_lines(args.src):
        if not sent:
            hyps.append([])
            traces.append(None)
            continue
        toks, trace = stream_translate(ModelChunkDecoder(model, k), vocab.encode(sent), k=k, mode=args.mode)
        hyps.append(vocab.decode(toks))
        traces.append(trace.map_tokens(lambda t: vocab.itos[t]))
    write_lines(args.out, hyps)
    if args.traces:
        write_traces(args.traces, [t for t in traces if t is not None])
    print(f"translated {len(hyps)} sentences with k={k}, mode={args.mode}")
    return 0


def cmd_evaluate(args) -> int:
    for path in (args.hyp, args.ref, args.traces, args.links, args.gold_links):
        _require(path)
    hyps, refs = read_lines(args.hyp), read_lines(args.ref)
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")
    report: dict = {"sentences": len(hyps), "BLEU": corpus_bleu(hyps, refs)}
    if args.traces:
        traces = [t for t in read_traces(args.traces)]
        vals: dict[str, list[float]] = {"AL": [], "AP": [], "CW": [], "DAL": []}
        unterminated = 0
        for tr in traces:
            if not tr.delays:
                continue
            rec = PolicyRecord.from_trace(tr)
            unterminated += rec.delays[-1] < rec.src_len
            for key, v in latency_metrics(rec, strict=False).items():
                vals[key].append(v)
        for key, v in vals.items():
            report[key] = float(np.mean(v)) if v else float("nan")
        report["unterminated_traces"] = unterminated
    if args.links:
        links = read_links(args.links)
        rates = [hallucination_rate(len(h), ls) for h, ls in zip(hyps, links)]
        report["hallucination_rate"] = float(np.mean(rates))
    if args.gold_links:
        buckets = partition_by_difficulty(read_links(args.gold_links))
        for name, idx in buckets.items():
            if idx:
                report[f"BLEU_{name}"] = corpus_bleu([hyps[i] for i in idx], [refs[i] for i in idx])
    text = format_report(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(report.keys())
            w.writerow(report.values())
    return 0


def cmd_gradcheck(args) -> int:
    res = gradient_suite(args.n, args.seed, args.tol)
    print(res.summary())
    for line in res.failures:
        print("  " + line)
    return 0 if res.passed else 1


def cmd_oracle(args) -> int:
    res = lattice_oracle_suite(args.n, args.seed, args.tol)
    print(res.summary())
    for line in res.failures:
        print("  " + line)
    return 0 if res.passed else 1


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "oracle": cmd_oracle,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc.args[0]}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())
