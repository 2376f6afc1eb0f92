"""Command-line entry point.

Every command reads a JSON run config, applies flag overrides, writes the
resolved config to ``--out`` and then its own artifacts.  Rerunning a command
with ``--config OUT/resolved_config.json`` and the same input files
reproduces every artifact byte for byte.

Errors are reported as one ``ERROR:<CODE>:<message>`` line on stderr; exit
status is 1 for invalid input and 2 for failures while running.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import SCOPES, ConfigError, RunConfig
from .cv import DisjointnessError, cross_validate
from .datagen.examples import OBJECTIVES, PretrainData, encode_task, read_task_records, write_jsonl
from .datagen.markup import read_corpus, write_corpus
from .datagen.synthetic import CTExample
from .gradcheck import TOY_CONFIG, grad_check
from .model import CheckpointError, init_model, load_checkpoint, save_checkpoint
from .pipeline import build_workspace, run_alignment_experiment
from .tokenizer import Vocab, VocabError, build_vocab
from .train import evaluate, pretrain

COMMANDS = ("build-vocab", "gen-data", "pretrain", "finetune", "evaluate", "gradcheck", "experiment")
RESOLVED = "resolved_config.json"


class CLIError(Exception):
    def __init__(self, code: str, message: str, status: int = 1):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("USAGE", message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config")
    common.add_argument("--out", default="out", help="artifact directory")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--scope", choices=SCOPES, help="override finetune.scope")
    common.add_argument("--objectives", help="override pretrain.objectives (comma separated)")
    common.add_argument("--task", choices=("ct", "ad"), help="override experiment.task")

    p = sub.add_parser("build-vocab", parents=[common], help="train the subword vocabulary")
    p.add_argument("--corpus", help="markup corpus; defaults to the synthetic corpus of the config")

    sub.add_parser("gen-data", parents=[common], help="write the synthetic corpus and task datasets")

    p = sub.add_parser("pretrain", parents=[common], help="multitask pretraining")
    p.add_argument("--corpus", help="markup corpus; defaults to the synthetic corpus of the config")
    p.add_argument("--vocab", help="vocabulary file; built from the corpus when omitted")

    p = sub.add_parser("finetune", parents=[common], help="cross-validated finetuning")
    p.add_argument("--checkpoint", help="pretrained model; a fresh model when omitted")
    p.add_argument("--vocab", help="vocabulary file; built from the synthetic corpus when omitted")
    p.add_argument("--train", help="task records (jsonl); defaults to the synthetic set")
    p.add_argument("--test", help="fixed CT test records (jsonl); defaults to the synthetic test set")
    p.add_argument("--train-size", type=int, help="CT training sample size per fold")

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on task records")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--test", required=True)

    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the model gradients on a tiny fixed architecture")
    sub.add_parser("experiment", parents=[common], help="objective-alignment comparison")
    return parser


# ---------------------------------------------------------------- config handling

def resolve_config(args) -> RunConfig:
    path = Path(args.config)
    if not path.is_file():
        raise CLIError("CONFIG_NOT_FOUND", f"{path} does not exist")
    run = RunConfig.load(path)
    if args.seed is not None:
        run.master_seed = args.seed
    if args.scope is not None:
        run.finetune = replace(run.finetune, scope=args.scope)
    if args.objectives is not None:
        objs = [o.strip().upper() for o in args.objectives.split(",") if o.strip()]
        unknown = sorted(set(objs) - set(OBJECTIVES))
        if not objs or unknown:
            raise ConfigError(f"bad --objectives {args.objectives!r}")
        run.pretrain = replace(run.pretrain, objectives=objs)
    if args.task is not None:
        run.experiment.task = args.task
    run.validate()
    return run


def _input(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise CLIError("INPUT_NOT_FOUND", f"{p} does not exist")
    return p


def _write(out: Path, name: str, text: str) -> Path:
    target = out / name
    target.write_bytes(text.encode("utf-8"))
    return target


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------- commands

def _documents(args, run: RunConfig):
    corpus = _input(getattr(args, "corpus", None))
    if corpus is not None:
        return read_corpus(corpus), None
    ws = build_workspace(run)
    return ws.documents, ws


def _vocab(args, run: RunConfig, documents=None) -> Vocab:
    path = _input(getattr(args, "vocab", None))
    if path is not None:
        return Vocab.load(path)
    if documents is None:
        documents = build_workspace(run).documents
    tok = run.tokenizer
    return build_vocab([d.plain for d in documents], tok.vocab_size, tok.max_piece_len, tok.min_count)


def cmd_build_vocab(args, run: RunConfig, out: Path) -> str:
    docs, _ = _documents(args, run)
    vocab = _vocab(argparse.Namespace(), run, docs)
    vocab.save(out / "vocab.txt")
    return f"vocab size {len(vocab)}"


def cmd_gen_data(args, run: RunConfig, out: Path) -> str:
    ws = build_workspace(run)
    write_corpus(out / "corpus.txt", ws.corpus.documents)
    _write(out, "lexicon.json", ws.corpus.lexicon.to_json())
    write_jsonl(out / "ct_pool.jsonl", ws.ct_pool)
    write_jsonl(out / "ct_test.jsonl", ws.ct_test)
    write_jsonl(out / "ad.jsonl", ws.ad_set)
    ws.vocab.save(out / "vocab.txt")
    return f"{len(ws.documents)} documents, {len(ws.ct_pool)}+{len(ws.ct_test)} CT, {len(ws.ad_set)} AD examples"


def cmd_pretrain(args, run: RunConfig, out: Path) -> str:
    docs, _ = _documents(args, run)
    vocab = _vocab(args, run, docs)
    vocab.save(out / "vocab.txt")
    data = PretrainData(docs, vocab, run.model.max_seq_len, run.master_seed, run.tokenizer.alpha,
                        run.experiment.mask_rate, run.experiment.mask_exponent)
    model = init_model(replace(run.model, vocab_size=len(vocab)), run.master_seed)
    log_path = out / "loss_log.tsv"
    log_path.write_bytes(b"")
    result = pretrain(model, data, run.pretrain, log_path)
    (out / "model.ckpt").write_bytes(save_checkpoint(model))
    return f"{result.steps} steps, {result.examples_seen} examples"


def _task_sets(args, run: RunConfig):
    task = run.experiment.task
    train_path, test_path = _input(args.train), _input(args.test)
    ws = None
    if train_path is None or (task == "ct" and test_path is None):
        ws = build_workspace(run)
    train = read_task_records(train_path) if train_path else (ws.ct_pool if task == "ct" else ws.ad_set)
    test = None
    if task == "ct":
        test = read_task_records(test_path) if test_path else ws.ct_test
    elif test_path is not None:
        raise CLIError("USAGE", "--test is only used by the ct task; ad runs k-fold CV on --train")
    if task == "ct" and not all(isinstance(x, CTExample) for x in [*train, *test]):
        raise CLIError("BAD_INPUT", "ct task needs records with query/spans")
    if task == "ad" and any(isinstance(x, CTExample) for x in train):
        raise CLIError("BAD_INPUT", "ad task needs records with acronym/snippet/label")
    return train, test, ws


def cmd_finetune(args, run: RunConfig, out: Path) -> str:
    train, test, ws = _task_sets(args, run)
    vocab = ws.vocab if (ws is not None and args.vocab is None) else _vocab(args, run)
    ckpt = _input(args.checkpoint)
    model = load_checkpoint(ckpt.read_bytes()) if ckpt else init_model(replace(run.model, vocab_size=len(vocab)), run.master_seed)
    if model.cfg.vocab_size != len(vocab):
        raise CLIError("BAD_INPUT", f"checkpoint vocab size {model.cfg.vocab_size} != vocabulary {len(vocab)}")
    exp = run.experiment
    if exp.task == "ct":
        size = args.train_size if args.train_size is not None else len(train) * (exp.k_folds - 1) // exp.k_folds
        report = cross_validate(model, vocab, train, "ct", exp.k_folds, exp.seeds, run.finetune, "ct_disjoint",
                                test, size)
    else:
        report = cross_validate(model, vocab, train, "ad", exp.k_folds, exp.seeds, run.finetune, "standard",
                                train_size=args.train_size)
    text = report.to_json()
    _write(out, "cv_report.json", text)
    sys.stdout.write(text)
    m, s = report.accuracy
    return f"{len(report.runs)} runs, accuracy {m:.4f} ± {s:.4f}"


def cmd_evaluate(args, run: RunConfig, out: Path) -> str:
    model = load_checkpoint(_input(args.checkpoint).read_bytes())
    vocab = Vocab.load(_input(args.vocab))
    records = read_task_records(_input(args.test))
    task = "ct" if isinstance(records[0], CTExample) else "ad"
    metrics = evaluate(model, encode_task(records, task, vocab, model.cfg.max_seq_len), task)
    doc = {"task": task, **metrics.to_dict()}
    _write(out, "metrics.json", _dump(doc))
    return f"{task} accuracy {metrics.accuracy:.4f}, perplexity {metrics.perplexity:.4f}, n={metrics.n_examples}"


def cmd_gradcheck(args, run: RunConfig, out: Path) -> str:
    # Always the small double-precision architecture of TOY_CONFIG: per-coordinate
    # differences are too slow for real model sizes, and large output vocabularies
    # push most softmax gradients into the roundoff range.  Only the seed is taken
    # from the config.
    res = grad_check(TOY_CONFIG, seed=run.master_seed)
    verdict = "PASS" if res.passed else "FAIL"
    doc = {"max_rel_err": res.max_rel_err, "passed": res.passed, "heads": list(res.heads),
           "per_param": res.report.per_param}
    _write(out, "gradcheck.json", _dump(doc))
    print(f"max_rel_err={res.max_rel_err:.3e} {verdict}")
    if not res.passed:
        raise CLIError("GRADCHECK_FAILED", f"max relative error {res.max_rel_err:.3e} >= 1e-4", 2)
    return verdict


def cmd_experiment(args, run: RunConfig, out: Path) -> str:
    def progress(msg: str) -> None:
        print(msg, file=sys.stderr, flush=True)

    report = run_alignment_experiment(run, progress=progress)
    _write(out, "alignment.tsv", report.to_tsv())
    _write(out, "alignment.json", _dump(report.to_dict()))
    sys.stdout.write(report.to_tsv())
    return f"{len(report.grid)} arms x {len(run.experiment.sizes)} sizes"


HANDLERS = {
    "build-vocab": cmd_build_vocab, "gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck, "experiment": cmd_experiment,
}


def _fail(code: str, message: str, status: int) -> int:
    print(f"ERROR:{code}:{' '.join(str(message).split())}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        run = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out, RESOLVED, run.to_json())
        summary = HANDLERS[args.command](args, run, out)
    except CLIError as exc:
        return _fail(exc.code, str(exc), exc.status)
    except ConfigError as exc:
        return _fail("CONFIG_INVALID", str(exc), 1)
    except DisjointnessError as exc:
        return _fail("SPLIT_OVERLAP", str(exc), 1)
    except (VocabError, CheckpointError) as exc:
        return _fail("BAD_ARTIFACT", str(exc), 1)
    except FloatingPointError as exc:
        return _fail("NON_FINITE", str(exc), 2)
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        return _fail("RUNTIME", f"{type(exc).__name__}: {exc}", 2)
    print(f"{args.command}: {summary}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
