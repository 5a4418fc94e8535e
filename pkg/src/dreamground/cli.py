"""Command-line interface.

Three subcommands:

* ``run``  - detect events over a JSONL dataset, one prediction file per run.
* ``eval`` - score prediction files against gold, write report + figures.
* ``fsm``  - build one document's decoding automaton and inspect it.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import os
import sys
import tempfile
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

from . import __version__
from .automaton import build_grounder_fsm, enumerate_language
from .backends import (
    RandomLogitBackend,
    RemoteChatBackend,
    make_scripted_backend,
)
from .errors import ConfigError, DreamGroundError, IoFailureError, ShapeMismatchError
from .evaluation import (
    EvalReport,
    GoldInstance,
    aggregate_runs,
    load_dataset,
    make_report,
    render_csv,
    render_table,
    report_to_dict,
)
from .figures import save_report_figures
from .ontology import AtomizationMode, AtomizationPolicy, GroundedMention, load_ontology
from .pipeline import Backends, PipelineConfig, PromptStyle, run_document
from .vocabulary import EncoderMode, Vocabulary, load_vocabulary

_POLICY_FLAGS = {
    "single-word": AtomizationMode.SINGLE_WORD,
    "substring": AtomizationMode.SUBSTRING,
}


def _atomic_write(path: str, content: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoFailureError(f"cannot write {path}: {exc}") from None


def _load_backend_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoFailureError(f"cannot read backend config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"backend config is not valid JSON: {exc}") from None


def _build_vocab(config: dict, base_dir: str) -> Optional[Vocabulary]:
    section = config.get("vocab")
    if section is None:
        return None
    if not isinstance(section, dict) or "file" not in section:
        raise ConfigError('backend config "vocab" must be {"file": ..., "mode": ...}')
    mode = section.get("mode", EncoderMode.GREEDY_BPE_LONGEST_MATCH.value)
    try:
        mode = EncoderMode(mode)
    except ValueError:
        raise ConfigError(f"unknown vocabulary mode {mode!r}") from None
    return load_vocabulary(os.path.join(base_dir, section["file"]), mode=mode)


def _build_backend(section: Optional[dict], vocab: Optional[Vocabulary], base_dir: str):
    if section is None:
        return None
    kind = section.get("kind")
    if kind == "scripted":
        fixture = section.get("fixture")
        if fixture is None:
            raise ConfigError('scripted backend needs a "fixture" path')
        return make_scripted_backend(os.path.join(base_dir, fixture), vocab=vocab)
    if kind == "random":
        if vocab is None:
            raise ConfigError("random logit backend needs a vocabulary")
        return RandomLogitBackend(vocab_size=len(vocab), seed=int(section.get("seed", 0)))
    if kind == "remote_chat":
        if "base_url" not in section or "model" not in section:
            raise ConfigError('remote chat backend needs "base_url" and "model"')
        kwargs = {}
        for key in ("timeout", "max_attempts", "backoff_base", "auth_env", "max_concurrency"):
            if key in section:
                kwargs[key] = section[key]
        return RemoteChatBackend(section["base_url"], section["model"], **kwargs)
    raise ConfigError(f"unknown backend kind {kind!r}")


def _descriptor_dict(backend) -> Optional[dict]:
    if backend is None:
        return None
    d = backend.descriptor
    return {
        "kind": d.kind.value,
        "name": d.name,
        "supports_chat": d.supports_chat,
        "supports_logits": d.supports_logits,
        "max_context": d.max_context,
    }


def _doc_seed(run_seed: int, doc_id: str) -> int:
    return zlib.crc32(f"{run_seed}|{doc_id}".encode("utf-8")) + run_seed


def build_manifest(
    config: PipelineConfig,
    *,
    dataset: str,
    ontology: str,
    backend_config: str,
    backends: Backends,
    jobs: int,
    verbose_trace: bool,
    prediction_files: Sequence[str],
) -> dict:
    """Reproducibility record written next to the prediction files."""
    return {
        "tool": "dreamground",
        "version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": {
            "style": config.style.value,
            "policy": config.atomization.mode.value,
            "max_phrase_words": config.atomization.max_phrase_words,
            "judge": config.judge_enabled,
            "temperature": config.temperature,
            "top_p": config.top_p,
            "runs": config.runs,
            "seed": config.seed,
            "max_mentions": config.max_mentions,
            "max_new_tokens_dreamer": config.max_new_tokens_dreamer,
            "max_new_tokens_judge": config.max_new_tokens_judge,
            "ontology_definitions": config.ontology_definitions,
            "template_version": config.template_version,
        },
        "paths": {
            "dataset": dataset,
            "ontology": ontology,
            "backend_config": backend_config,
        },
        "backends": {
            "chat": _descriptor_dict(backends.chat),
            "logits": _descriptor_dict(backends.logits),
        },
        "jobs": jobs,
        "verbose_trace": verbose_trace,
        "seeds": [config.seed + i for i in range(config.runs)],
        "predictions": list(prediction_files),
    }


def _trace_dict(trace) -> dict:
    return {
        "dreamer": [[m.event_name, m.trigger] for m in trace.dreamer],
        "grounder": [[m.event_type, m.trigger] for m in trace.grounder],
        "judge": [
            {
                "event_type": v.mention.event_type,
                "trigger": v.mention.trigger,
                "accepted": v.accepted,
                "raw_reply": v.raw_reply,
            }
            for v in trace.judge
        ],
        "diagnostics": list(trace.diagnostics),
    }


def cmd_run(args: argparse.Namespace) -> int:
    instances, diagnostics = load_dataset(args.dataset)
    for diag in diagnostics:
        print(f"warning: {args.dataset}: {diag}", file=sys.stderr)
    ontology = load_ontology(args.ontology)

    backend_config = _load_backend_config(args.backend_config)
    base_dir = os.path.dirname(os.path.abspath(args.backend_config))
    vocab = _build_vocab(backend_config, base_dir)
    backends = Backends(
        chat=_build_backend(backend_config.get("chat"), vocab, base_dir),
        logits=_build_backend(backend_config.get("logits"), vocab, base_dir),
    )

    config = PipelineConfig(
        style=PromptStyle(args.style.upper()),
        atomization=AtomizationPolicy(
            mode=_POLICY_FLAGS[args.policy], max_phrase_words=args.max_phrase_words
        ),
        judge_enabled=args.judge == "on",
        temperature=args.temperature,
        top_p=args.top_p,
        runs=args.runs,
        seed=args.seed,
        max_mentions=args.max_mentions,
    )

    docs = [inst.to_document() for inst in instances]
    prediction_files = [f"predictions_run{i}.jsonl" for i in range(config.runs)]
    os.makedirs(args.out, exist_ok=True)

    for run_index in range(config.runs):
        run_seed = config.seed + run_index

        def detect(doc):
            return run_document(
                doc, ontology, backends, vocab, config, seed=_doc_seed(run_seed, doc.id)
            )

        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(detect, docs))
        else:
            results = [detect(doc) for doc in docs]

        lines = []
        for doc, result in zip(docs, results):
            row = {
                "id": doc.id,
                "mentions": [
                    {"event_type": m.event_type, "trigger": m.trigger}
                    for m in result.mentions
                ],
            }
            if args.verbose_trace:
                row["trace"] = _trace_dict(result.trace)
            lines.append(json.dumps(row, ensure_ascii=False))
        path = os.path.join(args.out, prediction_files[run_index])
        _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))
        total = sum(len(r.mentions) for r in results)
        print(f"run {run_index}: {len(docs)} documents, {total} mentions -> {path}")

    manifest = build_manifest(
        config,
        dataset=args.dataset,
        ontology=args.ontology,
        backend_config=args.backend_config,
        backends=backends,
        jobs=args.jobs,
        verbose_trace=args.verbose_trace,
        prediction_files=prediction_files,
    )
    manifest_path = os.path.join(args.out, "manifest.json")
    _atomic_write(manifest_path, json.dumps(manifest, indent=2) + "\n")
    print(f"manifest -> {manifest_path}")
    return 0


def _parse_named(values: Sequence[str], default_name: str) -> dict[str, list[str]]:
    named: dict[str, list[str]] = {}
    for value in values:
        if "=" in value:
            name, path = value.split("=", 1)
        else:
            name, path = default_name, value
        named.setdefault(name, []).append(path)
    return named


def load_predictions(path: str) -> dict[str, list[GroundedMention]]:
    """Read a prediction JSONL file into {doc id: mentions}."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailureError(f"cannot read prediction file: {exc}") from None
    preds: dict[str, list[GroundedMention]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IoFailureError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(row, dict) or not isinstance(row.get("id"), str):
            raise IoFailureError(f"{path}:{lineno}: missing id")
        mentions = []
        for m in row.get("mentions", []):
            if (
                not isinstance(m, dict)
                or not isinstance(m.get("event_type"), str)
                or not isinstance(m.get("trigger"), str)
            ):
                raise IoFailureError(f"{path}:{lineno}: malformed mention")
            mentions.append(GroundedMention(m["event_type"], m["trigger"]))
        preds[row["id"]] = mentions
    return preds


def cmd_eval(args: argparse.Namespace) -> int:
    gold_paths = _parse_named(args.gold, "dataset")
    pred_paths = _parse_named(args.pred, "dataset")
    if set(gold_paths) != set(pred_paths):
        raise ShapeMismatchError(
            f"gold datasets {sorted(gold_paths)} do not match prediction datasets "
            f"{sorted(pred_paths)}"
        )
    for name, paths in gold_paths.items():
        if len(paths) != 1:
            raise ConfigError(f"dataset {name!r} has {len(paths)} gold files; expected 1")

    golds: dict[str, list[GoldInstance]] = {}
    for name, paths in gold_paths.items():
        instances, diagnostics = load_dataset(paths[0])
        for diag in diagnostics:
            print(f"warning: {paths[0]}: {diag}", file=sys.stderr)
        golds[name] = instances

    run_counts = {len(paths) for paths in pred_paths.values()}
    if len(run_counts) != 1:
        raise ShapeMismatchError(
            "all datasets must have the same number of prediction files "
            f"(got {sorted(run_counts)})"
        )
    runs = run_counts.pop()

    per_run_reports: list[EvalReport] = []
    for run_index in range(runs):
        preds = {name: load_predictions(paths[run_index]) for name, paths in pred_paths.items()}
        per_run_reports.append(make_report(preds, golds))
    report = aggregate_runs(per_run_reports)

    table = render_table(report)
    print(table)

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        payload = {
            "aggregate": report_to_dict(report),
            "per_run": [report_to_dict(r) for r in per_run_reports],
        }
        json_path = os.path.join(args.out, "report.json")
        _atomic_write(json_path, json.dumps(payload, indent=2) + "\n")
        _atomic_write(os.path.join(args.out, "report.txt"), table + "\n")
        _atomic_write(os.path.join(args.out, "report.csv"), render_csv(report))
        written = [json_path, os.path.join(args.out, "report.txt"), os.path.join(args.out, "report.csv")]
        if args.figures:
            written.extend(save_report_figures(report, args.out))
        for path in written:
            print(f"wrote {path}")
    return 0


def cmd_fsm(args: argparse.Namespace) -> int:
    from .ontology import Document

    ontology = load_ontology(args.ontology)
    vocab = load_vocabulary(args.vocab, mode=EncoderMode(args.vocab_mode))
    policy = AtomizationPolicy(
        mode=_POLICY_FLAGS[args.policy], max_phrase_words=args.max_phrase_words
    )
    doc = Document(id="cli", text=args.sentence)

    started = time.perf_counter()
    automaton = build_grounder_fsm(
        ontology, doc, policy, vocab, max_mentions=args.max_mentions
    )
    build_seconds = time.perf_counter() - started

    print(f"states: {automaton.n_states}")
    print(f"transitions: {automaton.n_transitions}")
    tags = automaton.tag_counts()
    print("tags: " + " ".join(f"{k}={v}" for k, v in sorted(tags.items())))
    print(f"candidates: {len(automaton.candidates)}")
    print(f"max_mentions: {automaton.max_mentions}")
    print(f"build_seconds: {build_seconds:.4f}")

    if args.dump:
        for state, edges in enumerate(automaton.transitions):
            tag = automaton.tags[state].value
            marker = " (accept)" if state == automaton.accept else ""
            print(f"state {state} [{tag}]{marker}")
            for token_id, target in sorted(edges.items()):
                print(f"  --{vocab.token_text(token_id)!r}({token_id})--> {target}")

    if args.enumerate is not None:
        strings = sorted(enumerate_language(automaton, max_tokens=args.enumerate))
        print(f"language (<= {args.enumerate} tokens): {len(strings)} strings")
        for s in strings:
            print(s)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dreamground",
        description="Zero-shot event detection with constrained grounding.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="detect events over a dataset")
    run.add_argument("--dataset", required=True, help="input JSONL file")
    run.add_argument("--ontology", required=True, help="ontology JSON file")
    run.add_argument("--style", choices=["dicore", "md", "ms"], default="dicore")
    run.add_argument("--policy", choices=list(_POLICY_FLAGS), default="single-word")
    run.add_argument("--max-phrase-words", type=int, default=5)
    run.add_argument("--judge", choices=["on", "off"], default="on")
    run.add_argument("--runs", type=int, default=3)
    run.add_argument("--temperature", type=float, default=0.4)
    run.add_argument("--top-p", type=float, default=0.9)
    run.add_argument("--max-mentions", type=int, default=20)
    run.add_argument("--backend-config", required=True, help="backend description JSON")
    run.add_argument("--jobs", type=int, default=1, help="concurrent documents")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--verbose-trace", action="store_true")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="score predictions against gold")
    ev.add_argument("--gold", action="append", required=True, metavar="[NAME=]PATH")
    ev.add_argument(
        "--pred", action="append", required=True, metavar="[NAME=]PATH",
        help="repeat per run; NAME groups runs of the same dataset",
    )
    ev.add_argument("--out", default=None, help="directory for report files")
    ev.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    ev.set_defaults(func=cmd_eval)

    fsm = sub.add_parser("fsm", help="inspect one document's automaton")
    fsm.add_argument("--sentence", required=True)
    fsm.add_argument("--ontology", required=True)
    fsm.add_argument("--vocab", required=True, help='vocabulary JSON ({"tokens": [...]})')
    fsm.add_argument(
        "--vocab-mode",
        choices=[m.value for m in EncoderMode],
        default=EncoderMode.GREEDY_BPE_LONGEST_MATCH.value,
    )
    fsm.add_argument("--policy", choices=list(_POLICY_FLAGS), default="single-word")
    fsm.add_argument("--max-phrase-words", type=int, default=5)
    fsm.add_argument("--max-mentions", type=int, default=20)
    fsm.add_argument("--enumerate", type=int, default=None, metavar="MAX_TOKENS")
    fsm.add_argument("--dump", action="store_true")
    fsm.set_defaults(func=cmd_fsm)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DreamGroundError as exc:
        print(f"ERROR:{exc.code}: {exc.message}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"ERROR:CONFIG: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
