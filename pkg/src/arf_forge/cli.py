"""Command line interface.

Subcommands cover the whole pipeline:

    arf-forge generate  build a benchmark directory from a config
    arf-forge render    rasterize question images into the benchmark
    arf-forge eval      run a model or reference baseline over it
    arf-forge score     score a records file and write a report
    arf-forge report    merge score reports into a markdown table
    arf-forge verify    re-check file hashes and every stored answer

Exit codes: 0 success, 1 usage or configuration problems, 2 integrity
failures (corrupt files, answers that no longer re-derive).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .clients import read_records, write_records
from .dataset import Benchmark
from .errors import ConfigError, HarnessError, IntegrityError, PairingError, SerializationError
from .forge import ForgeConfig, generate_benchmark
from .harness import RunConfig, run_evaluation
from .metrics import (
    ScoreReport,
    format_markdown,
    format_score_table,
    model_expert_oracle,
    score,
)
from .plotting import render_question_images
from .questions import TIER_OF
from .verify import check_question

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INTEGRITY = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this tool reserves 2 for
    # integrity failures.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="arf-forge", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[], help="build a benchmark directory")
    p.add_argument("--out", required=True, help="output benchmark directory")
    p.add_argument("--config", help="JSON config file; omitted fields use defaults")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--total", type=int, help="override total question count")

    p = sub.add_parser("render", help="rasterize question images")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--width", type=int, default=1200)
    p.add_argument("--height", type=int, default=400)
    p.add_argument("--force", action="store_true", help="re-render existing images")

    p = sub.add_parser("eval", help="answer every question with one model")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--model", required=True, help="model name or baseline:<name>")
    p.add_argument("--mode", choices=("vision", "text"), default="vision")
    p.add_argument("--out", required=True, help="records JSONL path")
    p.add_argument("--endpoint", default="", help="chat completions URL for model runs")
    p.add_argument("--api-key-env", default="ARF_FORGE_API_KEY")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.05)
    p.add_argument("--max-tokens", type=int, default=2000)
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--rpm", type=float, default=60.0)
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--budget-tokens", type=int, default=16000)
    p.add_argument("--no-resume", action="store_true", help="discard any existing records")

    p = sub.add_parser("score", help="score a records file")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", help="write the full report as JSON")
    p.add_argument("--seeds", type=int, default=10, help="invalid-answer reassignment passes")
    p.add_argument("--batches", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=750)
    p.add_argument("--bootstrap-seed", type=int, default=0)
    p.add_argument("--no-ci", action="store_true", help="skip bootstrap intervals")

    p = sub.add_parser("report", help="combine score reports into markdown")
    p.add_argument("--scores", nargs="+", required=True, help="score JSON files")
    p.add_argument("--out", help="markdown output path (stdout otherwise)")

    p = sub.add_parser("merge-oracle", help="best-of-two ensemble of two record files")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--records", nargs=2, required=True, metavar=("A", "B"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="check hashes and re-derive every answer")
    p.add_argument("--benchmark", required=True)

    return parser


def _cmd_generate(args) -> int:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
    config = ForgeConfig.from_dict(raw)
    if args.seed is not None:
        config.seed = args.seed
    if args.total is not None:
        config.total_questions = args.total
    benchmark = generate_benchmark(config, args.out)
    counts = benchmark.manifest["counts"]
    print(
        f"wrote {counts['questions']} questions over {counts['series']} series "
        f"({counts['groups']} groups, {counts['events']} events) to {benchmark.root}"
    )
    return EXIT_OK


def _cmd_render(args) -> int:
    benchmark = Benchmark.load(args.benchmark)
    images_dir = benchmark.images_dir()
    os.makedirs(images_dir, exist_ok=True)
    rendered = skipped = 0
    for q in benchmark.questions():
        n = 3 if TIER_OF[q.category] == 3 else 1
        paths = benchmark.image_paths(q.question_id, n)
        if not args.force and all(os.path.isfile(p) for p in paths):
            skipped += 1
            continue
        series_list = [benchmark.series(sid) for sid in q.series_ids]
        blobs = render_question_images(
            q.category, series_list, width_px=args.width, height_px=args.height
        )
        for path, blob in zip(paths, blobs):
            with open(path, "wb") as fh:
                fh.write(blob)
        rendered += 1
    print(f"rendered {rendered} questions ({skipped} already present) into {images_dir}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    benchmark = Benchmark.load(args.benchmark)
    run = RunConfig(
        model=args.model,
        mode=args.mode,
        seed=args.seed,
        endpoint=args.endpoint,
        api_key_env=args.api_key_env,
        temperature=args.temperature,
        max_tokens=args.max_tokens,
        concurrency=args.concurrency,
        requests_per_minute=args.rpm,
        timeout_s=args.timeout,
        context_budget_tokens=args.budget_tokens,
    )
    records = run_evaluation(benchmark, run, args.out, resume=not args.no_resume)
    n_valid = sum(1 for r in records if r.valid)
    print(f"{len(records)} records ({n_valid} valid answers) -> {args.out}")
    return EXIT_OK


def _cmd_score(args) -> int:
    benchmark = Benchmark.load(args.benchmark)
    records = read_records(args.records)
    report = score(
        records,
        benchmark.questions(),
        n_passes=args.seeds,
        n_batches=args.batches,
        batch_size=args.batch_size,
        bootstrap_seed=args.bootstrap_seed,
        with_ci=not args.no_ci,
    )
    print(format_score_table([report]))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"report -> {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    reports = []
    for path in args.scores:
        with open(path) as fh:
            reports.append(ScoreReport.from_dict(json.load(fh)))
    text = format_markdown(reports)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"report -> {args.out}")
    else:
        print(text)
    return EXIT_OK


def _cmd_merge_oracle(args) -> int:
    benchmark = Benchmark.load(args.benchmark)
    records_a = read_records(args.records[0])
    records_b = read_records(args.records[1])
    merged = model_expert_oracle(records_a, records_b, benchmark.questions())
    write_records(args.out, merged)
    print(f"{len(merged)} merged records -> {args.out}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    benchmark = Benchmark.load(args.benchmark)
    benchmark.verify_files()
    series_by_id = {sid: benchmark.series(sid) for sid in benchmark.series_ids()}
    records_by_id = {sid: benchmark.key(sid) for sid in benchmark.series_ids()}
    questions = benchmark.questions()
    for q in questions:
        check_question(q, series_by_id, records_by_id)
    print(f"{len(questions)} questions verified against {len(series_by_id)} series")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "score": _cmd_score,
    "report": _cmd_report,
    "merge-oracle": _cmd_merge_oracle,
    "verify": _cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --version and --help exit 0; usage errors exit 1 via _Parser.
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (ConfigError, PairingError, SerializationError, HarnessError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
