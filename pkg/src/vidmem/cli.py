"""Command line surface: index, query, summarize, stats, bench.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .agent import run_retrieval, summarize_window
from .config import EngineConfig, load_config
from .embedding import make_backend
from .errors import VidmemError
from .frames import StreamSpec, open_source
from .gateway import HttpBackend, ModelGateway, StubBackend
from .pipeline import MemoryPipeline
from .store import MemoryStore
from .synth import run_bench, spec_from_dict

ENDPOINT_ENV = "VIDMEM_GATEWAY_ENDPOINT"
API_KEY_ENV = "VIDMEM_GATEWAY_API_KEY"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this surface reserves 2 for
    # runtime failures, so remap usage problems to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="vidmem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_index = sub.add_parser("index", help="ingest a source into a store")
    p_index.add_argument("source",
                         help="video file, image directory, single image, "
                              "or synthetic spec (.json)")
    p_index.add_argument("--store", required=True, help="store directory")
    p_index.add_argument("--fps", type=float, default=None,
                         help="sampling rate (default 0.5)")
    p_index.add_argument("--config", default=None, help="config JSON file")
    p_index.add_argument("--epoch", type=float, default=None,
                         help="wall clock time of stream start (unix s)")

    p_query = sub.add_parser("query", help="ask a question against a store")
    p_query.add_argument("store")
    p_query.add_argument("question")
    p_query.add_argument("--turns", type=int, default=None,
                         help="agent turn budget")
    p_query.add_argument("--backend", choices=("stub", "http"),
                         default="stub")
    p_query.add_argument("--trace", default=None,
                         help="write the turn trace JSON here")

    p_sum = sub.add_parser("summarize", help="write summary documents")
    p_sum.add_argument("store")
    p_sum.add_argument("--from", dest="start", type=float, required=True)
    p_sum.add_argument("--to", dest="end", type=float, required=True)
    p_sum.add_argument("--granularity", type=float, required=True)
    p_sum.add_argument("--prompt", default="")
    p_sum.add_argument("--backend", choices=("stub", "http"),
                       default="stub")

    p_stats = sub.add_parser("stats", help="print store counters")
    p_stats.add_argument("store")

    p_bench = sub.add_parser("bench", help="synthetic benchmark")
    p_bench.add_argument("--spec", default=None,
                         help="synthetic spec JSON file")
    p_bench.add_argument("--preset", default="smoke",
                         help="smoke | hour | day | month")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--report", default=None,
                         help="write the full report JSON here")
    return parser


def _load_engine_config(path: Optional[str]) -> EngineConfig:
    if path is None:
        return EngineConfig()
    return load_config(path)


def _make_gateway(kind: str, config: EngineConfig) -> ModelGateway:
    if kind == "http":
        endpoint = os.environ.get(ENDPOINT_ENV, "")
        if not endpoint:
            raise VidmemError(
                f"http backend needs {ENDPOINT_ENV} set"
            )
        backend = HttpBackend(endpoint,
                              api_key=os.environ.get(API_KEY_ENV, ""))
    else:
        backend = StubBackend()
    return ModelGateway(backend, config.gateway)


def _cmd_index(args) -> int:
    config = _load_engine_config(args.config)
    if args.fps is not None:
        if args.fps <= 0:
            raise VidmemError("--fps must be positive")
        config.base_fps = args.fps
    source = args.source
    clip_source = None
    if isinstance(source, str) and source.endswith(".json"):
        with open(source) as fh:
            source = spec_from_dict(json.load(fh))
    elif os.path.isfile(source) and not source.lower().endswith(
        (".jpg", ".jpeg", ".png", ".bmp")
    ):
        clip_source = source
    pipeline = MemoryPipeline(
        config=config,
        directory=args.store,
        epoch=args.epoch,
        clip_source=clip_source,
    )
    stream = open_source(
        StreamSpec(source=source, base_fps=config.base_fps,
                   epoch=args.epoch)
    )
    stats = pipeline.run(stream)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def _cmd_query(args) -> int:
    store = MemoryStore.load(args.store)
    config = store.config
    if args.turns is not None:
        if args.turns < 1:
            raise VidmemError("--turns must be at least 1")
        config.agent.turn_budget = args.turns
    gateway = _make_gateway(args.backend, config)
    embedder = make_backend(config.embedding)
    answer = run_retrieval(args.question, store, gateway, embedder, config)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(answer.trace_json())
    print(json.dumps(
        {
            "response": answer.text,
            "sufficiency": answer.sufficiency,
            "best_ref": answer.best_ref,
            "turns": len(answer.turns),
        },
        indent=2, sort_keys=True,
    ))
    return 0


def _cmd_summarize(args) -> int:
    store = MemoryStore.load(args.store)
    config = store.config
    gateway = _make_gateway(args.backend, config)
    embedder = make_backend(config.embedding)
    docs = summarize_window(
        store, gateway, embedder,
        start_t=args.start, end_t=args.end,
        granularity_s=args.granularity, focus=args.prompt,
    )
    print(json.dumps(
        {
            "written": len(docs),
            "summaries": [
                {"start_t": d.start_t, "end_t": d.end_t, "text": d.text}
                for d in docs
            ],
        },
        indent=2, sort_keys=True,
    ))
    return 0


def _cmd_stats(args) -> int:
    store = MemoryStore.load(args.store)
    span = store.moment_span()
    print(json.dumps(
        {
            "frames_ingested": store.frames_ingested,
            "moments": len(store.moments),
            "events": len(store.events),
            "summaries": len(store.summaries),
            "dim": store.dim,
            "epoch": store.epoch,
            "span": None if span is None else list(span),
        },
        indent=2, sort_keys=True,
    ))
    return 0


def _cmd_bench(args) -> int:
    config = _load_engine_config(args.config)
    spec = None
    if args.spec:
        with open(args.spec) as fh:
            spec = spec_from_dict(json.load(fh))
    report = run_bench(
        preset=args.preset, seed=args.seed, config=config, spec=spec
    )
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    brief = {
        "kept_share": report["kept_share"],
        "boundary_recall": report["index"]["boundaries"]["recall"],
        "boundary_precision": report["index"]["boundaries"]["precision"],
        "moments": report["stats"]["moments"],
        "events": report["stats"]["events"],
    }
    if "object_queries" in report:
        brief["object_query_hits"] = (
            f"{report['object_queries']['hits']}"
            f"/{report['object_queries']['total']}"
        )
        brief["event_query_hits"] = (
            f"{report['event_queries']['hits']}"
            f"/{report['event_queries']['total']}"
        )
    print(json.dumps(brief, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "index": _cmd_index,
    "query": _cmd_query,
    "summarize": _cmd_summarize,
    "stats": _cmd_stats,
    "bench": _cmd_bench,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except VidmemError as exc:
        print(f"vidmem: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"vidmem: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
