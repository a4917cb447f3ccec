"""Operator command line: synthetic data generation, index building,
querying, evaluation, and serving.

Exit codes: 0 success, 2 usage error, 3 data error (bad files or inputs),
4 internal error. Output files are written atomically (write-then-rename).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .blobio import BlobFormatError
from .canvas import (
    Annotation,
    CanvasError,
    annotation_from_obj,
    atomic_write_text,
    canvas_from_obj,
    load_manifest,
    save_manifest,
)
from .encoder import init_weights, load_weights, save_weights
from .features import TableError, load_embedding_table, synthetic_table, save_embedding_table
from .index import (
    IndexConfig,
    IndexError_,
    auto_nlist,
    build_index,
    deserialize,
    exact_search,
    load_vectors,
    save_vectors,
    search,
    serialize,
)
from .metrics import EvalConfig, MetricsError, evaluate_run
from .pipeline import EncoderSetup, corpus_embeddings, embed_canvas, embed_source
from .tensor import TensorConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

DATA_ERRORS = (
    CanvasError,
    TableError,
    BlobFormatError,
    IndexError_,
    MetricsError,
    FileNotFoundError,
    json.JSONDecodeError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compsearch",
        description="Compositional spatial image retrieval engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synthetic", help="generate a random annotated corpus")
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--images", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    build = sub.add_parser("build-index", help="embed a corpus and build the index")
    build.add_argument("--manifest", required=True)
    build.add_argument("--table", required=True, help="embedding table; synthesized here if missing")
    build.add_argument("--weights", default=None, help="encoder weights (ft mode); created if missing")
    build.add_argument("--mode", choices=("mirror", "external"), default="mirror")
    build.add_argument("--embeddings", default=None, help="vectors file for external mode")
    build.add_argument("--encoder", choices=("bypass", "ft"), default="bypass")
    build.add_argument("--out", required=True)
    build.add_argument("--exact-sidecar", action="store_true",
                       help="also write raw embeddings next to the index for exact retrieval")
    build.add_argument("--dim", type=int, default=256, help="class feature dimension")
    build.add_argument("--dprime", type=int, default=128, help="reduced search dimension")
    build.add_argument("--nlist", type=int, default=None, help="coarse cells (default: auto)")
    build.add_argument("--m", type=int, default=16, help="PQ code bytes")
    build.add_argument("--seed", type=int, default=0)

    query = sub.add_parser("query", help="rank the corpus for one canvas")
    query.add_argument("--index", required=True)
    query.add_argument("--canvas", required=True, help="canvas JSON file (same shape as /query body)")
    query.add_argument("--table", required=True)
    query.add_argument("--weights", default=None)
    query.add_argument("--encoder", choices=("bypass", "ft"), default="bypass")
    query.add_argument("--k", type=int, default=20)
    query.add_argument("--nprobe", type=int, default=None)
    query.add_argument("--exact", action="store_true", help="use the exact sidecar instead of PQ")

    ev = sub.add_parser("eval", help="run the retrieval evaluation protocol")
    ev.add_argument("--index", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--queries", required=True, help="JSONL of query annotations")
    ev.add_argument("--table", required=True)
    ev.add_argument("--weights", default=None)
    ev.add_argument("--encoder", choices=("bypass", "ft"), default="bypass")
    ev.add_argument("--tau", type=float, default=0.5)
    ev.add_argument("--cutoff", type=int, default=200)
    ev.add_argument("--p-at", type=int, default=20)
    ev.add_argument("--nprobe", type=int, default=None)
    ev.add_argument("--exact", action="store_true")
    ev.add_argument("--out", default=None, help="write the JSON report here")

    serve = sub.add_parser("serve", help="start the HTTP search service")
    serve.add_argument("--config", required=True, help="key = value service config file")

    return parser


def _encoder_setup(mode: str, weights_path, dim: int, seed: int, create_missing: bool):
    if mode == "bypass":
        return EncoderSetup("bypass")
    if weights_path is None:
        raise CanvasError(["--weights is required with --encoder ft"])
    if not os.path.exists(weights_path):
        if not create_missing:
            raise FileNotFoundError(weights_path)
        weights = init_weights(seed=seed, in_channels=dim)
        save_weights(weights, weights_path)
    else:
        weights = load_weights(weights_path)
    return EncoderSetup("ft", weights)


def _load_or_synthesize_table(path, manifest, dim: int, seed: int):
    if os.path.exists(path):
        return load_embedding_table(path)
    table = synthetic_table(manifest.class_vocabulary(), dim=dim, seed=seed)
    save_embedding_table(table, path)
    return table


def cmd_gen_synthetic(args) -> int:
    from .pipeline import generate_synthetic_manifest

    manifest = generate_synthetic_manifest(args.classes, args.images, args.seed)
    save_manifest(manifest, args.out)
    print(f"wrote {len(manifest)} records to {args.out}")
    return EXIT_OK


def cmd_build_index(args) -> int:
    manifest = load_manifest(args.manifest)
    table = _load_or_synthesize_table(args.table, manifest, args.dim, args.seed)
    if args.mode == "external":
        if not args.embeddings:
            raise CanvasError(["--embeddings is required with --mode external"])
        ids, matrix = load_vectors(args.embeddings)
        known = {r.image_id for r in manifest}
        unknown = [i for i in ids if i not in known]
        if unknown:
            raise CanvasError([f"embeddings reference unknown image ids: {unknown[:5]}"])
    else:
        setup = _encoder_setup(args.encoder, args.weights, table.dim, args.seed, create_missing=True)
        ids, matrix = corpus_embeddings(manifest, table, setup, TensorConfig(channels=table.dim))
    nlist = args.nlist if args.nlist is not None else auto_nlist(len(ids))
    config = IndexConfig(dim_reduced=args.dprime, nlist=nlist, m=args.m, seed=args.seed)
    index = build_index(list(zip(ids, matrix)), config)
    serialize(index, args.out)
    print(f"indexed {index.size} embeddings ({matrix.shape[1]} dims) into {args.out}")
    if args.exact_sidecar:
        sidecar = args.out + ".vecs"
        save_vectors(ids, matrix, sidecar)
        print(f"wrote exact-search sidecar {sidecar}")
    return EXIT_OK


def _rank_embedding(args, embedding):
    if args.exact:
        sidecar = args.index + ".vecs"
        ids, matrix = load_vectors(sidecar)
        return exact_search((ids, matrix), embedding, args.k)
    index = deserialize(args.index)
    nprobe = args.nprobe if args.nprobe is not None else index.nlist
    return search(index, embedding, args.k, min(nprobe, index.nlist))


def cmd_query(args) -> int:
    with open(args.canvas, "r", encoding="utf-8") as fh:
        canvas = canvas_from_obj(json.load(fh))
    table = load_embedding_table(args.table)
    setup = _encoder_setup(args.encoder, args.weights, table.dim, 0, create_missing=False)
    embedding = embed_canvas(canvas, table, setup, TensorConfig(channels=table.dim))
    result = _rank_embedding(args, embedding)
    print(f"{'rank':>4}  {'image_id':<24} {'distance':>12}")
    for rank, (image_id, dist) in enumerate(result, start=1):
        print(f"{rank:>4}  {image_id:<24} {dist:>12.6f}")
    return EXIT_OK


def load_query_annotations(path) -> list[Annotation]:
    queries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                queries.append(annotation_from_obj(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise CanvasError([f"line {lineno}: invalid JSON ({exc.msg})"]) from None
            except CanvasError as exc:
                raise CanvasError([f"line {lineno}: {p}" for p in exc.problems]) from None
    if not queries:
        raise CanvasError(["query file contains no records"])
    return queries


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    queries = load_query_annotations(args.queries)
    table = load_embedding_table(args.table)
    setup = _encoder_setup(args.encoder, args.weights, table.dim, 0, create_missing=False)
    tensor_config = TensorConfig(channels=table.dim)

    config = EvalConfig(tau=args.tau, cutoff=args.cutoff, p_at=args.p_at)
    if args.exact:
        ids, matrix = load_vectors(args.index + ".vecs")
        ranker = lambda e: exact_search((ids, matrix), e, config.cutoff)
    else:
        index = deserialize(args.index)
        nprobe = args.nprobe if args.nprobe is not None else index.nlist
        nprobe = min(nprobe, index.nlist)
        ranker = lambda e: search(index, e, config.cutoff, nprobe)

    rankings = {}
    for query in queries:
        embedding = embed_source(query, table, setup, tensor_config)
        rankings[query.image_id] = ranker(embedding).ids()
    report = evaluate_run(queries, manifest, rankings, config)
    print(report.to_table())
    if args.out:
        atomic_write_text(args.out, report.to_json() + "\n")
        print(f"wrote report to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app, load_service_config

    config = load_service_config(args.config)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return EXIT_OK


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "build-index": cmd_build_index,
    "query": cmd_query,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
