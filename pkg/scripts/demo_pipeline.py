#!/usr/bin/env python3
"""End-to-end walkthrough on a synthetic desk-scale corpus.

Generates an annotated corpus, builds the compressed index with an exact
sidecar, runs one mirror query, evaluates the retrieval protocol over a
query subset, and writes a ready-to-use service config.

Usage:
    python scripts/demo_pipeline.py [--workdir demo_run] [--images 150]
"""

import argparse
import json
import sys
from pathlib import Path

from compsearch.cli import main as cli


def run(*args):
    code = cli([str(a) for a in args])
    if code != 0:
        raise SystemExit(f"command {args[0]} failed with exit code {code}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_run")
    parser.add_argument("--images", type=int, default=150)
    parser.add_argument("--classes", type=int, default=8)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args(argv)

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    manifest = work / "manifest.jsonl"
    table = work / "table.json"
    index = work / "index.cspq"

    print(f"== generating {args.images} annotated images")
    run("gen-synthetic", "--classes", args.classes, "--images", args.images,
        "--seed", args.seed, "--out", manifest)

    print("== building index (mirror mode, bypass encoder, exact sidecar)")
    run("build-index", "--manifest", manifest, "--table", table, "--out", index,
        "--exact-sidecar", "--dprime", 64, "--nlist", 16, "--m", 16,
        "--seed", args.seed)

    print("== querying with the third image's own layout (self-retrieval)")
    record = json.loads(manifest.read_text().splitlines()[2])
    canvas = work / "canvas.json"
    canvas.write_text(json.dumps({
        "width": 248, "height": 248, "objects": record["objects"],
    }, indent=2))
    run("query", "--index", index, "--canvas", canvas, "--table", table,
        "--k", 5, "--exact")

    print("== evaluating mAP / NDCG / P@20 over the first 20 images as queries")
    queries = work / "queries.jsonl"
    queries.write_text("\n".join(manifest.read_text().splitlines()[:20]) + "\n")
    run("eval", "--index", index, "--manifest", manifest, "--queries", queries,
        "--table", table, "--tau", 0.5, "--cutoff", 200,
        "--out", work / "report.json")

    service_conf = work / "service.conf"
    service_conf.write_text("\n".join([
        "host = 127.0.0.1",
        "port = 8080",
        f"index = {index}",
        f"table = {table}",
        f"manifest = {manifest}",
        "default_k = 20",
        "encoder_mode = bypass",
        "retrieval_mode = exact",
    ]) + "\n")
    print(f"\nservice config written to {service_conf}; start it with:")
    print(f"  compsearch serve --config {service_conf}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
