"""Command-line front end.

Subcommands: synth, fuse, fit, eval, rank, bench.  A feature set is
addressed by a path prefix: ``<prefix>.urfb`` holds the binary matrix and
``<prefix>.meta.csv`` the metadata.  Every command writes a JSON manifest
echoing its arguments and seed next to its artifacts, so any output can
be regenerated byte-for-byte by re-running the manifest.

Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 internal
error.  Errors are one line on stderr: ``reidfuse: error: <kind>: <msg>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .amc import build_triplet_dataset, fit_weights_repeated
from .figures import save_report_figures
from .fusion import RefinedFeature, uffm_fuse_all
from .pipeline import (
    DEFAULT_MAX_RANK,
    EvalReport,
    RankingResult,
    baseline_weights,
    evaluate,
    rank_all,
)
from .store import (
    CombinationWeights,
    DataFormatError,
    FeatureSet,
    load_feature_set,
    load_weights,
    save_feature_set,
    save_weights,
)
from .synth import SynthConfig, generate

THREADS_ENV_VAR = "REIDFUSE_THREADS"


class UsageError(Exception):
    """Bad flag combination or malformed invocation."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_threads(value: int | None) -> int:
    if value is not None:
        if value < 1:
            raise UsageError(f"--threads must be >= 1, got {value}")
        return value
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        try:
            parsed = int(env)
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV_VAR} must be an integer: {env!r}") from exc
        if parsed < 1:
            raise UsageError(f"{THREADS_ENV_VAR} must be >= 1, got {parsed}")
        return parsed
    return os.cpu_count() or 1


def _fmt(value: float) -> str:
    return repr(float(value))


def _load_set(prefix: str, role_tag: str) -> FeatureSet:
    return load_feature_set(f"{prefix}.urfb", f"{prefix}.meta.csv", role_tag)


def _save_set(feature_set: FeatureSet, prefix: str) -> None:
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    save_feature_set(feature_set, f"{prefix}.urfb", f"{prefix}.meta.csv")


def _write_manifest(path, config: dict) -> None:
    payload = {"tool": "reidfuse", "version": __version__, **config}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_urfs(prefix: str, gallery: FeatureSet) -> list[RefinedFeature]:
    refined = _load_set(prefix, "gallery")
    if refined.item_ids != gallery.item_ids:
        raise DataFormatError(
            "refined feature set does not align with the gallery "
            "(item_id sequences differ)"
        )
    return [
        RefinedFeature(
            source_index=i,
            vector=refined.features[i].astype(np.float64),
            kind="URF",
            contributors=[],
        )
        for i in range(len(refined))
    ]


def _check_scoring_flags(args) -> None:
    """Flag coherence, checked before any file is touched."""
    if args.baseline and args.weights:
        raise UsageError("--baseline and --weights are mutually exclusive")
    if not args.baseline and not args.weights:
        raise UsageError("provide --weights FILE or --baseline")
    if not args.baseline and not args.urf:
        raise UsageError(
            "scoring with combination weights needs refined features: "
            "pass --urf PREFIX (from the fuse command) or use --baseline"
        )


def _write_rank_list(
    path,
    rankings: list[RankingResult],
    queries: FeatureSet,
    gallery: FeatureSet,
    top: int = 0,
) -> None:
    g_pids = gallery.person_ids
    g_cams = gallery.camera_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["query_item_id", "rank", "gallery_item_id", "score",
             "is_match", "is_excluded"]
        )
        for ranking in rankings:
            i = ranking.query_index
            q_pid = int(queries.person_ids[i])
            q_cam = int(queries.camera_ids[i])
            limit = ranking.order.size if top <= 0 else min(top, ranking.order.size)
            for rank_pos in range(limit):
                j = int(ranking.order[rank_pos])
                excluded = not bool(ranking.valid_mask[j])
                match = (
                    q_pid >= 0
                    and g_pids[j] == q_pid
                    and g_cams[j] != q_cam
                )
                writer.writerow(
                    [
                        queries.item_ids[i],
                        rank_pos + 1,
                        gallery.item_ids[j],
                        _fmt(ranking.scores[rank_pos]),
                        int(match),
                        int(excluded),
                    ]
                )


def _eval_lines(report: EvalReport) -> list[str]:
    lines = [f"{key}={value}" for key, value in report.config_echo.items()]
    lines.append(f"num_valid_queries={report.num_valid_queries}")
    lines.append(f"num_skipped_queries={len(report.skipped_queries)}")
    lines.append(f"map={_fmt(report.map)}")
    for k in (1, 5, 10, 20):
        if k <= report.cmc.size:
            lines.append(f"rank_{k}={_fmt(report.cmc[k - 1])}")
    return lines


def _cmd_synth(args) -> int:
    config = SynthConfig(
        num_identities=args.ids,
        cams=args.cams,
        images_per_id_per_cam=args.images_per,
        dim=args.dim,
        identity_spread=args.identity_spread,
        camera_bias_scale=args.camera_bias,
        noise_scale=args.noise,
        seed=args.seed,
    )
    try:
        train, queries, gallery = generate(config)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, feature_set in (
        ("train", train), ("queries", queries), ("gallery", gallery)
    ):
        _save_set(feature_set, str(out / name))
    _write_manifest(
        out / "run_config.json",
        {
            "command": "synth",
            "out": args.out,
            "seed": args.seed,
            "ids": args.ids,
            "cams": args.cams,
            "images_per": args.images_per,
            "dim": args.dim,
            "identity_spread": args.identity_spread,
            "camera_bias": args.camera_bias,
            "noise": args.noise,
        },
    )
    print(
        f"wrote train ({len(train)}), queries ({len(queries)}), "
        f"gallery ({len(gallery)}) under {args.out}"
    )
    return 0


def _cmd_fuse(args) -> int:
    threads = _resolve_threads(args.threads)
    gallery = _load_set(args.gallery, "gallery")
    refined = uffm_fuse_all(gallery, args.k, threads=threads)
    matrix = np.vstack([r.vector for r in refined]).astype(np.float32)
    fused_set = FeatureSet(
        gallery.item_ids, gallery.person_ids, gallery.camera_ids,
        matrix, "gallery",
    )
    _save_set(fused_set, args.out)
    contributors_path = f"{args.out}.contributors.csv"
    with open(contributors_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target_item_id", "neighbor_item_id", "weight"])
        for item in refined:
            for neighbor_index, weight in item.contributors:
                writer.writerow(
                    [
                        gallery.item_ids[item.source_index],
                        gallery.item_ids[neighbor_index],
                        _fmt(weight),
                    ]
                )
    _write_manifest(
        f"{args.out}.run.json",
        {
            "command": "fuse",
            "gallery": args.gallery,
            "k": args.k,
            "out": args.out,
        },
    )
    fallbacks = sum(1 for r in refined if not r.contributors)
    print(
        f"fused {len(refined)} gallery items (k={args.k}, "
        f"{fallbacks} fallback) -> {args.out}.urfb"
    )
    return 0


def _cmd_fit(args) -> int:
    train = _load_set(args.train, "train")
    result = fit_weights_repeated(
        train, args.n, args.k, args.seed, repeats=args.repeats
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_weights(result.mean, args.out)
    if args.dump_triplets:
        with open(args.dump_triplets, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s_single", "s_refined", "cce", "label"])
            for r in range(args.repeats):
                dataset = build_triplet_dataset(train, args.n, args.k, args.seed + r)
                for row in dataset.rows:
                    writer.writerow(
                        [_fmt(row.s_single), _fmt(row.s_refined), row.cce, row.label]
                    )
    _write_manifest(
        f"{args.out}.run.json",
        {
            "command": "fit",
            "train": args.train,
            "k": args.k,
            "n": args.n,
            "repeats": args.repeats,
            "seed": args.seed,
            "out": args.out,
            "dump_triplets": args.dump_triplets,
            "runs": [
                {
                    "run_index": w.run_index,
                    "seed": w.seed,
                    "alpha": w.alpha,
                    "beta": w.beta,
                    "gamma": w.gamma,
                    "intercept": w.intercept,
                    "ridge": w.ridge,
                }
                for w in result.runs
            ],
            "std": {
                "alpha": float(result.std[0]),
                "beta": float(result.std[1]),
                "gamma": float(result.std[2]),
                "intercept": float(result.std[3]),
            },
        },
    )
    mean = result.mean
    print(
        f"fitted weights over {args.repeats} run(s): "
        f"alpha={mean.alpha:.6f} beta={mean.beta:.6f} gamma={mean.gamma:.6f} "
        f"intercept={mean.intercept:.6f} (ignored when scoring)"
    )
    print(
        "std: alpha={:.6f} beta={:.6f} gamma={:.6f} intercept={:.6f}".format(
            *(float(x) for x in result.std)
        )
    )
    return 0


def _score_and_rank(args, threads: int):
    _check_scoring_flags(args)
    queries = _load_set(args.queries, "query")
    gallery = _load_set(args.gallery, "gallery")
    if args.baseline:
        weights, weights_label = baseline_weights(), "baseline"
        urfs = None
    else:
        weights, weights_label = load_weights(args.weights), args.weights
        urfs = _load_urfs(args.urf, gallery)
    rankings = rank_all(queries, gallery, urfs, weights, threads=threads)
    return queries, gallery, weights, weights_label, rankings


def _cmd_eval(args) -> int:
    threads = _resolve_threads(args.threads)
    queries, gallery, weights, weights_label, rankings = _score_and_rank(
        args, threads
    )
    config_echo = {
        "command": "eval",
        "queries": args.queries,
        "gallery": args.gallery,
        "urf": args.urf or "-",
        "weights": weights_label,
        "alpha": _fmt(weights.alpha),
        "beta": _fmt(weights.beta),
        "gamma": _fmt(weights.gamma),
        "intercept": _fmt(weights.intercept),
        "k_used": weights.k_used,
        "n_used": weights.n_used,
        "weights_seed": weights.seed,
        "run_index": weights.run_index,
        "ridge": int(weights.ridge),
        "max_rank": args.max_rank,
        "num_queries": len(queries),
        "num_gallery": len(gallery),
    }
    report = evaluate(
        rankings, queries, gallery, max_rank=args.max_rank, config_echo=config_echo
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = _eval_lines(report)
    (out / "eval.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(out / "cmc.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "cmc"])
        for k in range(report.cmc.size):
            writer.writerow([k + 1, _fmt(report.cmc[k])])
    if args.rank_list:
        _write_rank_list(
            out / "rank_list.csv", rankings, queries, gallery, top=args.top
        )
    if not args.no_figures:
        save_report_figures(report, out)
    _write_manifest(
        out / "run_config.json",
        {
            "command": "eval",
            "queries": args.queries,
            "gallery": args.gallery,
            "urf": args.urf,
            "weights": args.weights,
            "baseline": args.baseline,
            "max_rank": args.max_rank,
            "out": args.out,
            "rank_list": args.rank_list,
            "top": args.top,
            "no_figures": args.no_figures,
        },
    )
    for line in lines:
        print(line)
    return 0


def _cmd_rank(args) -> int:
    threads = _resolve_threads(args.threads)
    queries, gallery, _, _, rankings = _score_and_rank(args, threads)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    _write_rank_list(args.out, rankings, queries, gallery, top=args.top)
    _write_manifest(
        f"{args.out}.run.json",
        {
            "command": "rank",
            "queries": args.queries,
            "gallery": args.gallery,
            "urf": args.urf,
            "weights": args.weights,
            "baseline": args.baseline,
            "out": args.out,
            "top": args.top,
        },
    )
    print(f"wrote ranked lists for {len(queries)} queries -> {args.out}")
    return 0


def _cmd_bench(args) -> int:
    threads = _resolve_threads(args.threads)
    lines = [
        "command=bench",
        f"queries={args.queries}",
        f"gallery={args.gallery}",
        f"train={args.train or '-'}",
        f"k={args.k}",
        f"n={args.n}",
        f"seed={args.seed}",
        f"threads={threads}",
    ]
    start = time.perf_counter()
    queries = _load_set(args.queries, "query")
    gallery = _load_set(args.gallery, "gallery")
    train = _load_set(args.train, "train") if args.train else None
    lines.append(f"load_seconds={time.perf_counter() - start:.6f}")

    start = time.perf_counter()
    baseline_rankings = rank_all(queries, gallery, None, baseline_weights(),
                                 threads=threads)
    lines.append(f"baseline_score_seconds={time.perf_counter() - start:.6f}")

    start = time.perf_counter()
    urfs = uffm_fuse_all(gallery, args.k, threads=threads)
    lines.append(f"fuse_seconds={time.perf_counter() - start:.6f}")

    fused_only = CombinationWeights(
        alpha=0.0, beta=1.0, gamma=0.0, intercept=0.0,
        k_used=args.k, n_used=0, seed=0, run_index=0,
    )
    start = time.perf_counter()
    rankings = rank_all(queries, gallery, urfs, fused_only, threads=threads)
    lines.append(f"fused_score_seconds={time.perf_counter() - start:.6f}")

    if train is not None:
        start = time.perf_counter()
        result = fit_weights_repeated(train, args.n, args.k, args.seed,
                                      repeats=args.repeats)
        lines.append(f"fit_seconds={time.perf_counter() - start:.6f}")
        start = time.perf_counter()
        rankings = rank_all(queries, gallery, urfs, result.mean, threads=threads)
        lines.append(f"combined_score_seconds={time.perf_counter() - start:.6f}")

    start = time.perf_counter()
    evaluate(rankings, queries, gallery, max_rank=args.max_rank)
    lines.append(f"eval_seconds={time.perf_counter() - start:.6f}")
    del baseline_rankings

    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _add_set_args(parser, *names):
    for name in names:
        parser.add_argument(
            f"--{name}", required=True,
            help=f"{name} feature set path prefix (expects "
                 f"<prefix>.urfb and <prefix>.meta.csv)",
        )


def _add_scoring_args(parser):
    _add_set_args(parser, "queries", "gallery")
    parser.add_argument("--urf", help="refined feature set prefix from fuse")
    parser.add_argument("--weights", help="weights JSON from fit")
    parser.add_argument(
        "--baseline", action="store_true",
        help="score by plain single-view cosine (weights 1,0,0; no --urf needed)",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV_VAR} "
                             "or available parallelism)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="reidfuse",
        description="Cross-camera feature fusion and learned measure "
                    "combination for re-identification galleries.",
    )
    parser.add_argument("--version", action="version",
                        version=f"reidfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate deterministic synthetic feature sets")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ids", type=int, default=50, help="number of identities")
    p.add_argument("--cams", type=int, default=4, help="number of cameras")
    p.add_argument("--images-per", type=int, default=3,
                   help="images per (identity, camera)")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--identity-spread", type=float, default=0.25)
    p.add_argument("--camera-bias", type=float, default=1.5)
    p.add_argument("--noise", type=float, default=0.3)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fuse", help="build refined multi-view gallery features")
    _add_set_args(p, "gallery")
    p.add_argument("--k", type=int, default=4, help="cross-camera neighbors to fuse")
    p.add_argument("--out", required=True, help="output feature set prefix")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("fit", help="learn combination weights from a labeled set")
    _add_set_args(p, "train")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n", type=int, default=400, help="triples per run")
    p.add_argument("--repeats", type=int, default=5, help="independently seeded runs")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--out", required=True, help="weights JSON path")
    p.add_argument("--dump-triplets", help="also dump sampled measure rows as CSV")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("eval", help="rank and score with CMC / mAP metrics")
    _add_scoring_args(p)
    p.add_argument("--max-rank", type=int, default=DEFAULT_MAX_RANK)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--rank-list", action="store_true",
                   help="also write rank_list.csv")
    p.add_argument("--top", type=int, default=0,
                   help="limit rank list rows per query (0 = all)")
    p.add_argument("--no-figures", action="store_true",
                   help="skip cmc.png / ap_hist.png")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("rank", help="write ranked lists without metrics")
    _add_scoring_args(p)
    p.add_argument("--out", required=True, help="rank list CSV path")
    p.add_argument("--top", type=int, default=0,
                   help="limit rows per query (0 = all)")
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("bench", help="time the scoring stages")
    _add_set_args(p, "queries", "gallery")
    p.add_argument("--train", help="train set prefix (enables the fit stage)")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-rank", type=int, default=DEFAULT_MAX_RANK)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", help="also write the timing lines to this file")
    p.set_defaults(func=_cmd_bench)

    return parser


def _fail(kind: str, message) -> None:
    text = " ".join(str(message).split())
    print(f"reidfuse: error: {kind}: {text}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _fail("usage", exc)
        return 1
    except (DataFormatError, FileNotFoundError, OSError) as exc:
        _fail("data", exc)
        return 2
    except (ValueError, IndexError) as exc:
        _fail("data", exc)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _fail("internal", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())

