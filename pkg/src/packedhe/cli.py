"""Command-line front end.

Three roles share the toolkit: the data owner packs and "encrypts"
(simulated) image batches, the model provider encodes kernels and FC
weights, and the cloud side runs inference over the packed files.  A
verify mode recomputes everything with the plaintext oracles and fails
hard on any mismatch.

Exit codes: 0 success, 1 validation error, 2 verification mismatch.
"""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bench import format_report
from .datafiles import IdxFormatError, load_mnist_idx, load_weights_csv
from .engine import EngineError, EngineParams, SlotEngine
from .oracle import oracle_forward
from .pipeline import (
    BatchPlan,
    MNIST_LAYOUT,
    argmax_decide,
    encode_model,
    forward_encoded,
    pack_batch,
)
from .serial import CT_SUFFIX, SerialError, load_batch, load_model, write_batch, write_model
from .virtual import VirtualLayout

SCORE_TOLERANCE = 1e-6

__all__ = ["main"]


def _engine_params(args) -> EngineParams:
    params = EngineParams.from_config(args.config) if args.config else EngineParams()
    if args.slots is not None:
        params = EngineParams(
            slots=args.slots,
            log_q=params.log_q,
            delta=params.delta,
            delta_c=params.delta_c,
        )
    return params


def _batch_layout(params: EngineParams) -> VirtualLayout:
    if params.slots == MNIST_LAYOUT.m * MNIST_LAYOUT.f:
        return MNIST_LAYOUT
    m = params.slots // MNIST_LAYOUT.f
    if m < 1:
        raise EngineError(f"{params.slots} slots cannot hold a {MNIST_LAYOUT.f}-slot image block")
    return VirtualLayout(m, MNIST_LAYOUT.f, MNIST_LAYOUT.h, MNIST_LAYOUT.w)


def _cmd_owner_encode(args) -> int:
    params = _engine_params(args)
    engine = SlotEngine(params)
    layout = _batch_layout(params)
    images, _ = load_mnist_idx(args.images)
    if args.limit is not None:
        images = images[: args.limit]
    if images.shape[0] == 0:
        print("error: no images to encode", file=sys.stderr)
        return 1
    plan = BatchPlan.for_dataset(images.shape[0], slots=params.slots, image_slots=layout.f)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for b in range(plan.batch_count):
        chunk = images[b * plan.images_per_ct : (b + 1) * plan.images_per_ct]
        ct = pack_batch(engine, chunk, layout)
        write_batch(out_dir / f"batch_{b:05d}{CT_SUFFIX}", ct, layout, valid_rows=chunk.shape[0])
    print(
        f"packed {images.shape[0]} images into {plan.batch_count} batch files "
        f"({plan.images_per_ct} per ciphertext, final batch zero-filled by {plan.zero_fill})"
    )
    return 0


def _cmd_provider_encode(args) -> int:
    params = _engine_params(args)
    engine = SlotEngine(params)
    weights = load_weights_csv(args.weights_dir)
    model = encode_model(engine, weights, _batch_layout(params))
    count = write_model(args.out_dir, model)
    print(f"encoded model into {count} ciphertext files at {args.out_dir}")
    return 0


def _infer_batches(engine_factory, model_dir, batch_paths, parallel: int):
    """Run forward over batch files; one engine per worker, meters merged."""

    def job(path):
        engine = engine_factory()
        model = load_model(engine, model_dir)
        ct, layout, valid = load_batch(engine, path)
        scores = forward_encoded(engine, ct, model)
        labels = argmax_decide(engine, scores)
        mat = scores.decode(engine)
        return path, mat, labels, valid, engine.meter_snapshot()

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(job, batch_paths))
    else:
        results = [job(p) for p in batch_paths]
    return results


def _cmd_cloud_infer(args) -> int:
    params = _engine_params(args)
    batch_paths = sorted(Path(args.batch_dir).glob(f"*{CT_SUFFIX}"))
    if not batch_paths:
        print(f"error: no batch files under {args.batch_dir}", file=sys.stderr)
        return 1
    results = _infer_batches(lambda: SlotEngine(params), args.model_dir, batch_paths, args.parallel)

    verify_images = None
    verify_weights = None
    if args.verify:
        if not (args.images and args.weights_dir):
            print("error: --verify needs --images and --weights-dir", file=sys.stderr)
            return 1
        verify_images, _ = load_mnist_idx(args.images)
        verify_weights = load_weights_csv(args.weights_dir)

    records = []
    index = 0
    merged = None
    for path, mat, labels, valid, meter in results:
        merged = meter if merged is None else merged.merged(meter)
        for row in range(valid):
            records.append(
                {
                    "index": index,
                    "label": int(labels[row]),
                    "scores": [float(s) for s in mat[row, :10]],
                }
            )
            index += 1
    if verify_images is not None:
        want = oracle_forward(verify_weights, verify_images[: len(records)])
        got = np.array([r["scores"] for r in records])
        if got.shape != want.shape or not np.allclose(got, want, rtol=0.0, atol=SCORE_TOLERANCE):
            print("verification mismatch: encrypted scores differ from oracle", file=sys.stderr)
            return 2
        if not np.array_equal(np.argmax(want, axis=1), [r["label"] for r in records]):
            print("verification mismatch: labels differ from oracle", file=sys.stderr)
            return 2
        print(f"verified {len(records)} predictions against the plaintext oracle")

    out_path = Path(args.out)
    with open(out_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote {len(records)} predictions to {out_path}")
    if args.report:
        report = {
            "batches": len(results),
            "predictions": len(records),
            "ops": {
                "add": merged.add_count,
                "mul": merged.mul_count,
                "cmul": merged.cmul_count,
                "rot": merged.rot_count,
                "enc": merged.enc_count,
                "max_depth": merged.max_depth,
            },
        }
        Path(args.report).write_text(json.dumps(report, indent=2))
        print(f"wrote op-meter report to {args.report}")
    return 0


def _cmd_verify(args) -> int:
    params = _engine_params(args)
    engine = SlotEngine(params)
    layout = _batch_layout(params)
    images, _ = load_mnist_idx(args.images)
    if args.limit is not None:
        images = images[: args.limit]
    if images.shape[0] == 0:
        print("error: no images to verify", file=sys.stderr)
        return 1
    weights = load_weights_csv(args.weights_dir)
    model = encode_model(engine, weights, layout)
    plan = BatchPlan.for_dataset(images.shape[0], slots=params.slots, image_slots=layout.f)
    mismatches = 0
    index = 0
    for b in range(plan.batch_count):
        chunk = images[b * plan.images_per_ct : (b + 1) * plan.images_per_ct]
        ct = pack_batch(engine, chunk, layout)
        scores = forward_encoded(engine, ct, model).decode(engine)[: chunk.shape[0], :10]
        want = oracle_forward(weights, chunk)
        if not np.allclose(scores, want, rtol=0.0, atol=SCORE_TOLERANCE):
            mismatches += 1
            print(f"batch {b}: score mismatch beyond {SCORE_TOLERANCE}", file=sys.stderr)
        elif not np.array_equal(np.argmax(scores, axis=1), np.argmax(want, axis=1)):
            mismatches += 1
            print(f"batch {b}: label mismatch", file=sys.stderr)
        index += chunk.shape[0]
    if mismatches:
        print(f"verification FAILED for {mismatches}/{plan.batch_count} batches", file=sys.stderr)
        return 2
    print(f"verified {index} images across {plan.batch_count} batches: all scores within {SCORE_TOLERANCE}")
    return 0


def _parse_grid(text: str, arity: int = 3) -> list:
    grid = []
    for part in text.split(";"):
        nums = tuple(int(x) for x in part.split(","))
        if len(nums) != arity:
            raise ValueError(f"grid entries need {arity} integers, got {part!r}")
        grid.append(nums)
    return grid


def _cmd_bench(args) -> int:
    matmul_grid = _parse_grid(args.matmul_grid) if args.matmul_grid else [(4, 4, 2), (3, 4, 2), (8, 8, 8)]
    conv_grid = _parse_grid(args.conv_grid) if args.conv_grid else [(4, 4, 2), (8, 8, 3), (12, 12, 5)]
    report = format_report(matmul_grid, conv_grid)
    print(report)
    if args.report:
        Path(args.report).write_text(report + "\n")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="packedhe",
        description="packed-slot homomorphic evaluation toolkit (simulated backend)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="engine parameter JSON (slots, logq, logn, delta, delta_c)")
        p.add_argument("--slots", type=int, help="override the slot count")

    p = sub.add_parser("owner-encode", help="pack images into simulated batch ciphertext files")
    common(p)
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--limit", type=int, help="encode only the first N images")
    p.set_defaults(func=_cmd_owner_encode)

    p = sub.add_parser("provider-encode", help="encode model weights for evaluation")
    common(p)
    p.add_argument("--weights-dir", required=True, help="directory of weight CSV files")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_provider_encode)

    p = sub.add_parser("cloud-infer", help="run inference over packed batches")
    common(p)
    p.add_argument("--batch-dir", required=True)
    p.add_argument("--model-dir", required=True)
    p.add_argument("--out", required=True, help="predictions output (JSON lines)")
    p.add_argument("--report", help="write an op-meter report JSON here")
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="worker threads")
    p.add_argument("--verify", action="store_true", help="cross-check against the plaintext oracle")
    p.add_argument("--images", help="IDX images for --verify")
    p.add_argument("--weights-dir", help="weight CSVs for --verify")
    p.set_defaults(func=_cmd_cloud_infer)

    p = sub.add_parser("verify", help="run both paths end to end and compare")
    common(p)
    p.add_argument("--images", required=True)
    p.add_argument("--weights-dir", required=True)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("bench", help="measured vs budgeted operation counts")
    common(p)
    p.add_argument("--matmul-grid", help='semicolon-separated "m,n,p" triples')
    p.add_argument("--conv-grid", help='semicolon-separated "h,w,k" triples')
    p.add_argument("--report", help="also write the table to this file")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (EngineError, SerialError, IdxFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
