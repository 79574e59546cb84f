"""Command-line entry point.

Subcommands wire the library into reproducible pipelines: synthetic data
generation, detection over score-map containers, model training with
hard-negative mining, metric evaluation, and an exhaustive-search
self-check of the inference engine. Every subcommand is deterministic for
fixed flags and seed. FLEXPARSE_LOG ({error, info, debug}) controls
verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

log = logging.getLogger("flexparse")


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("FLEXPARSE_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexparse", description=__doc__)
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for per-scene work (default: available parallelism)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthetic data")
    synth_sub = p_synth.add_subparsers(dest="synth_command", required=True)
    p_gen = synth_sub.add_parser("gen", help="generate a model plus annotated scenes")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--parts", type=int, default=None)
    p_gen.add_argument("--types", type=int, default=None)
    p_gen.add_argument("--people", type=int, required=True)
    p_gen.add_argument("--occlusion", type=float, required=True)
    p_gen.add_argument("--scenes", type=int, default=1)
    p_gen.add_argument("--grid", default="64x48", help="WIDTHxHEIGHT in cells")
    p_gen.add_argument("--model", default=None,
                       help="reuse this model JSON instead of generating one (--parts/--types ignored)")
    p_gen.add_argument("--out", required=True)

    p_inf = sub.add_parser("infer", help="detect people in score maps")
    p_inf.add_argument("--model", required=True)
    p_inf.add_argument("--scoremaps", required=True,
                       help="a score-map container, or a directory of containers")
    p_inf.add_argument("--threshold", type=float, required=True)
    p_inf.add_argument("--min-parts", type=int, default=1)
    p_inf.add_argument("--nms-iou", type=float, default=0.6)
    p_inf.add_argument("--part-box", type=float, default=None)
    p_inf.add_argument("--max-detections", type=int, default=None)
    p_inf.add_argument("--single-composition", action="store_true",
                       help="full-graph baseline: no occlusion handling")
    p_inf.add_argument("--no-idod", action="store_true",
                       help="zero the occlusion-evidence grids")
    p_inf.add_argument("--no-svm-bias", action="store_true",
                       help="compare raw scores against the threshold")
    p_inf.add_argument("--out", required=True)

    p_train = sub.add_parser("train", help="learn model weights from annotations")
    p_train.add_argument("--annotations", required=True)
    p_train.add_argument("--scoremaps", required=True)
    p_train.add_argument("--neg", required=True,
                         help="directory of person-free score-map containers")
    p_train.add_argument("--C", type=float, default=0.05)
    p_train.add_argument("--seed", type=int, required=True)
    p_train.add_argument("--rounds", type=int, default=2)
    p_train.add_argument("--epochs", type=int, default=40)
    p_train.add_argument("--cap", type=int, default=60, help="mined negatives per round")
    p_train.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="score detections against annotations")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--det", required=True)
    p_eval.add_argument("--model", required=True, help="model JSON defining the sticks")
    p_eval.add_argument("--match-radius", type=float, default=None)
    p_eval.add_argument("--out", required=True)

    p_oracle = sub.add_parser("oracle", help="reference checks")
    oracle_sub = p_oracle.add_subparsers(dest="oracle_command", required=True)
    p_check = oracle_sub.add_parser("check", help="exhaustive-search equivalence suite")
    p_check.add_argument("--seed", type=int, required=True)
    p_check.add_argument("--trials", type=int, required=True)
    return parser


def _containers_under(root: Path):
    """Yield (image_id, path) for one container or a directory of them."""
    if (root / "meta.json").is_file():
        yield None, root
        return
    subdirs = sorted(d for d in root.iterdir() if (d / "meta.json").is_file())
    if not subdirs:
        raise FileNotFoundError(f"{root} holds no score-map containers")
    for d in subdirs:
        yield d.name, d


def _cmd_synth_gen(args) -> int:
    from .model import load_model, save_model
    from .learn import save_annotations
    from .scoremap import save_scoremaps
    from .synth import gen_model, gen_scenes

    try:
        width, height = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        print(f"error: --grid expects WIDTHxHEIGHT, got {args.grid!r}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.model:
        graph, params = load_model(args.model)
    elif args.parts is None or args.types is None:
        print("error: either --model or both --parts and --types are required", file=sys.stderr)
        return 1
    else:
        graph, params = gen_model(args.seed, args.parts, args.types)
    save_model(out / "model.json", graph, params)
    scenes = gen_scenes(
        args.seed, graph, params, args.scenes, args.people, args.occlusion, grid=(width, height)
    )
    annotations = []
    for image_id, anns, maps in scenes:
        annotations.extend(anns)
        save_scoremaps(out / "scoremaps" / image_id, maps)
        log.info("wrote scene %s with %d people", image_id, len(anns))
    save_annotations(out / "annotations.json", annotations, graph.parts)
    print(f"wrote model + {args.scenes} scene(s) to {out}")
    return 0


def _cmd_infer(args) -> int:
    from .infer import detect, estimate_to_dict
    from .model import load_model
    from .scoremap import compute_terms, load_scoremaps

    graph, params = load_model(args.model)
    jobs = list(_containers_under(Path(args.scoremaps)))

    def run(job):
        image_id, path = job
        maps = load_scoremaps(path)
        terms = compute_terms(maps, graph)
        if args.no_idod:
            terms = terms.without_idod()
        ests = detect(
            terms, params, graph,
            threshold=args.threshold,
            min_parts=args.min_parts,
            nms_iou=args.nms_iou,
            part_box=args.part_box,
            add_svm_bias=not args.no_svm_bias,
            single_composition=args.single_composition,
            max_detections=args.max_detections,
        )
        return [estimate_to_dict(e, graph.parts, image_id) for e in ests]

    if args.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            per_scene = list(pool.map(run, jobs))
    else:
        per_scene = [run(j) for j in jobs]
    docs = [d for docs_ in per_scene for d in docs_]
    Path(args.out).write_text(json.dumps(docs, indent=2, sort_keys=True) + "\n")
    print(f"{len(docs)} detection(s) -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .learn import load_annotations, train_model
    from .model import save_model
    from .scoremap import compute_terms, load_scoremaps

    annotations = load_annotations(args.annotations)
    jobs = list(_containers_under(Path(args.scoremaps)))
    graph = load_scoremaps(jobs[0][1]).graph
    term_sets = {}
    for image_id, path in jobs:
        maps = load_scoremaps(path)
        key = image_id if image_id is not None else ""
        term_sets[key] = compute_terms(maps, graph)
    if len(jobs) == 1 and jobs[0][0] is None:
        only = term_sets[""]
        term_sets = {a.image_id: only for a in annotations}
    negative_terms = []
    for _, path in _containers_under(Path(args.neg)):
        maps = load_scoremaps(path)
        negative_terms.append(compute_terms(maps, graph))
    params, info = train_model(
        annotations, term_sets, negative_terms, graph,
        C=args.C, seed=args.seed, rounds=args.rounds,
        per_round_cap=args.cap, epochs=args.epochs,
    )
    save_model(args.out, graph, params)
    print(
        f"trained on {info['positives']} positives, "
        f"{info['bootstrap_negatives']} bootstrap + {info['mined_negatives']} mined negatives -> {args.out}"
    )
    return 0


def _cmd_eval(args) -> int:
    from .metrics import default_stick_map, evaluate, save_report
    from .model import load_model

    graph, _ = load_model(args.model)
    gt = json.loads(Path(args.gt).read_text())
    det = json.loads(Path(args.det).read_text())
    report = evaluate(gt, det, default_stick_map(graph), match_radius=args.match_radius)
    save_report(args.out, report)
    print(f"mPCP {report['mPCP']:.1f}  AOP {report['AOP']:.1f} -> {args.out}")
    return 0


def _cmd_oracle_check(args) -> int:
    from .testing import oracle_self_check

    matched, trials = oracle_self_check(args.seed, args.trials)
    print(f"{matched}/{trials} matched")
    return 0 if matched == trials else 1


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth_gen(args)
        if args.command == "infer":
            return _cmd_infer(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "oracle":
            return _cmd_oracle_check(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
