"""Command-line entry point.

Subcommands cover the full offline/online split: train the reference model
and students, build feature maps with ``extract``, query them with ``match``
and ``localize``, and run the evaluation harness (``eval``, ``ablate``,
``curve``, ``gradcheck``).  Every run writes its fully resolved configuration
into the output directory so results are reproducible from the artifacts
alone.

Exit codes: 0 success, 1 internal fault, 2 usage error, 3 requested assertion
failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AsymlocError


EXIT_OK = 0
EXIT_FAULT = 1
EXIT_USAGE = 2
EXIT_ASSERT = 3


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(args, mode: str):
    from .trainer import TrainConfig, parse_config_file

    cfg = TrainConfig()
    if getattr(args, "config", None):
        cfg = parse_config_file(args.config, cfg)
    cfg.mode = mode
    if getattr(args, "variant", None):
        cfg.variant = args.variant
    if getattr(args, "teacher", None):
        cfg.teacher_checkpoint = args.teacher
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _cmd_train_teacher(args) -> int:
    from .trainer import train

    cfg = _train_config(args, "teacher_symmetric")
    if not getattr(args, "variant", None):
        cfg.variant = "teacher"
    res = train(cfg, _out_dir(args), log=print)
    print(f"final checkpoint: {res.final_path}")
    return EXIT_OK


_STUDENT_MODES = {"standard": "student_standard",
                  "naive-distill": "student_naive_distill",
                  "asymloc": "student_asymloc"}


def _cmd_train_student(args) -> int:
    from .trainer import train

    cfg = _train_config(args, _STUDENT_MODES[args.mode])
    res = train(cfg, _out_dir(args), log=print)
    print(f"final checkpoint: {res.final_path}")
    return EXIT_OK


def _cmd_extract(args) -> int:
    from .datagen import decode_image
    from .features import extract_features, load_checkpoint
    from .formats import write_features, write_manifest

    model, _, _ = load_checkpoint(args.model)
    out = _out_dir(args)
    entries = []
    image_dir = Path(args.images)
    paths = sorted(p for p in image_dir.iterdir()
                   if p.suffix.lower() in (".pgm", ".ppm", ".pnm", ".png"))
    for p in paths:
        image = decode_image(p)
        ks = extract_features(model, image, n=args.num_keypoints,
                              nms_radius=args.nms_radius)
        feat_name = p.stem + ".alft"
        write_features(out / feat_name, image.shape[1], image.shape[0],
                       ks.positions, ks.conf, ks.desc)
        entries.append((p.stem, feat_name, image.shape[1], image.shape[0]))
        print(f"{p.name}: {len(ks)} keypoints")
    write_manifest(out / "manifest.tsv", entries)
    (out / "resolved_config.txt").write_text(
        f"model={args.model}\nimages={args.images}\n"
        f"num_keypoints={args.num_keypoints}\nnms_radius={args.nms_radius}\n",
        encoding="utf-8")
    return EXIT_OK


def _load_map(map_dir):
    from .formats import read_features, read_manifest

    map_dir = Path(map_dir)
    entries = read_manifest(map_dir / "manifest.tsv")
    out = []
    for image_id, rel, width, height in entries:
        _, _, pos, conf, desc = read_features(map_dir / rel)
        out.append((image_id, width, height, pos, conf, desc))
    return out


def _cmd_match(args) -> int:
    from .formats import read_features
    from .matching import mutual_nearest_neighbors

    _, _, q_pos, _, q_desc = read_features(args.query)
    lines = ["id\tnum_matches\tmean_similarity"]
    for image_id, _, _, _, _, desc in _load_map(args.map):
        ms = mutual_nearest_neighbors(q_desc, desc)
        mean_sim = float(np.mean([s for _, _, s in ms.pairs])) if ms.pairs else 0.0
        lines.append(f"{image_id}\t{len(ms)}\t{mean_sim:.9g}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


def _cmd_localize(args) -> int:
    from .formats import read_features
    from .geometry import ransac_homography
    from .matching import mutual_nearest_neighbors

    _, _, q_pos, _, q_desc = read_features(args.query)
    best = None
    lines = ["id\tnum_matches\tinliers\tsuccess"]
    for k, (image_id, _, _, pos, _, desc) in enumerate(_load_map(args.map)):
        ms = mutual_nearest_neighbors(q_desc, desc)
        ia, ib = ms.indices()
        if ia.size >= 4:
            res = ransac_homography(q_pos[ia], pos[ib], iters=args.ransac_iters,
                                    inlier_tol_px=args.ransac_tol,
                                    rng=np.random.default_rng([args.seed or 0, k]))
        else:
            res = None
        inliers = int(res.inlier_mask.sum()) if res is not None and res.success else 0
        success = bool(res is not None and res.success)
        lines.append(f"{image_id}\t{len(ms)}\t{inliers}\t{int(success)}")
        if success and (best is None or inliers > best[1]):
            best = (image_id, inliers, res.homography)
    if best is not None:
        lines.append(f"best\t{best[0]}\t{best[1]}\t1")
        h_flat = ",".join("%.9g" % v for v in best[2].to_flat())
        lines.append(f"homography\t{h_flat}")
    else:
        lines.append("best\tnone\t0\t0")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .evalkit import (EvalResult, emit_report, held_out_pairs,
                          homography_estimation_accuracy, model_extractor)
    from .features import count_flops, count_params, load_checkpoint

    out = _out_dir(args)
    eps = tuple(float(e) for e in args.eps.split(","))
    pairs = held_out_pairs(args.num_pairs, args.image_size, seed=args.pairs_seed)
    size = (args.image_size, args.image_size)
    seed = args.seed or 0

    teacher, _, _ = load_checkpoint(args.teacher)
    t_ex = model_extractor(teacher, args.num_keypoints, args.nms_radius)
    results = [homography_estimation_accuracy(
        pairs, t_ex, t_ex, eps, seed=seed, label="teacher-teacher",
        params=count_params(teacher.spec), gflops=count_flops(teacher.spec, size))]
    if args.student:
        student, _, _ = load_checkpoint(args.student)
        s_ex = model_extractor(student, args.num_keypoints, args.nms_radius)
        results.append(homography_estimation_accuracy(
            pairs, s_ex, s_ex, eps, seed=seed, label="student-student",
            params=count_params(student.spec), gflops=count_flops(student.spec, size)))
        results.append(homography_estimation_accuracy(
            pairs, t_ex, s_ex, eps, randomize_sides=True, seed=seed,
            label="student-teacher",
            params=count_params(student.spec), gflops=count_flops(student.spec, size)))
    emit_report(results, out / "eval_report.tsv",
                {"pairs_seed": str(args.pairs_seed), "seed": str(seed),
                 "eps": args.eps, "num_pairs": str(args.num_pairs)})
    (out / "resolved_config.txt").write_text(
        f"teacher={args.teacher}\nstudent={args.student}\npairs_seed={args.pairs_seed}\n"
        f"num_pairs={args.num_pairs}\nimage_size={args.image_size}\neps={args.eps}\n"
        f"num_keypoints={args.num_keypoints}\nnms_radius={args.nms_radius}\nseed={seed}\n",
        encoding="utf-8")
    for r in results:
        print(r.label, " ".join(f"hea@{e:g}={h:.3f}" for e, h in zip(r.eps_list, r.hea)))
    if args.assert_orderings and args.student:
        tt = results[0].hea_at(3.0) if 3.0 in results[0].eps_list else results[0].hea[-1]
        ss = results[1].hea_at(3.0) if 3.0 in results[1].eps_list else results[1].hea[-1]
        if tt < ss:
            print("ordering assertion failed: teacher-teacher < student-student")
            return EXIT_ASSERT
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .evalkit import ablation_sweep, emit_report, held_out_pairs

    out = _out_dir(args)
    axis = args.axis.replace("-", "_")
    cfg = _train_config(args, "student_asymloc")
    pairs = held_out_pairs(args.num_pairs, cfg.image_size, seed=args.pairs_seed)
    results = ablation_sweep(cfg, axis, pairs, out / "runs",
                             eval_seed=args.seed or 0, log=print)
    emit_report(results, out / "ablation_report.tsv",
                {"axis": axis, "seed": str(args.seed or 0),
                 "pairs_seed": str(args.pairs_seed)})
    from .trainer import render_config
    (out / "resolved_config.txt").write_text(
        render_config(cfg) + f"axis={axis}\npairs_seed={args.pairs_seed}\n",
        encoding="utf-8")
    for r in results:
        print(r.label, " ".join(f"hea@{e:g}={h:.3f}" for e, h in zip(r.eps_list, r.hea)))
    return EXIT_OK


def _cmd_curve(args) -> int:
    from .evalkit import (efficiency_curve, emit_report, held_out_pairs,
                          hea_per_gflop, model_extractor)
    from .features import load_checkpoint

    out = _out_dir(args)
    checkpoints = {}
    for item in args.checkpoints.split(","):
        if "=" not in item:
            raise AsymlocError(f"--checkpoints items must be name=path, got {item!r}")
        name, path = item.split("=", 1)
        checkpoints[name] = path
    teacher, _, _ = load_checkpoint(args.teacher)
    t_ex = model_extractor(teacher, args.num_keypoints, args.nms_radius)
    pairs = held_out_pairs(args.num_pairs, args.image_size, seed=args.pairs_seed)
    eps = tuple(float(e) for e in args.eps.split(","))
    rows = efficiency_curve(checkpoints, t_ex, pairs, eps,
                            n_keypoints=args.num_keypoints,
                            nms_radius=args.nms_radius, eval_seed=args.seed or 0)
    emit_report(rows, out / "efficiency_report.tsv",
                {"pairs_seed": str(args.pairs_seed), "seed": str(args.seed or 0)})
    (out / "resolved_config.txt").write_text(
        f"teacher={args.teacher}\ncheckpoints={args.checkpoints}\n"
        f"pairs_seed={args.pairs_seed}\nnum_pairs={args.num_pairs}\n"
        f"image_size={args.image_size}\neps={args.eps}\n", encoding="utf-8")
    for r in rows:
        per = hea_per_gflop(r, eps[-1]) if r.gflops else float("nan")
        print(f"{r.label}: params={r.params} gflops={r.gflops:.4g} "
              f"hea@{eps[-1]:g}={r.hea[-1]:.3f} hea/gflop={per:.4g}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .verify import run_full_gradcheck

    report = run_full_gradcheck(seed=args.seed or 0)
    line = (f"gradcheck: max relative error {report.max_rel_error:.3e} "
            f"(threshold {report.threshold:g}), reference gradients zero: "
            f"{report.teacher_grads_zero}, parameters checked: {report.n_params}")
    print(line)
    if args.out:
        out = _out_dir(args)
        (out / "gradcheck.txt").write_text(line + "\n", encoding="utf-8")
        (out / "resolved_config.txt").write_text(
            f"seed={args.seed or 0}\n", encoding="utf-8")
    return EXIT_OK if report.passed else EXIT_ASSERT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asymloc",
        description="Asymmetric detector-descriptor distillation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("train-teacher", help="train the reference model")
    common(p)
    p.add_argument("--config")
    p.add_argument("--variant")
    p.set_defaults(func=_cmd_train_teacher)

    p = sub.add_parser("train-student", help="train a compact student")
    common(p)
    p.add_argument("--mode", choices=sorted(_STUDENT_MODES), required=True)
    p.add_argument("--teacher", help="reference checkpoint (distillation modes)")
    p.add_argument("--config")
    p.add_argument("--variant", default="v04")
    p.set_defaults(func=_cmd_train_student)

    p = sub.add_parser("extract", help="build a feature map from images")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--num-keypoints", type=int, default=512)
    p.add_argument("--nms-radius", type=int, default=2)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("match", help="match query features against a map")
    common(p)
    p.add_argument("--query", required=True)
    p.add_argument("--map", required=True)
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("localize", help="match + RANSAC against a map")
    common(p)
    p.add_argument("--query", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--ransac-iters", type=int, default=1000)
    p.add_argument("--ransac-tol", type=float, default=3.0)
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("eval", help="homography-estimation accuracy harness")
    common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student")
    p.add_argument("--pairs-seed", type=int, default=10_000)
    p.add_argument("--num-pairs", type=int, default=200)
    p.add_argument("--image-size", type=int, default=160)
    p.add_argument("--eps", default="1,3,5")
    p.add_argument("--num-keypoints", type=int, default=512)
    p.add_argument("--nms-radius", type=int, default=2)
    p.add_argument("--assert-orderings", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train + evaluate an ablation sweep")
    common(p)
    p.add_argument("--axis", choices=("lambda_kd", "temperatures", "loss-terms"),
                   required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--config")
    p.add_argument("--variant")
    p.add_argument("--pairs-seed", type=int, default=10_000)
    p.add_argument("--num-pairs", type=int, default=200)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("curve", help="accuracy-vs-cost rows per variant")
    common(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--checkpoints", required=True,
                   help="comma-separated name=checkpoint pairs")
    p.add_argument("--pairs-seed", type=int, default=10_000)
    p.add_argument("--num-pairs", type=int, default=200)
    p.add_argument("--image-size", type=int, default=160)
    p.add_argument("--eps", default="1,3,5")
    p.add_argument("--num-keypoints", type=int, default=512)
    p.add_argument("--nms-radius", type=int, default=2)
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("gradcheck", help="finite-difference objective check")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except AsymlocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
