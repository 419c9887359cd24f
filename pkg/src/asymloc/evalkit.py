"""Evaluation harness: homography-estimation accuracy, match diagnostics,
ablation sweeps, efficiency curves, and byte-stable reports.

An *extractor* is any callable ``image -> KeypointSet``; :func:`model_extractor`
adapts a trained model.  HEA(eps) is the fraction of evaluation pairs whose
estimated homography displaces the four image corners by at most eps pixels
on average; pairs where RANSAC fails count as infinite error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ArityError, ConfigError
from .datagen import DatasetConfig, PairDataset, TrainingPair
from .features import (Model, ModelSpec, count_flops, count_params,
                       extract_features, load_checkpoint)
from .geometry import (CorrespondenceSet, Homography, corner_error,
                       ground_truth_correspondences, ransac_homography)
from .matching import MatchSet, mutual_nearest_neighbors


@dataclass
class RansacConfig:
    iterations: int = 1000
    inlier_tol_px: float = 3.0
    seed: int = 0


@dataclass
class EvalResult:
    """One evaluated configuration: accuracy, diagnostics, and model cost."""

    label: str
    eps_list: tuple[float, ...]
    hea: tuple[float, ...]
    precision: float
    recall: float
    mean_corner_error: float
    params: int
    gflops: float
    pair_count: int
    seed: int

    def hea_at(self, eps: float) -> float:
        return self.hea[self.eps_list.index(eps)]


def model_extractor(model: Model, n: int = 512, nms_radius: int = 2):
    """Adapt a model to the ``image -> KeypointSet`` extractor protocol."""
    def extract(image):
        return extract_features(model, image, n=n, nms_radius=nms_radius, train=False)
    return extract


def held_out_pairs(num_pairs: int = 200, image_size: int = 160, seed: int = 10_000,
                   hcfg=None, acfg=None) -> list[TrainingPair]:
    """Seeded evaluation corpus; keep the seed disjoint from training seeds."""
    cfg = DatasetConfig(num_pairs=num_pairs, image_size=image_size, seed=seed)
    if hcfg is not None:
        cfg.hcfg = hcfg
    if acfg is not None:
        cfg.acfg = acfg
    return [p for p in PairDataset(cfg)]


def match_precision_recall(matches: MatchSet, gt: CorrespondenceSet,
                           pos_a: np.ndarray, pos_b: np.ndarray, h_ab: Homography,
                           tol_px: float = 3.0) -> tuple[float, float]:
    """A match (i, j) is correct iff warp(h_ab, a_i) lands within tol of b_j.

    Conventions: precision is 1.0 with no matches, recall is 1.0 with no
    ground truth.
    """
    if tol_px <= 0:
        raise ConfigError("tol_px must be positive")
    from .geometry import warp_points

    pos_a = np.asarray(pos_a, dtype=np.float64).reshape(-1, 2)
    pos_b = np.asarray(pos_b, dtype=np.float64).reshape(-1, 2)
    correct = 0
    if matches.pairs:
        ia, ib = matches.indices()
        warped = warp_points(h_ab, pos_a[ia])
        dist = np.linalg.norm(warped - pos_b[ib], axis=1)
        correct = int(np.sum(np.where(np.isfinite(dist), dist, np.inf) <= tol_px))
    precision = 1.0 if not matches.pairs else correct / len(matches.pairs)
    recall = 1.0 if not gt.pairs else correct / len(gt.pairs)
    return precision, min(recall, 1.0)


def homography_estimation_accuracy(pairs: list[TrainingPair], extractor_a, extractor_b,
                                   eps_list=(1.0, 3.0, 5.0),
                                   ransac_cfg: RansacConfig | None = None,
                                   randomize_sides: bool = False, seed: int = 0,
                                   label: str = "", match_tol_px: float = 3.0,
                                   params: int = 0, gflops: float = 0.0) -> EvalResult:
    """Evaluate an extractor pair on held-out homography pairs.

    With ``randomize_sides`` a per-pair seeded coin decides which extractor
    sees which image (the asymmetric protocol); the ground-truth homography is
    inverted accordingly before scoring.
    """
    if not pairs:
        raise ArityError("need at least one evaluation pair")
    eps_list = tuple(float(e) for e in eps_list)
    if list(eps_list) != sorted(eps_list):
        raise ConfigError("eps_list must be sorted ascending")
    rcfg = ransac_cfg or RansacConfig()
    coin = np.random.default_rng([seed, 0xC0])
    errors = []
    precisions, recalls = [], []
    for k, pair in enumerate(pairs):
        flip = bool(randomize_sides and coin.random() < 0.5)
        img_a, img_b = (pair.image_b, pair.image_a) if flip else (pair.image_a, pair.image_b)
        h_gt = pair.h_ab.inverse() if flip else pair.h_ab
        ks_a = extractor_a(img_a)
        ks_b = extractor_b(img_b)
        matches = mutual_nearest_neighbors(ks_a.desc, ks_b.desc)
        gt = ground_truth_correspondences(h_gt, ks_a.positions, ks_b.positions, match_tol_px)
        p, r = match_precision_recall(matches, gt, ks_a.positions, ks_b.positions,
                                      h_gt, match_tol_px)
        precisions.append(p)
        recalls.append(r)
        ia, ib = matches.indices()
        if ia.size < 4:
            errors.append(float("inf"))
            continue
        res = ransac_homography(ks_a.positions[ia], ks_b.positions[ib],
                                iters=rcfg.iterations, inlier_tol_px=rcfg.inlier_tol_px,
                                rng=np.random.default_rng([rcfg.seed, k]))
        if not res.success:
            errors.append(float("inf"))
            continue
        size = (img_a.shape[1], img_a.shape[0])
        errors.append(corner_error(res.homography, h_gt, size))
    err = np.asarray(errors)
    hea = tuple(float(np.mean(err <= e)) for e in eps_list)
    return EvalResult(label=label, eps_list=eps_list, hea=hea,
                      precision=float(np.mean(precisions)), recall=float(np.mean(recalls)),
                      mean_corner_error=float(np.mean(err)),
                      params=params, gflops=gflops, pair_count=len(pairs), seed=seed)


# ---------------------------------------------------------------------------
# sweeps

ABLATION_AXES = {
    "lambda_kd": (0.0, 1.0, 2.0, 4.0),
    "temperatures": ((1.0, 1.0), (0.5, 0.5), (0.1, 0.1), (0.5, 0.1)),
    "loss_terms": ("match_only", "kd_only", "both"),
}


def ablation_sweep(base_cfg, axis: str, pairs: list[TrainingPair], work_dir,
                   values=None, eps_list=(1.0, 3.0, 5.0), eval_seed: int = 0,
                   log=None) -> list[EvalResult]:
    """Train one student per axis value from a shared seed, then evaluate each
    against the frozen teacher on the given pairs.

    ``base_cfg`` is a student_asymloc TrainConfig; temperature values are
    (tau_t, tau_s) pairs.
    """
    from .errors import TrainingFault
    from .trainer import TrainConfig, train  # local import avoids a cycle

    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}, expected one of {sorted(ABLATION_AXES)}")
    values = ABLATION_AXES[axis] if values is None else tuple(values)
    work_dir = Path(work_dir)
    teacher, _, _ = load_checkpoint(base_cfg.teacher_checkpoint)
    teacher_ex = model_extractor(teacher, base_cfg.n_keypoints, base_cfg.nms_radius)
    results = []
    for value in values:
        cfg: TrainConfig = replace(base_cfg)
        cfg.loss = replace(base_cfg.loss)
        if axis == "lambda_kd":
            cfg.loss.lambda_kd = float(value)
            tag = f"lambda_kd={value:g}"
        elif axis == "temperatures":
            cfg.loss.tau_t, cfg.loss.tau_s = (float(value[0]), float(value[1]))
            tag = f"tau_t={value[0]:g},tau_s={value[1]:g}"
        else:
            cfg.loss_terms = str(value)
            tag = f"loss_terms={value}"
        try:
            out = train(cfg, work_dir / tag.replace(",", "_").replace("=", "-"), log=log)
        except TrainingFault as exc:
            raise TrainingFault(f"[{tag}] {exc}") from exc
        student, _, _ = load_checkpoint(out.final_path)
        student_ex = model_extractor(student, cfg.n_keypoints, cfg.nms_radius)
        res = homography_estimation_accuracy(
            pairs, teacher_ex, student_ex, eps_list, randomize_sides=True,
            seed=eval_seed, label=tag,
            params=count_params(student.spec),
            gflops=count_flops(student.spec, (pairs[0].image_a.shape[1],
                                              pairs[0].image_a.shape[0])))
        results.append(res)
    return results


def efficiency_curve(checkpoints: dict[str, str | None], teacher_extractor,
                     pairs: list[TrainingPair], eps_list=(1.0, 3.0, 5.0),
                     n_keypoints: int = 512, nms_radius: int = 2,
                     eval_seed: int = 0) -> list[EvalResult]:
    """Accuracy-vs-cost rows, one per variant, sorted by ascending parameter
    count.  A missing checkpoint yields a row with NaN accuracy fields."""
    rows = []
    for name, path in checkpoints.items():
        if path is None or not Path(path).exists():
            rows.append(EvalResult(label=f"{name} (missing checkpoint)",
                                   eps_list=tuple(float(e) for e in eps_list),
                                   hea=tuple(float("nan") for _ in eps_list),
                                   precision=float("nan"), recall=float("nan"),
                                   mean_corner_error=float("nan"), params=0, gflops=0.0,
                                   pair_count=0, seed=eval_seed))
            continue
        model, _, _ = load_checkpoint(path)
        ex = model_extractor(model, n_keypoints, nms_radius)
        size = (pairs[0].image_a.shape[1], pairs[0].image_a.shape[0])
        res = homography_estimation_accuracy(
            pairs, teacher_extractor, ex, eps_list, randomize_sides=True,
            seed=eval_seed, label=name, params=count_params(model.spec),
            gflops=count_flops(model.spec, size))
        rows.append(res)
    return sorted(rows, key=lambda r: r.params)


def hea_per_gflop(result: EvalResult, eps: float) -> float:
    return result.hea_at(eps) / result.gflops


# ---------------------------------------------------------------------------
# reports

def _fmt(value) -> str:
    if isinstance(value, float):
        return "%.9g" % value
    return str(value)


def emit_report(results: list[EvalResult], path, metadata: dict[str, str] | None = None):
    """Write a tab-separated results table at ``path`` and a metadata block at
    ``path`` + ".meta".  Output is byte-stable given identical inputs."""
    path = Path(path)
    eps = results[0].eps_list if results else (1.0, 3.0, 5.0)
    if any(r.eps_list != eps for r in results):
        raise ConfigError("all results in one report must share the same eps_list")
    header = (["label"] + [f"hea@{e:g}" for e in eps]
              + ["precision", "recall", "mean_corner_error", "params", "gflops",
                 "pair_count", "seed"])
    lines = ["\t".join(header)]
    for r in results:
        row = ([r.label] + [_fmt(h) for h in r.hea]
               + [_fmt(r.precision), _fmt(r.recall), _fmt(r.mean_corner_error),
                  str(r.params), _fmt(r.gflops), str(r.pair_count), str(r.seed)])
        lines.append("\t".join(row))
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        meta = {"tool_version": __version__}
        meta.update(metadata or {})
        meta_lines = [f"{k}={v}" for k, v in sorted(meta.items())]
        Path(str(path) + ".meta").write_text("\n".join(meta_lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report at {path}: {exc}") from exc


def parse_report(path) -> list[dict[str, float | str]]:
    """Read an emitted table back into dicts keyed by the header row."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        fields_ = line.split("\t")
        row: dict[str, float | str] = {}
        for key, value in zip(header, fields_):
            if key == "label":
                row[key] = value
            else:
                row[key] = float(value)
        rows.append(row)
    return rows
