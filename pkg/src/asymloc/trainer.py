"""Adam training loop over homography pairs, in four modes.

Modes
-----
``teacher_symmetric`` / ``student_standard``
    Self-supervised symmetric matching: the model in training provides both
    sides of the pair, and the matching loss is gated by its own confidences.
``student_naive_distill``
    Dense per-pixel distillation of a frozen reference model (cosine
    descriptor distance plus soft BCE on the confidence map).
``student_asymloc``
    The combined objective: geometric matching between frozen-reference
    features on image a and student features on image b, plus the two
    detector-weighted distillation terms.  Student read-outs for distillation
    are taken at the reference keypoint cells, which live on the same strided
    grid as the student map.

The dataset for a run is a fixed, seed-determined set of pairs reused every
epoch, so frozen-reference features are computed once per pair and cached,
and a (config, seed) combination reproduces bit-identical checkpoints.
"""

from __future__ import annotations

import time
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .datagen import AugmentConfig, DatasetConfig, PairDataset, TrainingPair
from .errors import ConfigError, TrainingFault
from .features import (KeypointSet, Model, VARIANTS, build_model, load_checkpoint,
                       save_checkpoint, select_keypoint_cells)
from .geometry import HomographyConfig, ground_truth_correspondences
from .objectives import (LossBreakdown, LossConfig, asymloc_total_loss,
                         geometric_matching_loss, mutual_matching_matrix,
                         naive_distill_loss, similarity_matrix)

MODES = ("teacher_symmetric", "student_standard",
         "student_naive_distill", "student_asymloc")


@dataclass
class TrainConfig:
    """Everything that determines a training run (with the seed)."""

    mode: str = "teacher_symmetric"
    variant: str = "teacher"
    epochs: int = 30
    pairs_per_epoch: int = 200
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    image_size: int = 160
    n_keypoints: int = 512
    nms_radius: int = 2
    gt_tol: float = 3.0
    loss_terms: str = "both"
    det_neg_weight: float = 0.25
    teacher_checkpoint: str | None = None
    corpus_dir: str | None = None
    log_every: int = 20
    loss: LossConfig = field(default_factory=LossConfig)
    hcfg: HomographyConfig = field(default_factory=HomographyConfig)
    acfg: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {self.variant!r}")
        if self.epochs < 1 or self.pairs_per_epoch < 1:
            raise ConfigError("epochs and pairs_per_epoch must be positive")
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ConfigError("invalid Adam hyperparameters")
        if self.n_keypoints < 1 or self.nms_radius < 0 or self.gt_tol <= 0:
            raise ConfigError("invalid keypoint/correspondence settings")
        if self.mode in ("student_naive_distill", "student_asymloc") and not self.teacher_checkpoint:
            raise ConfigError(f"mode {self.mode!r} requires teacher_checkpoint")
        if self.loss_terms not in ("both", "match_only", "kd_only"):
            raise ConfigError(f"unknown loss_terms {self.loss_terms!r}")
        self.loss.validate()
        self.hcfg.validate()


_NESTED = {"loss": LossConfig, "hcfg": HomographyConfig, "acfg": AugmentConfig}


def _coerce(raw: str, ftype):
    origin = typing.get_origin(ftype)
    if origin is typing.Union or origin is getattr(types, "UnionType", None):  # str | None
        args = [a for a in typing.get_args(ftype) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _coerce(raw, args[0])
    if origin is tuple:
        args = typing.get_args(ftype)
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != len(args):
            raise ConfigError(f"expected {len(args)} comma-separated values, got {raw!r}")
        return tuple(a(p) for a, p in zip(args, parts))
    if ftype is bool:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if ftype in (int, float, str):
        return ftype(raw)
    raise ConfigError(f"unsupported config field type {ftype}")


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key=value`` lines (# comments) into a TrainConfig.

    Nested groups use dotted keys (``loss.tau_d=0.65``).  Unknown keys are
    rejected rather than ignored.
    """
    cfg = base if base is not None else TrainConfig()
    top_hints = typing.get_type_hints(TrainConfig)
    nested_hints = {k: typing.get_type_hints(v) for k, v in _NESTED.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if "." in key:
            group, sub = key.split(".", 1)
            if group not in _NESTED or sub not in nested_hints[group]:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            target = getattr(cfg, group)
            setattr(target, sub, _coerce(raw, nested_hints[group][sub]))
        else:
            if key not in top_hints or key in _NESTED:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            setattr(cfg, key, _coerce(raw, top_hints[key]))
    return cfg


def parse_config_file(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def render_config(cfg: TrainConfig) -> str:
    """Serialize a TrainConfig to the same key=value syntax the parser reads."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _NESTED:
            for sub in fields(value):
                v = getattr(value, sub.name)
                if isinstance(v, tuple):
                    v = ",".join(str(x) for x in v)
                lines.append(f"{f.name}.{sub.name}={v}")
        else:
            if isinstance(value, tuple):
                value = ",".join(str(x) for x in value)
            lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


class AdamOptimizer:
    """Standard Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict[str, dc.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(sorted(params.items()))
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.params.items()}

    def step(self, grads: dict[dc.Tensor, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingFault(f"non-finite gradient for parameter {name!r}")
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.asarray([float(self.t)], dtype=np.float32)}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, extra: dict[str, np.ndarray]):
        self.t = int(extra["adam.t"][0])
        for name in self.params:
            self.m[name] = extra[f"adam.m.{name}"].astype(self.m[name].dtype)
            self.v[name] = extra[f"adam.v.{name}"].astype(self.v[name].dtype)


@dataclass
class TrainResult:
    final_path: Path
    last_path: Path
    history: list[dict[str, float]]
    skipped_steps: int


def _extract_train(model: Model, image: np.ndarray, cfg: TrainConfig):
    maps = model.dense_maps(image)
    scores = maps.conf_flat.data.reshape(maps.height, maps.width)
    cells = select_keypoint_cells(scores, cfg.n_keypoints, cfg.nms_radius)
    return maps, maps.keypoint_set(cells)


class _TeacherCache:
    """Frozen-reference features per pair index (the dataset is fixed)."""

    def __init__(self, teacher: Model):
        self.teacher = teacher
        self._store: dict[int, tuple] = {}

    def asym_features(self, idx: int, pair: TrainingPair, cfg: TrainConfig):
        if idx not in self._store:
            with dc.no_grad():
                maps_a, t_a = _extract_train(self.teacher, pair.image_a, cfg)
                maps_b, t_b = _extract_train(self.teacher, pair.image_b, cfg)
            self._store[idx] = (t_a, t_b, maps_b.conf_flat.data.reshape(-1))
        return self._store[idx]

    def dense(self, idx: int, pair: TrainingPair, cfg: TrainConfig):
        if idx not in self._store:
            with dc.no_grad():
                maps = self.teacher.dense_maps(pair.image_a)
            self._store[idx] = (maps.desc_flat.data, maps.conf_flat.data)
        return self._store[idx]


def _symmetric_step(model: Model, pair: TrainingPair, cfg: TrainConfig) -> LossBreakdown | None:
    _, ks_a = _extract_train(model, pair.image_a, cfg)
    _, ks_b = _extract_train(model, pair.image_b, cfg)
    corr = ground_truth_correspondences(pair.h_ab, ks_a.positions, ks_b.positions, cfg.gt_tol)
    if not len(corr.pairs):
        return None
    s_ab = similarity_matrix(ks_a.descriptors, ks_b.descriptors, cfg.loss.tau_sim)
    p_ab = mutual_matching_matrix(s_ab, ks_a.confidences, ks_b.confidences)
    s_ba = similarity_matrix(ks_b.descriptors, ks_a.descriptors, cfg.loss.tau_sim)
    p_ba = mutual_matching_matrix(s_ba, ks_b.confidences, ks_a.confidences)
    res = geometric_matching_loss(p_ab, p_ba, corr, ks_a.conf, ks_b.conf, cfg.loss.tau_d)
    if res.count_ts + res.count_st == 0:
        return None
    total = res.loss
    zero = dc.Tensor(np.zeros((), dtype=res.loss.dtype))
    if cfg.det_neg_weight > 0:
        # The matching loss only ever pulls confidences toward 1, which in
        # self-supervised symmetric training saturates the detector into a
        # constant map (and a constant map has no usable local maxima).
        # Counterweight: push confidence down at selected keypoints that found
        # no geometric partner, so the detector learns repeatability contrast.
        pairs = np.asarray(corr.pairs, dtype=np.int64).reshape(-1, 2)
        for ks, matched in ((ks_a, pairs[:, 0]), (ks_b, pairs[:, 1])):
            unmatched = np.setdiff1d(np.arange(len(ks)), matched)
            if unmatched.size:
                # scale so total down-pressure is det_neg_weight times the
                # matched up-pressure regardless of the matched/unmatched ratio
                coeff = cfg.det_neg_weight * matched.size / unmatched.size
                w = dc.gather_rows(ks.confidences, unmatched)
                neg = dc.tsum(dc.log_clamped(dc.add(dc.scale(w, -1.0), 1.0)))
                total = dc.add(total, dc.scale(neg, -coeff))
    return LossBreakdown(res.loss, zero, zero, total, res.count_ts, res.count_st)


def _asymloc_step(model: Model, cache: _TeacherCache, idx: int,
                  pair: TrainingPair, cfg: TrainConfig) -> LossBreakdown | None:
    t_a, t_b, teacher_conf_b = cache.asym_features(idx, pair, cfg)
    smaps_a = model.dense_maps(pair.image_a)
    smaps_b = model.dense_maps(pair.image_b)
    scores_b = smaps_b.conf_flat.data.reshape(smaps_b.height, smaps_b.width)
    student_b = smaps_b.keypoint_set(
        select_keypoint_cells(scores_b, cfg.n_keypoints, cfg.nms_radius))
    kd_student_a = smaps_a.keypoint_set(t_a.cells)
    kd_student_b = smaps_b.keypoint_set(t_b.cells)
    corr = ground_truth_correspondences(pair.h_ab, t_a.positions, student_b.positions,
                                        cfg.gt_tol)
    w_gate_b = teacher_conf_b[student_b.cells]
    # match_only is literally the lambda_kd = 0 configuration, so the two
    # spellings produce identical training trajectories.
    lcfg = replace(cfg.loss, lambda_kd=0.0) if cfg.loss_terms == "match_only" else cfg.loss
    breakdown = asymloc_total_loss(t_a, t_b, kd_student_a, student_b, corr, lcfg,
                                   kd_student_a=kd_student_a, kd_student_b=kd_student_b,
                                   w_teacher_at_student_b=w_gate_b)
    if cfg.loss_terms == "kd_only":
        total = dc.scale(dc.add(breakdown.l_kd_st, breakdown.l_kd_ts), cfg.loss.lambda_kd)
        breakdown = LossBreakdown(breakdown.l_match, breakdown.l_kd_st, breakdown.l_kd_ts,
                                  total, breakdown.count_ts, breakdown.count_st)
    return breakdown


def _naive_step(model: Model, cache: _TeacherCache, idx: int,
                pair: TrainingPair, cfg: TrainConfig) -> LossBreakdown:
    t_desc, t_conf = cache.dense(idx, pair, cfg)
    smaps = model.dense_maps(pair.image_a)
    loss = naive_distill_loss(smaps.desc_flat, t_desc, smaps.conf_flat, t_conf)
    zero = dc.Tensor(np.zeros((), dtype=loss.dtype))
    return LossBreakdown(zero, zero, zero, loss)


def train(cfg: TrainConfig, out_dir, log=None, resume_from=None) -> TrainResult:
    """Run a full training job; returns checkpoint paths and loss history.

    Writes ``checkpoint_last.aloc`` (with optimizer state, for resuming) after
    every epoch and ``model.aloc`` (weights only) at the end.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = log or (lambda msg: None)

    dataset = PairDataset(DatasetConfig(
        num_pairs=cfg.pairs_per_epoch, image_size=cfg.image_size, seed=cfg.seed,
        hcfg=cfg.hcfg, acfg=cfg.acfg, corpus_dir=cfg.corpus_dir))
    pairs = [dataset.pair(i) for i in range(len(dataset))]

    start_epoch = 0
    if resume_from is not None:
        model, meta, extra = load_checkpoint(resume_from)
        if meta.get("train.mode") != cfg.mode:
            raise ConfigError(
                f"checkpoint mode {meta.get('train.mode')!r} does not match config {cfg.mode!r}")
        start_epoch = int(meta.get("train.epoch", "0"))
        optimizer = AdamOptimizer(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        optimizer.load_state(extra)
    else:
        model = build_model(VARIANTS[cfg.variant], np.random.default_rng([cfg.seed, 0xA5]))
        optimizer = AdamOptimizer(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    cache = None
    if cfg.mode in ("student_naive_distill", "student_asymloc"):
        teacher, _, _ = load_checkpoint(cfg.teacher_checkpoint)
        cache = _TeacherCache(teacher.frozen())

    history: list[dict[str, float]] = []
    skipped = 0
    last_path = out_dir / "checkpoint_last.aloc"
    param_list = [p for _, p in model.named_parameters()]

    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.time()
        sums: dict[str, float] = {}
        steps = 0
        for idx, pair in enumerate(pairs):
            if cfg.mode in ("teacher_symmetric", "student_standard"):
                breakdown = _symmetric_step(model, pair, cfg)
            elif cfg.mode == "student_asymloc":
                breakdown = _asymloc_step(model, cache, idx, pair, cfg)
            else:
                breakdown = _naive_step(model, cache, idx, pair, cfg)
            if breakdown is None:
                skipped += 1
                continue
            dc.zero_grad(param_list)
            grads = dc.backward(breakdown.total)
            optimizer.step(grads)
            steps += 1
            vals = breakdown.as_floats()
            for k, v in vals.items():
                sums[k] = sums.get(k, 0.0) + v
            if cfg.log_every and idx % cfg.log_every == 0:
                pieces = " ".join(f"{k}={v:.4f}" for k, v in vals.items())
                log(f"epoch {epoch} step {idx} {pieces}")
        means = {k: v / max(steps, 1) for k, v in sums.items()}
        means["epoch"] = float(epoch)
        means["steps"] = float(steps)
        history.append(means)
        log(f"epoch {epoch} done in {time.time() - t0:.1f}s "
            f"mean_total={means.get('total', float('nan')):.4f} steps={steps}")
        save_checkpoint(model, last_path,
                        metadata={"train.mode": cfg.mode, "train.epoch": str(epoch + 1),
                                  "train.seed": str(cfg.seed)},
                        extra_tensors=optimizer.state_tensors())

    final_path = out_dir / "model.aloc"
    save_checkpoint(model, final_path,
                    metadata={"train.mode": cfg.mode, "train.epoch": str(cfg.epochs),
                              "train.seed": str(cfg.seed)})
    (out_dir / "resolved_config.txt").write_text(render_config(cfg), encoding="utf-8")
    return TrainResult(final_path, last_path, history, skipped)
