"""Training objectives: geometric matching loss, joint detector-descriptor
distillation, their combination, and the naive dense-distillation baseline.

Conventions: descriptor sets are N x D unit-row tensors, confidences are
N x 1 tensors in (0,1).  Similarity matrices S are row-set x column-set.  The
mutual matching matrix P gates the product of row- and column-softmaxed
similarities by both detector confidences; matched log-probabilities are read
at ground-truth correspondence entries.  Distillation compares
detector-weighted similarity distributions of a frozen reference against the
student's via row- plus column-wise KL divergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import LOG_FLOOR, Tensor
from .errors import ConfigError, ShapeError
from .features import KeypointSet
from .geometry import CorrespondenceSet


@dataclass
class LossConfig:
    """Temperatures and weights of the combined objective."""

    tau_sim: float = 0.1
    tau_d: float = 0.65
    tau_s: float = 0.5
    tau_t: float = 0.5
    lambda_kd: float = 2.0

    def validate(self):
        if self.tau_sim <= 0 or self.tau_s <= 0 or self.tau_t <= 0:
            raise ConfigError("temperatures must be positive")
        if not (0.0 < self.tau_d < 1.0):
            raise ConfigError("tau_d must be in (0,1)")
        if self.lambda_kd < 0:
            raise ConfigError("lambda_kd must be >= 0")


def similarity_matrix(desc_a: Tensor, desc_b: Tensor, tau: float) -> Tensor:
    """S_ij = <d_a_i, d_b_j> / tau."""
    if tau <= 0:
        raise ConfigError("similarity temperature must be positive")
    if desc_a.shape[1] != desc_b.shape[1]:
        raise ShapeError(f"descriptor dim mismatch: {desc_a.shape} vs {desc_b.shape}")
    return dc.scale(dc.matmul(desc_a, dc.transpose(desc_b)), 1.0 / tau)


def mutual_matching_matrix(s: Tensor, w_row: Tensor, w_col: Tensor) -> Tensor:
    """P_ij = w_row_i * w_col_j * softmax_rows(S)_ij * softmax_cols(S)_ij."""
    n, m = s.shape
    if w_row.shape != (n, 1) or w_col.shape != (m, 1):
        raise ShapeError(
            f"confidence shapes {w_row.shape}/{w_col.shape} do not match S {s.shape}")
    gate = dc.mul(w_row, dc.transpose(w_col))
    return dc.mul(gate, dc.mul(dc.softmax_rows(s), dc.softmax_cols(s)))


@dataclass
class MatchLossResult:
    loss: Tensor
    count_ts: int
    count_st: int


def geometric_matching_loss(p_ts: Tensor, p_st: Tensor, corr: CorrespondenceSet,
                            w_teacher_a: np.ndarray, w_teacher_b: np.ndarray,
                            tau_d: float) -> MatchLossResult:
    """Negative log-likelihood of ground-truth matches, gated by teacher confidence.

    For each correspondence (i, j): -log(P_ts[i, j] + eps) when the teacher's
    confidence at a-keypoint i clears tau_d, and -log(P_st[j, i] + eps) when
    its confidence at the b-side keypoint j does.  Empty gated sets give 0.
    """
    w_teacher_a = np.asarray(w_teacher_a).reshape(-1)
    w_teacher_b = np.asarray(w_teacher_b).reshape(-1)
    pairs = np.asarray(corr.pairs, dtype=np.int64).reshape(-1, 2)
    terms = []
    count_ts = count_st = 0
    if pairs.size:
        keep_a = w_teacher_a[pairs[:, 0]] > tau_d
        if keep_a.any():
            sel = pairs[keep_a]
            terms.append(dc.tsum(dc.log_eps(dc.gather_entries(p_ts, sel[:, 0], sel[:, 1]))))
            count_ts = int(keep_a.sum())
        keep_b = w_teacher_b[pairs[:, 1]] > tau_d
        if keep_b.any():
            sel = pairs[keep_b]
            terms.append(dc.tsum(dc.log_eps(dc.gather_entries(p_st, sel[:, 1], sel[:, 0]))))
            count_st = int(keep_b.sum())
    if not terms:
        return MatchLossResult(Tensor(np.zeros((), dtype=p_ts.dtype)), 0, 0)
    total = terms[0] if len(terms) == 1 else dc.add(terms[0], terms[1])
    return MatchLossResult(dc.scale(total, -1.0), count_ts, count_st)


def detector_weighted_similarity(s: Tensor, w_row: Tensor, tau_row: float,
                                 w_col: Tensor, tau_col: float) -> Tensor:
    """S_bar_ij = (w_row_i / tau_row) * S_ij * (w_col_j / tau_col)."""
    if tau_row <= 0 or tau_col <= 0:
        raise ConfigError("detector-weighting temperatures must be positive")
    row_factor = dc.scale(w_row, 1.0 / tau_row)
    col_factor = dc.scale(dc.transpose(w_col), 1.0 / tau_col)
    return dc.mul(dc.mul(row_factor, s), col_factor)


def kd_loss(sbar_ref: Tensor, sbar_student: Tensor) -> Tensor:
    """Row-wise plus column-wise KL(softmax(ref) || softmax(student)).

    The reference is treated as a constant (frozen teacher); gradients flow
    only into the student matrix.  Logs are floored at log(1e-12).
    """
    if sbar_ref.shape != sbar_student.shape:
        raise ShapeError(f"KD shape mismatch: {sbar_ref.shape} vs {sbar_student.shape}")
    total = None
    for softmax, axis in ((dc.softmax_rows, 1), (dc.softmax_cols, 0)):
        p = dc._softmax(sbar_ref.data, axis=axis)
        log_p = np.log(np.maximum(p, LOG_FLOOR))
        const = float((p * log_p).sum())
        log_q = dc.log_clamped(softmax(sbar_student))
        cross = dc.tsum(dc.mul(Tensor(p.astype(sbar_student.dtype)), log_q))
        term = dc.add(dc.scale(cross, -1.0), float(const))
        total = term if total is None else dc.add(total, term)
    return total


@dataclass
class LossBreakdown:
    """Scalar pieces of the combined objective for one training pair."""

    l_match: Tensor
    l_kd_st: Tensor
    l_kd_ts: Tensor
    total: Tensor
    count_ts: int = 0
    count_st: int = 0

    def as_floats(self) -> dict[str, float]:
        return {
            "l_match": self.l_match.item(),
            "l_kd_st": self.l_kd_st.item(),
            "l_kd_ts": self.l_kd_ts.item(),
            "total": self.total.item(),
            "count_ts": self.count_ts,
            "count_st": self.count_st,
        }


def asymloc_total_loss(teacher_a: KeypointSet, teacher_b: KeypointSet,
                       student_a: KeypointSet, student_b: KeypointSet,
                       corr: CorrespondenceSet, cfg: LossConfig,
                       kd_student_a: KeypointSet | None = None,
                       kd_student_b: KeypointSet | None = None,
                       w_teacher_at_student_b: np.ndarray | None = None) -> LossBreakdown:
    """Combined objective: matching loss plus weighted joint distillation.

    The matching loss pairs teacher features on image a with student features
    on image b through ``corr`` (indices: a-side into ``teacher_a``, b-side
    into ``student_b``).  The two distillation terms compare detector-weighted
    teacher-teacher similarities against student-teacher ones; ``kd_student_a``
    / ``kd_student_b`` are student read-outs aligned with the teacher keypoint
    sets of the respective image (default: ``student_a`` / ``student_b``, which
    then must match the teacher sets in size).  ``w_teacher_at_student_b`` is
    the teacher's confidence at the b-side matching keypoints (default:
    teacher_b confidences, valid when the sets share keypoint cells).

    Teacher inputs are detached internally; they never receive gradients.
    """
    cfg.validate()
    for ks in (teacher_a, teacher_b, student_a, student_b):
        if ks.descriptors.shape[1] != teacher_a.descriptors.shape[1]:
            raise ShapeError("descriptor dimensionality differs between models")
    t_a = teacher_a.detached()
    t_b = teacher_b.detached()
    kd_student_a = kd_student_a if kd_student_a is not None else student_a
    kd_student_b = kd_student_b if kd_student_b is not None else student_b
    if w_teacher_at_student_b is None:
        if len(t_b) != len(student_b):
            raise ShapeError("w_teacher_at_student_b required when teacher_b and "
                             "student_b keypoint sets differ in size")
        w_gate_b = t_b.conf
    else:
        w_gate_b = np.asarray(w_teacher_at_student_b).reshape(-1)

    # geometric matching between teacher(a) and student(b)
    s_ts = similarity_matrix(t_a.descriptors, student_b.descriptors, cfg.tau_sim)
    p_ts = mutual_matching_matrix(s_ts, t_a.confidences, student_b.confidences)
    s_st = similarity_matrix(student_b.descriptors, t_a.descriptors, cfg.tau_sim)
    p_st = mutual_matching_matrix(s_st, student_b.confidences, t_a.confidences)
    match = geometric_matching_loss(p_ts, p_st, corr, t_a.conf, w_gate_b, cfg.tau_d)

    def kd_direction(teacher_rows: KeypointSet, teacher_cols: KeypointSet,
                     student_rows: KeypointSet) -> Tensor:
        s_tt = similarity_matrix(teacher_rows.descriptors, teacher_cols.descriptors, cfg.tau_sim)
        sbar_tt = detector_weighted_similarity(
            s_tt, teacher_rows.confidences, cfg.tau_t, teacher_cols.confidences, cfg.tau_t)
        s_stu = similarity_matrix(student_rows.descriptors, teacher_cols.descriptors, cfg.tau_sim)
        sbar_stu = detector_weighted_similarity(
            s_stu, student_rows.confidences, cfg.tau_s, teacher_cols.confidences, cfg.tau_t)
        return kd_loss(sbar_tt, sbar_stu)

    l_kd_st = kd_direction(t_b, t_a, kd_student_b)
    l_kd_ts = kd_direction(t_a, t_b, kd_student_a)

    kd_sum = dc.add(l_kd_st, l_kd_ts)
    total = dc.add(match.loss, dc.scale(kd_sum, cfg.lambda_kd))
    return LossBreakdown(match.loss, l_kd_st, l_kd_ts, total, match.count_ts, match.count_st)


def naive_distill_loss(student_desc: Tensor, teacher_desc: np.ndarray,
                       student_conf: Tensor, teacher_conf: np.ndarray) -> Tensor:
    """Dense per-pixel distillation baseline.

    Mean cosine distance between student and teacher descriptor vectors plus
    mean soft binary cross-entropy between student confidence and the
    teacher's probability map.  Inputs are flattened (h*w) x D descriptor and
    (h*w) x 1 confidence read-outs of spatially aligned maps.
    """
    teacher_desc = np.asarray(teacher_desc)
    teacher_conf = np.asarray(teacher_conf).reshape(-1, 1)
    if student_desc.shape != teacher_desc.shape:
        raise ShapeError(f"descriptor map shapes differ: {student_desc.shape} vs {teacher_desc.shape}")
    if student_conf.shape != teacher_conf.shape:
        raise ShapeError(f"confidence map shapes differ: {student_conf.shape} vs {teacher_conf.shape}")
    n = teacher_conf.shape[0]

    s_n = dc.l2_normalize_rows(student_desc)
    t_n = teacher_desc / np.maximum(
        np.linalg.norm(teacher_desc, axis=1, keepdims=True), 1e-8)
    cos_sum = dc.tsum(dc.mul(s_n, Tensor(t_n.astype(teacher_desc.dtype))))
    cosine_term = dc.add(dc.scale(cos_sum, -1.0 / n), 1.0)

    t = Tensor(teacher_conf.astype(np.float64) if student_conf.dtype == np.float64
               else teacher_conf.astype(np.float32))
    log_p = dc.log_clamped(student_conf)
    log_1mp = dc.log_clamped(dc.add(dc.scale(student_conf, -1.0), 1.0))
    bce = dc.add(dc.mul(t, log_p), dc.mul(dc.add(dc.scale(t, -1.0), 1.0), log_1mp))
    bce_term = dc.scale(dc.tsum(bce), -1.0 / n)
    return dc.add(cosine_term, bce_term)
