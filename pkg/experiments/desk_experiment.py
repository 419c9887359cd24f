"""Full desk-scale run mirroring the acceptance fixture: train teacher +
students, evaluate all configurations, print HEA table."""
import sys, time, pathlib, numpy as np
from asymloc.trainer import TrainConfig, train
from asymloc.features import load_checkpoint
from asymloc.evalkit import held_out_pairs, homography_estimation_accuracy, model_extractor
from asymloc.geometry import HomographyConfig

ROOT = pathlib.Path(sys.argv[1])
TEACHER = sys.argv[2] if len(sys.argv) > 2 else None  # reuse existing teacher
EVAL_PAIRS = int(sys.argv[3]) if len(sys.argv) > 3 else 200

MILD_H = dict(max_corner_perturb_frac=0.08, max_rotation_deg=8.0,
              translation_frac=0.03, scale_range=(0.9, 1.1))

def desk_config(mode, variant, teacher_path=None, **over):
    cfg = TrainConfig(mode=mode, variant=variant, epochs=30, pairs_per_epoch=100,
                      image_size=96, n_keypoints=256, nms_radius=0, log_every=0,
                      seed=0, teacher_checkpoint=teacher_path)
    cfg.hcfg = HomographyConfig(**MILD_H)
    for k, v in over.items():
        if k == "loss_terms":
            cfg.loss_terms = v
        else:
            setattr(cfg.loss, k, v)
    return cfg

t0 = time.time()
if TEACHER is None:
    res = train(desk_config("teacher_symmetric", "teacher"), ROOT / "teacher",
                log=lambda m: print("[teacher]", m, flush=True))
    TEACHER = str(res.final_path)
print(f"teacher ready at {time.time()-t0:.0f}s: {TEACHER}", flush=True)

runs = {
    "standard": desk_config("student_standard", "v04"),
    "asym_both": desk_config("student_asymloc", "v04", TEACHER),
    "asym_match_only": desk_config("student_asymloc", "v04", TEACHER, loss_terms="match_only"),
    "asym_kd_only": desk_config("student_asymloc", "v04", TEACHER, loss_terms="kd_only"),
    "asym_lambda1": desk_config("student_asymloc", "v04", TEACHER, lambda_kd=1.0),
    "asym_lambda4": desk_config("student_asymloc", "v04", TEACHER, lambda_kd=4.0),
}
ckpt = {"teacher": TEACHER}
for name, cfg in runs.items():
    t1 = time.time()
    out = ROOT / name
    if (out / "model.aloc").exists():
        ckpt[name] = str(out / "model.aloc")
        print(f"{name}: reusing existing checkpoint", flush=True)
        continue
    r = train(cfg, out)
    ckpt[name] = str(r.final_path)
    print(f"{name}: trained in {time.time()-t1:.0f}s skipped={r.skipped_steps}", flush=True)

pairs = held_out_pairs(EVAL_PAIRS, 96, seed=10_000, hcfg=HomographyConfig(**MILD_H))
ex = {}
for name, path in ckpt.items():
    model, _, _ = load_checkpoint(path)
    ex[name] = model_extractor(model, 256, 0)

def ev(a, b, label, rand=False):
    t1 = time.time()
    r = homography_estimation_accuracy(pairs, ex[a], ex[b], (1.0, 3.0, 5.0),
                                       randomize_sides=rand, seed=0, label=label)
    print(f"{label}: HEA={tuple(round(h,3) for h in r.hea)} prec={r.precision:.3f} "
          f"rec={r.recall:.3f} ({time.time()-t1:.0f}s)", flush=True)
    return r

ev("teacher", "teacher", "teacher-teacher")
ev("standard", "standard", "standard-ss")
for name in ("asym_both", "asym_match_only", "asym_kd_only", "asym_lambda1", "asym_lambda4"):
    ev("teacher", name, name, rand=True)
print(f"total {time.time()-t0:.0f}s")
