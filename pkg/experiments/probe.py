"""Quick diagnostic: train briefly, then inspect detector stats and HEA."""
import sys, time, pathlib, numpy as np
from asymloc.trainer import TrainConfig, parse_config_file, parse_config_text, train
from asymloc.features import load_checkpoint, extract_features
from asymloc.evalkit import held_out_pairs, homography_estimation_accuracy, model_extractor
from asymloc.geometry import ground_truth_correspondences

out = pathlib.Path(sys.argv[1]); epochs = int(sys.argv[2])
cfg = parse_config_file('/root/pkg/experiments/desk_teacher.cfg')
cfg.epochs = epochs
cfg = parse_config_text("\n".join(sys.argv[3:]), cfg)
t0 = time.time()
res = train(cfg, out, log=lambda m: print(m, flush=True))
print(f"trained in {time.time()-t0:.0f}s, skipped {res.skipped_steps}")
model, _, _ = load_checkpoint(res.final_path)
size = cfg.image_size
pairs = held_out_pairs(30, size, seed=10000, hcfg=cfg.hcfg)
p = pairs[0]
ka = extract_features(model, p.image_a, 256, 0)
kb = extract_features(model, p.image_b, 256, 0)
print("kps:", len(ka), len(kb), "conf quantiles:", np.quantile(ka.conf, [0, .25, .5, .75, 1]).round(3))
corr = ground_truth_correspondences(p.h_ab, ka.positions, kb.positions, 3.0)
print("gt pairs:", len(corr.pairs))
ex = model_extractor(model, 256, 0)
r = homography_estimation_accuracy(pairs, ex, ex, (1.0, 3.0, 5.0), seed=0)
print("HEA", r.hea, "prec", round(r.precision, 3), "rec", round(r.recall, 3))
