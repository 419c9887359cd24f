"""CLI behavior: exit codes, artifacts, and the end-to-end tiny pipeline."""

import numpy as np
import pytest

from asymloc.cli import EXIT_ASSERT, EXIT_FAULT, EXIT_OK, EXIT_USAGE, main
from asymloc.datagen import synth_base_image
from asymloc.features import load_checkpoint
from asymloc.formats import read_features, read_manifest


def write_pgm(path, arr):
    arr = (np.clip(arr, 0, 1) * 255).astype(np.uint8)
    h, w = arr.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


TEACHER_CFG = (
    "variant=teacher\nepochs=1\npairs_per_epoch=3\nimage_size=96\n"
    "n_keypoints=64\nnms_radius=1\nlog_every=0\n")


@pytest.fixture(scope="module")
def teacher_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_teacher")
    cfg = root / "teacher.cfg"
    cfg.write_text(TEACHER_CFG)
    out = root / "run"
    assert main(["train-teacher", "--config", str(cfg), "--out", str(out),
                 "--seed", "0"]) == EXIT_OK
    return out


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


def test_missing_file_is_fault(tmp_path, capsys):
    assert main(["eval", "--teacher", str(tmp_path / "nope.aloc"),
                 "--out", str(tmp_path / "o")]) == EXIT_FAULT
    assert "error:" in capsys.readouterr().err


def test_train_teacher_writes_artifacts(teacher_dir):
    assert (teacher_dir / "model.aloc").exists()
    assert (teacher_dir / "checkpoint_last.aloc").exists()
    assert "mode=teacher_symmetric" in (teacher_dir / "resolved_config.txt").read_text()
    model, meta, _ = load_checkpoint(teacher_dir / "model.aloc")
    assert meta["train.mode"] == "teacher_symmetric"


def test_train_student_all_modes(teacher_dir, tmp_path):
    cfg = tmp_path / "student.cfg"
    cfg.write_text(TEACHER_CFG.replace("variant=teacher", "variant=v04"))
    teacher = str(teacher_dir / "model.aloc")
    for mode in ("standard", "naive-distill", "asymloc"):
        out = tmp_path / mode
        assert main(["train-student", "--mode", mode, "--teacher", teacher,
                     "--config", str(cfg), "--out", str(out), "--seed", "1"]) == EXIT_OK
        assert (out / "model.aloc").exists()


def test_student_distill_without_teacher_is_fault(tmp_path, capsys):
    assert main(["train-student", "--mode", "asymloc",
                 "--out", str(tmp_path / "o")]) == EXIT_FAULT


def test_extract_match_localize_pipeline(teacher_dir, tmp_path, capsys):
    images = tmp_path / "imgs"
    images.mkdir()
    for i in range(3):
        write_pgm(images / f"img{i}.pgm",
                  synth_base_image(np.random.default_rng(i), (96, 96)))
    model = str(teacher_dir / "model.aloc")
    map_dir = tmp_path / "map"
    assert main(["extract", "--model", model, "--images", str(images),
                 "--out", str(map_dir), "--num-keypoints", "64",
                 "--nms-radius", "1"]) == EXIT_OK
    entries = read_manifest(map_dir / "manifest.tsv")
    assert len(entries) == 3
    for _, rel, w, h in entries:
        assert (w, h) == (96, 96)
        width, height, pos, conf, desc = read_features(map_dir / rel)
        assert len(pos) > 0 and desc.shape[1] == 64

    query = map_dir / "img1.alft"
    match_out = tmp_path / "matches.tsv"
    assert main(["match", "--query", str(query), "--map", str(map_dir),
                 "--out", str(match_out)]) == EXIT_OK
    rows = {line.split("\t")[0]: line.split("\t")
            for line in match_out.read_text().splitlines()[1:]}
    # the query matches itself perfectly
    _, _, q_pos, _, q_desc = read_features(query)
    assert int(rows["img1"][1]) == len(q_pos)
    assert float(rows["img1"][2]) == pytest.approx(1.0, abs=1e-5)

    loc_out = tmp_path / "loc.tsv"
    assert main(["localize", "--query", str(query), "--map", str(map_dir),
                 "--out", str(loc_out), "--seed", "0"]) == EXIT_OK
    lines = loc_out.read_text().splitlines()
    best = [l for l in lines if l.startswith("best\t")][0].split("\t")
    assert best[1] == "img1"
    hom = [l for l in lines if l.startswith("homography\t")][0].split("\t")[1]
    h = np.array([float(v) for v in hom.split(",")]).reshape(3, 3)
    assert np.allclose(h, np.eye(3), atol=1e-3)


def test_extract_matches_in_process_extraction(teacher_dir, tmp_path):
    from asymloc.datagen import decode_image
    from asymloc.features import extract_features

    images = tmp_path / "imgs"
    images.mkdir()
    write_pgm(images / "a.pgm", synth_base_image(np.random.default_rng(9), (96, 96)))
    out = tmp_path / "map"
    assert main(["extract", "--model", str(teacher_dir / "model.aloc"),
                 "--images", str(images), "--out", str(out),
                 "--num-keypoints", "64", "--nms-radius", "1"]) == EXIT_OK
    _, _, pos, conf, desc = read_features(out / "a.alft")
    model, _, _ = load_checkpoint(teacher_dir / "model.aloc")
    ks = extract_features(model, decode_image(images / "a.pgm"),
                          n=64, nms_radius=1)
    assert np.array_equal(pos, ks.positions.astype(np.float32))
    assert np.allclose(desc, ks.desc.astype(np.float32))


def test_eval_reports_and_determinism(teacher_dir, tmp_path):
    teacher = str(teacher_dir / "model.aloc")
    args = ["eval", "--teacher", teacher, "--num-pairs", "2",
            "--image-size", "96", "--num-keypoints", "64", "--nms-radius", "1",
            "--pairs-seed", "123"]
    out1, out2 = tmp_path / "e1", tmp_path / "e2"
    assert main(args + ["--out", str(out1)]) == EXIT_OK
    assert main(args + ["--out", str(out2)]) == EXIT_OK
    assert (out1 / "eval_report.tsv").read_bytes() == (out2 / "eval_report.tsv").read_bytes()
    header = (out1 / "eval_report.tsv").read_text().splitlines()[0]
    assert header.startswith("label\thea@1\thea@3\thea@5")


def test_eval_with_student_emits_three_rows(teacher_dir, tmp_path):
    teacher = str(teacher_dir / "model.aloc")
    out = tmp_path / "e"
    assert main(["eval", "--teacher", teacher, "--student", teacher,
                 "--num-pairs", "2", "--image-size", "96",
                 "--num-keypoints", "64", "--nms-radius", "1",
                 "--out", str(out)]) == EXIT_OK
    lines = (out / "eval_report.tsv").read_text().splitlines()
    labels = [l.split("\t")[0] for l in lines[1:]]
    assert labels == ["teacher-teacher", "student-student", "student-teacher"]


def test_curve_with_missing_checkpoint(teacher_dir, tmp_path):
    teacher = str(teacher_dir / "model.aloc")
    out = tmp_path / "c"
    assert main(["curve", "--teacher", teacher,
                 "--checkpoints", f"teacher={teacher},ghost=/no/such.aloc",
                 "--num-pairs", "2", "--image-size", "96",
                 "--num-keypoints", "64", "--nms-radius", "1",
                 "--out", str(out)]) == EXIT_OK
    text = (out / "efficiency_report.tsv").read_text()
    assert "missing checkpoint" in text


def test_curve_malformed_checkpoints_is_fault(teacher_dir, tmp_path):
    assert main(["curve", "--teacher", str(teacher_dir / "model.aloc"),
                 "--checkpoints", "no-equals-here",
                 "--out", str(tmp_path / "c")]) == EXIT_FAULT


def test_gradcheck_passes():
    assert main(["gradcheck", "--seed", "0"]) == EXIT_OK
