import re
import time

import numpy as np
import pytest

from cosmix import formats
from cosmix.cli import main
from cosmix.core import IGNORE, PointCloud

SMALL = ["--set", "epochs_warmup=2", "--set", "epochs_adapt=2"]


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert main(["bench", str(out), "--n-scans", "6", "--n-val", "3", "--seed", "1"]) == 0
    return out


def test_bench_layout(bench):
    for split in ("source", "target", "target_val"):
        assert len(formats.scan_paths(bench / split)) == (3 if split == "target_val" else 6)
        assert (bench / split / "classes.txt").read_text().splitlines()[0] == "1 ground"
    assert (bench / "bench.cfg").is_file()


def test_stats_counts_all_points(bench, tmp_path, capsys):
    assert main(["stats", str(bench / "source"), "--out", str(tmp_path / "h.txt")]) == 0
    hist = formats.read_histogram(tmp_path / "h.txt")
    total = sum(c.count for c, _ in formats.load_dataset(bench / "source"))
    assert sum(hist.values()) == total
    assert set(hist) == {1, 2, 3, 4, 5}


def test_stats_with_class_map(bench, tmp_path, capsys):
    (tmp_path / "m.txt").write_text("0 ignore\n1 10\n2 20\n3 20\n4 30\n5 30\n")
    assert main(["stats", str(bench / "source"), "--class-map", str(tmp_path / "m.txt")]) == 0
    keys = [int(line.split()[0]) for line in capsys.readouterr().out.splitlines()]
    assert keys == [10, 20, 30]


def test_stats_empty_dir(tmp_path, capsys):
    assert main(["stats", str(tmp_path)]) == 2
    assert "EmptyDataset" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main(["stats", "x", "--set", "novalue"]) == 1
    assert main(["stats", "x", "--set", "bogus=1"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def _mix_inputs(tmp_path, seed=0):
    rng = np.random.default_rng(seed)
    src = PointCloud(np.column_stack([rng.normal(0, 5, size=(40, 3)), rng.uniform(size=40)]))
    tgt = PointCloud(np.column_stack([rng.normal(0, 5, size=(30, 3)), rng.uniform(size=40)[:30]]))
    formats.write_scan(src, tmp_path / "s.bin")
    formats.write_labels(rng.integers(1, 4, size=40), tmp_path / "s.label")
    formats.write_scan(tgt, tmp_path / "t.bin")
    formats.write_predictions(rng.integers(1, 4, size=30), rng.uniform(size=30), tmp_path / "p.bin")
    return [str(tmp_path / n) for n in ("s.bin", "s.label", "t.bin", "p.bin")]


def test_mix_is_deterministic(tmp_path, capsys):
    args = _mix_inputs(tmp_path)
    assert main(["mix", *args, str(tmp_path / "a"), "--seed", "7", "--ply"]) == 0
    assert main(["mix", *args, str(tmp_path / "b"), "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert re.search(r"s2t patch classes: [\d ]+", out)
    for branch in ("s2t", "t2s"):
        for ext in ("bin", "label", "prov"):
            a = (tmp_path / f"a.{branch}.{ext}").read_bytes()
            assert a == (tmp_path / f"b.{branch}.{ext}").read_bytes()
        assert (tmp_path / f"a.{branch}.ply").is_file()


def test_mix_degenerate_equals_concat(tmp_path):
    args = _mix_inputs(tmp_path, seed=1)
    flags = ["--no-local-aug", "--no-global-aug", "--keep", "1.0", "--seed", "3"]
    assert main(["mix", *args, str(tmp_path / "m"), *flags]) == 0
    src = formats.read_scan(args[0])
    src_labels = formats.read_labels(args[1], src.count, unlabeled_id=0)
    tgt = formats.read_scan(args[2])
    out = formats.read_scan(tmp_path / "m.t2s.bin")
    labels = formats.read_labels(tmp_path / "m.t2s.label", out.count, unlabeled_id=0)
    prov = formats.read_mask(tmp_path / "m.t2s.prov")
    # base rows first, untouched; patches are target rows in ascending class order
    assert np.array_equal(out.points[: src.count], src.points)
    assert np.array_equal(labels[: src.count], src_labels)
    assert np.all(prov[: src.count] == 0) and np.all(prov[src.count :] == 1)
    patch_labels = labels[src.count :]
    assert np.all(np.diff(patch_labels) >= 0)
    tgt_rows = {tuple(r) for r in tgt.points.tolist()}
    assert all(tuple(r) in tgt_rows for r in out.points[src.count :].tolist())
    s2t = formats.read_scan(tmp_path / "m.s2t.bin")
    assert np.array_equal(s2t.points[: tgt.count], tgt.points)


def test_mix_missing_prediction_file(tmp_path, capsys):
    args = _mix_inputs(tmp_path)
    args[3] = str(tmp_path / "missing.bin")
    assert main(["mix", *args, str(tmp_path / "x")]) == 2


def test_adapt_then_eval_reproduces_logged_miou(bench, tmp_path, capsys):
    run = tmp_path / "run"
    code = main(
        ["adapt", str(bench / "source"), str(bench / "target"), str(run),
         "--eval-dir", str(bench / "target_val"), "--config", str(bench / "bench.cfg"), *SMALL]
    )
    assert code == 0
    for name in ("run.cfg", "histogram.txt", "warmup.ckpt", "student.ckpt", "teacher.ckpt", "metrics.log"):
        assert (run / name).is_file()
    lines = (run / "metrics.log").read_text().splitlines()
    assert lines[0] == "iter epoch loss_s2t loss_t2s miou"
    assert len(lines) == 4
    logged = float(lines[-1].split()[-1])
    capsys.readouterr()
    assert main(["eval", str(bench / "target_val"), str(run / "student.ckpt"), "--config", str(run / "run.cfg")]) == 0
    out = capsys.readouterr().out
    assert float(out.strip().splitlines()[-1].split()[1]) == logged
    assert "vegetation" in out


def test_adapt_all_flags_off_is_source_only(bench, tmp_path):
    run = tmp_path / "off"
    flags = [f"--set={k}=false" for k in ("branch_s2t", "branch_t2s", "ema")]
    assert main(["adapt", str(bench / "source"), str(bench / "target"), str(run),
                 "--config", str(bench / "bench.cfg"), *SMALL, *flags]) == 0
    warm = formats.load_params(run / "warmup.ckpt")
    assert np.array_equal(formats.load_params(run / "student.ckpt"), warm)
    assert np.array_equal(formats.load_params(run / "teacher.ckpt"), warm)


def test_adapt_is_deterministic(bench, tmp_path):
    logs = []
    for name in ("a", "b"):
        run = tmp_path / name
        assert main(["adapt", str(bench / "source"), str(bench / "target"), str(run),
                     "--config", str(bench / "bench.cfg"), *SMALL, "--seed", "4"]) == 0
        logs.append(((run / "metrics.log").read_bytes(), (run / "student.ckpt").read_bytes()))
    assert logs[0] == logs[1]


def test_nan_loss_exits_3(bench, tmp_path, monkeypatch, capsys):
    from cosmix.segmenter import ToySegmenter

    def nan_loss(self, clouds, labels):
        return float("nan"), np.zeros(self.n_params)

    monkeypatch.setattr(ToySegmenter, "loss_and_grad", nan_loss)
    code = main(["adapt", str(bench / "source"), str(bench / "target"), str(tmp_path / "nan"),
                 "--config", str(bench / "bench.cfg"), *SMALL])
    assert code == 3
    assert "numeric failure" in capsys.readouterr().err


def test_export_ply(tmp_path):
    cloud = PointCloud.from_xyz([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])
    formats.write_scan(cloud, tmp_path / "c.bin")
    formats.write_labels([1, IGNORE], tmp_path / "c.label")
    assert main(["export-ply", str(tmp_path / "c.bin"), str(tmp_path / "c.ply"), "--labels", str(tmp_path / "c.label")]) == 0
    assert "element vertex 2" in (tmp_path / "c.ply").read_text()


def test_end_to_end_within_budget(tmp_path, capsys):
    t0 = time.perf_counter()
    root = tmp_path / "bench"
    assert main(["bench", str(root), "--n-scans", "200", "--n-val", "50"]) == 0
    assert main(["stats", str(root / "source"), "--out", str(tmp_path / "hist.txt")]) == 0
    run = tmp_path / "run"
    assert main(["adapt", str(root / "source"), str(root / "target"), str(run),
                 "--eval-dir", str(root / "target_val"), "--config", str(root / "bench.cfg")]) == 0
    assert main(["eval", str(root / "target_val"), str(run / "student.ckpt"), "--config", str(run / "run.cfg")]) == 0
    assert time.perf_counter() - t0 <= 15 * 60
    log = (run / "metrics.log").read_text().splitlines()
    first, last = float(log[1].split()[-1]), float(log[-1].split()[-1])
    assert last > first
