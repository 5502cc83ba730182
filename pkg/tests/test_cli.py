import json
import os
import shutil

import numpy as np
import pytest

from cvrlab import _main
from cvrlab.autodiff import ops
from cvrlab.cli import run


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def tree_bytes(root, skip=("run_manifest.json",)):
    """Map of relative path -> file bytes, skipping provenance files."""
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            if name in skip:
                continue
            full = os.path.join(dirpath, name)
            out[os.path.relpath(full, root)] = read(full)
    return out


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "d"
    code = run(["gen", "--rules", "size", "--n-train", "8", "--n-val", "4",
                "--n-test", "4", "--seed", "5", "--res", "32",
                "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def tiny_run(tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "r"
    code = run(["train", "--data", str(tiny_data), "--out", str(out),
                "--epochs", "1", "--batch-size", "4", "--res", "32",
                "--seed", "7"])
    assert code == 0
    return out


class TestGen:
    def test_example_counts(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert run(["gen", "--rules", "size", "--n-train", "10", "--n-val", "5",
                    "--n-test", "5", "--seed", "1", "--res", "32",
                    "--out", str(out)]) == 0
        lines = sum(len(read(out / s / "manifest.jsonl").splitlines())
                    for s in ("train", "val", "test"))
        ppms = sum(name.endswith(".ppm")
                   for _, _, names in os.walk(out) for name in names)
        assert lines == 20
        assert ppms == 80
        payload = json.loads(capsys.readouterr().out)
        assert payload["panels"] == {"train": 10, "val": 5, "test": 5}

    def test_run_manifest_written(self, tiny_data):
        manifest = json.loads(read(tiny_data / "run_manifest.json"))
        assert manifest["command"][0:2] == ["cvrlab", "gen"]
        assert manifest["config"]["rules"] == ["size"]
        assert manifest["config"]["seed"] == 5
        assert manifest["dataset_manifest_sha256"] is None
        assert "created_utc" in manifest

    def test_force_reproduces_tree(self, tmp_path, capsys):
        out = tmp_path / "d"
        args = ["gen", "--rules", "size,color", "--n-train", "3", "--n-val",
                "2", "--n-test", "2", "--seed", "9", "--res", "32",
                "--out", str(out)]
        assert run(args) == 0
        first = tree_bytes(out)
        assert run(args + ["--force"]) == 0
        assert tree_bytes(out) == first
        capsys.readouterr()

    def test_nonempty_out_needs_force(self, tmp_path, capsys):
        out = tmp_path / "d"
        out.mkdir()
        (out / "stale.txt").write_text("x")
        args = ["gen", "--rules", "size", "--n-train", "1", "--n-val", "1",
                "--n-test", "1", "--res", "32", "--out", str(out)]
        assert run(args) == 2
        assert "--force" in capsys.readouterr().err
        assert run(args + ["--force"]) == 0
        capsys.readouterr()

    def test_unknown_rule_named(self, tmp_path, capsys):
        code = run(["gen", "--rules", "nosuchrule", "--out",
                    str(tmp_path / "d")])
        assert code == 2
        assert "nosuchrule" in capsys.readouterr().err

    def test_missing_flag_is_usage_error(self, capsys):
        assert run(["gen", "--rules", "size"]) == 2
        capsys.readouterr()


class TestTrainEval:
    def test_train_artifacts(self, tiny_run):
        for name in ("checkpoint.ckpt", "history.csv", "config.json",
                     "run_manifest.json"):
            assert (tiny_run / name).exists()
        manifest = json.loads(read(tiny_run / "run_manifest.json"))
        assert set(manifest["dataset_manifest_sha256"]) == {"train", "val"}
        cfg = json.loads(read(tiny_run / "config.json"))
        assert cfg["epochs"] == 1
        assert cfg["seed"] == 7

    def test_history_matches_epochs(self, tiny_run):
        lines = read(tiny_run / "history.csv").decode().splitlines()
        assert lines[0] == "epoch,L,L_BCE,L_C,val_acc,seconds"
        assert len(lines) == 2

    def test_eval_writes_stable_metrics(self, tiny_run, tiny_data, tmp_path,
                                        capsys):
        out = tmp_path / "m"
        args = ["eval", "--run", str(tiny_run), "--data", str(tiny_data),
                "--split", "test", "--out", str(out)]
        assert run(args) == 0
        stdout = json.loads(capsys.readouterr().out)
        blob = read(out / "metrics.json")
        assert json.loads(blob) == stdout
        assert set(stdout) >= {"accuracy", "per_rule", "n_panels"}
        assert stdout["per_rule"]["size"]["n"] == 4

        assert run(args) == 0
        capsys.readouterr()
        assert read(out / "metrics.json") == blob

    def test_eval_default_out_keeps_train_manifest(self, tiny_run, tiny_data,
                                                   capsys):
        before = read(tiny_run / "run_manifest.json")
        assert run(["eval", "--run", str(tiny_run), "--data", str(tiny_data),
                    "--split", "val"]) == 0
        capsys.readouterr()
        assert read(tiny_run / "run_manifest.json") == before
        assert (tiny_run / "eval-val" / "metrics.json").exists()

    def test_untrained_model_near_chance(self, tiny_data, tmp_path, capsys):
        out = tmp_path / "r0"
        assert run(["train", "--data", str(tiny_data), "--out", str(out),
                    "--epochs", "0", "--res", "32"]) == 0
        capsys.readouterr()
        assert run(["eval", "--run", str(out), "--data", str(tiny_data),
                    "--split", "val"]) == 0
        metrics = json.loads(capsys.readouterr().out)
        # Zero logits predict slot 0 for all panels; on 4 panels any
        # accuracy is possible, we only require valid bookkeeping here.
        assert 0.0 <= metrics["accuracy"] <= 1.0
        assert metrics["n_panels"] == 4

    def test_corrupt_manifest_exit3(self, tiny_data, tmp_path, capsys):
        broken = tmp_path / "broken"
        shutil.copytree(tiny_data, broken)
        manifest = broken / "val" / "manifest.jsonl"
        lines = read(manifest).decode().splitlines()
        lines[0] = lines[0][: len(lines[0]) // 2]
        manifest.write_text("\n".join(lines) + "\n")
        run_dir = tmp_path / "r"
        assert run(["train", "--data", str(broken), "--out", str(run_dir),
                    "--epochs", "0", "--res", "32"]) == 3
        err = capsys.readouterr().err
        assert "manifest.jsonl:1" in err

    def test_missing_image_exit3(self, tiny_data, tmp_path, capsys):
        broken = tmp_path / "gone"
        shutil.copytree(tiny_data, broken)
        victim = sorted((broken / "val" / "img").iterdir())[0]
        record = victim.name
        victim.unlink()
        assert run(["train", "--data", str(broken), "--out",
                    str(tmp_path / "r"), "--epochs", "0", "--res", "32"]) == 3
        assert record.split("_")[0] in capsys.readouterr().err


class TestAblate:
    def test_grid_k_four_rows(self, tiny_data, tmp_path, capsys):
        out = tmp_path / "a"
        assert run(["ablate", "--grid", "k", "--data", str(tiny_data),
                    "--out", str(out), "--epochs", "0", "--res", "32"]) == 0
        capsys.readouterr()
        lines = read(out / "report.csv").decode().splitlines()
        rows = [dict(zip(lines[0].split(","), line.split(",")))
                for line in lines[1:]]
        assert len(rows) == 4
        assert [int(r["num_blocks"]) for r in rows] == [1, 2, 3, 4]

    def test_unknown_grid(self, tiny_data, tmp_path, capsys):
        assert run(["ablate", "--grid", "nope", "--data", str(tiny_data),
                    "--out", str(tmp_path / "a")]) == 2
        assert "nope" in capsys.readouterr().err

    def test_bad_seed_list(self, tiny_data, tmp_path, capsys):
        assert run(["ablate", "--grid", "k", "--data", str(tiny_data),
                    "--out", str(tmp_path / "a"), "--seeds", "0,x"]) == 2
        capsys.readouterr()


class TestGradcheck:
    def test_clean_pass(self, capsys):
        assert run(["gradcheck"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["passed"] is True
        assert report["failed_ops"] == []
        ops_checked = [c["op"] for c in report["checks"]]
        assert len(ops_checked) == len(set(ops_checked))

    def test_catalog_ops_covered_once(self, capsys):
        assert run(["gradcheck"]) == 0
        report = json.loads(capsys.readouterr().out)
        names = {c["op"] for c in report["checks"]}
        for op in ("add", "sub", "mul", "relu", "sigmoid", "log", "exp",
                   "linear", "conv2d", "group_norm", "mean", "sum", "reshape",
                   "concat", "l2_norm", "dot", "avg_pool2d", "max_pool2d",
                   "bce_with_logits", "contrast_loss"):
            assert op in names

    def test_corrupted_conv_fails(self, capsys):
        assert run(["gradcheck", "--corrupt-op", "conv2d"]) == 4
        captured = capsys.readouterr()
        report = json.loads(captured.out)
        assert report["passed"] is False
        assert any(name.startswith("conv2d") for name in report["failed_ops"])
        assert "conv2d" in captured.err


class TestThreadCap:
    def test_cap_applied(self, monkeypatch):
        monkeypatch.setenv("CVRLAB_THREADS", "2")
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            monkeypatch.delenv(var, raising=False)
        _main._apply_thread_cap()
        assert os.environ["OPENBLAS_NUM_THREADS"] == "2"
        assert os.environ["OMP_NUM_THREADS"] == "2"
        assert os.environ["MKL_NUM_THREADS"] == "2"

    def test_unset_leaves_env_alone(self, monkeypatch):
        monkeypatch.delenv("CVRLAB_THREADS", raising=False)
        monkeypatch.delenv("OPENBLAS_NUM_THREADS", raising=False)
        _main._apply_thread_cap()
        assert "OPENBLAS_NUM_THREADS" not in os.environ

    @pytest.mark.parametrize("bad", ["zero", "0", "-3", ""])
    def test_bad_cap_rejected(self, monkeypatch, capsys, bad):
        monkeypatch.setenv("CVRLAB_THREADS", bad)
        if bad == "":
            _main._apply_thread_cap()  # empty means unset
            return
        with pytest.raises(SystemExit) as exc:
            _main._apply_thread_cap()
        assert exc.value.code == 2
        capsys.readouterr()
