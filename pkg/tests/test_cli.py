import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from iciclegcn.checkpoint import read_checkpoint
from iciclegcn.cli import main
from iciclegcn.config import OUTPUT_FILES
from iciclegcn.data import read_dataset

TINY_INI = """
[run]
seed = 3

[contrastive]
epochs = 2
batch_size = 8
embed_dim = 8
proj_dim = 4
ae_hidden = 12, 12
lr = 0.001

[graph]
k_a = 1
k_b = 3

[mgcn]
n_it = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "toy.icg"
    assert main(["data", "gen", "--k", "2", "--per-cluster", "6", "--size", "10", "--seed", "1", "--out", str(data)]) == 0
    cfg = root / "tiny.ini"
    cfg.write_text(TINY_INI)
    return root, data, cfg


def run_config(root, data, out, extra="", base=TINY_INI):
    path = root / f"{out}.ini"
    path.write_text(base + f"\n[data]\npath = {data}\n\n[output]\ndir = {root / out}\n" + extra)
    return path


class TestDataGen:
    def test_writes_dataset(self, workspace):
        _, data, _ = workspace
        ds = read_dataset(data)
        assert ds.images.shape == (12, 3, 10, 10) and ds.num_clusters == 2

    def test_invalid_spec_is_config_error(self, tmp_path):
        code = main(["data", "gen", "--k", "1", "--out", str(tmp_path / "x.icg")])
        assert code == 2


class TestStages:
    def test_phase1_graph_phase2_eval(self, workspace, capsys):
        root, data, cfg = workspace
        ck1, ck2 = root / "p1.ckpt", root / "p2.ckpt"
        labels, truth = root / "labels.txt", root / "truth.txt"
        assert main(["train-phase1", "--data", str(data), "--config", str(cfg), "--out", str(ck1), "--log", str(root / "p1.jsonl")]) == 0
        state = read_checkpoint(ck1)
        assert state["features.Zb"].shape == (12, 8)
        assert "backbone.conv1.K" in state and "ae.enc0.W" in state
        records = [json.loads(line) for line in (root / "p1.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in records] == [1, 2]

        edges = root / "edges.txt"
        assert main(["graph", "--features", str(ck1), "--k", "2", "--out", str(edges)]) == 0
        pairs = [tuple(map(int, line.split())) for line in edges.read_text().splitlines()]
        assert pairs == sorted(pairs) and all(i < j for i, j in pairs)

        args = ["train-phase2", "--data", str(data), "--ckpt", str(ck1), "--config", str(cfg)]
        assert main(args + ["--out", str(ck2), "--labels-out", str(labels)]) == 0
        pred = [int(v) for v in labels.read_text().split()]
        assert len(pred) == 12 and set(pred) <= {0, 1}
        assert "mgcn.stream_b.W3" not in read_checkpoint(ck2)
        assert "mgcn.stream_b.W2" in read_checkpoint(ck2)

        truth.write_text("".join(f"{v}\n" for v in read_dataset(data).labels))
        capsys.readouterr()
        assert main(["eval", "--truth", str(truth), "--pred", str(labels)]) == 0
        header, row = capsys.readouterr().out.splitlines()
        assert header == "acc,nmi,ari"
        acc = float(row.split(",")[0])
        assert 0.5 <= acc <= 1.0

    def test_graph_without_features(self, tmp_path):
        from iciclegcn.checkpoint import write_checkpoint

        ck = tmp_path / "x.ckpt"
        write_checkpoint({"w": np.ones(2)}, ck)
        assert main(["graph", "--features", str(ck), "--k", "1", "--out", str(tmp_path / "e.txt")]) == 3

    def test_eval_bad_labels(self, tmp_path):
        (tmp_path / "a.txt").write_text("0\n1\n")
        (tmp_path / "b.txt").write_text("0\nx\n")
        assert main(["eval", "--truth", str(tmp_path / "a.txt"), "--pred", str(tmp_path / "b.txt")]) == 3


class TestRun:
    def test_full_run_artifacts(self, workspace):
        root, data, _ = workspace
        cfg = run_config(root, data, "full")
        assert main(["run", "--config", str(cfg)]) == 0
        out = root / "full"
        assert sorted(p.name for p in out.iterdir()) == sorted(OUTPUT_FILES)
        assert (out / "metrics.csv").read_text().startswith("acc,nmi,ari\n")
        assert (out / "confusion.csv").read_text().startswith("true\\pred,0,1\n")
        records = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
        assert sum(r["phase"] == 1 for r in records) == 2 and sum(r["phase"] == 2 for r in records) == 4
        assert {"cis_loss", "ccs_loss", "re_loss", "total"} <= set(records[0])
        assert {"re_loss", "cluster_loss", "kl_a", "kl_b", "total", "rowsum_violations"} <= set(records[-1])

    def test_dry_run_writes_nothing(self, workspace):
        root, data, _ = workspace
        cfg = run_config(root, data, "dry")
        assert main(["run", "--config", str(cfg), "--dry-run"]) == 0
        assert not (root / "dry").exists()

    def test_unknown_key_exit_2(self, workspace, capsys):
        root, data, _ = workspace
        cfg = run_config(root, data, "typo", base=TINY_INI.replace("n_it = 4", "n_it = 4\nsgima = 0.4"))
        assert main(["run", "--config", str(cfg)]) == 2
        assert "sgima" in capsys.readouterr().err

    def test_bad_data_exit_3(self, workspace, capsys):
        root, _, _ = workspace
        bad = root / "bad.icg"
        bad.write_bytes(b"NOPE" + bytes(40))
        cfg = run_config(root, bad, "bad")
        assert main(["run", "--config", str(cfg), "--dry-run"]) == 3
        assert "validate" in capsys.readouterr().err

    def test_divergence_exit_4(self, workspace, capsys):
        root, data, _ = workspace
        path = run_config(root, data, "diverge", base=TINY_INI.replace("lr = 0.001", "lr = 1e300"))
        assert main(["run", "--config", str(path)]) == 4
        assert "phase1" in capsys.readouterr().err

    @pytest.mark.skipif(shutil.which("icicle") is None, reason="console script not installed")
    def test_console_script_exit_code(self, workspace):
        root, data, _ = workspace
        cfg = run_config(root, data, "script", base=TINY_INI.replace("k_b = 3", "k_b = 3\nbogus = 1"))
        proc = subprocess.run(["icicle", "run", "--config", str(cfg), "--dry-run"], capture_output=True, text=True)
        assert proc.returncode == 2
        assert "bogus" in proc.stderr

    def test_module_entry(self):
        proc = subprocess.run([sys.executable, "-m", "iciclegcn.cli", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "train-phase2" in proc.stdout
