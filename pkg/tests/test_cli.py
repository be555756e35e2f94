import csv
import json

import numpy as np
import pytest

from oepg.cli import CSV_COLUMNS, main
from oepg.graph import load_dataset


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out)


@pytest.fixture
def workspace(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text("epochs = 2\nwarmup_epochs = 1\nlayers = 1\nhidden_dim = 6\nscales = 4,2\nbudget = 2\nbatch_size = 8\n")
    code, out = run(capsys, "gen-sbm", "--classes", "2", "--nodes-per-class", "12", "--p-in", "0.5", "--noise", "0.3",
                    "--seed", "1", "--out", str(tmp_path))
    assert code == 0
    return tmp_path, cfg, out["dataset"]


def test_gen_sbm_writes_loadable_dataset(workspace):
    _, _, path = workspace
    (g,) = load_dataset(path)
    assert g.num_nodes == 24 and g.node_labels is not None


def test_pretrain_embed_probe_pipeline(workspace, capsys):
    tmp, cfg, data = workspace
    code, out = run(capsys, "pretrain", data, "--config", str(cfg), "--seed", "3", "--out", str(tmp))
    assert code == 0 and out["epochs"] == 2 and len(out["loss_history"]) == 2
    ckpt = out["checkpoint"]

    code, out = run(capsys, "embed", data, ckpt, "--out", str(tmp))
    assert code == 0 and np.loadtxt(out["embeddings"], delimiter=",").shape == (24, 6)

    code, out = run(capsys, "probe", data, ckpt, "--metric", "macro-f1", "--seeds", "0,1", "--label-ratio", "0.25",
                    "--out", str(tmp))
    assert code == 0 and len(out["values"]) == 2 and 0 <= out["mean"] <= 1

    code, out = run(capsys, "probe", data, ckpt, "--no-descriptors", "--imbalance-ratio", "0.5", "--label-ratio", "0.3",
                    "--metric", "auc", "--out", str(tmp))
    assert code == 0 and out["split"].startswith("imbalanced")

    with open(tmp / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [r["stage"] for r in rows] == ["oepg", "no-descriptors"] and rows[0]["seeds"] == "0;1"


def test_ablate_and_sweep(workspace, capsys):
    tmp, cfg, data = workspace
    code, out = run(capsys, "ablate", data, "--config", str(cfg), "--seeds", "0", "--label-ratio", "0.25", "--out", str(tmp))
    assert code == 0 and list(out["stages"]) == ["baseline", "+ego-semantic", "+omni-granular norm", "+pretext tasks",
                                                  "+momentum update"]
    code, out = run(capsys, "sweep-diversity", "--classes", "2,3", "--nodes-per-class", "8", "--config", str(cfg),
                    "--out", str(tmp))
    assert code == 0 and [r["classes"] for r in out["rows"]] == [2, 3]
    with open(tmp / "results.csv") as fh:
        stages = [r["stage"] for r in csv.DictReader(fh)]
    assert stages[:5][0] == "baseline" and "classes=3" in stages


def test_errors_reported_as_json(tmp_path, capsys):
    code, out = run(capsys, "pretrain", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path))
    assert code == 2 and out["error"]


def test_mode_and_no_descriptors_flags(workspace, capsys):
    tmp, cfg, data = workspace
    code, out = run(capsys, "pretrain", data, "--config", str(cfg), "--no-descriptors", "--mode", "node", "--out", str(tmp),
                    "--name", "plain.oepg")
    from oepg.trainer import load_checkpoint

    ckpt = load_checkpoint(out["checkpoint"])
    assert ckpt.config.use_descriptors is False and ckpt.hierarchy is None
