import json

import numpy as np
import pytest

from hetrain import cli, persist
from hetrain.he_nn import init_network
from hetrain.packed_linalg import Layout
from hetrain.slot_engine import EngineContext


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_train_writes_metrics_and_checkpoint(tmp_path, capsys):
    m, c = tmp_path / "m.csv", tmp_path / "c.json"
    code, out, _ = run(["train", "--epochs", "2", "--metrics-out", str(m), "--checkpoint-out", str(c)], capsys)
    assert code == 0
    assert "test_acc=" in out and "rotations=" in out and "min_level=" in out and "wall_time=" in out
    lines = m.read_text().splitlines()
    assert lines[0] == ",".join(persist.METRICS_HEADER)
    assert [int(l.split(",")[0]) for l in lines[1:]] == [1, 2]
    doc = json.loads(c.read_text())
    assert doc["format"] == "hetrain-checkpoint" and doc["layout"] == "diag" and doc["epoch"] == 2


def test_metrics_are_byte_identical_across_runs(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p, threads in zip(paths, ("1", "3")):
        assert cli.main(["train", "--epochs", "2", "--noise-std", "1e-6", "--threads", threads,
                         "--metrics-out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    records = persist.read_metrics(paths[0])
    assert [r.cum_mults for r in records] == sorted(r.cum_mults for r in records)


def test_resume_continues_the_same_trajectory(tmp_path, capsys):
    full, half, rest = tmp_path / "full.json", tmp_path / "half.json", tmp_path / "rest.json"
    assert cli.main(["train", "--epochs", "3", "--checkpoint-out", str(full)]) == 0
    assert cli.main(["train", "--epochs", "1", "--checkpoint-out", str(half)]) == 0
    assert cli.main(["train", "--epochs", "2", "--resume", str(half), "--checkpoint-out", str(rest)]) == 0
    a, b = json.loads(full.read_text()), json.loads(rest.read_text())
    assert a["layers"] == b["layers"] and b["epoch"] == 3


@pytest.mark.parametrize("layout", list(Layout))
def test_checkpoint_round_trip(layout, tmp_path):
    ctx = EngineContext(level_budget=12)
    net = init_network([4, 10, 3], layout, 0.1, 3, ctx)
    persist.save_checkpoint(tmp_path / "c.json", net, seed=3, epoch=0)
    back, doc = persist.load_checkpoint(tmp_path / "c.json")
    assert doc["seed"] == 3 and back.layout is layout and back.padded_dims == net.padded_dims
    for l1, l2 in zip(net.layers, back.layers):
        assert l1.weights.shape == l2.weights.shape and l1.weights.layout is l2.weights.layout
        for p1, p2 in zip(l1.weights.parts, l2.weights.parts):
            assert np.array_equal(p1.slots, p2.slots) and p1.level == p2.level
        assert np.array_equal(l1.bias.slots, l2.bias.slots)


def test_bad_checkpoint_is_a_data_error(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"format": "something-else"}))
    code, _, err = run(["train", "--epochs", "1", "--resume", str(p)], capsys)
    assert code == cli.EXIT_DATA and "not a checkpoint" in err


def test_row_packing_at_nine_levels_exits_with_depth_error(capsys):
    code, _, err = run(["train", "--packing", "row", "--levels", "9", "--epochs", "1"], capsys)
    assert code == cli.EXIT_DEPTH
    assert "--levels" in err and "packing" in err


def test_default_levels_depend_on_packing():
    assert cli.RunConfig(packing="row").levels == 12
    assert cli.RunConfig(packing="diag").levels == 9
    assert cli.RunConfig(packing="diag-stepped").levels == 9


@pytest.mark.parametrize("argv", [
    ["train", "--epochs", "0"],
    ["train", "--batch-size", "-1"],
    ["train", "--lr", "-0.1"],
    ["train", "--threads", "0"],
])
def test_invalid_config_exits_2(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == cli.EXIT_CONFIG and "config error" in err


def test_argparse_errors_exit_2(capsys):
    for argv in (["train", "--packing", "spiral"], ["opcount", "--net", "6,x"], []):
        with pytest.raises(SystemExit) as e:
            cli.main(argv)
        assert e.value.code == 2


def test_missing_data_exits_3(tmp_path, capsys):
    code, _, err = run(["train", "--epochs", "1", "--data", str(tmp_path / "none.csv")], capsys)
    assert code == cli.EXIT_DATA and "none.csv" in err


def test_malformed_data_exits_3(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("5.1,3.5,1.4,0.2,setosa\n5.1,3.5,1.4,0.2\n")
    code, _, err = run(["train", "--epochs", "1", "--data", str(p)], capsys)
    assert code == cli.EXIT_DATA and "bad.csv:2" in err


def test_untrained_accuracy_with_lr_zero(capsys):
    from hetrain import reference
    from hetrain.data import load_iris

    code, out, _ = run(["train", "--epochs", "1", "--lr", "0"], capsys)
    ds = load_iris(seed=0)
    X, Y = ds.subset(ds.test_idx)
    _, acc = reference.loss_and_accuracy(reference.init_params([4, 10, 3], 0.1, 0), X, Y)
    assert code == 0 and f"test_acc={acc:.4f}" in out


def test_opcount_reports(capsys):
    code, out, _ = run(["opcount", "--net", "6,3,1", "--packing", "diag"], capsys)
    assert code == 0
    assert "ratio diag/row" in out and "published counts" in out
    ratio = float(out.strip().rsplit("=", 1)[1])
    assert ratio <= 0.4
    transition = [l for l in out.splitlines() if l.startswith("Transition")]
    assert transition and all(int(l.split()[2]) == 0 for l in transition)
    code, out, _ = run(["opcount", "--net", "2,2", "--packing", "diag"], capsys)
    ff = [l for l in out.splitlines() if l.startswith("FF") and "dense0" in l][0]
    assert int(ff.split()[2]) == 2


def test_compare_writes_both_series(tmp_path, capsys):
    m = tmp_path / "he.csv"
    code, out, _ = run(["compare", "--epochs", "2", "--metrics-out", str(m)], capsys)
    assert code == 0
    assert (tmp_path / "he.plain.csv").exists()
    div = float(out.splitlines()[0].rsplit(":", 1)[1])
    assert div <= 1e-6
