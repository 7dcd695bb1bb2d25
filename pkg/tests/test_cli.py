import hashlib
import json

import pytest
import yaml

from safedrive import harness
from safedrive.cli import main
from safedrive.neural import load_params

SMALL = {"agent": {"episodes": 20, "eval_every": 10, "eval_episodes": 2}, "lookahead": {"epochs": 2}}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg_path = root / "small.yaml"
    cfg_path.write_text(yaml.safe_dump(SMALL))
    base = ["--config", str(cfg_path), "--seed", "3"]
    assert main(["train", *base, "--variant", "handcrafted", "--out", str(root / "hc")]) == 0
    ckpt = root / "hc" / harness.FINAL_CKPT
    assert main(["evaluate", *base, "--checkpoint", str(ckpt), "--densities", "0,3",
                 "--episodes", "3", "--out", str(root / "eval")]) == 0
    return root, cfg_path, base


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_train_outputs(runs):
    root, _, _ = runs
    out = root / "hc"
    for name in (harness.FINAL_CKPT, harness.TRAINING_CSV, harness.PARTIAL_CSV, harness.MANIFEST, "config.yaml"):
        assert (out / name).is_file()
    rows = harness.read_csv(out / harness.TRAINING_CSV)
    assert [int(r["episode"]) for r in rows] == list(range(20))
    assert list(rows[0]) == harness.TRAINING_HEADER
    partial = harness.read_csv(out / harness.PARTIAL_CSV)
    assert [int(r["episode"]) for r in partial] == [10, 20]
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["episode_00010.ckpt", "episode_00020.ckpt"]
    man = harness.RunManifest.read(out / harness.MANIFEST)
    assert man.command == "train" and man.seed == 3
    assert all(r["run"] == man.run_id for r in rows)


def test_evaluate_outputs(runs):
    root, _, _ = runs
    rows = harness.read_csv(root / "eval" / harness.EVAL_CSV)
    assert [int(r["density"]) for r in rows] == [0, 3]
    assert all(int(r["episodes"]) == 3 for r in rows)
    # nothing to hit on an empty road
    assert int(rows[0]["collisions"]) == 0
    assert harness.RunManifest.read(root / "eval" / harness.MANIFEST).label == "handcrafted"


def test_evaluate_leaves_the_checkpoint_alone(runs):
    root, _, base = runs
    ckpt = root / "hc" / harness.FINAL_CKPT
    before = _digest(ckpt)
    params, _ = load_params(ckpt)
    assert main(["evaluate", *base, "--checkpoint", str(ckpt), "--densities", "2",
                 "--episodes", "2", "--out", str(root / "eval2")]) == 0
    assert _digest(ckpt) == before
    again, _ = load_params(ckpt)
    assert all((a == b).all() for a, b in zip(params.arrays, again.arrays))


def test_train_and_evaluate_are_byte_identical(runs, tmp_path):
    root, _, base = runs
    assert main(["train", *base, "--variant", "handcrafted", "--out", str(tmp_path / "hc")]) == 0
    for name in (harness.TRAINING_CSV, harness.PARTIAL_CSV, harness.FINAL_CKPT):
        assert _digest(tmp_path / "hc" / name) == _digest(root / "hc" / name)
    assert main(["evaluate", *base, "--checkpoint", str(root / "hc" / harness.FINAL_CKPT),
                 "--densities", "0,3", "--episodes", "3", "--out", str(tmp_path / "eval")]) == 0
    assert _digest(tmp_path / "eval" / harness.EVAL_CSV) == _digest(root / "eval" / harness.EVAL_CSV)


def test_moved_checkpoint_gives_the_same_run(runs, tmp_path):
    root, _, base = runs
    moved = tmp_path / "elsewhere.ckpt"
    moved.write_bytes((root / "hc" / harness.FINAL_CKPT).read_bytes())
    assert main(["evaluate", *base, "--checkpoint", str(moved), "--densities", "0,3",
                 "--episodes", "3", "--out", str(tmp_path / "eval")]) == 0
    assert _digest(tmp_path / "eval" / harness.EVAL_CSV) == _digest(root / "eval" / harness.EVAL_CSV)
    man = harness.RunManifest.read(tmp_path / "eval" / harness.MANIFEST)
    assert man.input_paths["checkpoint"] == str(moved)


def test_other_seed_differs(runs, tmp_path):
    root, cfg_path, _ = runs
    args = ["--config", str(cfg_path), "--seed", "4", "--checkpoint", str(root / "hc" / harness.FINAL_CKPT),
            "--densities", "0,3", "--episodes", "3", "--out", str(tmp_path / "e")]
    assert main(["evaluate", *args]) == 0
    a = harness.read_csv(tmp_path / "e" / harness.EVAL_CSV)
    b = harness.read_csv(root / "eval" / harness.EVAL_CSV)
    assert a[1]["mean_reward"] != b[1]["mean_reward"]


def test_collect_train_rnn_and_export(runs, tmp_path):
    root, _, base = runs
    assert main(["collect", *base, "--checkpoint", str(root / "hc" / harness.FINAL_CKPT),
                 "--episodes", "2", "--out", str(tmp_path / "data")]) == 0
    assert main(["train-rnn", *base, "--dataset", str(tmp_path / "data"), "--out", str(tmp_path / "rnn")]) == 0
    report = json.loads((tmp_path / "rnn" / harness.MANIFEST).read_text())["extra"]["report"]
    assert report["train_windows"] + report["val_windows"] == 2 * 193
    assert harness.load_predictor(tmp_path / "rnn" / harness.RNN_CKPT).horizon == 4

    export_dir = tmp_path / "tables"
    assert main(["export", str(root), "--out", str(export_dir)]) == 0
    first = {p.name: _digest(p) for p in export_dir.iterdir()}
    assert set(first) == {harness.CURVES_CSV, harness.EVAL_TABLE_CSV, harness.COLLISIONS_CSV}
    assert main(["export", str(root), "--out", str(export_dir)]) == 0
    assert first == {p.name: _digest(p) for p in export_dir.iterdir()}
    curves = harness.read_csv(export_dir / harness.CURVES_CSV)
    assert {(r["variant"], r["seed"]) for r in curves} == {("handcrafted", "3")}
    collisions = harness.read_csv(export_dir / harness.COLLISIONS_CSV)
    assert [r["density"] for r in collisions] == ["0", "2", "3"]


def test_export_requires_manifests(runs, tmp_path, capsys):
    root, _, _ = runs
    stray = tmp_path / "stray"
    stray.mkdir()
    (stray / harness.EVAL_CSV).write_text((root / "eval" / harness.EVAL_CSV).read_text())
    assert main(["export", str(tmp_path)]) == 2
    assert "manifest" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["evaluate", "--checkpoint", "/nonexistent.ckpt", "--out", "OUT"],
        ["train", "--variant", "both", "--out", "OUT"],
        ["evaluate", "--checkpoint", "CKPT", "--densities", "7", "--out", "OUT"],
    ],
)
def test_errors_exit_with_status_two(runs, tmp_path, argv, capsys):
    root, _, _ = runs
    argv = [a.replace("OUT", str(tmp_path / "o")).replace("CKPT", str(root / "hc" / harness.FINAL_CKPT))
            for a in argv]
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("safedrive: error:")


def test_bad_config_key(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("agent:\n  epsiodes: 3\n")
    assert main(["train", "--config", str(bad), "--variant", "none", "--out", str(tmp_path / "o")]) == 2
    assert "epsiodes" in capsys.readouterr().err


def test_usage_errors_exit_via_argparse():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--variant", "sideways", "--out", "x"])
    assert exc.value.code == 2
