"""End-to-end pipeline driver: artifacts, manifests, exit codes."""

import json
import math

import numpy as np
import pytest
import yaml

from gcnet.cli import main
from gcnet.datasets import load_dataset
from gcnet.manifest import load_manifest
from gcnet.policy import PolicyNetwork

CONFIG = {
    "problem": "transfer",
    "seed": 5,
    "solve": {"restarts": 8, "early_stop_residual": 1e-8,
              "sample_count": 60},
    "generate": {
        "bc_bundles": [
            {"delta": 1e-3, "a": 1.0, "c_max": 0.07, "count": 8},
            {"delta": 0.08, "a": 1.0, "c_max": 0.07, "count": 8},
        ],
        "refine_bundle": {"delta": 1e-3, "a": 1.0, "c_max": 0.0, "count": 8},
        "val_fraction": 0.5,
    },
    "clone": {"epochs": 40, "lr0": 2e-3, "batch_size": 512,
              "hidden": [8, 8]},
    "refine_node": {"iterations": 2, "batch_size": 2, "golden_evals": 6},
    "dagger": {"iterations": 1, "rollout_samples": 3, "threshold": 1e-6,
               "retrain": {"epochs": 5, "lr0": 1e-3}},
    "evaluate": {"rel_tol": 1e-9},
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run every subcommand once into a shared output directory."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "pipeline.yaml"
    config.write_text(yaml.safe_dump(CONFIG))
    out = root / "runs"
    base = ["--config", str(config), "--out-dir", str(out)]
    assert main(["solve", *base]) == 0
    assert main(["generate", *base]) == 0
    assert main(["clone", *base]) == 0
    assert main(["refine-node", *base]) == 0
    assert main(["refine-dagger", *base]) == 0
    assert main(["eval", *base, "--label", "bc"]) == 0
    assert main(["eval", *base, "--weights", str(out / "policy_node.wts"),
                 "--label", "node"]) == 0
    assert main(["compare", *base, str(out / "eval_bc.json"),
                 str(out / "eval_node.json")]) == 0
    return config, out


def test_solve_artifacts(pipeline):
    _, out = pipeline
    assert (out / "nominal.ds").is_file()
    doc = json.loads((out / "solve.json").read_text())
    years = doc["tof"] / (2.0 * math.pi)
    assert abs(years - 4.62) / 4.62 < 0.01
    assert doc["residual_norm"] < 1e-8
    nominal = load_dataset(out / "nominal.ds")
    assert len(nominal) == 1 and nominal.sample_count == 60
    manifest = load_manifest(out / "solve.manifest.json")
    assert manifest["command"] == "solve" and manifest["seed"] == 5
    assert "config" in manifest["inputs"]


def test_solve_rerun_byte_identical(pipeline, tmp_path):
    config, out = pipeline
    out2 = tmp_path / "again"
    assert main(["solve", "--config", str(config),
                 "--out-dir", str(out2)]) == 0
    for name in ("nominal.ds", "solve.json", "solve.manifest.json"):
        assert (out2 / name).read_bytes() == (out / name).read_bytes()


def test_generate_artifacts(pipeline):
    _, out = pipeline
    train = load_dataset(out / "train.ds")
    d_t = load_dataset(out / "refine_train.ds")
    d_v = load_dataset(out / "refine_val.ds")
    assert len(train) == 16 and len(d_t) == 4 and len(d_v) == 4
    doc = json.loads((out / "generate.json").read_text())
    deltas = [b["config"]["delta"] for b in doc["bc_bundles"]]
    assert deltas == [1e-3, 0.08]
    assert doc["refine_bundle"]["config"]["count"] == 8
    assert doc["counts"]["train"] == 16


def test_clone_artifacts(pipeline):
    _, out = pipeline
    net = PolicyNetwork.load(out / "policy_bc.wts")
    assert net.hidden == (8, 8)
    history = np.genfromtxt(out / "clone_history.csv", delimiter=",",
                            names=True)
    assert history.shape[0] == CONFIG["clone"]["epochs"]
    doc = json.loads((out / "clone.json").read_text())
    assert doc["hidden"] == [8, 8]
    assert np.isfinite(doc["best_val_loss"])


def test_refine_node_artifacts(pipeline):
    _, out = pipeline
    PolicyNetwork.load(out / "policy_node.wts")
    rows = (out / "refine_node_records.csv").read_text().splitlines()
    assert rows[0].startswith("iteration,train_loss")
    assert len(rows) == 1 + CONFIG["refine_node"]["iterations"]


def test_refine_dagger_artifacts(pipeline):
    _, out = pipeline
    PolicyNetwork.load(out / "policy_dagger.wts")
    assert (out / "dagger_records.csv").is_file()
    prov = json.loads((out / "dagger.ds.provenance.json").read_text())
    assert prov["aggregated"] == len(prov["entries"])
    if prov["aggregated"] > 0:
        assert len(load_dataset(out / "dagger.ds")) == prov["aggregated"]
        assert prov["entries"][0]["pair_loss"] > 0.0


def test_eval_and_compare_artifacts(pipeline):
    _, out = pipeline
    doc = json.loads((out / "eval_bc.json").read_text())
    assert doc["trajectories"] == 4
    assert doc["position_unit"] == "km"
    lines = (out / "comparison.csv").read_text().splitlines()
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "bc" and float(first[3]) == 0.0


def test_eval_manifest_tracks_weights(pipeline):
    _, out = pipeline
    manifest = load_manifest(out / "eval-node.manifest.json")
    assert set(manifest["inputs"]) >= {"weights", "dataset"}


def test_missing_input_exit_code(pipeline, tmp_path, capsys):
    config, _ = pipeline
    rc = main(["clone", "--config", str(config), "--out-dir", str(tmp_path),
               "--dataset", "nope.ds"])
    assert rc == 4
    assert "nope.ds" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("solve: {bogus: 1}\n")
    rc = main(["solve", "--config", str(bad), "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


def test_foreign_file_exit_code(pipeline, tmp_path, capsys):
    config, out = pipeline
    junk = tmp_path / "junk.ds"
    junk.write_bytes(b"not a dataset")
    rc = main(["eval", "--config", str(config), "--out-dir", str(out),
               "--dataset", str(junk), "--label", "junk"])
    assert rc == 4
    assert "junk.ds" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = {"problem": "transfer",
           "solve": {"restarts": 1, "max_nfev_search": 2,
                     "max_nfev_polish": 2}}
    path = tmp_path / "hopeless.yaml"
    path.write_text(yaml.safe_dump(cfg))
    rc = main(["solve", "--config", str(path), "--out-dir", str(tmp_path)])
    assert rc == 3
    assert "best residual" in capsys.readouterr().err


def test_compare_mismatch_exit_code(pipeline, tmp_path, capsys):
    config, out = pipeline
    doc = json.loads((out / "eval_bc.json").read_text())
    doc["trajectories"] = 99
    other = tmp_path / "other.json"
    other.write_text(json.dumps(doc))
    rc = main(["compare", "--config", str(config), "--out-dir",
               str(tmp_path), str(out / "eval_bc.json"), str(other)])
    assert rc == 2
    assert "different datasets" in capsys.readouterr().err
