import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from invarlab.cli import DEFAULTS, config_hash, main, resolve_config
from invarlab.errors import ConfigError

SMALL = '{"classes": 4, "samples": 6, "size": 12}'


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


class TestConfig:
    def test_defaults_and_overrides(self):
        cfg = resolve_config("simsearch", {"fraction": 0.5}, {"seed": 3})
        assert cfg["fraction"] == 0.5 and cfg["seed"] == 3 and cfg["budget"] is None

    @pytest.mark.parametrize("doc,key", [({"levles": [1]}, "levles"), ({"budget": "x"}, "budget"),
                                         ({"seed": 1.5}, "seed"), ({"per_pair_baseline": 1}, "per_pair_baseline")])
    def test_rejects(self, doc, key):
        with pytest.raises(ConfigError) as exc:
            resolve_config("invariance", doc)
        assert exc.value.key == key

    def test_hash_is_canonical(self):
        a = resolve_config("rank", {"key": "mean", "top_k": 3})
        b = resolve_config("rank", {"top_k": 3, "key": "mean"})
        assert config_hash("rank", a) == config_hash("rank", b)
        assert config_hash("rank", a) != config_hash("rank", resolve_config("rank", {"top_k": 4}))

    def test_every_command_has_seed(self):
        assert all("seed" in d for d in DEFAULTS.values())


class TestCommands:
    def test_synth_simsearch_rank_matches_planted(self, tmp_path):
        data, sim, rank = tmp_path / "data", tmp_path / "sim", tmp_path / "rank"
        assert main(["synth-gen", "--out", str(data), "--classes", "14", "--samples", "12", "--size", "16"]) == 0
        assert main(["simsearch", "--out", str(sim), "--dataset", str(data)]) == 0
        assert main(["rank", "--out", str(rank), "--input", str(sim / "simchange.json")]) == 0
        tops = read_csv(rank / "top_kinds.csv")
        assert len(tops) == 14 and all(r["match"] == "1" for r in tops)
        manifest = read_csv(data / "manifest.csv")
        planted = {r["class"]: r["planted_kind"] for r in manifest}
        assert {r["class"]: r["top_kind"] for r in tops} == planted
        split = json.loads((rank / "category_split.json").read_text())
        assert split["catalog_balance"]["geometric"] == 108

    def test_invariance_identity_all_ones(self, tmp_path):
        out = tmp_path / "inv"
        assert main(["invariance", "--out", str(out), "--synthetic", SMALL, "--provider", "conv-gap",
                     "--specs", '["rotate:0"]', "--plot-data"]) == 0
        rows = read_csv(out / "invariance.csv")
        assert len(rows) == 1 and float(rows[0]["mean"]) == 1.0
        vals = [float(r["value"]) for r in read_csv(out / "invariance_values.csv")]
        assert len(vals) == 24 and all(v == 1.0 for v in vals)

    def test_transform_command(self, tmp_path):
        from invarlab.image import Image, read_image, write_image

        src = tmp_path / "in.ppm"
        write_image(Image(np.full((3, 4, 3), 0.2)), src)
        out = tmp_path / "t"
        assert main(["transform", "--out", str(out), "--input", str(src), "--spec", "invert:3"]) == 0
        np.testing.assert_allclose(read_image(out / "transformed.ppm").data, 204 / 255)

    def test_taxonomy_and_iou(self, tmp_path):
        rankings = {"rankings": [{"class": c, "rank": k + 1, "spec": s, "mean": m, "prop_boosted": 0.0,
                                  "weighted_boost": 0.0}
                                 for c, order in [("dog", [3, 2, 1]), ("cat", [3, 1, 2]), ("car", [1, 2, 3]),
                                                  ("boat", [1, 3, 2])]
                                 for k, (s, m) in enumerate(zip(["invert:1", "invert:2", "invert:3"], order))]}
        p = tmp_path / "r.json"
        p.write_text(json.dumps(rankings))
        assert main(["taxonomy", "--out", str(tmp_path / "tx"), "--rankings", str(p)]) == 0
        doc = json.loads((tmp_path / "tx" / "taxonomy.json").read_text())
        assert [b["n"] for b in doc["bins"]] == [4, 2]
        (tmp_path / "a.txt").write_text("id\n1\n2\n3\n")
        (tmp_path / "b.txt").write_text("2\n3\n4\n")
        assert main(["iou", "--out", str(tmp_path / "iou"), "--a", str(tmp_path / "a.txt"),
                     "--b", str(tmp_path / "b.txt")]) == 0
        assert json.loads((tmp_path / "iou" / "iou.json").read_text())["iou"] == 0.5

    def test_augerino_train_and_eval(self, tmp_path):
        train = tmp_path / "train"
        assert main(["augerino-train", "--out", str(train), "--task", '{"n": 16, "size": 8}',
                     "--train", '{"epochs": 1, "batch_size": 8}']) == 0
        model = json.loads((train / "model.json").read_text())
        assert len(model["params"]["theta"]) == 6
        ev = tmp_path / "eval"
        assert main(["augerino-eval", "--out", str(ev), "--model", str(train / "model.json"),
                     "--task", '{"n": 16, "size": 8}', "--no-augerino"]) == 0
        doc = json.loads((ev / "eval.json").read_text())
        assert doc["use_augerino"] is False and len(doc["per_seed"]) == 5

    def test_sweep(self, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", "--out", str(out), "--synthetic", SMALL, "--n-values", "3", "--n-seeds", "2"]) == 0
        rows = read_csv(out / "sweep.csv")
        assert [float(r["v"]) for r in rows] == [1.0, 3.5, 6.0]


class TestErrors:
    def test_malformed_config_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"budget": "many"}')
        assert main(["invariance", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2
        assert "budget" in capsys.readouterr().err
        cfg.write_text("{not json")
        assert main(["invariance", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2
        assert "--config" in capsys.readouterr().err

    def test_bad_flag_json(self, tmp_path, capsys):
        assert main(["simsearch", "--out", str(tmp_path / "o"), "--levels", "1..3"]) == 2
        assert "levels" in capsys.readouterr().err

    def test_missing_dataset_exit_3(self, tmp_path):
        assert main(["simsearch", "--out", str(tmp_path / "o"), "--dataset", str(tmp_path / "nope")]) == 3

    def test_failure_leaves_no_partial_outputs(self, tmp_path):
        bad = tmp_path / "sim.json"
        bad.write_text('{"cells": [{"class": "a"}]}')
        out = tmp_path / "rank"
        assert main(["rank", "--out", str(out), "--input", str(bad)]) != 0
        assert not out.exists()
        assert [p.name for p in tmp_path.iterdir()] == ["sim.json"]

    def test_console_script_version(self):
        res = subprocess.run([sys.executable, "-m", "invarlab.cli", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and "invarlab" in res.stdout


class TestReplay:
    def test_byte_identical_across_jobs(self, tmp_path):
        first = tmp_path / "a"
        assert main(["equivariance", "--out", str(first), "--synthetic", SMALL, "--provider", "conv",
                     "--levels", "[2]", "--n-permutations", "19", "--plot-data", "--jobs", "1"]) == 0
        manifest = json.loads((first / "manifest.json").read_text())
        assert "jobs" not in manifest["config"]
        for jobs in ("1", "4"):
            again = tmp_path / f"r{jobs}"
            assert main(["replay", str(first / "manifest.json"), "--out", str(again), "--jobs", jobs]) == 0
            assert tree_bytes(again) == tree_bytes(first)

    def test_manifest_hashes(self, tmp_path):
        import hashlib

        out = tmp_path / "a"
        assert main(["invariance", "--out", str(out), "--synthetic", SMALL, "--levels", "[1]"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        for name, digest in manifest["outputs"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
        assert set(manifest["versions"]) >= {"invarlab", "numpy", "python"}

    def test_bad_manifest(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"command": "explode", "config": {}}')
        assert main(["replay", str(p), "--out", str(tmp_path / "o")]) != 0
