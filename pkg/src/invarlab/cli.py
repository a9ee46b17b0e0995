"""Command-line front end.

Every subcommand resolves a configuration from built-in defaults, an optional
JSON ``--config`` file and explicit flags (flags win), runs one analysis and
writes its outputs plus ``manifest.json`` into ``--out``. Outputs are staged in
a temporary directory and moved into place only on success. ``invarlab replay
<manifest>`` re-executes a run from its manifest.

Exit codes: 0 success, 1 generic failure, 2 configuration error, 3 input or
parse error, 4 numeric/geometry/data error, 5 missing capability.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InvarlabError, ParseError

SCHEMA_VERSION = 1

COMMON = {"seed": 0, "plot_data": False}
DATA = {"dataset": None, "synthetic": None, "provider": {"kind": "intensity-code"}}
CATALOG = {"levels": list(range(10)), "signs": "both", "specs": None}

DEFAULTS = {
    "transform": {"input": None, "spec": None, "output_name": "transformed.ppm"},
    "invariance": {**DATA, **CATALOG, "levels": list(range(1, 10)), "budget": None,
                   "per_pair_baseline": False},
    "equivariance": {**DATA, **CATALOG, "levels": list(range(1, 10)), "budget": 10000, "sign": 1,
                     "n_permutations": 199},
    "simsearch": {**DATA, **CATALOG, "fraction": None, "budget": None},
    "rank": {"input": None, "key": "mean", "scope": "per-class", "top_k": 5},
    "taxonomy": {"tree": "demo", "class_map": None, "rankings": None, "method": "wu_palmer", "key": "mean",
                 "bins": None},
    "augerino-train": {"task": {"n": 256, "size": 16, "seed": 0}, "dataset": None, "train": {}},
    "augerino-eval": {"model": None, "task": {"n": 256, "size": 16, "seed": 99}, "dataset": None,
                      "use_augerino": True, "n_eval_copies": 4, "seeds": [0, 1, 2, 3, 4]},
    "sweep": {**DATA, "provider": {"kind": "histogram"}, "n_values": 15, "v_min": 1.0, "v_max": 6.0,
              "n_seeds": 5, "resize_to": None, "out_size": None},
    "synth-gen": {"classes": 20, "samples": 200, "noise": 0.0, "size": 32, "taxonomy": False,
                  "per_kind": 3},
    "iou": {"a": None, "b": None},
}
for _d in DEFAULTS.values():
    for _k, _v in COMMON.items():
        _d.setdefault(_k, _v)

# flag name -> (config key, type); "json" values are parsed as JSON
FLAGS = {
    "--input": ("input", str), "--spec": ("spec", str), "--output-name": ("output_name", str),
    "--dataset": ("dataset", str), "--synthetic": ("synthetic", "json"), "--provider": ("provider", "json"),
    "--levels": ("levels", "json"), "--signs": ("signs", str), "--specs": ("specs", "json"),
    "--budget": ("budget", int), "--fraction": ("fraction", float), "--sign": ("sign", int),
    "--n-permutations": ("n_permutations", int), "--per-pair-baseline": ("per_pair_baseline", "flag"),
    "--key": ("key", str), "--scope": ("scope", str), "--top-k": ("top_k", int),
    "--tree": ("tree", str), "--class-map": ("class_map", str), "--rankings": ("rankings", str),
    "--method": ("method", str), "--bins": ("bins", int),
    "--task": ("task", "json"), "--train": ("train", "json"), "--model": ("model", str),
    "--no-augerino": ("use_augerino", "noflag"), "--n-eval-copies": ("n_eval_copies", int),
    "--seeds": ("seeds", "json"), "--n-values": ("n_values", int), "--v-min": ("v_min", float),
    "--v-max": ("v_max", float), "--n-seeds": ("n_seeds", int), "--resize-to": ("resize_to", int),
    "--out-size": ("out_size", int), "--classes": ("classes", int), "--samples": ("samples", int),
    "--noise": ("noise", float), "--size": ("size", int), "--taxonomy": ("taxonomy", "flag"),
    "--per-kind": ("per_kind", int), "--a": ("a", str), "--b": ("b", str),
    "--seed": ("seed", int), "--plot-data": ("plot_data", "flag"),
}


# ------------------------------------------------------------ config

# types of keys whose default is null
NULLABLE = {"input": str, "spec": str, "dataset": str, "synthetic": dict, "specs": list, "budget": int,
            "fraction": float, "class_map": str, "rankings": str, "bins": int, "model": str,
            "resize_to": int, "out_size": int, "a": str, "b": str}


def _type_ok(key, default, value):
    if value is None:
        return True
    if default is None:
        if key not in NULLABLE:
            return True
        default = NULLABLE[key]()
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


def resolve_config(command, file_cfg=None, overrides=None):
    """Defaults, then the config file, then explicit flag values."""
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    for source in (file_cfg or {}, overrides or {}):
        for key, value in source.items():
            if key not in cfg:
                raise ConfigError(f"unknown key for {command}", key)
            default = DEFAULTS[command][key]
            if not _type_ok(key, default, value):
                want = NULLABLE[key] if default is None else type(default)
                raise ConfigError(f"expected {want.__name__}, got {type(value).__name__}", key)
            cfg[key] = value
    return cfg


def read_config_file(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "--config") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                          "--config") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", "--config")
    return doc


def config_hash(command, cfg):
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def versions():
    import scipy

    return {"invarlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


# ------------------------------------------------------------ output staging

class Outputs:
    """Files of one run, written into a staging directory."""

    def __init__(self, staging):
        self.dir = Path(staging)
        self.names = []

    def text(self, name, content):
        (self.dir / name).write_text(content, encoding="utf-8", newline="")
        self.names.append(name)

    def json(self, name, doc):
        self.text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def csv(self, name, fields, rows):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        self.text(name, buf.getvalue())

    def path(self, name):
        self.names.append(name)
        return self.dir / name


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def execute(command, cfg, out_dir, jobs=1):
    """Run ``command`` with a resolved config and publish outputs atomically."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".invarlab-", dir=out_dir.parent)
    try:
        outputs = Outputs(staging)
        COMMANDS[command](cfg, outputs, jobs)
        names = sorted(set(outputs.names))
        manifest = {
            "schema_version": SCHEMA_VERSION, "command": command, "config": cfg,
            "config_hash": config_hash(command, cfg), "seeds": {"seed": cfg.get("seed")},
            "versions": versions(), "outputs": {n: _sha256(Path(staging) / n) for n in names},
        }
        outputs.json("manifest.json", manifest)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in names + ["manifest.json"]:
            os.replace(Path(staging) / name, out_dir / name)
        return manifest
    finally:
        shutil.rmtree(staging, ignore_errors=True)


# ------------------------------------------------------------ shared loaders

class Data:
    def __init__(self, samples, classes, planted=None):
        self.samples = samples
        self.classes = classes
        self.planted = planted


def load_data(cfg):
    from .metrics import SampleSet
    from .synthetic import default_specs, generate, read_dataset

    if cfg.get("dataset") and cfg.get("synthetic"):
        raise ConfigError("give either dataset or synthetic, not both", "dataset")
    if cfg.get("synthetic") is not None:
        syn = dict(cfg["synthetic"])
        allowed = {"classes", "samples", "noise", "seed", "size"}
        bad = sorted(set(syn) - allowed)
        if bad:
            raise ConfigError("unknown synthetic key", f"synthetic.{bad[0]}")
        ds = generate(default_specs(syn.get("classes", 20), syn.get("samples", 200), syn.get("noise", 0.0)),
                      seed=syn.get("seed", 0), size=syn.get("size", 32))
        return Data(ds.samples(), ds.classes, {k: v.value for k, v in ds.planted.items()})
    if not cfg.get("dataset"):
        raise ConfigError("a dataset directory or a synthetic spec is required", "dataset")
    root = Path(cfg["dataset"])
    if (root / "classes.json").exists():
        ds = read_dataset(root)
        return Data(ds.samples(), ds.classes, {k: v.value for k, v in ds.planted.items()})
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise ParseError(f"{root} has no manifest.csv")
    from .image import read_image

    rows = list(csv.DictReader(io.StringIO(manifest.read_text(encoding="utf-8"))))
    if not rows or "id" not in rows[0] or "class" not in rows[0]:
        raise ParseError(f"{manifest} needs id and class columns")
    classes = sorted({r["class"] for r in rows})
    images = []
    for r in rows:
        path = next((root / f"{r['id']}{ext}" for ext in (".ppm", ".png") if (root / f"{r['id']}{ext}").exists()),
                    None)
        if path is None:
            raise ParseError(f"no image file for id {r['id']!r}")
        images.append(read_image(path).data)
    labels = np.array([classes.index(r["class"]) for r in rows])
    return Data(SampleSet([r["id"] for r in rows], np.array(images), labels), classes)


SIZED_PROVIDERS = ("conv", "conv-gap", "patch-pool")


def load_provider(cfg, data=None):
    """Build the configured provider; sized providers default to the data's image size."""
    from .embedders import build_provider

    if not isinstance(cfg.get("provider"), dict):
        raise ConfigError("provider must be an object with a kind", "provider")
    spec = dict(cfg["provider"])
    if (spec.get("kind") in SIZED_PROVIDERS and "input_size" not in spec and data is not None
            and data.samples.images is not None):
        spec["input_size"] = int(data.samples.images.shape[1])
    return build_provider(spec)


def load_catalog(cfg):
    from .transforms import catalog, parse_spec

    if cfg.get("specs"):
        try:
            return [parse_spec(s) for s in cfg["specs"]]
        except InvarlabError as exc:
            raise ConfigError(str(exc), "specs") from None
    return catalog(cfg["levels"], cfg["signs"])


def _pool_map(fn, items, jobs):
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _rng_for(seed, label):
    digest = hashlib.sha256(f"{seed}|{label}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


# ------------------------------------------------------------ commands

def cmd_transform(cfg, out, jobs):
    from .image import read_image, write_image
    from .transforms import apply_any, parse_spec

    if not cfg["input"] or not cfg["spec"]:
        raise ConfigError("transform needs input and spec", "input" if not cfg["input"] else "spec")
    img = read_image(cfg["input"])
    write_image(apply_any(parse_spec(cfg["spec"]), img), out.path(cfg["output_name"]))


def _metric_rows(dists):
    from .metrics import ROW_FIELDS

    return list(ROW_FIELDS), [d.row() for d in dists]


def cmd_invariance(cfg, out, jobs):
    from .metrics import EmbeddingCache, invariance
    from .transforms import transform_label

    data = load_data(cfg)
    provider, specs = load_provider(cfg, data), load_catalog(cfg)
    cache = EmbeddingCache(provider, data.samples)
    cache.base()

    def one(spec):
        return invariance(provider, data.samples, spec, _rng_for(cfg["seed"], transform_label(spec)),
                          cfg["budget"], cfg["per_pair_baseline"], cache)

    dists = _pool_map(one, specs, jobs)
    fields, rows = _metric_rows(dists)
    for d, r in zip(dists, rows):
        r["baseline"] = d.extra["baseline"]
    out.csv("invariance.csv", fields + ["baseline"], rows)
    if cfg["plot_data"]:
        long = [{"spec": d.transform, "id": i, "value": float(v)}
                for d in dists for i, v in zip(d.extra["ids"], d.values)]
        out.csv("invariance_values.csv", ["spec", "id", "value"], long)


def cmd_equivariance(cfg, out, jobs):
    from .metrics import EmbeddingCache, equivariance_alignment
    from .transforms import transform_label

    data = load_data(cfg)
    provider, specs = load_provider(cfg, data), load_catalog(cfg)
    cache = EmbeddingCache(provider, data.samples)
    cache.base()

    def one(spec):
        return equivariance_alignment(provider, data.samples, spec,
                                      _rng_for(cfg["seed"], transform_label(spec)), cfg["budget"],
                                      cfg["sign"], cfg["n_permutations"], cache)

    dists = _pool_map(one, specs, jobs)
    fields, rows = _metric_rows(dists)
    for d, r in zip(dists, rows):
        r["p_value"] = d.extra["p_value"]
        r["degenerate_samples"] = d.extra["degenerate_samples"]
    out.csv("equivariance.csv", fields + ["p_value", "degenerate_samples"], rows)
    if cfg["plot_data"]:
        long = [{"spec": d.transform, "value": float(v)} for d in dists for v in d.values]
        out.csv("equivariance_values.csv", ["spec", "value"], long)


def cmd_simsearch(cfg, out, jobs):
    from .metrics import make_pairs, simchange_grid

    data = load_data(cfg)
    provider, specs = load_provider(cfg, data), load_catalog(cfg)
    pairs = make_pairs(data.samples.labels, budget=cfg["budget"], fraction=cfg["fraction"], seed=cfg["seed"])
    results = simchange_grid(provider, data.samples, pairs, specs, jobs=jobs)
    cells, rows, long = [], [], []
    for res in results:
        for label, dist in sorted(res.per_class.items(), key=lambda kv: int(kv[0])):
            cls = data.classes[int(label)]
            cells.append({"class": cls, "spec": res.transform, "mean": dist.mean,
                          "prop_boosted": dist.prop_boosted, "weighted_boost": dist.weighted_boost,
                          "n": dist.n, "excluded": dist.excluded})
            r = dist.row()
            r["class"] = cls
            rows.append(r)
            if cfg["plot_data"]:
                for q, v in dist.quantiles.items():
                    long.append({"class": cls, "spec": res.transform, "quantile": q, "value": v})
    doc = {"schema_version": SCHEMA_VERSION, "classes": data.classes, "specs": [r.transform for r in results],
           "pairs": int(len(pairs)), "cells": cells}
    if data.planted:
        doc["planted"] = data.planted
    out.json("simchange.json", doc)
    fields, _ = _metric_rows([])
    out.csv("simchange.csv", fields, rows)
    if cfg["plot_data"]:
        out.csv("simchange_quantiles.csv", ["class", "spec", "quantile", "value"], long)


def _read_json(path, what):
    if not path:
        raise ConfigError(f"{what} path is required", what)
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.pos) from None


def cmd_rank(cfg, out, jobs):
    from .factors import SimCell, category_split, rank_transforms, rankings_to_json
    from .synthetic import top_kind

    doc = _read_json(cfg["input"], "input")
    try:
        cells = [SimCell(c["class"], c["spec"], c["mean"], c["prop_boosted"], c["weighted_boost"], c["n"])
                 for c in doc["cells"]]
        specs = doc["specs"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{cfg['input']}: malformed SimChange file ({exc})") from None
    per_class = rank_transforms(cells, "per-class", cfg["key"], specs)
    rankings = per_class if cfg["scope"] == "per-class" else rank_transforms(cells, "global", cfg["key"], specs)
    order = {c: k for k, c in enumerate(doc.get("classes", []))}
    rankings.sort(key=lambda r: order.get(r.cls, len(order)))
    per_class.sort(key=lambda r: order.get(r.cls, len(order)))
    out.json("rankings.json", {**rankings_to_json(rankings), "key": cfg["key"], "scope": cfg["scope"]})
    rows = [row for r in rankings for row in r.rows()]
    out.csv("rankings.csv", ["class", "rank", "spec", "mean", "prop_boosted", "weighted_boost"], rows)
    planted = doc.get("planted", {})
    tops = []
    for r in per_class:
        kind = top_kind(r)
        row = {"class": r.cls, "top_spec": r.top.spec, "top_kind": kind.value if kind else "identity"}
        if planted:
            row["planted_kind"] = planted.get(r.cls, "")
            row["match"] = int(row["top_kind"] == row["planted_kind"])
        tops.append(row)
    fields = ["class", "top_spec", "top_kind"] + (["planted_kind", "match"] if planted else [])
    out.csv("top_kinds.csv", fields, tops)
    split = category_split(per_class)
    out.json("category_split.json", {"schema_version": SCHEMA_VERSION, **split})
    if cfg["plot_data"]:
        long = [{"class": r.cls, "spec": e.spec, "rank": k + 1, "value": getattr(e, cfg["key"])}
                for r in per_class for k, e in enumerate(r.entries[: cfg["top_k"]])]
        out.csv("topk_long.csv", ["class", "spec", "rank", "value"], long)


def cmd_taxonomy(cfg, out, jobs):
    from .factors import rankings_from_json
    from .taxonomy import TaxonomyTree, read_taxonomy, similarity_vs_rank_correlation

    tree = TaxonomyTree.demo() if cfg["tree"] == "demo" else read_taxonomy(cfg["tree"], cfg["class_map"])
    rankings = rankings_from_json(_read_json(cfg["rankings"], "rankings"))
    table = similarity_vs_rank_correlation(tree, rankings, cfg["method"], cfg["key"], cfg["bins"])
    out.csv("taxonomy_bins.csv", ["bin", "lo", "hi", "n", "mean_rho", "median_rho"], table.rows())
    out.json("taxonomy.json", {"schema_version": SCHEMA_VERSION, "method": cfg["method"], "key": cfg["key"],
                               "excluded": table.excluded, "bins": table.rows()})
    if cfg["plot_data"]:
        long = [{"a": a, "b": b, "similarity": s, "rho": r} for a, b, s, r in table.pairs]
        out.csv("taxonomy_pairs.csv", ["a", "b", "similarity", "rho"], long)


def _augerino_data(cfg):
    from .lie import stripe_task

    if cfg.get("dataset"):
        data = load_data({"dataset": cfg["dataset"]})
        return data.samples.images, data.samples.labels
    task = dict(cfg["task"])
    bad = sorted(set(task) - {"n", "size", "seed"})
    if bad:
        raise ConfigError("unknown task key", f"task.{bad[0]}")
    return stripe_task(task.get("n", 256), task.get("size", 16), task.get("seed", 0))


def cmd_augerino_train(cfg, out, jobs):
    from .lie import GENERATOR_NAMES, AugerinoModel, TrainConfig, train

    tcfg = dict(cfg["train"])
    tcfg.setdefault("seed", cfg["seed"])
    try:
        config = TrainConfig.from_dict(tcfg)
    except ConfigError as exc:
        raise ConfigError(str(exc), f"train.{exc.key}" if exc.key else "train") from None
    x, y = _augerino_data(cfg)
    model = AugerinoModel.seeded(config.seed, int(np.max(y)) + 1, config.channels, config.activation)
    res = train(model, config.params(), x, y, config)
    out.json("model.json", {"schema_version": SCHEMA_VERSION, "model": res.model.to_dict(),
                            "params": res.params.to_dict(), "train": config.to_dict()})
    out.text("train_log.csv", res.log_csv())
    if cfg["plot_data"]:
        long = [{"epoch": r["epoch"], "generator": g, "theta": r[f"theta_{g}"]}
                for r in res.log for g in GENERATOR_NAMES]
        out.csv("theta_long.csv", ["epoch", "generator", "theta"], long)


def cmd_augerino_eval(cfg, out, jobs):
    from .lie import AugerinoModel, LieAugParams, evaluate

    doc = _read_json(cfg["model"], "model")
    try:
        model = AugerinoModel.from_dict(doc["model"])
        params = LieAugParams(**doc["params"])
        mode = doc.get("train", {}).get("mode", "fill")
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{cfg['model']}: malformed model file ({exc})") from None
    x, y = _augerino_data(cfg)
    res = evaluate(model, params, x, y, cfg["use_augerino"], cfg["n_eval_copies"], cfg["seeds"], mode)
    out.json("eval.json", {"schema_version": SCHEMA_VERSION, "use_augerino": cfg["use_augerino"],
                           "accuracy": res.accuracy, "sem": res.sem, "per_seed": res.per_seed})


def cmd_sweep(cfg, out, jobs):
    from .crops import eval_augmentation_sweep, sweep_values
    from .embedders import fit_head
    from .image import Image

    data = load_data(cfg)
    provider = load_provider(cfg, data)
    if provider.classifier_head is None:
        provider = provider.with_head(fit_head(provider.embed_batch(data.samples.images), data.samples.labels))
    images = [Image(a, copy=False) for a in data.samples.images]
    rows = eval_augmentation_sweep(images, data.samples.labels, provider,
                                   sweep_values(cfg["n_values"], cfg["v_min"], cfg["v_max"]), cfg["n_seeds"],
                                   cfg["resize_to"], cfg["out_size"], cfg["seed"])
    out.csv("sweep.csv", ["v", "s_minus", "mean_acc", "sem"],
            [{"v": r.v, "s_minus": r.s_minus, "mean_acc": r.mean_acc, "sem": r.sem} for r in rows])


def cmd_synth_gen(cfg, out, jobs):
    from .synthetic import default_specs, generate, taxonomy_specs
    from .taxonomy import write_taxonomy

    tree = None
    if cfg["taxonomy"]:
        specs, tree = taxonomy_specs(cfg["per_kind"], cfg["samples"])
    else:
        specs = default_specs(cfg["classes"], cfg["samples"], cfg["noise"])
    if cfg["noise"] and tree is not None:
        specs = [type(s)(**{**s.to_dict(), "noise": cfg["noise"]}) for s in specs]
    ds = generate(specs, seed=cfg["seed"], size=cfg["size"])
    ds.write(out.dir)
    out.names.extend([f"{sid}.ppm" for sid in ds.ids] + ["manifest.csv", "classes.json"])
    if tree is not None:
        write_taxonomy(tree, out.path("taxonomy.tsv"))


def _read_ids(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if lines and lines[0] == "id":
        lines = lines[1:]
    return [ln.split(",")[0] for ln in lines]


def cmd_iou(cfg, out, jobs):
    from .factors import list_iou

    if not cfg["a"] or not cfg["b"]:
        raise ConfigError("iou needs two id lists", "a" if not cfg["a"] else "b")
    a, b = set(_read_ids(cfg["a"])), set(_read_ids(cfg["b"]))
    out.json("iou.json", {"schema_version": SCHEMA_VERSION, "iou": list_iou(a, b), "n_a": len(a),
                          "n_b": len(b), "n_intersection": len(a & b), "n_union": len(a | b)})


COMMANDS = {
    "transform": cmd_transform, "invariance": cmd_invariance, "equivariance": cmd_equivariance,
    "simsearch": cmd_simsearch, "rank": cmd_rank, "taxonomy": cmd_taxonomy,
    "augerino-train": cmd_augerino_train, "augerino-eval": cmd_augerino_eval, "sweep": cmd_sweep,
    "synth-gen": cmd_synth_gen, "iou": cmd_iou,
}


# ------------------------------------------------------------ argument parsing

def _flag_keys(command):
    keys = set(DEFAULTS[command])
    return {f: v for f, v in FLAGS.items() if v[0] in keys}


def build_parser():
    parser = argparse.ArgumentParser(prog="invarlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"invarlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker threads (outputs do not depend on it)")
        for flag, (key, kind) in _flag_keys(command).items():
            dest = "opt_" + key
            if kind == "flag":
                p.add_argument(flag, dest=dest, action="store_const", const=True, default=None)
            elif kind == "noflag":
                p.add_argument(flag, dest=dest, action="store_const", const=False, default=None)
            else:
                p.add_argument(flag, dest=dest, default=None, type=str if kind == "json" else kind)
    p = sub.add_parser("replay", help="re-run a command from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    return parser


def _overrides(command, ns):
    out = {}
    for flag, (key, kind) in _flag_keys(command).items():
        v = getattr(ns, "opt_" + key, None)
        if v is None:
            continue
        if kind == "json":
            try:
                v = json.loads(v)
            except json.JSONDecodeError:
                if key in ("levels", "specs", "seeds"):
                    raise ConfigError(f"{flag} expects JSON", key) from None
                if key == "provider":
                    v = {"kind": v}
                else:
                    raise ConfigError(f"{flag} expects JSON", key) from None
        out[key] = v
    return out


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.jobs < 1:
            raise ConfigError("must be >= 1", "--jobs")
        if ns.command == "replay":
            doc = _read_json(ns.manifest, "manifest")
            if doc.get("command") not in COMMANDS or not isinstance(doc.get("config"), dict):
                raise ParseError(f"{ns.manifest} is not a run manifest")
            command = doc["command"]
            cfg = resolve_config(command, doc["config"])
        else:
            command = ns.command
            file_cfg = read_config_file(ns.config) if ns.config else None
            cfg = resolve_config(command, file_cfg, _overrides(command, ns))
        execute(command, cfg, ns.out, ns.jobs)
    except InvarlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
