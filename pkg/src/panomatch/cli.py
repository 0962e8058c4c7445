"""Command-line interface.

Every command reads an optional ``--config`` file (``key = value`` per line,
``#`` comments) whose keys mirror the long flag names; flags win over the
file.  Outputs are written next to a ``<out>.manifest.json`` holding the
resolved configuration and SHA-256 hashes of inputs and outputs.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    Side,
    SynthConfig,
    group_by_location,
    load_corpus,
    load_descriptors,
    read_metadata,
    save_corpus,
    synth_benchmark,
)
from .evaluation import (
    SampleEvalConfig,
    recall_at_n,
    sparse_eval,
    sparse_results_csv,
    toy_demo,
)
from .exceptions import FormatError, PanomatchError, ValidationError
from .linalg import load_pca, pca_fit, save_pca
from .retrieval import (
    MODES,
    RankedList,
    build_index,
    load_index,
    run_mode,
    save_index,
    total_comparisons,
)

logger = logging.getLogger("panomatch")

DEFAULTS = {
    "mode": "pan2pan",
    "agg": "pinv",
    "ridge": "auto",
    "threshold_m": 25.0,
    "n_values": "1-20",
    "l": "2,4,6,8",
    "reps": 10,
    "seed": 0,
    "whiten": "false",
    "normalize": "false",
    "bandwidth": 0.04,
    "num_locations": 200,
    "views": 8,
    "d": 64,
    "noise": 1.1,
    "overlap": 0.5,
}

# -- config handling --------------------------------------------------------


def read_config(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def parse_int_list(text):
    """``"1-20"`` or ``"1,5,10"`` (or a mix) to a list of ints."""
    values = []
    for chunk in str(text).split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            if "-" in chunk:
                lo, hi = (int(v) for v in chunk.split("-", 1))
                values.extend(range(lo, hi + 1))
            else:
                values.append(int(chunk))
        except ValueError:
            raise ValidationError(f"cannot parse integer list {text!r}")
    if not values:
        raise ValidationError(f"empty integer list {text!r}")
    return values


def parse_bool(value):
    if isinstance(value, bool):
        return value
    key = str(value).strip().lower()
    if key in ("1", "true", "yes", "on"):
        return True
    if key in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"cannot parse boolean {value!r}")


def _typed(cfg, key, cast):
    try:
        return cast(cfg[key])
    except KeyError:
        raise ValidationError(f"missing required setting {key!r}")
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{key}: {exc}")


def resolve_config(args, known):
    cfg = {k: v for k, v in DEFAULTS.items() if k in known}
    if getattr(args, "config", None):
        from_file = read_config(args.config)
        unknown = sorted(set(from_file) - set(known))
        if unknown:
            raise ValidationError(f"unknown config keys for {args.command}: {unknown}")
        cfg.update(from_file)
    for key in known:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


# -- manifests --------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, command, cfg, inputs, outputs):
    manifest = {
        "command": command,
        "version": __version__,
        "config": {k: str(v) for k, v in sorted(cfg.items())},
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ValidationError(f"missing required setting(s): {', '.join(missing)}")


def _inputs(cfg, *keys):
    return [cfg[k] for k in keys if cfg.get(k)]


# -- helpers ----------------------------------------------------------------


def project_corpus(corpus, model):
    """Apply a PCA model to every descriptor of ``corpus``."""
    records = list(corpus.records())
    Z = model.transform(np.stack([r.descriptor for r in records]))
    projected = [replace(r, descriptor=z) for r, z in zip(records, Z)]
    return group_by_location(projected, corpus.side)


def _load_side(cfg, desc_key, meta_key, side, model):
    _require(cfg, desc_key, meta_key)
    corpus = load_corpus(cfg[desc_key], cfg[meta_key], side)
    return project_corpus(corpus, model) if model is not None else corpus


def _maybe_pca(cfg):
    return load_pca(cfg["pca_model"]) if cfg.get("pca_model") else None


def metadata_positions(path):
    """Positions by image id and by location id (first member wins)."""
    out = {}
    for image_id, (loc, pos) in read_metadata(path).items():
        out[image_id] = pos
        out.setdefault(loc, pos)
    return out


def write_ranked_csv(path, ranked):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["query_id", "rank", "target_id", "score"])
        for r in ranked:
            for rank, (tid, score) in enumerate(r.items, start=1):
                writer.writerow([r.query_id, rank, tid, repr(score)])


def read_ranked_csv(path):
    lists = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["query_id", "rank", "target_id", "score"]:
            raise FormatError(f"unexpected header {header}", offset=0, path=path)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise FormatError(f"line {lineno}: expected 4 fields", path=path)
            qid, rank, tid, score = row
            try:
                lists.setdefault(qid, []).append((int(rank), tid, float(score)))
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}", path=path) from exc
    out = []
    for qid, rows in lists.items():
        rows.sort()
        out.append(RankedList(qid, [t for _, t, _ in rows], np.array([s for _, _, s in rows]), 0))
    return out


# -- commands ---------------------------------------------------------------


def cmd_synth(cfg):
    _require(cfg, "out")
    config = SynthConfig(
        num_locations=_typed(cfg, "num_locations", int),
        views_per_location=_typed(cfg, "views", int),
        d=_typed(cfg, "d", int),
        scene_noise=_typed(cfg, "noise", float),
        view_overlap=_typed(cfg, "overlap", float),
        seed=_typed(cfg, "seed", int),
    )
    dataset, queries = synth_benchmark(config)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "dataset.pmdv", out / "dataset.csv", out / "queries.pmdv", out / "queries.csv"]
    save_corpus(dataset, files[0], files[1])
    save_corpus(queries, files[2], files[3])
    write_manifest(out / "manifest.json", "synth", cfg, [], files)
    logger.info("wrote %d dataset and %d query locations to %s", len(dataset), len(queries), out)


def cmd_pca_fit(cfg):
    _require(cfg, "descriptors", "out", "dim_out")
    _, M = load_descriptors(cfg["descriptors"])
    model = pca_fit(M.T.astype(np.float64), _typed(cfg, "dim_out", int),
                    whiten=parse_bool(cfg["whiten"]))
    save_pca(model, cfg["out"])
    write_manifest(f"{cfg['out']}.manifest.json", "pca-fit", cfg, _inputs(cfg, "descriptors"),
                   [cfg["out"]])


def cmd_build(cfg):
    _require(cfg, "out")
    started = time.perf_counter()
    dataset = _load_side(cfg, "descriptors", "metadata", Side.DATASET, _maybe_pca(cfg))
    index = build_index(dataset, cfg["agg"], cfg["ridge"], parse_bool(cfg["normalize"]))
    save_index(index, cfg["out"])
    report = index.report()
    report["warnings"] = dataset.warnings
    report["wall_time_s"] = round(time.perf_counter() - started, 6)
    _write_json(f"{cfg['out']}.report.json", report)
    write_manifest(f"{cfg['out']}.manifest.json", "build", cfg,
                   _inputs(cfg, "descriptors", "metadata", "pca_model"), [cfg["out"]])
    logger.info("indexed %d locations (%d ridge retries)", len(index), report["ridge_retries"])


def cmd_query(cfg):
    _require(cfg, "out")
    mode = cfg["mode"]
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    model = _maybe_pca(cfg)
    queries = _load_side(cfg, "query_descriptors", "query_metadata", Side.QUERY, model)
    if mode.endswith("2pan") and cfg.get("index"):
        dataset = load_index(cfg["index"])
        used = ["index"]
    else:
        dataset = _load_side(cfg, "descriptors", "metadata", Side.DATASET, model)
        used = ["descriptors", "metadata"]
    top_n = int(cfg["top_n"]) if cfg.get("top_n") else max(parse_int_list(cfg["n_values"]))
    ranked = run_mode(mode, queries, dataset, cfg["agg"], cfg["ridge"], top_n,
                      parse_bool(cfg["normalize"]))
    write_ranked_csv(cfg["out"], ranked)
    _write_json(f"{cfg['out']}.report.json", {
        "mode": mode,
        "agg": cfg["agg"],
        "queries": len(ranked),
        "comparisons_total": total_comparisons(ranked),
        "comparisons_per_query": ranked[0].comparisons if ranked else 0,
    })
    inputs = _inputs(cfg, "query_descriptors", "query_metadata", "pca_model", *used)
    write_manifest(f"{cfg['out']}.manifest.json", "query", cfg, inputs, [cfg["out"]])


def cmd_eval(cfg):
    _require(cfg, "ranked", "query_metadata", "metadata", "out")
    ranked = read_ranked_csv(cfg["ranked"])
    curve = recall_at_n(ranked, metadata_positions(cfg["query_metadata"]),
                        metadata_positions(cfg["metadata"]), parse_int_list(cfg["n_values"]),
                        _typed(cfg, "threshold_m", float))
    Path(cfg["out"]).write_text(curve.to_csv(), encoding="utf-8")
    write_manifest(f"{cfg['out']}.manifest.json", "eval", cfg,
                   _inputs(cfg, "ranked", "query_metadata", "metadata"), [cfg["out"]])


def cmd_sample_eval(cfg):
    _require(cfg, "index", "metadata", "out")
    queries = _load_side(cfg, "query_descriptors", "query_metadata", Side.QUERY, _maybe_pca(cfg))
    index = load_index(cfg["index"])
    config = SampleEvalConfig(
        l=parse_int_list(cfg["l"]),
        repetitions=_typed(cfg, "reps", int),
        seed=_typed(cfg, "seed", int),
        n_values=parse_int_list(cfg["n_values"]),
        threshold_m=_typed(cfg, "threshold_m", float),
    )
    results = sparse_eval(queries, index, config, cfg["agg"],
                          dataset=metadata_positions(cfg["metadata"]), ridge=cfg["ridge"])
    Path(cfg["out"]).write_text(sparse_results_csv(results), encoding="utf-8")
    write_manifest(f"{cfg['out']}.manifest.json", "sample-eval", cfg,
                   _inputs(cfg, "query_descriptors", "query_metadata", "index", "metadata",
                           "pca_model"),
                   [cfg["out"]])


def cmd_toy(cfg):
    _require(cfg, "out")
    result = toy_demo(kernel_bandwidth=_typed(cfg, "bandwidth", float), ridge=cfg.get("ridge", "off"))
    Path(cfg["out"]).write_text(result.csv, encoding="utf-8")
    write_manifest(f"{cfg['out']}.manifest.json", "toy", cfg, [], [cfg["out"]])


COMMANDS = {
    "synth": (cmd_synth, ("out", "num_locations", "views", "d", "noise", "overlap", "seed")),
    "pca-fit": (cmd_pca_fit, ("descriptors", "out", "dim_out", "whiten")),
    "build": (cmd_build, ("descriptors", "metadata", "pca_model", "agg", "ridge", "normalize",
                          "out")),
    "query": (cmd_query, ("mode", "agg", "ridge", "normalize", "query_descriptors",
                          "query_metadata", "descriptors", "metadata", "index", "pca_model",
                          "top_n", "n_values", "out")),
    "eval": (cmd_eval, ("ranked", "query_metadata", "metadata", "n_values", "threshold_m",
                        "out")),
    "sample-eval": (cmd_sample_eval, ("query_descriptors", "query_metadata", "index", "metadata",
                                      "pca_model", "agg", "ridge", "l", "reps", "seed",
                                      "n_values", "threshold_m", "out")),
    "toy": (cmd_toy, ("bandwidth", "ridge", "out")),
}

_FLAG_HELP = {
    "mode": "matching regime",
    "agg": "aggregation method (sum, pinv, precomputed)",
    "ridge": "off, auto, or a fixed ridge value",
    "dim_out": "PCA output dimension",
    "threshold_m": "ground-truth distance threshold in meters",
    "n_values": "recall cut-offs, e.g. 1-20 or 1,5,10",
    "l": "views sampled per query location, e.g. 2,4,6,8",
    "reps": "sampling repetitions",
    "top_n": "ranking length (default: largest N)",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="panomatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, keys) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value settings file")
        for key in keys:
            flag = "--" + key.replace("_", "-")
            kwargs = {"default": None, "help": _FLAG_HELP.get(key)}
            if key == "mode":
                kwargs["choices"] = MODES
            elif key == "agg":
                kwargs["choices"] = ("sum", "pinv", "precomputed")
            p.add_argument(flag, dest=key, **kwargs)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    func, keys = COMMANDS[args.command]
    try:
        cfg = resolve_config(args, keys)
        func(cfg)
    except (PanomatchError, OSError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        location = getattr(exc, "location_id", None)
        if location is not None:
            payload["location_id"] = location
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
