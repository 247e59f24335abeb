"""Command-line front end: ``qahm-lab <command> --config <path> [--seed N] [--out DIR]``.

Configs are JSON objects with ``schema_version: 1``. Unknown keys are
rejected (exit status 2, the message names the key); runtime failures exit
with status 1. Every run writes into its output directory:

``metrics.jsonl``
    one JSON record per iteration (``iteration`` plus named metrics), sorted
    keys, no timing data, so reruns are byte-identical
``timings.jsonl``
    wall-clock seconds per iteration
``manifest.json``
    the fully resolved config (defaults filled in, seed and output directory
    included), the command and the artifact list; feeding its ``config``
    entry back reproduces the run
plus command-specific checkpoints in the documented text formats.

Images are binary PGM (``P5``), 16x16, maxval 255, with value ``x`` in
[-1, 1] stored as the byte ``round_half_even((x + 1) * 255 / 2)``.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, cognition, textio
from .boltzmann import (FvbmConfig, Phase, Rbm, RbmTrainConfig, TrainTrace, estimate_beta_eff, fvbm_reconstruct,
                        fvbm_train, logical_moments, rbm_train_restart)
from .data import (Dataset, bars_and_stripes, grid_line_edges, load_mnist_idx, preprocess_mnist,
                   sample_bars_and_stripes, sample_ground_truth)
from .hardware import (Topology, bipartite_topology, cell_clique_layout, chimera_clique_layout, chimera_topology,
                       complete_topology)
from .helmholtz import Qahm, QahmConfig, generate, reconstruct, train_wake_sleep
from .ising import IsingModel, complete_edges, random_model
from .samplers import DeviceProfile, DeviceSampler, ExactSampler, GibbsSampler, moments_of

SCHEMA_VERSION = 1
COMMANDS = ("train-rbm", "train-fvbm", "train-qahm", "reconstruct", "generate", "estimate-temp",
            "cognition-gamble", "cognition-order")


class ConfigError(ValueError):
    pass


# --- schema ----------------------------------------------------------------


def _obj(props: dict, required=(), default=None) -> dict:
    s = {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}
    if default is not None:
        s["default"] = default
    return s


def _num(default=None, minimum=None, exclusive=None) -> dict:
    s = {"type": "number"}
    if default is not None:
        s["default"] = default
    if minimum is not None:
        s["minimum"] = minimum
    if exclusive is not None:
        s["exclusiveMinimum"] = exclusive
    return s


def _int(default=None, minimum=None) -> dict:
    s = {"type": "integer"}
    if default is not None:
        s["default"] = default
    if minimum is not None:
        s["minimum"] = minimum
    return s


def _str(default=None, enum=None) -> dict:
    s = {"type": "string"}
    if default is not None:
        s["default"] = default
    if enum is not None:
        s["enum"] = list(enum)
    return s


_TOPOLOGY = _obj({
    "kind": _str(enum=("complete", "bipartite", "chimera")),
    "n": _int(minimum=1), "left": _int(minimum=1), "right": _int(minimum=1),
    "rows": _int(minimum=1), "cols": _int(minimum=1), "shore": _int(4, 1),
}, ["kind"])

_SAMPLER = _obj({
    "backend": _str("exact", ("exact", "gibbs", "device")),
    "hidden_beta": _num(exclusive=0),
    "chains": _int(100, 1), "burn_in": _int(1000, 0), "thin": _int(10, 1),
    "profile": _obj({
        "beta_eff": _num(1.0, exclusive=0), "sigma_h": _num(0.0, 0), "sigma_J": _num(0.0, 0),
        "range_h": _num(2.0, exclusive=0), "range_J": _num(1.0, exclusive=0),
        "refresh_noise_each_call": {"type": "boolean", "default": True},
        "noise_seed": _int(0), "topology": _TOPOLOGY,
    }),
}, default={})

_DATASET = _obj({
    "kind": _str(enum=("bars-and-stripes", "mnist-idx", "ground-truth", "file")),
    "rows": _int(4, 1), "cols": _int(4, 1), "draws": _int(minimum=1),
    "images": {"type": "string"}, "labels": {"type": "string"}, "limit": _int(1000, 1),
    "model": {"type": "string"}, "beta": _num(1.0, exclusive=0), "size": _int(1000, 1),
    "path": {"type": "string"},
}, ["kind"])

_EMBEDDING = _obj({
    "layout": _str(enum=("chimera-clique", "cell-clique")),
    "size": _int(4, 1), "rows": _int(2, 1), "cols": _int(2, 1), "chain_coupling": _num(1.0, exclusive=0),
}, ["layout"])

_PHASE = _obj({"kind": _str(enum=("cd1", "quale-estimated", "quale-fixed")), "iterations": _int(minimum=0),
               "beta": _num(exclusive=0)}, ["kind", "iterations"])

_COMMON = {"schema_version": {"const": SCHEMA_VERSION}, "command": _str(enum=COMMANDS),
           "seed": _int(0), "output_dir": {"type": "string"}}

SCHEMAS = {
    "train-rbm": _obj({
        **_COMMON, "dataset": _DATASET, "sampler": _SAMPLER,
        "model": _obj({"hidden": _int(8, 1), "init_scale": _num(0.01, 0)}, default={}),
        "schedule": _obj({
            "phases": {"type": "array", "items": _PHASE, "default": [{"kind": "cd1", "iterations": 500}]},
            "rate": _num(0.05, exclusive=0), "minibatch": _int(minimum=1), "num_reads": _int(1000, 1),
            "estimate_reads": _int(5000, 1), "alpha": _num(0.8, exclusive=0), "exact_eval": {"type": "boolean", "default": True},
        }, default={}),
    }, ["schema_version", "dataset"]),
    "train-fvbm": _obj({
        **_COMMON, "dataset": _DATASET, "sampler": _SAMPLER,
        "model": _obj({"edges": _str("complete", ("complete", "grid-lines")), "embedding": _EMBEDDING}, default={}),
        "schedule": _obj({
            "learning_rate": _num(0.02, exclusive=0), "decay": _num(exclusive=0), "iterations": _int(200, 0),
            "minibatch": _int(minimum=1), "num_reads": _int(1000, 1), "momentum": _num(0.0, 0),
            "eval_reads": _int(10000, 1), "eval_calls": _int(1, 1),
        }, default={}),
    }, ["schema_version", "dataset"]),
    "train-qahm": _obj({
        **_COMMON, "dataset": _DATASET, "sampler": _SAMPLER,
        "model": _obj({
            "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3,
                      "default": [266, 120, 16]},
            "n_continuous": _int(256, 0), "sigma_v": _num(0.5, exclusive=0), "rate": _num(0.01, exclusive=0),
            "prior_rate": _num(0.01, exclusive=0), "minibatch": _int(100, 1), "prior_reads": _int(1000, 1),
            "dream_batch": _int(100, 1),
        }, default={}),
        "schedule": _obj({"iterations": _int(200, 0), "log_every": _int(50, 0), "proxy_samples": _int(100, 1),
                          "validation": _int(200, 0)}, default={}),
    }, ["schema_version", "dataset"]),
    "reconstruct": _obj({
        **_COMMON, "dataset": _DATASET, "sampler": _SAMPLER,
        "task": _obj({
            "model_kind": _str(enum=("fvbm", "qahm")), "checkpoint": {"type": "string"},
            "embedding": {"type": "string"}, "corruption": _num(0.2, 0), "num_reads": _int(200, 1),
            "num_samples": _int(10, 1), "limit": _int(minimum=1),
        }, ["model_kind", "checkpoint"]),
    }, ["schema_version", "dataset", "task"]),
    "generate": _obj({
        **_COMMON, "sampler": _SAMPLER,
        "task": _obj({
            "checkpoint": {"type": "string"}, "count": _int(100, 1), "clamp_label": _int(minimum=0),
            "pixel_mode": _str("mean", ("mean", "sample")), "export_images": {"type": "boolean", "default": True},
        }, ["checkpoint"]),
    }, ["schema_version", "task"]),
    "estimate-temp": _obj({
        **_COMMON, "sampler": _SAMPLER,
        "model": _obj({"path": {"type": "string"}, "random_n": _int(minimum=1), "scale": _num(1.0, 0)}),
        "task": _obj({"alpha": _num(0.8, exclusive=0), "num_reads": _int(10000, 1), "min_count": _int(10, 1)},
                     default={}),
    }, ["schema_version", "model"]),
    "cognition-gamble": _obj({
        **_COMMON,
        "task": _obj({"p_g_given_w": _num(minimum=0), "p_g_given_l": _num(minimum=0), "p_g": _num(minimum=0),
                      "p_w": _num(minimum=0)}, ["p_g_given_w", "p_g_given_l", "p_g"]),
    }, ["schema_version", "task"]),
    "cognition-order": _obj({
        **_COMMON,
        "task": _obj({
            "survey": {"type": "string"},
            "synthetic": _obj({"phi": {"type": "number"}, "a": {"type": "number"}, "b": {"type": "number"},
                               "respondents": _int(10000, 1)}, ["phi", "a", "b"]),
            "grid": _int(181, 2),
        }),
    }, ["schema_version", "task"]),
}


def _fill_defaults(schema: dict, value):
    if schema.get("type") == "object" and isinstance(value, dict):
        for key, sub in schema.get("properties", {}).items():
            if key not in value and "default" in sub:
                value[key] = copy.deepcopy(sub["default"])
            if key in value:
                value[key] = _fill_defaults(sub, value[key])
    elif schema.get("type") == "array" and isinstance(value, list) and "items" in schema:
        value = [_fill_defaults(schema["items"], v) for v in value]
    return value


def _where(error) -> str:
    path = ".".join(str(p) for p in error.absolute_path)
    return path or "<top level>"


def validate_config(raw: dict, command: str) -> dict:
    """Check ``raw`` against the command's schema and return it with defaults filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    if raw.get("command", command) != command:
        raise ConfigError(f"key 'command': config is for {raw['command']!r}, not {command!r}")
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        e = errors[0]
        if e.validator == "additionalProperties":
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            raise ConfigError(f"unknown key {extra[0]!r} at {_where(e)}")
        if e.validator == "required":
            raise ConfigError(f"missing key at {_where(e)}: {e.message}")
        raise ConfigError(f"invalid value for key {_where(e)!r}: {e.message}")
    config = _fill_defaults(SCHEMAS[command], copy.deepcopy(raw))
    config["command"] = command
    _check_semantics(config)
    return config


def _check_semantics(config: dict):
    ds = config.get("dataset")
    if ds:
        need = {"mnist-idx": ("images", "labels"), "ground-truth": ("model",), "file": ("path",)}.get(ds["kind"], ())
        for key in need:
            if key not in ds:
                raise ConfigError(f"missing key at dataset: {key!r} is required for kind {ds['kind']!r}")
            if not Path(ds[key]).is_file():
                raise ConfigError(f"key 'dataset.{key}': file {ds[key]!r} does not exist")
    task = config.get("task", {})
    for key in ("checkpoint", "embedding", "survey"):
        if key in task and not Path(task[key]).is_file():
            raise ConfigError(f"key 'task.{key}': file {task[key]!r} does not exist")
    model = config.get("model", {})
    if "path" in model and not Path(model["path"]).is_file():
        raise ConfigError(f"key 'model.path': file {model['path']!r} does not exist")
    if config["command"] == "estimate-temp" and ("path" in model) == ("random_n" in model):
        raise ConfigError("key 'model': give exactly one of 'path' or 'random_n'")
    if config["command"] == "cognition-order" and ("survey" in task) == ("synthetic" in task):
        raise ConfigError("key 'task': give exactly one of 'survey' or 'synthetic'")
    for phase in config.get("schedule", {}).get("phases", []):
        if phase["kind"] == "quale-fixed" and "beta" not in phase:
            raise ConfigError("key 'schedule.phases.beta': quale-fixed phases need a beta")


# --- builders --------------------------------------------------------------


def build_topology(spec: dict) -> Topology:
    kind = spec["kind"]
    try:
        if kind == "complete":
            return complete_topology(spec["n"])
        if kind == "bipartite":
            return bipartite_topology(spec["left"], spec["right"])
        return chimera_topology(spec["rows"], spec["cols"], spec["shore"])
    except KeyError as exc:
        raise ConfigError(f"missing key at sampler.profile.topology: {exc.args[0]!r} needed for {kind!r}") from None


def build_sampler(spec: dict, default_topology: Topology | None = None):
    backend = spec["backend"]
    if backend == "exact":
        return ExactSampler(spec.get("hidden_beta"))
    if backend == "gibbs":
        return GibbsSampler(spec["chains"], spec["burn_in"], spec["thin"], spec.get("hidden_beta"))
    prof = dict(spec.get("profile") or _fill_defaults(_SAMPLER["properties"]["profile"], {}))
    topo_spec = prof.pop("topology", None)
    topo = build_topology(topo_spec) if topo_spec else default_topology
    if topo is None:
        raise ConfigError("missing key at sampler.profile: 'topology' is required for this command")
    return DeviceSampler(DeviceProfile(topo, chains=spec["chains"], burn_in=spec["burn_in"], thin=spec["thin"], **prof))


def load_dataset(spec: dict, seed: int) -> Dataset:
    kind = spec["kind"]
    if kind == "bars-and-stripes":
        if "draws" in spec:
            return sample_bars_and_stripes(spec["rows"], spec["cols"], spec["draws"], seed)
        return bars_and_stripes(spec["rows"], spec["cols"])
    if kind == "mnist-idx":
        raw = load_mnist_idx(spec["images"], spec["labels"]).head(spec["limit"])
        return preprocess_mnist(raw)
    if kind == "ground-truth":
        model = textio.loads_ising(Path(spec["model"]).read_text())
        return sample_ground_truth(model, spec["beta"], spec["size"], seed)
    return Dataset.from_text(Path(spec["path"]).read_text())


def _as_spins(ds: Dataset) -> np.ndarray:
    return ds.items.astype(np.int8) if ds.spin else (2 * ds.items - 1).astype(np.int8)


def _as_bits(ds: Dataset) -> np.ndarray:
    return (ds.items + 1) / 2 if ds.spin else ds.items


def _embedding_layout(spec: dict | None, n: int):
    if spec is None:
        return None, None
    if spec["layout"] == "chimera-clique":
        topo, emb, _ = chimera_clique_layout(spec["size"], spec["chain_coupling"])
    else:
        topo, emb, _ = cell_clique_layout(spec["rows"], spec["cols"], spec["chain_coupling"])
    if emb.num_logical < n:
        raise ConfigError(f"key 'model.embedding': layout hosts {emb.num_logical} variables, data has {n}")
    if emb.num_logical > n:
        from .hardware import EmbeddingMap
        emb = EmbeddingMap(emb.chains[:n], emb.chain_coupling)
    return topo, emb


# --- output ----------------------------------------------------------------


class RunWriter:
    """Collects metrics and artifacts for one run directory."""

    def __init__(self, out: Path, config: dict):
        self.out = Path(out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise RuntimeError(f"cannot create output directory {self.out}: {exc}") from exc
        self.config = config
        self.artifacts: list[str] = []
        self.metrics: list[dict] = []
        self.timings: list[dict] = []
        self._t0 = time.perf_counter()

    def record(self, iteration: int, **metrics):
        if self.metrics and iteration <= self.metrics[-1]["iteration"]:
            raise ValueError("metrics iterations must increase")
        self.metrics.append({"iteration": int(iteration), **metrics})
        self.timings.append({"iteration": int(iteration), "seconds": time.perf_counter() - self._t0})

    def from_trace(self, trace: TrainTrace):
        for rec in trace.records:
            rec = dict(rec)
            self.record(rec.pop("iteration"), **rec)

    def write(self, name: str, text: str | bytes) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(text, bytes):
            path.write_bytes(text)
        else:
            path.write_text(text)
        self.artifacts.append(name)
        return path

    def finish(self, summary: dict | None = None):
        self.write("metrics.jsonl", "".join(json.dumps(m, sort_keys=True) + "\n" for m in self.metrics))
        self.write("timings.jsonl", "".join(json.dumps(m, sort_keys=True) + "\n" for m in self.timings))
        if summary is not None:
            self.write("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
        manifest = {"tool": "qahm-lab", "version": __version__, "command": self.config["command"],
                    "seed": self.config["seed"], "config": self.config,
                    "artifacts": sorted(set(self.artifacts + ["manifest.json"]))}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def pgm_bytes(values, side: int = 16) -> bytes:
    """Binary PGM of one ``side x side`` block of values in [-1, 1]."""
    v = np.asarray(values, dtype=float).reshape(side, side)
    pix = np.rint((np.clip(v, -1.0, 1.0) + 1.0) * 255.0 / 2.0).astype(np.uint8)
    return f"P5\n{side} {side}\n255\n".encode("ascii") + pix.tobytes()


def export_images(visible, out_dir, side: int = 16, montage_cols: int | None = 10) -> list[Path]:
    """Write ``image_00000.pgm``, ... for each vector's leading pixel block.

    With ``montage_cols`` an extra ``montage.pgm`` tiles all images in a grid
    (unused tiles are black).
    """
    visible = np.atleast_2d(np.asarray(visible, dtype=float))
    if visible.shape[1] < side * side:
        raise ValueError(f"vectors need at least {side * side} pixel entries")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, vec in enumerate(visible):
        p = out / f"image_{k:05d}.pgm"
        p.write_bytes(pgm_bytes(vec[: side * side], side))
        paths.append(p)
    if montage_cols and len(visible):
        cols = min(montage_cols, len(visible))
        rows = -(-len(visible) // cols)
        grid = -np.ones((rows * side, cols * side))
        for k, vec in enumerate(visible):
            r, c = divmod(k, cols)
            grid[r * side : (r + 1) * side, c * side : (c + 1) * side] = vec[: side * side].reshape(side, side)
        pix = np.rint((np.clip(grid, -1, 1) + 1.0) * 255.0 / 2.0).astype(np.uint8)
        p = out / "montage.pgm"
        p.write_bytes(f"P5\n{cols * side} {rows * side}\n255\n".encode("ascii") + pix.tobytes())
        paths.append(p)
    return paths


# --- commands --------------------------------------------------------------


def cmd_train_rbm(cfg: dict, w: RunWriter) -> dict:
    ds = load_dataset(cfg["dataset"], cfg["seed"])
    data = _as_bits(ds)
    nv, nh = data.shape[1], cfg["model"]["hidden"]
    rbm = Rbm.random(nv, nh, np.random.default_rng([cfg["seed"], 1]), cfg["model"]["init_scale"])
    sampler = build_sampler(cfg.get("sampler") or _fill_defaults(_SAMPLER, {}), bipartite_topology(nv, nh))
    sch = cfg["schedule"]
    phases = [Phase(p["kind"], p["iterations"], p.get("beta")) for p in sch["phases"]]
    tc = RbmTrainConfig(sch["rate"], sch.get("minibatch"), sch["num_reads"], sch["estimate_reads"], sch["alpha"],
                        sch["exact_eval"], cfg["seed"])
    trace = rbm_train_restart(rbm, data, phases, sampler, tc)
    w.from_trace(trace)
    w.write("rbm.txt", trace.model.to_text())
    return {"final_avg_loglik": trace.last("avg_loglik"), "iterations": len(trace)}


def cmd_train_fvbm(cfg: dict, w: RunWriter) -> dict:
    ds = load_dataset(cfg["dataset"], cfg["seed"])
    data = _as_spins(ds)
    n = data.shape[1]
    if cfg["model"]["edges"] == "grid-lines":
        spec = cfg["dataset"]
        if spec["kind"] != "bars-and-stripes":
            raise ConfigError("key 'model.edges': grid-lines needs a bars-and-stripes dataset")
        edges = grid_line_edges(spec["rows"], spec["cols"])
    else:
        edges = complete_edges(n)
    topo, emb = _embedding_layout(cfg["model"].get("embedding"), n)
    sampler = build_sampler(cfg.get("sampler") or _fill_defaults(_SAMPLER, {}), topo or complete_topology(n))
    sch = cfg["schedule"]
    fc = FvbmConfig(sch["learning_rate"], sch.get("decay"), sch["iterations"], sch.get("minibatch"), sch["num_reads"],
                    sch["momentum"], edges, emb, topo, cfg["seed"])
    model, trace = fvbm_train(data, sampler, fc)
    w.from_trace(trace)
    w.write("fvbm.txt", textio.dumps_ising(model))
    if emb is not None:
        w.write("embedding.txt", textio.dumps_embedding(emb))
    lm = logical_moments(model, sampler, edges, emb, sch["eval_reads"], seed=cfg["seed"] + 1, calls=sch["eval_calls"])
    return {"decoded_moment_gap": moments_of(data, edges).max_abs_diff(lm), "iterations": len(trace)}


def cmd_train_qahm(cfg: dict, w: RunWriter) -> dict:
    ds = load_dataset(cfg["dataset"], cfg["seed"])
    m = cfg["model"]
    qc = QahmConfig(tuple(m["sizes"]), m["n_continuous"], m["sigma_v"], m["rate"], m["prior_rate"], m["minibatch"],
                    m["prior_reads"], m["dream_batch"])
    if ds.dim != qc.sizes[0]:
        raise ConfigError(f"key 'model.sizes': visible size {qc.sizes[0]} does not match data dimension {ds.dim}")
    sch = cfg["schedule"]
    qahm = Qahm.init(qc, seed=cfg["seed"])
    sampler = build_sampler(cfg.get("sampler") or _fill_defaults(_SAMPLER, {}), complete_topology(qc.sizes[2]))
    val = ds.items[: sch["validation"]] if sch["validation"] else None
    trace = train_wake_sleep(qahm, ds.items, sch["iterations"], sampler, cfg["seed"], val, sch["log_every"],
                             sch["proxy_samples"])
    w.from_trace(trace)
    w.write("qahm.txt", trace.model.to_text())
    proxies = [p for p in trace.column("nll_proxy") if p is not None]
    return {"iterations": sch["iterations"], "nll_proxy_first": proxies[0] if proxies else None,
            "nll_proxy_last": proxies[-1] if proxies else None}


def _corruption_masks(n_items: int, dim: int, fraction: float, rng) -> np.ndarray:
    k = int(round(fraction * dim))
    masks = np.zeros((n_items, dim), dtype=bool)
    for i in range(n_items):
        masks[i, rng.choice(dim, size=k, replace=False)] = True
    return masks


def cmd_reconstruct(cfg: dict, w: RunWriter) -> dict:
    t = cfg["task"]
    ds = load_dataset(cfg["dataset"], cfg["seed"])
    if "limit" in t:
        ds = ds.head(t["limit"])
    rng = np.random.default_rng([cfg["seed"], 11])
    text = Path(t["checkpoint"]).read_text()
    if t["model_kind"] == "fvbm":
        model = textio.loads_ising(text)
        emb = textio.loads_embedding(Path(t["embedding"]).read_text()) if "embedding" in t else None
        default_topo = Topology(model.n, tuple(map(tuple, model.edges.tolist())))
        sampler = build_sampler(cfg.get("sampler") or _fill_defaults(_SAMPLER, {}), default_topo)
        clean = _as_spins(ds)
        masks = _corruption_masks(len(clean), clean.shape[1], t["corruption"], rng)
        noisy = np.where(masks, np.where(rng.random(clean.shape) < 0.5, -1, 1), clean).astype(np.int8)
        out = np.empty_like(clean)
        for i in range(len(clean)):
            out[i] = fvbm_reconstruct(model, sampler, noisy[i], masks[i], emb, t["num_reads"], seed=cfg["seed"] + i)
            restored = int(np.sum(out[i][masks[i]] == clean[i][masks[i]]))
            w.record(i + 1, corrupted=int(masks[i].sum()), restored=restored)
        total = int(masks.sum())
        acc = float(np.sum((out == clean) & masks) / total) if total else 1.0
        w.write("reconstructed.txt", Dataset(out, spin=True, metadata={"provenance": "fvbm-reconstruct"}).to_text())
        return {"restored_fraction": acc, "corrupted_bits": total}
    qahm = Qahm.from_text(text)
    sampler = build_sampler(cfg.get("sampler") or _fill_defaults(_SAMPLER, {}), complete_topology(qahm.prior.n))
    c = qahm.config.n_continuous
    clean = ds.items
    masks = np.zeros(clean.shape, dtype=bool)
    masks[:, :c] = _corruption_masks(len(clean), c, t["corruption"], rng)
    out = reconstruct(qahm, clean, masks, sampler, rng, t["num_samples"])
    mse = float(np.mean((out[masks] - clean[masks]) ** 2)) if masks.any() else 0.0
    col_mean = clean[:, :c].mean(axis=0)
    base = np.broadcast_to(np.concatenate([col_mean, np.zeros(clean.shape[1] - c)]), clean.shape)
    base_mse = float(np.mean((base[masks] - clean[masks]) ** 2)) if masks.any() else 0.0
    w.record(1, masked_mse=mse, mean_imputation_mse=base_mse)
    w.write("reconstructed.txt", Dataset(np.clip(out, -1, 1) if c else out, ds.labels, c, False,
                                         {"provenance": "qahm-reconstruct"}).to_text())
    return {"masked_mse": mse, "mean_imputation_mse": base_mse}


def cmd_generate(cfg: dict, w: RunWriter) -> dict:
    t = cfg["task"]
    qahm = Qahm.from_text(Path(t["checkpoint"]).read_text())
    sampler = build_sampler(cfg.get("sampler") or _fill_defaults(_SAMPLER, {}), complete_topology(qahm.prior.n))
    rng = np.random.default_rng([cfg["seed"], 12])
    v = generate(qahm, t["count"], sampler, rng, t.get("clamp_label"), t["pixel_mode"])
    c = qahm.config.n_continuous
    w.write("generated.txt", Dataset(v, None, c, False, {"provenance": "qahm-generate"}).to_text())
    if t["export_images"] and c >= 256:
        for p in export_images(v[:, :256], w.out / "images"):
            w.artifacts.append(str(p.relative_to(w.out)))
    w.record(1, count=len(v))
    return {"count": len(v)}


def cmd_estimate_temp(cfg: dict, w: RunWriter) -> dict:
    m, t = cfg["model"], cfg["task"]
    if "path" in m:
        model = textio.loads_ising(Path(m["path"]).read_text())
    else:
        model = random_model(m["random_n"], np.random.default_rng([cfg["seed"], 13]), m["scale"], m["scale"])
    sampler = build_sampler(cfg.get("sampler") or _fill_defaults(_SAMPLER, {}), complete_topology(model.n))
    est = estimate_beta_eff(model, sampler, t["alpha"], t["num_reads"], seed=cfg["seed"], min_count=t["min_count"])
    w.record(1, beta_eff=est.beta_eff, stderr=est.stderr, points=est.points)
    return {"beta_eff": est.beta_eff, "stderr": est.stderr, "points": est.points}


def cmd_cognition_gamble(cfg: dict, w: RunWriter) -> dict:
    t = cfg["task"]
    stats = cognition.GambleStats(t["p_g_given_w"], t["p_g_given_l"], t["p_g"], t.get("p_w", 0.5))
    unknown = cognition.check_total_probability(stats, False)
    known = cognition.check_total_probability(stats, True)
    fit = cognition.fit_interference_gamble(stats)
    summary = {"violation_unknown_prior": unknown.violation, "margin_unknown_prior": unknown.margin,
               "classical_prediction": known.classical_prediction, "margin_known_prior": known.margin,
               "cos_theta": fit.cos_theta if np.isfinite(fit.cos_theta) else None, "theta": fit.theta,
               "feasible": fit.feasible}
    w.record(1, **{k: v for k, v in summary.items() if not isinstance(v, bool)})
    return summary


def cmd_cognition_order(cfg: dict, w: RunWriter) -> dict:
    t = cfg["task"]
    if "survey" in t:
        counts = cognition.SurveyCounts.from_text(Path(t["survey"]).read_text())
    else:
        s = t["synthetic"]
        counts = cognition.synthetic_survey(s["phi"], s["a"], s["b"], s["respondents"], cfg["seed"])
        w.write("survey.txt", counts.to_text())
    fit = cognition.fit_order_model(counts, t["grid"])
    w.write("report.txt", cognition.order_study_report(counts, fit))
    sat = cognition.saturated_loglik(counts)
    ranking = cognition.aic_compare([{"name": "quantum", "log_likelihood": fit.log_likelihood, "num_params": 3},
                                     {"name": "saturated", "log_likelihood": sat, "num_params": 6}])
    delta = {r.name: r.delta for r in ranking}
    w.record(1, quantum_loglik=fit.log_likelihood, saturated_loglik=sat)
    return {"best": ranking[0].name, "delta_aic_saturated": delta["saturated"], "delta_aic_quantum": delta["quantum"],
            "phi": fit.phi, "a": fit.a, "b": fit.b}


HANDLERS = {
    "train-rbm": cmd_train_rbm, "train-fvbm": cmd_train_fvbm, "train-qahm": cmd_train_qahm,
    "reconstruct": cmd_reconstruct, "generate": cmd_generate, "estimate-temp": cmd_estimate_temp,
    "cognition-gamble": cmd_cognition_gamble, "cognition-order": cmd_cognition_order,
}


def run_experiment(command: str, config_path, seed: int | None = None, out: str | None = None) -> dict:
    """Validate, run and write artifacts; returns the summary dict."""
    try:
        raw = json.loads(Path(config_path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if isinstance(raw, dict) and "schema_version" in raw and raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"key 'schema_version': expected {SCHEMA_VERSION}, got {raw['schema_version']!r}")
    if isinstance(raw, dict) and seed is not None:
        raw["seed"] = seed
    if isinstance(raw, dict) and out is not None:
        raw["output_dir"] = out
    cfg = validate_config(raw, command)
    cfg.setdefault("output_dir", str(Path("runs") / command))
    writer = RunWriter(Path(cfg["output_dir"]), cfg)
    summary = HANDLERS[command](cfg, writer)
    writer.finish(summary)
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qahm-lab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    try:
        summary = run_experiment(args.command, args.config, args.seed, args.out)
    except ConfigError as exc:
        print(f"qahm-lab: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"qahm-lab: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
