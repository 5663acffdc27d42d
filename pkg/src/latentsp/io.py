"""Dataset and model files.

Both are single UTF-8 JSON documents.  Floats are written with ``repr`` so
they survive a round trip exactly; model weights are additionally stored as
hex floats.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .graph import FactorGraph, GraphError
from .harness import GridSpec, grid_example
from .model import HIDDEN, Example, HyperParams, ModelParams, hamming_loss_tables, make_example

DATASET_FORMAT = "latentsp-dataset"
MODEL_FORMAT = "latentsp-model"
DATASET_VERSION = 1
MODEL_VERSION = 1


class SchemaError(ValueError):
    """Malformed file; ``pointer`` locates the offending key (JSON pointer)."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


@dataclass
class Dataset:
    graph: FactorGraph
    num_features: int
    train: list[Example]
    test: list[Example] = field(default_factory=list)
    features: str = "explicit"
    generator: dict | None = None

    def split(self, name: str) -> list[Example]:
        if name == "train":
            return self.train
        if name == "test":
            return self.test
        raise ValueError(f"unknown split {name!r}")


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n"


# -- dataset ----------------------------------------------------------------

def _example_record(ex: Example, split: str, features: str) -> dict:
    rec: dict[str, Any] = {"split": split}
    if ex.observation is not None:
        rec["observation"] = [float(v) for v in ex.observation]
    rec["labels"] = [None if y == HIDDEN else int(y) for y in ex.labels]
    if ex.truth is not None:
        rec["truth"] = [int(v) for v in ex.truth]
    if features == "explicit":
        rec["tables"] = ex.meta.get("tables") or _explicit_tables(ex)
    return rec


def _nz(t: np.ndarray) -> bool:
    return bool(np.any(t != 0))


def _explicit_tables(ex: Example) -> dict:
    g = ex.graph
    tabs: dict[str, list] = {"node_features": [], "factor_features": []}
    for r in range(ex.num_features):
        for i in range(g.num_vars):
            t = ex.feat_node[r, g.node_slice(i)]
            if _nz(t):
                tabs["node_features"].append([r, i, [float(v) for v in t]])
        for a in range(g.num_factors):
            t = ex.feat_fac[r, g.factor_slice(a)]
            if _nz(t):
                tabs["factor_features"].append([r, a, [float(v) for v in t]])
    tabs["loss_node"] = [[i, [float(v) for v in ex.loss_node[g.node_slice(i)]]]
                         for i in range(g.num_vars) if _nz(ex.loss_node[g.node_slice(i)])]
    tabs["loss_factor"] = [[a, [float(v) for v in ex.loss_fac[g.factor_slice(a)]]]
                           for a in range(g.num_factors) if _nz(ex.loss_fac[g.factor_slice(a)])]
    sub, sg = ex.sub, ex.sub.graph
    if sg is not None:
        lln = [[v, [float(x) for x in ex.latent_loss_node[sg.node_slice(k)]]]
               for k, v in enumerate(sub.hidden_vars) if _nz(ex.latent_loss_node[sg.node_slice(k)])]
        llf = [[a, [float(x) for x in ex.latent_loss_fac[sg.factor_slice(k)]]]
               for k, a in enumerate(sub.active_factors) if _nz(ex.latent_loss_fac[sg.factor_slice(k)])]
        if lln:
            tabs["latent_loss_node"] = lln
        if llf:
            tabs["latent_loss_factor"] = llf
    return tabs


def dataset_to_json(ds: Dataset) -> str:
    doc = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "graph": {"cardinalities": list(ds.graph.cardinalities),
                  "scopes": [list(s) for s in ds.graph.factors]},
        "num_features": ds.num_features,
        "features": ds.features,
        "generator": ds.generator,
        "examples": [_example_record(ex, "train", ds.features) for ex in ds.train]
        + [_example_record(ex, "test", ds.features) for ex in ds.test],
    }
    return _dumps(doc)


def serialize_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    atomic_write(path, dataset_to_json(ds))


def _req(obj: dict, key: str, ptr: str, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{ptr}/{key}", "missing required key")
    v = obj[key]
    if kind is not None and not isinstance(v, kind):
        raise SchemaError(f"{ptr}/{key}", f"expected {kind.__name__ if isinstance(kind, type) else kind}")
    return v


def _table_list(raw, ptr: str, arity: int) -> list:
    if not isinstance(raw, list):
        raise SchemaError(ptr, "expected a list")
    out = []
    for k, item in enumerate(raw):
        if not isinstance(item, list) or len(item) != arity + 1 or not isinstance(item[-1], list):
            raise SchemaError(f"{ptr}/{k}", f"expected [{'index, ' * arity}table]")
        out.append(item)
    return out


def dataset_from_json(text: str) -> Dataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SchemaError("", f"invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    if not isinstance(doc, dict):
        raise SchemaError("", "top level must be an object")
    if doc.get("format") != DATASET_FORMAT:
        raise SchemaError("/format", f"expected {DATASET_FORMAT!r}")
    if doc.get("version") != DATASET_VERSION:
        raise SchemaError("/version", f"unsupported version {doc.get('version')!r} (expected {DATASET_VERSION})")
    graph_doc = _req(doc, "graph", "", dict)
    cards = _req(graph_doc, "cardinalities", "/graph", list)
    scopes = _req(graph_doc, "scopes", "/graph", list)
    try:
        g = FactorGraph(cards, scopes)
    except (GraphError, TypeError) as err:
        raise SchemaError("/graph", str(err)) from None
    F = _req(doc, "num_features", "", int)
    features = doc.get("features", "explicit")
    if features not in ("explicit", "grid"):
        raise SchemaError("/features", f"unknown feature kind {features!r}")
    generator = doc.get("generator")
    num_labels = None
    if features == "grid":
        if not isinstance(generator, dict) or "num_labels" not in generator:
            raise SchemaError("/generator/num_labels", "grid features need the generator's num_labels")
        num_labels = int(generator["num_labels"])
        if F != 2:
            raise SchemaError("/num_features", "grid features have exactly 2 features")
    train, test = [], []
    for k, rec in enumerate(_req(doc, "examples", "", list)):
        ptr = f"/examples/{k}"
        split = rec.get("split", "train") if isinstance(rec, dict) else None
        if split not in ("train", "test"):
            raise SchemaError(f"{ptr}/split", "expected 'train' or 'test'")
        ex = _load_example(rec, ptr, g, F, features, num_labels)
        (train if split == "train" else test).append(ex)
    return Dataset(g, F, train, test, features, generator)


def _load_example(rec: dict, ptr: str, g: FactorGraph, F: int, features: str, num_labels) -> Example:
    raw_labels = _req(rec, "labels", ptr, list)
    if len(raw_labels) != g.num_vars:
        raise SchemaError(f"{ptr}/labels", f"expected {g.num_vars} entries, got {len(raw_labels)}")
    labels = np.array([HIDDEN if v is None else v for v in raw_labels], dtype=np.int64)
    truth = rec.get("truth")
    obs = rec.get("observation")
    try:
        if features == "grid":
            if obs is None:
                raise SchemaError(f"{ptr}/observation", "missing required key")
            if len(obs) != g.num_vars:
                raise SchemaError(f"{ptr}/observation", f"expected {g.num_vars} entries")
            return grid_example(g, num_labels, np.array(obs, dtype=np.float64), labels,
                                None if truth is None else np.array(truth))
        tabs = _req(rec, "tables", ptr, dict)
        nf = {(r, i): t for r, i, t in _table_list(tabs.get("node_features", []), f"{ptr}/tables/node_features", 2)}
        ff = {(r, a): t for r, a, t in _table_list(tabs.get("factor_features", []), f"{ptr}/tables/factor_features", 2)}
        for (r, _), _t in list(nf.items()) + list(ff.items()):
            if not 0 <= r < F:
                raise SchemaError(f"{ptr}/tables", f"feature index {r} outside [0, {F})")
        explicit_loss = "loss_node" in tabs or "loss_factor" in tabs
        ln = {i: t for i, t in _table_list(tabs.get("loss_node", []), f"{ptr}/tables/loss_node", 1)}
        lf = {a: t for a, t in _table_list(tabs.get("loss_factor", []), f"{ptr}/tables/loss_factor", 1)}
        lln = {i: t for i, t in _table_list(tabs.get("latent_loss_node", []), f"{ptr}/tables/latent_loss_node", 1)}
        llf = {a: t for a, t in _table_list(tabs.get("latent_loss_factor", []), f"{ptr}/tables/latent_loss_factor", 1)}
        ex = make_example(g, F, labels, nf, ff, ln, lf, lln, llf,
                          observation=None if obs is None else np.array(obs, dtype=np.float64),
                          truth=None if truth is None else np.array(truth))
        if not explicit_loss:
            hamming_loss_tables(ex)
        ex.meta["tables"] = tabs
        return ex
    except SchemaError:
        raise
    except (ValueError, IndexError, KeyError, TypeError) as err:
        raise SchemaError(ptr, str(err)) from None


def deserialize_dataset(path: str | os.PathLike) -> Dataset:
    return dataset_from_json(Path(path).read_text(encoding="utf-8"))


def dataset_digest(ds: Dataset) -> str:
    return "sha256:" + hashlib.sha256(dataset_to_json(ds).encode("utf-8")).hexdigest()


def grid_dataset(spec: GridSpec) -> Dataset:
    from .harness import synthesize_dataset

    train, test = synthesize_dataset(spec)
    g = (train or test)[0].graph
    gen = {"kind": "icml_tag", "height": spec.height, "width": spec.width,
           "num_labels": spec.num_labels, "noise_amplitude": spec.noise_amplitude,
           "latent_fraction": spec.latent_fraction, "n_train": spec.n_train,
           "n_test": spec.n_test, "seed": spec.seed}
    return Dataset(g, 2, train, test, "grid", gen)


# -- model ------------------------------------------------------------------

def model_to_json(params: ModelParams, hyper: HyperParams, data_digest: str | None) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "num_features": params.num_features,
        "weights": [float(w).hex() for w in params.weights],
        "weights_decimal": [float(w) for w in params.weights],
        "hyper": hyper.to_dict(),
        "data_digest": data_digest,
    }
    return _dumps(doc)


def serialize_model(params: ModelParams, hyper: HyperParams, path: str | os.PathLike,
                    data_digest: str | None = None) -> None:
    atomic_write(path, model_to_json(params, hyper, data_digest))


@dataclass
class LoadedModel:
    params: ModelParams
    hyper: HyperParams
    data_digest: str | None


def model_from_json(text: str) -> LoadedModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SchemaError("", f"invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise SchemaError("/format", f"expected {MODEL_FORMAT!r}")
    version = doc.get("version")
    if version != MODEL_VERSION:
        raise SchemaError(
            "/version",
            f"model format version {version!r} is not supported by this build (expects {MODEL_VERSION}); "
            "retrain the model or upgrade the package to a release that reads it")
    hexes = _req(doc, "weights", "", list)
    try:
        w = np.array([float.fromhex(h) for h in hexes])
    except (TypeError, ValueError):
        raise SchemaError("/weights", "expected hex float strings") from None
    if len(w) != _req(doc, "num_features", "", int):
        raise SchemaError("/weights", "length disagrees with num_features")
    try:
        hyper = HyperParams.from_dict(_req(doc, "hyper", "", dict))
    except (TypeError, ValueError) as err:
        raise SchemaError("/hyper", str(err)) from None
    return LoadedModel(ModelParams(w), hyper, doc.get("data_digest"))


def deserialize_model(path: str | os.PathLike) -> LoadedModel:
    return model_from_json(Path(path).read_text(encoding="utf-8"))
