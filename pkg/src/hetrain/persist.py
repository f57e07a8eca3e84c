"""Metrics CSV and checkpoint documents."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, fields
from pathlib import Path

from .data import DataError
from .he_nn import DenseLayer, Hyper, NetworkState
from .packed_linalg import Layout, MatrixShape, PackedMatrix
from .reference import EpochRecord
from .slot_engine import Kind, SlotRegister

METRICS_HEADER = ["epoch", "train_loss", "test_loss", "train_acc", "test_acc",
                  "cum_mults", "cum_rotations", "min_level"]
CHECKPOINT_FORMAT = "hetrain-checkpoint"
CHECKPOINT_VERSION = 1


def write_metrics(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.test_loss), repr(r.train_acc),
                        repr(r.test_acc), r.cum_mults, r.cum_rotations, r.min_level])


def read_metrics(path) -> list:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append(EpochRecord(int(row["epoch"]), float(row["train_loss"]), float(row["test_loss"]),
                               float(row["train_acc"]), float(row["test_acc"]),
                               int(row["cum_mults"]), int(row["cum_rotations"]),
                               int(row["min_level"])))
    return out


def _register_doc(r: SlotRegister) -> dict:
    return {"slots": r.slots.tolist(), "kind": r.kind.value, "level": r.level}


def _register_from(doc: dict) -> SlotRegister:
    return SlotRegister(doc["slots"], Kind(doc["kind"]), doc["level"])


def _packed_doc(P: PackedMatrix) -> dict:
    return {
        "layout": P.layout.value,
        "shape": asdict(P.shape),
        "register_length": P.register_length,
        "replicated": P.replicated,
        "parts": [_register_doc(p) for p in P.parts],
    }


def _packed_from(doc: dict) -> PackedMatrix:
    return PackedMatrix(Layout(doc["layout"]), MatrixShape(**doc["shape"]),
                        tuple(_register_from(p) for p in doc["parts"]),
                        doc["register_length"], doc["replicated"])


def checkpoint_document(net: NetworkState, *, seed: int, epoch: int) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layout": net.layout.value,
        "dims": list(net.dims),
        "padded_dims": list(net.padded_dims),
        "experimental_ragged": net.experimental_ragged,
        "hyper": asdict(net.hyper),
        "seed": seed,
        "epoch": epoch,
        "layers": [
            {"in_dim": l.in_dim, "out_dim": l.out_dim,
             "weights": _packed_doc(l.weights), "bias": _register_doc(l.bias)}
            for l in net.layers
        ],
    }


def network_from_document(doc: dict) -> NetworkState:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError("not a checkpoint document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')}")
    hyper_keys = {f.name for f in fields(Hyper)}
    layers = [DenseLayer(_packed_from(l["weights"]), _register_from(l["bias"]),
                         l["in_dim"], l["out_dim"]) for l in doc["layers"]]
    return NetworkState(layers, Hyper(**{k: v for k, v in doc["hyper"].items() if k in hyper_keys}),
                        Layout(doc["layout"]), tuple(doc["dims"]), tuple(doc["padded_dims"]),
                        doc.get("experimental_ragged", False))


def save_checkpoint(path, net: NetworkState, *, seed: int, epoch: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_document(net, seed=seed, epoch=epoch), indent=1))


def load_checkpoint(path) -> tuple[NetworkState, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: not valid JSON ({err})") from None
    return network_from_document(doc), doc
