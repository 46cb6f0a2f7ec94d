"""File formats at the package boundary.

All formats use 0-based time indices.

* Score matrix: CSV, one row of T comma-separated decimals per model,
  preceded by optional ``# model_id=<string>`` comment lines (one per
  row, in row order). This is the ingestion point for externally
  produced detector scores.
* Labels: CSV with header ``sequence_id,has_cp,theta,length``; theta is
  empty when has_cp is 0.
* Series: plain CSV, T rows by D columns.
* Dataset directory: series files plus labels CSVs, tied together by a
  ``manifest.json`` listing sequence ids and relative paths.
* Trace export: CSV ``t,w_t`` per sequence.
* Plot data: ``n_thresholds,best_f1`` and ``threshold,f1,distance_kind``
  CSVs for the threshold-robustness figures.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .scorers import scorer_from_dict, scorer_to_dict
from .types import EnsembleScoreMatrix, LabeledSequence, validate_matrix

__all__ = [
    "write_score_matrix",
    "read_score_matrix",
    "write_labels",
    "read_labels",
    "write_series",
    "read_series",
    "write_dataset",
    "read_dataset",
    "write_trace_csv",
    "write_threshold_count_csv",
    "write_distance_f1_csv",
    "save_ensemble",
    "load_ensemble",
]

_FLOAT_FMT = "%.17g"  # full round-trip precision, deterministic


def write_score_matrix(matrix: EnsembleScoreMatrix, path) -> None:
    path = Path(path)
    lines = [f"# model_id={mid}" for mid in matrix.model_ids]
    for row in matrix.values:
        lines.append(",".join(_FLOAT_FMT % v for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_score_matrix(path) -> EnsembleScoreMatrix:
    path = Path(path)
    model_ids, rows = [], []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("model_id="):
                model_ids.append(body[len("model_id="):])
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise DomainError(f"{path}:{lineno}: unparseable score: {exc}")
    if not rows:
        raise ShapeError(f"{path}: no score rows")
    if model_ids and len(model_ids) != len(rows):
        raise ShapeError(
            f"{path}: {len(model_ids)} model_id headers for {len(rows)} rows"
        )
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ShapeError(f"{path}: rows have mixed lengths {sorted(lengths)}")
    return validate_matrix(
        [np.asarray(r) for r in rows], model_ids if model_ids else None
    )


def write_labels(labeled: dict, path) -> None:
    """labeled maps sequence_id -> LabeledSequence."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence_id", "has_cp", "theta", "length"])
        for seq_id, truth in labeled.items():
            writer.writerow(
                [
                    seq_id,
                    1 if truth.has_change else 0,
                    "" if truth.change_point is None else truth.change_point,
                    truth.length,
                ]
            )


def read_labels(path) -> dict:
    path = Path(path)
    out = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"sequence_id", "has_cp", "theta", "length"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ShapeError(f"{path}: labels header must contain {sorted(required)}")
        for row in reader:
            has_cp = int(row["has_cp"])
            theta = int(row["theta"]) if has_cp else None
            if has_cp and row["theta"] == "":
                raise DomainError(f"{path}: has_cp=1 but theta empty")
            out[row["sequence_id"]] = LabeledSequence(
                length=int(row["length"]), change_point=theta
            )
    return out


def write_series(series: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(series, dtype=np.float64), delimiter=",", fmt=_FLOAT_FMT)


def read_series(path) -> np.ndarray:
    arr = np.loadtxt(path, delimiter=",", dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def write_dataset(train, test, out_dir) -> Path:
    """Write (series, LabeledSequence) pairs and the tying manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"splits": {}}
    for split, pairs in (("train", train), ("test", test)):
        split_dir = out_dir / split
        split_dir.mkdir(exist_ok=True)
        entries = []
        labels = {}
        for i, (series, truth) in enumerate(pairs):
            seq_id = f"{split}_{i:05d}"
            rel = f"{split}/{seq_id}.csv"
            write_series(series, out_dir / rel)
            entries.append({"id": seq_id, "series": rel, "length": truth.length})
            labels[seq_id] = truth
        labels_rel = f"labels_{split}.csv"
        write_labels(labels, out_dir / labels_rel)
        manifest["splits"][split] = {"sequences": entries, "labels": labels_rel}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_dir / "manifest.json"


def read_dataset(data_dir):
    """Load a dataset directory back into (train, test) pair lists."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json under {data_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    out = {}
    for split, info in manifest["splits"].items():
        labels = read_labels(data_dir / info["labels"])
        pairs = []
        for entry in info["sequences"]:
            series = read_series(data_dir / entry["series"])
            truth = labels[entry["id"]]
            if series.shape[0] != truth.length:
                raise ShapeError(
                    f"{entry['series']}: {series.shape[0]} rows but label says "
                    f"{truth.length}"
                )
            pairs.append((entry["id"], series, truth))
        out[split] = pairs
    return out.get("train", []), out.get("test", [])


def write_trace_csv(trace, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "w_t"])
        for t, value in enumerate(np.asarray(trace, dtype=np.float64)):
            writer.writerow([t, _FLOAT_FMT % value])


def write_threshold_count_csv(rows, path) -> None:
    """rows: iterable of (n_thresholds, best_f1)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_thresholds", "best_f1"])
        for n, f1 in rows:
            writer.writerow([n, _FLOAT_FMT % f1])


def write_distance_f1_csv(rows, path) -> None:
    """rows: iterable of (threshold, f1, distance_kind)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "f1", "distance_kind"])
        for threshold, f1, kind in rows:
            writer.writerow([_FLOAT_FMT % threshold, _FLOAT_FMT % f1, kind])


def save_ensemble(members, path) -> None:
    docs = [scorer_to_dict(m) for m in members]
    Path(path).write_text(json.dumps(docs, indent=2) + "\n", encoding="utf-8")


def load_ensemble(path) -> list:
    docs = json.loads(Path(path).read_text(encoding="utf-8"))
    return [scorer_from_dict(d) for d in docs]
