"""Exact piecewise-constant views of a trained model, for analysts and plots.

All trees sharing one feature collapse into a single step function (the
breakpoints are the union of their split thresholds), and all trees sharing a
feature pair collapse into one value grid. Summing the lookups over every
effect reproduces the model score, which is the whole point: the model IS its
plots. Exports are raw tree sums, deliberately not mean-centered.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .trainer import IlmartModel


def _interval_index(breakpoints: np.ndarray, x) -> np.ndarray:
    # Interval b covers (breakpoints[b-1], breakpoints[b]], matching the
    # trees' "value <= threshold goes left" routing.
    return np.searchsorted(breakpoints, x, side="left")


def _probes(breakpoints: np.ndarray) -> np.ndarray:
    """One representative input per interval (right endpoint; past-the-end last)."""
    if breakpoints.size == 0:
        return np.zeros(1)
    return np.append(breakpoints, np.nextafter(breakpoints[-1], np.inf))


@dataclass
class ShapeFunction:
    """Contribution of one feature: ``values[i]`` on the i-th interval."""

    feature: int
    breakpoints: np.ndarray
    values: np.ndarray

    def lookup(self, x: float) -> float:
        return float(self.values[_interval_index(self.breakpoints, x)])

    def lookup_batch(self, x: np.ndarray) -> np.ndarray:
        return self.values[_interval_index(self.breakpoints, x)]


@dataclass
class InteractionSurface:
    """Contribution of a feature pair over a breakpoint-by-breakpoint grid."""

    pair: tuple[int, int]
    breakpoints_i: np.ndarray
    breakpoints_j: np.ndarray
    values: np.ndarray

    def lookup(self, xi: float, xj: float) -> float:
        a = _interval_index(self.breakpoints_i, xi)
        b = _interval_index(self.breakpoints_j, xj)
        return float(self.values[a, b])

    def lookup_batch(self, xi: np.ndarray, xj: np.ndarray) -> np.ndarray:
        a = _interval_index(self.breakpoints_i, xi)
        b = _interval_index(self.breakpoints_j, xj)
        return self.values[a, b]


@dataclass
class EffectScore:
    kind: str                   # "main" | "pair"
    features: tuple[int, ...]
    importance: float
    rank: int


@dataclass
class EffectImportance:
    effects: list[EffectScore]

    def by_rank(self) -> list[EffectScore]:
        return sorted(self.effects, key=lambda e: e.rank)


def distill_shapes(model: IlmartModel) -> tuple[list[ShapeFunction], list[InteractionSurface]]:
    """Collapse the ensemble into one shape per main feature and one surface per pair."""
    d = model.num_features
    shapes = []
    for f in model.main_features:
        trees = [t for t in model.main_trees if t.used_features[0] == f]
        breakpoints = np.unique(np.concatenate([t.thresholds_for(f) for t in trees]))
        probes = _probes(breakpoints)
        values = np.zeros(probes.size)
        x = np.zeros(d)
        for idx, probe in enumerate(probes):
            x[f - 1] = probe
            values[idx] = sum(t.predict(x) for t in trees)
        shapes.append(ShapeFunction(f, breakpoints, values))

    surfaces = []
    for pair in model.interaction_pairs:
        trees = [t for t in model.interaction_trees if tuple(t.constraint_features) == tuple(pair)]
        i, j = pair
        br_i = np.unique(np.concatenate([t.thresholds_for(i) for t in trees] + [np.empty(0)]))
        br_j = np.unique(np.concatenate([t.thresholds_for(j) for t in trees] + [np.empty(0)]))
        probes_i = _probes(br_i)
        probes_j = _probes(br_j)
        values = np.zeros((probes_i.size, probes_j.size))
        x = np.zeros(d)
        for a, pi in enumerate(probes_i):
            for b, pj in enumerate(probes_j):
                x[i - 1] = pi
                x[j - 1] = pj
                values[a, b] = sum(t.predict(x) for t in trees)
        surfaces.append(InteractionSurface(tuple(pair), br_i, br_j, values))
    return shapes, surfaces


def additive_score(shapes, surfaces, features: np.ndarray) -> float:
    """Reassemble a prediction from distilled effects (the exactness oracle)."""
    features = np.asarray(features, dtype=np.float64)
    total = sum(s.lookup(features[s.feature - 1]) for s in shapes)
    total += sum(s.lookup(features[s.pair[0] - 1], features[s.pair[1] - 1]) for s in surfaces)
    return float(total)


def effect_importance(model: IlmartModel, reference: Dataset) -> EffectImportance:
    """Mean absolute contribution of each effect over a reference dataset.

    Ranks start at 1 for the largest importance; exact ties resolve by
    effect kind then feature ids, so the ordering is reproducible.
    """
    if reference.num_rows == 0:
        raise ValueError("reference dataset is empty")
    shapes, surfaces = distill_shapes(model)
    raw = []
    for s in shapes:
        contrib = s.lookup_batch(reference.features[:, s.feature - 1])
        raw.append(("main", (s.feature,), float(np.mean(np.abs(contrib)))))
    for s in surfaces:
        contrib = s.lookup_batch(
            reference.features[:, s.pair[0] - 1], reference.features[:, s.pair[1] - 1]
        )
        raw.append(("pair", s.pair, float(np.mean(np.abs(contrib)))))
    raw.sort(key=lambda e: (-e[2], e[0] != "main", e[1]))
    effects = [EffectScore(kind, feats, imp, rank) for rank, (kind, feats, imp) in enumerate(raw, 1)]
    return EffectImportance(effects)


def _effect_key(kind, features):
    return f"main_{features[0]}" if kind == "main" else f"pair_{features[0]}_{features[1]}"


def export_shapes(shapes, surfaces, out_dir, fmt: str = "csv",
                  importance: EffectImportance | None = None,
                  top: int | None = None) -> list[str]:
    """Write one file per effect plus an index listing importance ranks.

    With ``top``, only the ``top`` highest-ranked effects are exported
    (requires ``importance``). Returns the written file paths.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    if top is not None and importance is None:
        raise ValueError("exporting top-N effects requires importance scores")
    os.makedirs(out_dir, exist_ok=True)

    ranked = {}
    if importance is not None:
        ranked = {_effect_key(e.kind, e.features): e for e in importance.effects}
    keep = None
    if top is not None:
        keep = {_effect_key(e.kind, e.features) for e in importance.by_rank()[:top]}

    written = []
    index = []

    def include(key):
        return keep is None or key in keep

    for s in shapes:
        key = _effect_key("main", (s.feature,))
        if not include(key):
            continue
        path = os.path.join(out_dir, f"{key}.{fmt}")
        uppers = np.append(s.breakpoints, np.inf)
        if fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["upper_bound", "value"])
                for u, v in zip(uppers, s.values):
                    writer.writerow([repr(float(u)), repr(float(v))])
        else:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump({"feature": s.feature,
                           "breakpoints": s.breakpoints.tolist(),
                           "values": s.values.tolist()}, fh)
        written.append(path)
        entry = {"effect": key, "kind": "main", "features": [s.feature],
                 "file": os.path.basename(path)}
        if key in ranked:
            entry["importance"] = ranked[key].importance
            entry["rank"] = ranked[key].rank
        index.append(entry)

    for s in surfaces:
        key = _effect_key("pair", s.pair)
        if not include(key):
            continue
        path = os.path.join(out_dir, f"{key}.{fmt}")
        uppers_i = np.append(s.breakpoints_i, np.inf)
        uppers_j = np.append(s.breakpoints_j, np.inf)
        if fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["upper_bound_i", "upper_bound_j", "value"])
                for a, ui in enumerate(uppers_i):
                    for b, uj in enumerate(uppers_j):
                        writer.writerow([repr(float(ui)), repr(float(uj)),
                                         repr(float(s.values[a, b]))])
        else:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump({"pair": list(s.pair),
                           "breakpoints_i": s.breakpoints_i.tolist(),
                           "breakpoints_j": s.breakpoints_j.tolist(),
                           "values": s.values.tolist()}, fh)
        written.append(path)
        entry = {"effect": key, "kind": "pair", "features": list(s.pair),
                 "file": os.path.basename(path)}
        if key in ranked:
            entry["importance"] = ranked[key].importance
            entry["rank"] = ranked[key].rank
        index.append(entry)

    index_path = os.path.join(out_dir, f"index.{fmt if fmt == 'json' else 'csv'}")
    if fmt == "json":
        with open(index_path, "w", encoding="utf-8") as fh:
            json.dump({"effects": index}, fh, indent=1)
    else:
        with open(index_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["effect", "kind", "features", "file", "importance", "rank"])
            for e in index:
                writer.writerow([
                    e["effect"], e["kind"], " ".join(map(str, e["features"])), e["file"],
                    repr(e["importance"]) if "importance" in e else "",
                    e.get("rank", ""),
                ])
    written.append(index_path)
    return written


def import_shapes(out_dir) -> tuple[list[ShapeFunction], list[InteractionSurface]]:
    """Read back a JSON export; the inverse of :func:`export_shapes`."""
    with open(os.path.join(out_dir, "index.json"), encoding="utf-8") as fh:
        index = json.load(fh)["effects"]
    shapes, surfaces = [], []
    for entry in index:
        with open(os.path.join(out_dir, entry["file"]), encoding="utf-8") as fh:
            data = json.load(fh)
        if entry["kind"] == "main":
            shapes.append(ShapeFunction(
                int(data["feature"]),
                np.asarray(data["breakpoints"], dtype=np.float64),
                np.asarray(data["values"], dtype=np.float64),
            ))
        else:
            surfaces.append(InteractionSurface(
                tuple(int(f) for f in data["pair"]),
                np.asarray(data["breakpoints_i"], dtype=np.float64),
                np.asarray(data["breakpoints_j"], dtype=np.float64),
                np.asarray(data["values"], dtype=np.float64),
            ))
    return shapes, surfaces
