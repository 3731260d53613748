"""Declarative edits of trained shape functions, and model diffs.

An :class:`EditScript` lists region edits (closed intervals in feature
units). Bins straddling a region boundary are split so the edit applies to
exactly the region. Shifts are stored as an offset on top of an anchor, which
makes ``shift_by(+d)`` followed by ``shift_by(-d)`` an exact no-op.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError, StructuralMismatch
from .gam import BinLayout, GamModel, ShapeFunction
from .tabular import CATEGORICAL, Table

FLATTEN_TO, FLATTEN_TO_BIN_OF, SHIFT_BY = "flatten_to", "flatten_to_bin_of", "shift_by"
ACTIONS = (FLATTEN_TO, FLATTEN_TO_BIN_OF, SHIFT_BY)


@dataclass(frozen=True)
class Edit:
    """One region edit. ``value`` is the flat level, the reference x, or the shift.

    ``lo``/``hi`` may be infinite. For ``flatten_to_bin_of`` a ``value`` of
    None refers to the missing bin.
    """

    feature: str
    lo: float
    hi: float
    action: str
    value: float | None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise DataError(f"unknown edit action {self.action!r}")
        if math.isnan(self.lo) or math.isnan(self.hi) or not self.lo < self.hi:
            raise DataError(f"edit region must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if self.action != FLATTEN_TO_BIN_OF and (self.value is None or not math.isfinite(self.value)):
            raise DataError(f"{self.action} needs a finite value")

    def to_dict(self) -> dict:
        key = {FLATTEN_TO: "value", FLATTEN_TO_BIN_OF: "x_ref", SHIFT_BY: "delta"}[self.action]
        return {"feature": self.feature, "region": [_bound_out(self.lo), _bound_out(self.hi)],
                "action": self.action, key: self.value}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Edit":
        try:
            lo, hi = d["region"]
            action = d["action"]
            key = {FLATTEN_TO: "value", FLATTEN_TO_BIN_OF: "x_ref", SHIFT_BY: "delta"}.get(action, "value")
            value = d.get(key)
            return cls(str(d["feature"]), _bound_in(lo, -math.inf), _bound_in(hi, math.inf), action,
                       None if value is None else float(value))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"malformed edit {dict(d)!r}: {exc}") from exc


def _bound_in(v, default: float) -> float:
    return default if v is None else float(v)


def _bound_out(v: float):
    return None if math.isinf(v) else v


@dataclass(frozen=True)
class EditScript:
    edits: tuple[Edit, ...]
    recenter: bool = False
    author: str | None = None
    timestamp: str | None = None
    note: str | None = None

    def to_dict(self) -> dict:
        return {"edits": [e.to_dict() for e in self.edits], "recenter": self.recenter,
                "author": self.author, "timestamp": self.timestamp, "note": self.note}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EditScript":
        if not isinstance(d, Mapping) or "edits" not in d:
            raise DataError("an edit script needs an 'edits' list")
        return cls(tuple(Edit.from_dict(e) for e in d["edits"]), bool(d.get("recenter", False)),
                   d.get("author"), d.get("timestamp"), d.get("note"))

    @classmethod
    def load(cls, path: str | Path) -> "EditScript":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"edit script {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


# ----------------------------------------------------------------------------- partition helpers


def _boundaries(layout: BinLayout) -> np.ndarray:
    """Interior cut points that decide bin membership."""
    return layout.edges[1:-1]


def _effective(layout: BinLayout, k: int) -> tuple[float, float]:
    return layout.interval(k, clamp=True)


def _split_counts(count: float, a: float, b: float, pieces: Sequence[tuple[float, float]]) -> list[float]:
    """Share an integer count of nominal interval [a, b] among ``pieces`` by overlap width."""
    if not pieces:
        return []
    if b > a:
        share = np.array([max(0.0, min(d, b) - max(c, a)) for c, d in pieces]) / (b - a)
    else:
        share = np.array([1.0 if c < a <= d else 0.0 for c, d in pieces])
    if share.sum() <= 0:
        share = np.zeros(len(pieces))
        share[0] = 1.0
    share = share / share.sum()
    raw = share * count
    base = np.floor(raw)
    rest = int(round(count - base.sum()))
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rest]] += 1
    return base.tolist()


def _refine(shape: ShapeFunction, cuts: Sequence[float]) -> ShapeFunction:
    """Split value bins at ``cuts`` (finite values not already boundaries)."""
    lay = shape.layout
    old_b = _boundaries(lay)
    new_cuts = sorted({float(c) for c in cuts if math.isfinite(c) and c not in set(old_b.tolist())})
    if not new_cuts:
        return shape
    bnd = np.sort(np.concatenate([old_b, new_cuts]))
    lo_edge = min(lay.edges[0], bnd[0])
    hi_edge = max(lay.edges[-1], bnd[-1])
    edges = np.concatenate([[lo_edge], bnd, [hi_edge]])
    nv = edges.size - 1
    # parent of each new bin: the old bin holding its right end (or left end for the last bin)
    parent = np.empty(nv, dtype=np.int64)
    for k in range(nv):
        probe = edges[k + 1] if k < nv - 1 else math.inf
        parent[k] = int(np.searchsorted(old_b, probe, side="left"))
    counts = np.empty(nv)
    for p in np.unique(parent):
        kids = np.flatnonzero(parent == p)
        a, b = float(lay.edges[p]), float(lay.edges[p + 1])
        pieces = [(edges[k] if k > 0 else -math.inf, edges[k + 1] if k < nv - 1 else math.inf) for k in kids]
        counts[kids] = _split_counts(float(lay.counts[p]), a, b, pieces)
    idx = np.concatenate([parent, [lay.missing_bin]]) if lay.missing_bin is not None else parent
    new_counts = np.concatenate([counts, lay.counts[lay.missing_bin:]]) if lay.missing_bin is not None else counts
    new_lay = BinLayout(lay.kind, edges, (), new_counts, nv if lay.missing_bin is not None else None,
                        lay.sentinel, lay.missing_position)
    base, shift = _state(shape)
    return ShapeFunction(shape.feature, new_lay, shape.scores[idx], base[idx], shift[idx],
                         tuple(sorted(set(shape.split_edges) | set(new_cuts))))


def _state(shape: ShapeFunction) -> tuple[np.ndarray, np.ndarray]:
    if shape.edit_base is None:
        return shape.scores.copy(), np.zeros(shape.scores.size)
    return shape.edit_base.copy(), shape.edit_shift.copy()


def _merge_splits(shape: ShapeFunction) -> ShapeFunction:
    """Undo edit-introduced splits whose two sides have become identical again."""
    while True:
        lay = shape.layout
        base, shift = _state(shape)
        bnd = _boundaries(lay)
        merged = False
        for cut in shape.split_edges:
            pos = np.flatnonzero(bnd == cut)
            if pos.size == 0:
                continue
            k = int(pos[0])  # cut separates bins k and k+1
            if base[k] != base[k + 1] or shift[k] != shift[k + 1]:
                continue
            edges = np.delete(lay.edges, k + 1)
            if k == 0:
                edges[0] = lay.edges[0] if lay.edges[0] < cut else lay.edges[1]
            if k + 1 == lay.n_value_bins - 1:
                edges[-1] = lay.edges[-1] if lay.edges[-1] > cut else lay.edges[-2]
            counts = np.delete(lay.counts, k + 1)
            counts[k] = lay.counts[k] + lay.counts[k + 1]
            keep = np.delete(np.arange(lay.n_bins), k + 1)
            nv = lay.n_value_bins - 1
            new_lay = BinLayout(lay.kind, edges, (), counts, nv if lay.missing_bin is not None else None,
                                lay.sentinel, lay.missing_position)
            shape = ShapeFunction(shape.feature, new_lay, shape.scores[keep], base[keep], shift[keep],
                                  tuple(c for c in shape.split_edges if c != cut))
            merged = True
            break
        if not merged:
            return shape


def _finish(shape: ShapeFunction, base: np.ndarray, shift: np.ndarray) -> ShapeFunction:
    scores = base + shift
    shape = ShapeFunction(shape.feature, shape.layout, scores, base, shift, shape.split_edges)
    shape = _merge_splits(shape)
    if not np.any(shape.edit_shift) and not shape.split_edges:
        shape = ShapeFunction(shape.feature, shape.layout, shape.edit_base, None, None, ())
    return shape


# ----------------------------------------------------------------------------- applying edits


def _apply_one(shape: ShapeFunction, edit: Edit) -> ShapeFunction:
    lay = shape.layout
    if lay.kind == CATEGORICAL:
        raise DataError(f"region edits need a numeric feature; {shape.feature!r} is categorical")
    if edit.hi < lay.edges[0] or edit.lo > lay.edges[-1]:
        raise DataError(
            f"edit region [{edit.lo}, {edit.hi}] does not intersect the bin range "
            f"[{lay.edges[0]}, {lay.edges[-1]}] of {shape.feature!r}"
        )
    if edit.action == FLATTEN_TO_BIN_OF:
        if edit.value is None:
            if lay.missing_bin is None:
                raise DataError(f"{shape.feature!r} has no missing bin to copy")
            level = float(shape.scores[lay.missing_bin])
        elif lay.sentinel is not None and lay.missing_bin is not None and edit.value == lay.sentinel:
            level = float(shape.scores[lay.missing_bin])
        elif lay.edges[0] <= edit.value <= lay.edges[-1]:
            level = float(shape.scores[lay.locate(edit.value)])
        else:
            raise DataError(f"reference value {edit.value} of {shape.feature!r} lies outside its bins "
                            f"[{lay.edges[0]}, {lay.edges[-1]}]")
    else:
        level = float(edit.value)
    # the closed region [lo, hi] equals the right-closed interval (lo-, hi]
    lo_cut = math.nextafter(edit.lo, -math.inf) if math.isfinite(edit.lo) else -math.inf
    shape = _refine(shape, [lo_cut, edit.hi])
    lay = shape.layout
    base, shift = _state(shape)
    inside = np.zeros(lay.n_bins, bool)
    for k in range(lay.n_value_bins):
        a, b = _effective(lay, k)
        inside[k] = a >= lo_cut and b <= edit.hi
    if not inside.any():
        raise DataError(f"edit region of {shape.feature!r} covers no bin")
    if edit.action == SHIFT_BY:
        shift[inside] = shift[inside] + level
    else:
        base[inside] = level
        shift[inside] = 0.0
    return _finish(shape, base, shift)


def _recount(shape: ShapeFunction, table: Table) -> ShapeFunction:
    lay = shape.layout
    counts = np.bincount(lay.assign(table[shape.feature]), minlength=lay.n_bins).astype(np.float64)
    return replace(shape, layout=lay.with_counts(counts))


def apply_edit(model: GamModel, script: EditScript, table: Table | None = None) -> GamModel:
    """Apply ``script`` to a copy of ``model``.

    Counts of split bins are shared by overlap width unless ``table`` (the
    training table) is given, in which case the edited features are recounted
    exactly. With ``script.recenter`` the edited shape's count-weighted mean
    is moved into the intercept.
    """
    if not script.edits:
        raise DataError("edit script has no edits")
    shapes = {s.feature: s for s in model.shapes}
    intercept = model.intercept
    touched = []
    for e in script.edits:
        if e.feature not in shapes:
            raise SchemaError(f"model has no feature {e.feature!r}")
        shapes[e.feature] = _apply_one(shapes[e.feature], e)
        if e.feature not in touched:
            touched.append(e.feature)
    if table is not None:
        for f in touched:
            shapes[f] = _recount(shapes[f], table)
    moved = {}
    if script.recenter:
        for f in touched:
            s = shapes[f]
            n = s.layout.n
            if n <= 0:
                raise DataError(f"cannot recenter {f!r}: its bins have zero total count")
            m = float(np.dot(s.layout.counts, s.scores) / n)
            base, shift = _state(s)
            base = base - m
            s = _finish(s, base, shift)
            shapes[f] = s
            intercept += m
            moved[f] = m
    entry = {"type": "edit", "script": script.to_dict(), "intercept_before": model.intercept,
             "intercept_after": intercept, "recentered": moved}
    return replace(model, intercept=intercept, shapes=tuple(shapes[s.feature] for s in model.shapes),
                   history=tuple(model.history) + (entry,))


# ----------------------------------------------------------------------------- diffs


@dataclass(frozen=True)
class BinChange:
    feature: str
    bin: int
    lo: float
    hi: float
    before: float
    after: float
    missing: bool = False

    def to_dict(self) -> dict:
        return {"feature": self.feature, "bin": self.bin, "lo": _bound_out(self.lo), "hi": _bound_out(self.hi),
                "before": self.before, "after": self.after, "missing": self.missing}


@dataclass(frozen=True)
class ModelDiff:
    intercept_before: float
    intercept_after: float
    changes: tuple[BinChange, ...]
    tolerance: float = 1e-12

    @property
    def intercept_delta(self) -> float:
        return self.intercept_after - self.intercept_before

    @property
    def empty(self) -> bool:
        return not self.changes and abs(self.intercept_delta) <= self.tolerance

    def by_feature(self) -> dict[str, list[BinChange]]:
        out: dict[str, list[BinChange]] = {}
        for c in self.changes:
            out.setdefault(c.feature, []).append(c)
        return out

    def to_dict(self) -> dict:
        return {"intercept_before": self.intercept_before, "intercept_after": self.intercept_after,
                "intercept_delta": self.intercept_delta, "changes": [c.to_dict() for c in self.changes]}


def diff_models(a: GamModel, b: GamModel, tol: float = 1e-12) -> ModelDiff:
    """Bins whose scores differ by more than ``tol`` between two models.

    Layouts may differ only by refinement (extra cut points in one of them);
    numeric features are compared on the common refinement.
    """
    if a.features != b.features:
        raise StructuralMismatch("models have different feature lists")
    changes = []
    for sa, sb in zip(a.shapes, b.shapes):
        la, lb = sa.layout, sb.layout
        if la.kind != lb.kind or (la.missing_bin is None) != (lb.missing_bin is None):
            raise StructuralMismatch(f"layouts of {sa.feature!r} differ in kind or missing bin")
        if la.kind == CATEGORICAL:
            if la.categories != lb.categories:
                raise StructuralMismatch(f"categories of {sa.feature!r} differ")
            for k in range(la.n_value_bins):
                if abs(sa.scores[k] - sb.scores[k]) > tol:
                    changes.append(BinChange(sa.feature, k, math.nan, math.nan,
                                             float(sa.scores[k]), float(sb.scores[k])))
        else:
            ba, bb = set(_boundaries(la).tolist()), set(_boundaries(lb).tolist())
            if not (ba <= bb or bb <= ba):
                raise StructuralMismatch(f"bin layouts of {sa.feature!r} are not refinements of each other")
            bnd = np.array(sorted(ba | bb))
            nv = bnd.size + 1
            for k in range(nv):
                lo = -math.inf if k == 0 else float(bnd[k - 1])
                hi = math.inf if k == nv - 1 else float(bnd[k])
                probe = hi if math.isfinite(hi) else (lo if math.isfinite(lo) else 0.0)
                if not math.isfinite(hi) and math.isfinite(lo):
                    probe = math.nextafter(lo, math.inf)
                va = float(sa.scores[la.locate(probe)])
                vb = float(sb.scores[lb.locate(probe)])
                if abs(va - vb) > tol:
                    changes.append(BinChange(sa.feature, k, lo, hi, va, vb))
        if la.missing_bin is not None:
            va, vb = float(sa.scores[la.missing_bin]), float(sb.scores[lb.missing_bin])
            if abs(va - vb) > tol:
                changes.append(BinChange(sa.feature, la.n_value_bins, math.nan, math.nan, va, vb, True))
    return ModelDiff(float(a.intercept), float(b.intercept), tuple(changes), tol)
