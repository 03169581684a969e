"""Interactive edits: nudge a color by moving the biases of the primitives
that dominate it.

An edit constraint says "color c_in should map to c_out". The residual
delta = c_out - f(c_in) (unclamped model output, so edits never fight the
clamp) is distributed over the K most influential primitives at c_in,
proportionally to their renormalized mixture weights alpha_k = w_k / sum_K w.
Each selected bias moves by s * alpha_k * delta, which contracts the residual
to exactly (1 - s * m) * delta with m = sum_K w_k * alpha_k, and leaves every
mixture weight untouched (weights do not depend on biases). Edits are O(N):
one weight evaluation, no retraining.

Every edit yields an EditRecord carrying enough state to undo bit-exactly and
a digest of the touched biases after the edit; undo refuses records whose
digest no longer matches the model (stale lineage).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .glut_core import GlutModel, evaluate_unclamped, influence_weights

EDIT_WEIGHT_FLOOR = 1e-12


class DegenerateEditError(ValueError):
    """Selected primitives carry (numerically) no weight at the edit color."""


class LineageError(ValueError):
    """Undo record does not correspond to the model's current biases."""


@dataclass(frozen=True)
class EditConstraint:
    """One 'c_in should map to c_out' request."""

    c_in: tuple[float, float, float]
    c_out: tuple[float, float, float]
    k: int = 4
    strength: float = 1.0

    def __post_init__(self):
        for name in ("c_in", "c_out"):
            c = tuple(float(v) for v in getattr(self, name))
            if len(c) != 3 or not all(0.0 <= v <= 1.0 for v in c):
                raise ValueError(f"{name} must be 3 components in [0, 1]")
            object.__setattr__(self, name, c)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("strength must be in [0, 1]")


@dataclass
class EditRecord:
    """Everything needed to display, replay, and bit-exactly undo one edit."""

    constraint: EditConstraint
    touched: np.ndarray       # (K,) primitive indices, most influential first
    deltas: np.ndarray        # (K, 3) bias displacements that were applied
    m: float                  # contraction mass sum_K w_k * alpha_k
    prev_biases: np.ndarray = field(repr=False)  # (K, 3) pre-edit values
    post_digest: str = field(repr=False, default="")


def _bias_digest(model: GlutModel, touched: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(touched, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(model.local_biases[touched]).tobytes())
    return h.hexdigest()


def residual(model: GlutModel, c_in, c_out) -> np.ndarray:
    """How far the model misses the requested output: c_out - f(c_in),
    with f unclamped so the edit math never fights the output clamp."""
    c_out = np.asarray(c_out, dtype=np.float64)
    return c_out - evaluate_unclamped(model, np.asarray(c_in, dtype=np.float64))


def select_topk(model: GlutModel, c_in, k: int) -> np.ndarray:
    """Indices of the k largest mixture weights at c_in, descending; ties go
    to the lower index. k is clipped to N."""
    w = influence_weights(model, np.asarray(c_in, dtype=np.float64))
    order = np.argsort(-w, kind="stable")
    return order[: min(k, model.n)]


def apply_edit(model: GlutModel,
               constraint: EditConstraint) -> tuple[GlutModel, EditRecord]:
    """Return (edited model, undo record); the input model is left untouched."""
    c_in = np.asarray(constraint.c_in, dtype=np.float64)
    w = influence_weights(model, c_in)
    touched = select_topk(model, c_in, constraint.k)
    wk = w[touched]
    total = float(wk.sum())
    if total < EDIT_WEIGHT_FLOOR:
        pos = "({:.4f}, {:.4f}, {:.4f})".format(*constraint.c_in)
        raise DegenerateEditError(
            f"selected primitives carry total weight {total:.3e} at {pos}; "
            f"pick a color nearer the model's primitives or increase k")
    alpha = wk / total
    delta = residual(model, c_in, constraint.c_out)
    deltas = constraint.strength * alpha[:, None] * delta[None, :]
    m = float(np.dot(wk, alpha))

    new_biases = model.local_biases.copy()
    prev = new_biases[touched].copy()
    new_biases[touched] += deltas
    edited = model.with_biases(new_biases)
    record = EditRecord(constraint=constraint, touched=touched, deltas=deltas,
                        m=m, prev_biases=prev,
                        post_digest=_bias_digest(edited, touched))
    return edited, record


def undo(model: GlutModel, record: EditRecord) -> GlutModel:
    """Restore the record's pre-edit biases, bit-exactly.

    Raises LineageError when the model's touched biases do not match the
    state this record produced (an intervening edit rewrote them).
    """
    if _bias_digest(model, record.touched) != record.post_digest:
        raise LineageError("edit record does not match the model's current "
                           "biases; undo records must be applied newest-first")
    new_biases = model.local_biases.copy()
    new_biases[record.touched] = record.prev_biases
    return model.with_biases(new_biases)


def edit_influence_map(model: GlutModel, record: EditRecord,
                       probes: np.ndarray) -> np.ndarray:
    """Displacement each probe color received from the edit:
    sum_k w_k(probe) * delta_k over the touched primitives."""
    probes = np.asarray(probes, dtype=np.float64)
    w = influence_weights(model, probes)
    return np.einsum("...k,kc->...c", w[..., record.touched], record.deltas)


# --- journal ------------------------------------------------------------------

def record_to_json(record: EditRecord) -> str:
    c = record.constraint
    return json.dumps({
        "c_in": list(c.c_in),
        "c_out": list(c.c_out),
        "k": c.k,
        "s": c.strength,
        "touched": record.touched.tolist(),
        "deltas": record.deltas.tolist(),
        "m": record.m,
    })


def constraint_from_json(line: str) -> EditConstraint:
    d = json.loads(line)
    return EditConstraint(c_in=tuple(d["c_in"]), c_out=tuple(d["c_out"]),
                          k=int(d["k"]), strength=float(d["s"]))


def write_journal(path: str, records: list[EditRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(record_to_json(r) + "\n")


def replay_journal(model: GlutModel, path: str) -> tuple[GlutModel,
                                                         list[EditRecord]]:
    """Re-apply a journal's constraints in order; deterministic, so the
    resulting model reproduces the journaled deltas exactly."""
    records: list[EditRecord] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            model, rec = apply_edit(model, constraint_from_json(line))
            records.append(rec)
    return model, records
