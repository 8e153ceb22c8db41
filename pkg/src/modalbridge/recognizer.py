"""Unseen-class recognition by cosine similarity in the shared latent space.

Source-technology exemplars of each unseen class are encoded once into
prototypes; a target instance is assigned the class of its most similar
prototype. No weights change at recognition time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .alignment import AutoencoderModel


class RecognitionError(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    class_id: str
    score: float
    runner_up: str | None
    margin: float


@dataclass
class ClassPrototypeSet:
    """class_id -> list of latent vectors (multiset semantics, no averaging)."""

    prototypes: dict[str, list[np.ndarray]]

    def class_ids(self) -> list[str]:
        return sorted(self.prototypes)

    def count(self) -> int:
        return sum(len(v) for v in self.prototypes.values())


def encode(encoder: AutoencoderModel, features) -> np.ndarray:
    """Frozen-encoder embedding of one feature vector."""
    return encoder.encode(np.ascontiguousarray(features, dtype=float))


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise RecognitionError("cosine of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def build_prototypes(source_encoder: AutoencoderModel, exemplars) -> ClassPrototypeSet:
    """Encode labeled (class_id, feature_vector) exemplars of unseen classes."""
    protos: dict[str, list[np.ndarray]] = {}
    for class_id, vec in exemplars:
        protos.setdefault(class_id, []).append(encode(source_encoder, vec))
    for class_id, vecs in protos.items():
        if not vecs:
            raise RecognitionError(f"class {class_id} has no exemplars")
    if not protos:
        raise RecognitionError("no exemplars given")
    return ClassPrototypeSet(protos)


def classify(latent, protos: ClassPrototypeSet) -> Prediction:
    """Highest cosine similarity over every (class, prototype) pair.

    Ties break toward the lexicographically smallest class id; the margin
    is the gap to the best other class.
    """
    latent = np.asarray(latent, dtype=float)
    if not protos.prototypes:
        raise RecognitionError("empty prototype set")
    best: dict[str, float] = {}
    for class_id in protos.class_ids():
        best[class_id] = max(cosine(latent, p) for p in protos.prototypes[class_id])
    # deterministic tie-break: smallest class id among the top scorers
    top = max(best.values())
    winner = min(c for c, s in best.items() if s == top)
    others = [s for c, s in best.items() if c != winner]
    runner_score = max(others) if others else None
    runner = None
    if others:
        runner = min(c for c, s in best.items() if c != winner and s == runner_score)
    margin = top - runner_score if others else top - (-1.0)
    return Prediction(winner, top, runner, margin)


def write_predictions_csv(path, rows) -> None:
    """Rows of (instance_id, true_class, prediction) to the export schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "true_class", "pred_class", "score", "margin"])
        for instance_id, true_class, pred in rows:
            writer.writerow(
                [instance_id, true_class, pred.class_id, repr(pred.score), repr(pred.margin)]
            )
