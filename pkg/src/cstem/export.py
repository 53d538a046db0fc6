"""Plot-ready export of word and topic embeddings with an optional 2-D PCA projection."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .elbo import CstemParams
from .evaluate import top_words

CSV_HEADER = ("label", "kind", "x", "y", "global_weight", "topics")


def pca_2d(vectors) -> tuple[np.ndarray, np.ndarray]:
    """Project rows onto the top two principal axes.

    Returns the (M, 2) projection and the two explained variances. Each axis is
    signed so its first non-negligible loading is positive. Axes with
    (numerically) zero variance are zeroed.
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise ValueError("need at least a 2x2 matrix")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    evals, evecs = evals[order], evecs[:, order]
    tol = 1e-12 * max(float(np.abs(cov).max()), 1e-300)
    proj = np.zeros((X.shape[0], 2))
    explained = np.zeros(2)
    for j in range(2):
        if evals[j] <= tol:
            if j == 1 and evals[0] > tol:
                warnings.warn("input has rank < 2; second component set to zero", RuntimeWarning)
            continue
        v = evecs[:, j]
        lead = np.flatnonzero(np.abs(v) > 1e-12)
        if lead.size and v[lead[0]] < 0:
            v = -v
        proj[:, j] = Xc @ v
        explained[j] = evals[j]
    return proj, explained


@dataclass
class ExportRow:
    label: str
    kind: str
    vector: np.ndarray
    global_weight: float
    topics: list[int] = field(default_factory=list)
    projected: tuple[float, float] | None = None


def build_export(params: CstemParams, vocab: Vocabulary, top_n: int, with_pca: bool = True) -> list[ExportRow]:
    """Topic rows followed by the deduplicated union of each topic's top-n words."""
    model = params.model
    K = model.num_topics
    top_n = min(top_n, vocab.size)
    rows = [ExportRow(f"topic_{k}", "topic", model.topic_mu[k].copy(), 0.0, [k]) for k in range(K)]
    members: dict[int, list[int]] = {}
    for k in range(K):
        if top_n == 0:
            break
        for r in top_words(model, params.mu_c, k, top_n):
            members.setdefault(r.index, []).append(k)
    for v in sorted(members):
        rows.append(ExportRow(vocab.tokens[v], "word", model.word_emb[v].copy(), float(params.mu_c[v]), members[v]))
    if with_pca and len(rows) >= 2:
        proj, _ = pca_2d(np.stack([r.vector for r in rows]))
        for r, (x, y) in zip(rows, proj):
            r.projected = (float(x), float(y))
    return rows


def write_export(rows: list[ExportRow], out_dir, stem: str = "embeddings") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            x, y = r.projected if r.projected is not None else ("", "")
            writer.writerow([r.label, r.kind, x, y, r.global_weight, ";".join(map(str, r.topics))])
    payload = [
        {"label": r.label, "kind": r.kind, "vector": r.vector.tolist(), "global_weight": r.global_weight,
         "topics": r.topics, **({"projected": list(r.projected)} if r.projected is not None else {})}
        for r in rows
    ]
    json_path.write_text(json.dumps(payload), encoding="utf-8")
    return csv_path, json_path


def export_embeddings(checkpoint, top_n_per_topic: int, with_pca: bool, out_dir) -> tuple[Path, Path]:
    rows = build_export(checkpoint.params, checkpoint.vocab, top_n_per_topic, with_pca)
    return write_export(rows, out_dir)
