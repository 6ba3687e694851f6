"""Prototype-based anomaly scoring.

Normal training embeddings are clustered per group (machine type and ID,
or machine type with separate source/target domains); a test clip's score
is the minimum cosine distance to any prototype of its group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_container, save_container
from .config import config_text, parse_config_text
from .dsp import load_wav
from .errors import DataError
from .network import clip_features, load_model
from . import autodiff as ad


@dataclass(frozen=True)
class PrototypeSet:
    """Unit-norm K-Means centroids for one (group, domain)."""

    group_key: str
    domain: str                 # "all", "source", or "target"
    centroids: np.ndarray

    @property
    def count(self) -> int:
        return self.centroids.shape[0]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def _kmeans_pp_init(x, k, rng):
    first = int(rng.integers(len(x)))
    centroids = [x[first]]
    d2 = ((x - x[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids.append(x[int(rng.integers(len(x)))])
            continue
        pick = int(np.searchsorted(np.cumsum(d2 / total), rng.uniform()))
        pick = min(pick, len(x) - 1)
        centroids.append(x[pick])
        d2 = np.minimum(d2, ((x - x[pick]) ** 2).sum(axis=1))
    return np.array(centroids)


def _lloyd(x, k, rng, max_iter, tol):
    centroids = _kmeans_pp_init(x, k, rng)
    inertia = np.inf
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_inertia = float(d2[np.arange(len(x)), labels].sum())
        assert new_inertia <= inertia + 1e-9, "Lloyd inertia increased"
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
            else:
                # reseed an empty cluster at the worst-fit point
                centroids[c] = x[d2[np.arange(len(x)), labels].argmax()]
        if inertia - new_inertia <= tol * max(new_inertia, 1e-30):
            inertia = new_inertia
            break
        inertia = new_inertia
    return _single_point_refine(x, centroids, k)


def _single_point_refine(x, centroids, k, max_sweeps=50):
    """Relocate single points while that strictly lowers the objective.

    Escapes the Lloyd-local optima that plain assignment/update rounds
    cannot leave; the move gain uses the exact size-corrected formula.
    """
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros_like(centroids)
    np.add.at(sums, labels, x)

    def means():
        safe = np.maximum(counts, 1.0)[:, None]
        return sums / safe  # empty clusters sit at the origin; cost 0 below

    for _ in range(max_sweeps):
        improved = False
        for i in range(len(x)):
            a = labels[i]
            if counts[a] <= 1:
                continue
            mus = means()
            gain = counts[a] / (counts[a] - 1) * ((x[i] - mus[a]) ** 2).sum()
            costs = counts / (counts + 1) * ((x[i] - mus) ** 2).sum(axis=1)
            costs[a] = np.inf
            b = int(costs.argmin())
            if costs[b] - gain < -1e-12:
                sums[a] -= x[i]
                sums[b] += x[i]
                counts[a] -= 1
                counts[b] += 1
                labels[i] = b
                improved = True
        if not improved:
            break
    centroids = means()
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    if (counts == 0).any():
        worst = int(d2.min(axis=1).argmax())
        for c in np.flatnonzero(counts == 0):
            centroids[c] = x[worst]
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return centroids, float(d2.min(axis=1).sum())


def kmeans(embeddings: np.ndarray, prototypes: int, seed,
           max_iter: int = 100, tol: float = 1e-6, n_init: int = 10,
           return_inertia: bool = False):
    """Lloyd K-Means with k-means++ seeding and best-of-n_init restarts.

    Inputs are unit-normalized first; requested counts above the sample
    count degrade to one centroid per sample; output centroids are
    re-normalized to unit length.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise DataError("kmeans requires a non-empty (M, D) array")
    if prototypes < 1:
        raise DataError("prototype count must be >= 1")
    x = _normalize_rows(x)
    k = min(prototypes, len(x))
    rng = np.random.default_rng(seed)
    best = None
    best_inertia = np.inf
    for _ in range(n_init):
        centroids, inertia = _lloyd(x, k, rng, max_iter, tol)
        if inertia < best_inertia:
            best, best_inertia = centroids, inertia
    unit = _normalize_rows(best)
    if return_inertia:
        return unit, best_inertia
    return unit


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - a.b for unit vectors; range [0, 2]."""
    return float(1.0 - np.dot(a, b))


def anomaly_score(test_embedding: np.ndarray, prototype_sets) -> float:
    """Minimum cosine distance over every centroid of every supplied set."""
    sets = [prototype_sets] if isinstance(prototype_sets, PrototypeSet) else list(prototype_sets)
    if not sets:
        raise DataError("no prototype sets supplied")
    best = np.inf
    for ps in sets:
        distances = 1.0 - ps.centroids @ test_embedding
        best = min(best, float(distances.min()))
    return float(best)


class PrototypeStore:
    """Prototype sets keyed by group, with per-domain splits in per-type mode."""

    def __init__(self, mode: str):
        if mode not in ("per-id", "per-type"):
            raise DataError(f"unknown prototype mode {mode!r}")
        self.mode = mode
        self.sets: dict = {}

    def add(self, ps: PrototypeSet) -> None:
        self.sets[(ps.group_key, ps.domain)] = ps

    def group_key(self, row) -> str:
        if self.mode == "per-id":
            return f"{row.machine_type}/{row.id_or_attr}"
        return row.machine_type

    def sets_for(self, row):
        key = self.group_key(row)
        found = [ps for (k, _), ps in self.sets.items() if k == key]
        return found

    def save(self, path, run_cfg=None, echo: str = "") -> None:
        arrays = {f"proto/{key}\x1f{domain}": ps.centroids
                  for (key, domain), ps in self.sets.items()}
        arrays["meta/mode"] = np.array([1.0 if self.mode == "per-type" else 0.0])
        save_container(path, arrays, config_text(run_cfg) if run_cfg is not None else echo)

    @classmethod
    def load(cls, path):
        arrays, echo = load_container(path)
        mode = "per-type" if arrays.get("meta/mode", np.zeros(1))[0] == 1.0 else "per-id"
        store = cls(mode)
        for name, centroids in arrays.items():
            if not name.startswith("proto/"):
                continue
            key, _, domain = name[len("proto/"):].partition("\x1f")
            store.add(PrototypeSet(key, domain, centroids))
        run_cfg = parse_config_text(echo) if echo.strip() else None
        return store, run_cfg


def embed_rows(model, rows, batch_size: int = 32) -> np.ndarray:
    """Embeddings for manifest rows, in row order."""
    out = []
    for start in range(0, len(rows), batch_size):
        chunk = rows[start:start + batch_size]
        specs, spectra = [], []
        for row in chunk:
            spec, spectrum = clip_features(load_wav(row.path), model.cfg)
            specs.append(spec)
            spectra.append(spectrum)
        with ad.no_grad():
            emb = model(np.stack(specs), np.stack(spectra))
        out.append(emb.data)
    if not out:
        return np.zeros((0, model.embed_dim))
    return np.concatenate(out, axis=0)


def group_train_rows(rows, mode: str) -> dict:
    """(group key, domain) -> row indices. per-id keys are type/ID; per-type
    keys are the machine type with source/target kept apart when tagged."""
    store = PrototypeStore(mode)
    groups: dict = {}
    for i, row in enumerate(rows):
        key = store.group_key(row)
        domain = row.domain if (mode == "per-type" and row.domain) else "all"
        groups.setdefault((key, domain), []).append(i)
    return groups


def build_prototype_store(train_rows, checkpoint_path, mode: str,
                          prototypes: int, seed) -> PrototypeStore:
    """Cluster normal training embeddings per group.

    per-id groups by (machine type, ID); per-type groups by machine type
    and keeps separate source/target prototype sets when the manifest
    carries domain tags.
    """
    model, _ = load_model(checkpoint_path)
    rows = [r for r in train_rows if r.split == "train"]
    if not rows:
        raise DataError("no train rows to build prototypes from")
    store = PrototypeStore(mode)
    embeddings = embed_rows(model, rows)
    groups = group_train_rows(rows, mode)
    for gi, (key, domain) in enumerate(sorted(groups)):
        idx = groups[(key, domain)]
        centroids = kmeans(embeddings[idx], prototypes, seed=[seed, gi])
        store.add(PrototypeSet(key, domain, centroids))
    return store


def score_rows(test_rows, store: PrototypeStore, model):
    """(path, score) pairs in input order, plus paths with no matching group."""
    scores = []
    unknown = []
    embeddings = embed_rows(model, list(test_rows))
    for row, emb in zip(test_rows, embeddings):
        sets = store.sets_for(row)
        if not sets:
            unknown.append(row.path)
            continue
        scores.append((row.path, anomaly_score(emb, sets)))
    return scores, unknown


def score_dataset(test_rows, store: PrototypeStore, checkpoint_path):
    """Score every test-split row against the store."""
    model, _ = load_model(checkpoint_path)
    rows = [r for r in test_rows if r.split == "test"]
    return score_rows(rows, store, model)
