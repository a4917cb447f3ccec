"""Nearest-neighbor retrieval over embeddings: exact L2 and a compressed
two-step quantization index.

The compressed representation is ``q1(x) + q2(x - q1(x))``: a KMeans coarse
quantizer partitions the (linearly projected) embedding space into inverted
lists, and a product quantizer encodes each vector's residual as m one-byte
subcodes. Search projects the query, probes the nearest coarse cells, and
scores codes by asymmetric distance computation (per-subspace lookup tables
of squared distances).

The projection is PCA; its output dimensions are distributed across the PQ
subspaces so that every subquantizer carries a comparable share of variance
(the non-iterative allocation step; iterative rotation optimization is out of
scope).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .blobio import BlobFormatError, read_blob_file, require_shapes, write_blob_file
from .linalg import principal_directions

INDEX_MAGIC = "CSPQ0001"
VECTORS_MAGIC = "CSVE0001"
LARGE_CORPUS_NLIST = 1600
LARGE_CORPUS_THRESHOLD = 1_000_000


class IndexError_(ValueError):
    """Index construction or search rejected its inputs."""


@dataclass(frozen=True)
class IndexConfig:
    dim_reduced: int = 128
    nlist: int = 64
    m: int = 16  # subquantizers, one code byte each
    ksub: int = 256  # centroids per subquantizer
    seed: int = 0
    kmeans_iters: int = 25
    train_size: Optional[int] = None  # optional cap on quantizer training vectors


@dataclass
class Projection:
    """Mean-centering plus orthonormal linear map to the reduced space."""

    mean: np.ndarray  # (dim_in,) float32
    basis: np.ndarray  # (dim_reduced, dim_in) float32, orthonormal rows

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 1:
            return (x - self.mean) @ self.basis.T
        return (x - self.mean[None, :]) @ self.basis.T

    @property
    def dim_in(self) -> int:
        return self.mean.shape[0]

    @property
    def dim_out(self) -> int:
        return self.basis.shape[0]


@dataclass
class PQCodebooks:
    """m codebooks of (ksub, dsub) centroids over contiguous subvectors."""

    centroids: np.ndarray  # (m, ksub, dsub) float32

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def ksub(self) -> int:
        return self.centroids.shape[1]

    @property
    def dsub(self) -> int:
        return self.centroids.shape[2]

    def encode(self, residuals: np.ndarray) -> np.ndarray:
        res = np.asarray(residuals, dtype=np.float32)
        single = res.ndim == 1
        if single:
            res = res[None, :]
        codes = np.empty((res.shape[0], self.m), dtype=np.uint8)
        for j in range(self.m):
            sub = res[:, j * self.dsub : (j + 1) * self.dsub]
            codes[:, j] = _assign(sub, self.centroids[j])
        return codes[0] if single else codes

    def decode(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.uint8)
        single = codes.ndim == 1
        if single:
            codes = codes[None, :]
        out = np.empty((codes.shape[0], self.m * self.dsub), dtype=np.float32)
        for j in range(self.m):
            out[:, j * self.dsub : (j + 1) * self.dsub] = self.centroids[j][codes[:, j]]
        return out[0] if single else out

    def distance_table(self, residual: np.ndarray) -> np.ndarray:
        """(m, ksub) squared distances from the query residual's subvectors."""
        r = np.asarray(residual, dtype=np.float32).reshape(self.m, 1, self.dsub)
        diff = self.centroids - r
        return np.einsum("mkd,mkd->mk", diff, diff)


@dataclass
class InvertedList:
    image_ids: list[str]
    codes: np.ndarray  # (len(image_ids), m) uint8


@dataclass
class PQIndex:
    config: IndexConfig
    projection: Projection
    coarse_centroids: np.ndarray  # (nlist, dim_reduced) float32
    codebooks: PQCodebooks
    lists: list[InvertedList]

    def __post_init__(self):
        # flat row-major indexes into an (m, ksub) distance table, one per
        # list; precomputed so the per-query scan is a single gather
        ksub = self.codebooks.ksub
        m = self.codebooks.m
        offsets = (np.arange(m, dtype=np.int64) * ksub)[None, :]
        self._flat_code_idx = [
            lst.codes.astype(np.int64) + offsets if len(lst.image_ids) else None
            for lst in self.lists
        ]
        self._id_arrays = [
            np.asarray(lst.image_ids, dtype=object) if lst.image_ids else None
            for lst in self.lists
        ]

    @property
    def nlist(self) -> int:
        return self.coarse_centroids.shape[0]

    @property
    def size(self) -> int:
        return sum(len(lst.image_ids) for lst in self.lists)

    def image_ids(self) -> list[str]:
        return [i for lst in self.lists for i in lst.image_ids]

    def reconstruct_all(self) -> tuple[list[str], np.ndarray]:
        """Decoded vector q1 + q2-decode for every indexed id, in list order."""
        ids, parts = [], []
        for cell, lst in enumerate(self.lists):
            if not lst.image_ids:
                continue
            ids.extend(lst.image_ids)
            parts.append(self.coarse_centroids[cell][None, :] + self.codebooks.decode(lst.codes))
        if not parts:
            return [], np.zeros((0, self.config.dim_reduced), dtype=np.float32)
        return ids, np.concatenate(parts, axis=0)


@dataclass
class RetrievalResult:
    """Ranked (image_id, distance) pairs, ascending distance, ties by id."""

    entries: list[tuple[str, float]] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [e[0] for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def _assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid per row; ties go to the lowest index."""
    d = _sq_dists(x, centroids)
    return d.argmin(axis=1)


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    x2 = np.einsum("nd,nd->n", x, x)[:, None]
    c2 = np.einsum("kd,kd->k", centroids, centroids)[None, :]
    return x2 - 2.0 * (x @ centroids.T) + c2


def fit_pca(vectors: np.ndarray, dim_reduced: int) -> Projection:
    """Mean-centered top principal directions, deterministic in the data order
    and independent of the BLAS thread count.

    Component signs are fixed so the largest-magnitude coefficient of each
    direction is positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise IndexError_(f"expected an (n, dim) matrix, got shape {x.shape}")
    n, dim = x.shape
    if dim_reduced > dim:
        raise IndexError_(f"reduced dimension {dim_reduced} exceeds input dimension {dim}")
    if n < dim_reduced:
        raise IndexError_(f"need at least {dim_reduced} vectors to fit, got {n}")
    mean, basis = principal_directions(x, dim_reduced)
    anchor = np.abs(basis).argmax(axis=1)
    signs = np.sign(basis[np.arange(dim_reduced), anchor])
    signs[signs == 0] = 1.0
    basis = basis * signs[:, None]
    return Projection(mean.astype(np.float32), basis.astype(np.float32))


def kmeans(
    vectors: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 25,
    history: Optional[list] = None,
) -> np.ndarray:
    """Lloyd's algorithm with kmeans++ seeding; deterministic in (data, k, seed).

    Empty clusters are re-seeded with the points currently farthest from
    their assigned centroid. When ``history`` is passed, the inertia after
    each update step is appended to it.
    """
    x = np.asarray(vectors, dtype=np.float32)
    n = x.shape[0]
    if k < 1:
        raise IndexError_(f"k={k} must be >= 1")
    if k > n:
        raise IndexError_(f"k={k} exceeds {n} training vectors")
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, x.shape[1]), dtype=np.float32)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    if k > 1:
        d2 = np.einsum("nd,nd->n", x - centroids[0], x - centroids[0]).astype(np.float64)
        for j in range(1, k):
            total = d2.sum()
            if total <= 0.0:
                idx = int(rng.integers(n))
            else:
                idx = int(rng.choice(n, p=d2 / total))
            centroids[j] = x[idx]
            nd = np.einsum("nd,nd->n", x - centroids[j], x - centroids[j])
            d2 = np.minimum(d2, nd)

    labels = None
    for _ in range(max_iters):
        dists = _sq_dists(x, centroids)
        new_labels = dists.argmin(axis=1)
        counts = np.bincount(new_labels, minlength=k)
        sums = np.zeros((k, x.shape[1]), dtype=np.float64)
        np.add.at(sums, new_labels, x)
        nonzero = counts > 0
        updated = centroids.copy()
        updated[nonzero] = (sums[nonzero] / counts[nonzero, None]).astype(np.float32)
        empty = np.flatnonzero(~nonzero)
        if empty.size:
            assigned = dists[np.arange(n), new_labels]
            donors = np.argsort(-assigned, kind="stable")
            for cell, donor in zip(empty, donors):
                updated[cell] = x[donor]
        if history is not None:
            d_new = _sq_dists(x, updated)
            history.append(float(d_new.min(axis=1).sum()))
        if labels is not None and np.array_equal(new_labels, labels) and not empty.size:
            centroids = updated
            break
        centroids = updated
        labels = new_labels
    return centroids


def _balanced_permutation(variances: np.ndarray, m: int) -> np.ndarray:
    """Distribute dimensions over m equal groups balancing log-variance load.

    Greedy: walk dimensions by decreasing variance, placing each into the
    group with the smallest accumulated load that still has a free slot.
    """
    d = len(variances)
    dsub = d // m
    loads = np.zeros(m)
    slots = np.full(m, dsub)
    groups: list[list[int]] = [[] for _ in range(m)]
    for dim in np.argsort(-variances, kind="stable"):
        open_groups = [j for j in range(m) if slots[j] > 0]
        j = min(open_groups, key=lambda g: (loads[g], g))
        groups[j].append(int(dim))
        loads[j] += float(np.log(max(variances[dim], 1e-12)))
        slots[j] -= 1
    return np.concatenate([np.asarray(g, dtype=np.int64) for g in groups])


def _shrunk_config(config: IndexConfig, n: int, dim_in: int) -> IndexConfig:
    cfg = config
    if cfg.nlist > n:
        warnings.warn(
            f"nlist {cfg.nlist} exceeds training set size {n}; shrinking to {n}", RuntimeWarning
        )
        cfg = replace(cfg, nlist=n)
    dim_reduced = min(cfg.dim_reduced, dim_in, n)
    if dim_reduced != cfg.dim_reduced:
        warnings.warn(
            f"reduced dimension {cfg.dim_reduced} not trainable on {n} vectors of "
            f"dimension {dim_in}; shrinking to {dim_reduced}",
            RuntimeWarning,
        )
        cfg = replace(cfg, dim_reduced=dim_reduced)
    if cfg.dim_reduced % cfg.m != 0:
        new_m = max(1, int(np.gcd(cfg.dim_reduced, cfg.m)))
        warnings.warn(
            f"reduced dimension {cfg.dim_reduced} not divisible by m={cfg.m}; "
            f"using m={new_m}",
            RuntimeWarning,
        )
        cfg = replace(cfg, m=new_m)
    if cfg.ksub > n:
        warnings.warn(
            f"ksub {cfg.ksub} exceeds training set size {n}; shrinking to {n}", RuntimeWarning
        )
        cfg = replace(cfg, ksub=n)
    return cfg


def auto_nlist(corpus_size: int, desk_default: int = 64) -> int:
    """Desk-scale default, stepping up to the large-corpus cluster count."""
    if corpus_size >= LARGE_CORPUS_THRESHOLD:
        return LARGE_CORPUS_NLIST
    return min(desk_default, corpus_size)


def build_index(
    embeddings: Sequence[tuple[str, np.ndarray]],
    config: IndexConfig = IndexConfig(),
) -> PQIndex:
    """Fit projection, coarse quantizer, and residual PQ; encode the corpus.

    Deterministic for a fixed (corpus, config): identical inputs produce a
    byte-identical serialized index.
    """
    if not len(embeddings):
        raise IndexError_("empty corpus")
    ids = [e[0] for e in embeddings]
    if len(set(ids)) != len(ids):
        seen, dupes = set(), set()
        for i in ids:
            (dupes if i in seen else seen).add(i)
        raise IndexError_(f"duplicate image ids: {sorted(dupes)}")
    x = np.stack([np.asarray(e[1], dtype=np.float32) for e in embeddings])
    n, dim_in = x.shape
    n_train = n if config.train_size is None else min(n, config.train_size)
    cfg = _shrunk_config(config, n_train, dim_in)

    rng = np.random.default_rng(cfg.seed)
    if n_train < n:
        train_idx = np.sort(rng.choice(n, size=n_train, replace=False))
        train = x[train_idx]
    else:
        train = x

    projection = fit_pca(train, cfg.dim_reduced)
    z_train = projection.project(train)
    perm = _balanced_permutation(z_train.var(axis=0), cfg.m)
    projection = Projection(projection.mean, projection.basis[perm])
    z_train = z_train[:, perm]

    coarse = kmeans(z_train, cfg.nlist, cfg.seed, cfg.kmeans_iters)
    train_residuals = z_train - coarse[_assign(z_train, coarse)]
    dsub = cfg.dim_reduced // cfg.m
    books = np.empty((cfg.m, cfg.ksub, dsub), dtype=np.float32)
    for j in range(cfg.m):
        sub = train_residuals[:, j * dsub : (j + 1) * dsub]
        books[j] = kmeans(sub, cfg.ksub, cfg.seed + 1 + j, cfg.kmeans_iters)
    codebooks = PQCodebooks(books)

    z = projection.project(x)
    assign = _assign(z, coarse)
    codes = codebooks.encode(z - coarse[assign])
    lists = []
    for cell in range(cfg.nlist):
        members = np.flatnonzero(assign == cell)
        lists.append(
            InvertedList([ids[i] for i in members], codes[members].astype(np.uint8))
        )
    return PQIndex(cfg, projection, coarse, codebooks, lists)


def search(
    index: PQIndex, query: np.ndarray, k: int, nprobe: Optional[int] = None
) -> RetrievalResult:
    """Probe the nearest coarse cells and rank codes by asymmetric distance.

    Returned distances are square roots of the ADC estimates, so they are
    comparable with exact L2 distances in the projected space.
    """
    if k < 1:
        raise IndexError_(f"k={k} must be >= 1")
    nlist = index.nlist
    nprobe = nlist if nprobe is None else nprobe
    if not 1 <= nprobe <= nlist:
        raise IndexError_(f"nprobe={nprobe} outside [1, {nlist}]")
    q = np.asarray(query, dtype=np.float32).ravel()
    if q.shape[0] != index.projection.dim_in:
        raise IndexError_(
            f"query dimension {q.shape[0]} != indexed dimension {index.projection.dim_in}"
        )
    z = index.projection.project(q)
    coarse_d = _sq_dists(z[None, :], index.coarse_centroids)[0]
    order = np.lexsort((np.arange(nlist), coarse_d))
    probed = order[:nprobe]

    books = index.codebooks.centroids  # (m, ksub, dsub)
    m, ksub, dsub = books.shape
    residuals = (z[None, :] - index.coarse_centroids[probed]).reshape(nprobe, m, 1, dsub)
    diff = books[None, :, :, :] - residuals
    tables = np.einsum("pmkd,pmkd->pmk", diff, diff)  # (nprobe, m, ksub)

    chunks_d, chunks_id = [], []
    for pos, cell in enumerate(probed):
        flat_idx = index._flat_code_idx[cell]
        if flat_idx is None:
            continue
        d = np.take(tables[pos].ravel(), flat_idx).sum(axis=1)
        chunks_d.append(d)
        chunks_id.append(index._id_arrays[cell])
    if not chunks_d:
        return RetrievalResult([])
    dists = np.concatenate(chunks_d)
    idarr = np.concatenate(chunks_id)
    return _rank(idarr, dists, k)


def _rank(idarr: np.ndarray, sq_dists: np.ndarray, k: int) -> RetrievalResult:
    total = len(idarr)
    if total > k:
        kth = np.partition(sq_dists, k - 1)[k - 1]
        cand = np.flatnonzero(sq_dists <= kth)
    else:
        cand = np.arange(total)
    order = np.lexsort((idarr[cand], sq_dists[cand]))
    top = cand[order][:k]
    return RetrievalResult(
        [(str(idarr[i]), float(np.sqrt(max(sq_dists[i], 0.0)))) for i in top]
    )


def exact_search(
    embeddings: Sequence[tuple[str, np.ndarray]] | tuple[list[str], np.ndarray],
    query: np.ndarray,
    k: int,
) -> RetrievalResult:
    """Exhaustive L2 ranking; the oracle against which PQ recall is measured."""
    if k < 1:
        raise IndexError_(f"k={k} must be >= 1")
    if isinstance(embeddings, tuple) and len(embeddings) == 2 and isinstance(embeddings[0], list):
        ids, x = embeddings
        x = np.asarray(x, dtype=np.float64)
    else:
        ids = [e[0] for e in embeddings]
        x = np.stack([np.asarray(e[1], dtype=np.float64) for e in embeddings])
    if not len(ids):
        raise IndexError_("empty corpus")
    q = np.asarray(query, dtype=np.float64).ravel()
    diff = x - q[None, :]
    sq = np.einsum("nd,nd->n", diff, diff)
    return _rank(np.asarray(ids, dtype=object), sq, k)


def recall_at_k(
    approx: Sequence[RetrievalResult], exact: Sequence[RetrievalResult], k: int
) -> float:
    """Fraction of queries whose true nearest neighbor appears in the top k."""
    if len(approx) != len(exact) or not approx:
        raise IndexError_("approx/exact result lists must be equal-length and non-empty")
    hits = 0
    for a, e in zip(approx, exact):
        truth = e.entries[0][0]
        hits += truth in {i for i, _ in a.entries[:k]}
    return hits / len(approx)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def serialize(index: PQIndex, path) -> None:
    cfg = index.config
    header = {
        "kind": "pq-index",
        "config": {
            "dim_reduced": cfg.dim_reduced,
            "nlist": cfg.nlist,
            "m": cfg.m,
            "ksub": cfg.ksub,
            "seed": cfg.seed,
            "kmeans_iters": cfg.kmeans_iters,
            "train_size": cfg.train_size,
        },
        "dim_in": index.projection.dim_in,
        "count": index.size,
        "list_ids": [lst.image_ids for lst in index.lists],
    }
    arrays = {
        "mean": index.projection.mean,
        "basis": index.projection.basis,
        "coarse": index.coarse_centroids,
        "codebooks": index.codebooks.centroids,
        "codes": np.concatenate([lst.codes for lst in index.lists], axis=0)
        if index.size
        else np.zeros((0, cfg.m), dtype=np.uint8),
    }
    write_blob_file(path, INDEX_MAGIC, header, arrays)


def deserialize(path) -> PQIndex:
    header, arrays = read_blob_file(path, INDEX_MAGIC)
    if header.get("kind") != "pq-index":
        raise BlobFormatError(f"not an index file: kind={header.get('kind')!r}")
    c = header["config"]
    cfg = IndexConfig(
        dim_reduced=int(c["dim_reduced"]),
        nlist=int(c["nlist"]),
        m=int(c["m"]),
        ksub=int(c["ksub"]),
        seed=int(c["seed"]),
        kmeans_iters=int(c["kmeans_iters"]),
        train_size=c.get("train_size"),
    )
    dim_in = int(header["dim_in"])
    count = int(header["count"])
    dsub = cfg.dim_reduced // cfg.m
    require_shapes(
        arrays,
        [
            ("mean", (dim_in,)),
            ("basis", (cfg.dim_reduced, dim_in)),
            ("coarse", (cfg.nlist, cfg.dim_reduced)),
            ("codebooks", (cfg.m, cfg.ksub, dsub)),
            ("codes", (count, cfg.m)),
        ],
    )
    list_ids = header["list_ids"]
    if len(list_ids) != cfg.nlist:
        raise BlobFormatError(f"{len(list_ids)} inverted lists, expected {cfg.nlist}")
    if sum(len(ids) for ids in list_ids) != count:
        raise BlobFormatError("inverted list sizes do not sum to the stored count")
    lists = []
    offset = 0
    codes = arrays["codes"]
    for ids in list_ids:
        size = len(ids)
        lists.append(InvertedList([str(i) for i in ids], codes[offset : offset + size].copy()))
        offset += size
    return PQIndex(
        cfg,
        Projection(arrays["mean"], arrays["basis"]),
        arrays["coarse"],
        PQCodebooks(arrays["codebooks"]),
        lists,
    )


def save_vectors(ids: list[str], vectors: np.ndarray, path) -> None:
    """Sidecar file of raw embeddings, used for exact retrieval mode."""
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] != len(ids):
        raise IndexError_(f"vector matrix shape {vectors.shape} != ({len(ids)}, dim)")
    header = {"kind": "vectors", "ids": list(ids), "count": len(ids), "dim": vectors.shape[1]}
    write_blob_file(path, VECTORS_MAGIC, header, {"vectors": vectors})


def load_vectors(path) -> tuple[list[str], np.ndarray]:
    header, arrays = read_blob_file(path, VECTORS_MAGIC)
    if header.get("kind") != "vectors":
        raise BlobFormatError(f"not a vectors file: kind={header.get('kind')!r}")
    ids = [str(i) for i in header["ids"]]
    require_shapes(arrays, [("vectors", (len(ids), int(header["dim"])))])
    return ids, arrays["vectors"]
