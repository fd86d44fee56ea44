"""Spectral clustering of the relevance samples of one input.

Pipeline: MinMax-normalize and average-pool every map, connect each sample to
its k nearest neighbours, take the unnormalized graph Laplacian L = D - M,
pick the cluster count at the largest eigengap and run k-means on the first k
eigenvectors. Each cluster is summarised by the mean of its original maps and
its share of the samples.
"""
from dataclasses import dataclass

import numpy as np

from .seeding import rng_for
from .uai import minmax_f64

ZERO_TOL = 1e-8


def preprocess(samples, pool=2):
    """MinMax-normalize, edge-pad to a multiple of ``pool``, average-pool, flatten."""
    s = np.asarray(samples.samples if hasattr(samples, "samples") else samples, dtype=np.float64)
    if pool < 1:
        raise ValueError("pool must be positive")
    s = np.stack([minmax_f64(m) for m in s])
    N, H, W = s.shape
    ph, pw = -H % pool, -W % pool
    if ph or pw:
        s = np.pad(s, ((0, 0), (0, ph), (0, pw)), mode="edge")
    H2, W2 = s.shape[1] // pool, s.shape[2] // pool
    pooled = s.reshape(N, H2, pool, W2, pool).mean(axis=(2, 4))
    return pooled.reshape(N, -1)


def pairwise_distances(v, block=256):
    """Euclidean distances from explicit differences (no cancellation, so ties stay ties)."""
    v = np.asarray(v, dtype=np.float64)
    N = len(v)
    D = np.empty((N, N))
    for s in range(0, N, block):
        diff = v[s:s + block, None, :] - v[None, :, :]
        D[s:s + block] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return D


def knn_affinity(vectors, k_nn=10):
    """Symmetric 0/1 kNN graph; self excluded, distance ties go to the lower index."""
    v = np.asarray(vectors, dtype=np.float64)
    N = len(v)
    if N < 2:
        raise ValueError("a kNN graph needs at least two samples")
    if not 1 <= k_nn < N:
        raise ValueError(f"k_nn must lie in [1, {N - 1}]")
    D = pairwise_distances(v)
    np.fill_diagonal(D, np.inf)
    nn = np.argsort(D, axis=1, kind="stable")[:, :k_nn]
    M = np.zeros((N, N))
    M[np.repeat(np.arange(N), k_nn), nn.ravel()] = 1.0
    return np.maximum(M, M.T)


def laplacian_spectrum(M):
    """``(L, eigenvalues ascending, eigenvectors as columns)`` of L = D - M."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] != M.shape[1] or not np.array_equal(M, M.T) or np.any(M < 0):
        raise ValueError("affinity matrix must be square, symmetric and non-negative")
    L = np.diag(M.sum(axis=1)) - M
    vals, vecs = np.linalg.eigh(L)
    return L, vals, vecs


def eigengap_select(eigenvalues, max_k=15):
    """Number of clusters read off an ascending Laplacian spectrum.

    A zero eigenvalue of multiplicity m > 1 means m disjoint components, and
    m is returned. A connected graph uses the largest gap
    lambda_{k+1} - lambda_k over k in [1, max_k], ties going to the smaller k.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if max_k < 2:
        raise ValueError("max_k must be at least 2")
    zeros = int(np.sum(np.abs(lam) < ZERO_TOL))
    if zeros > 1:
        return zeros
    if len(lam) < 2:
        return 1
    top = min(max_k, len(lam) - 1)
    return int(np.argmax(np.diff(lam[:top + 1]))) + 1


def kmeans(Y, k, seed=0, restarts=10, max_iter=300):
    """Lloyd's algorithm; each restart picks a random first centre, the rest greedily farthest.

    Returns the labels of the restart with the lowest inertia (earliest on ties).
    """
    Y = np.asarray(Y, dtype=np.float64)
    N = len(Y)
    if not 1 <= k <= N:
        raise ValueError(f"k must lie in [1, {N}]")
    best = None
    for r in range(restarts):
        first = int(rng_for(seed, "kmeans", r).integers(N))
        idx = [first]
        d = np.sum((Y - Y[first]) ** 2, axis=1)
        for _ in range(1, k):
            nxt = int(np.argmax(d))
            idx.append(nxt)
            d = np.minimum(d, np.sum((Y - Y[nxt]) ** 2, axis=1))
        C = Y[idx].copy()
        labels = None
        for _ in range(max_iter):
            dist = np.sum((Y[:, None, :] - C[None, :, :]) ** 2, axis=2)
            new = np.argmin(dist, axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for j in range(k):
                members = labels == j
                if members.any():
                    C[j] = Y[members].mean(axis=0)
        inertia = float(np.sum((Y - C[labels]) ** 2))
        if best is None or inertia < best[0]:
            best = (inertia, labels.copy())
    return best[1]


def canonical_labels(labels):
    """Relabel clusters by descending size, then by lowest member index."""
    labels = np.asarray(labels)
    ids = np.unique(labels)
    order = sorted(ids, key=lambda c: (-int(np.sum(labels == c)), int(np.flatnonzero(labels == c)[0])))
    remap = {c: i for i, c in enumerate(order)}
    return np.array([remap[c] for c in labels], dtype=np.int64)


def adjusted_rand_index(a, b):
    """Adjusted Rand index of two labelings."""
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    n = len(a)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)

    def pairs(x):
        return float(np.sum(x * (x - 1)) / 2)

    index = pairs(table)
    ra, rb = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = ra * rb / total if total else 0.0
    top = (ra + rb) / 2
    if top == expected:
        return 1.0
    return (index - expected) / (top - expected)


@dataclass(frozen=True, eq=False)
class SpectralResult:
    eigenvalues: np.ndarray
    k: int
    labels: np.ndarray
    means: np.ndarray
    sizes: tuple
    strengths: tuple
    embedding: np.ndarray
    affinity: np.ndarray

    def report(self):
        """Plain-text summary: one line per cluster, then the leading eigenvalues."""
        lines = [f"k\t{self.k}", "cluster\tsize\tstrength"]
        for c, (n, s) in enumerate(zip(self.sizes, self.strengths)):
            lines.append(f"{c}\t{n}\t{s:.6f}")
        lead = " ".join(f"{v:.6g}" for v in self.eigenvalues[: min(len(self.eigenvalues), self.k + 5)])
        lines.append(f"eigenvalues\t{lead}")
        return "\n".join(lines) + "\n"


def cluster(rset, k_nn=10, pool=2, max_k=15, seed=0):
    """Full SpRAy pipeline over the samples of one RelevanceSet (or an (N, H, W) array)."""
    samples = np.asarray(rset.samples if hasattr(rset, "samples") else rset, dtype=np.float64)
    N = len(samples)
    if N < max_k:
        raise ValueError(f"need at least max_k={max_k} samples, got {N}")
    vectors = preprocess(samples, pool)
    M = knn_affinity(vectors, k_nn)
    _, vals, vecs = laplacian_spectrum(M)
    if np.all(vectors == vectors[0]):
        k = 1
    else:
        k = eigengap_select(vals, max_k)
    labels = canonical_labels(kmeans(vecs[:, :k], k, seed) if k > 1 else np.zeros(N, dtype=np.int64))
    k = int(labels.max()) + 1
    sizes = tuple(int(np.sum(labels == c)) for c in range(k))
    means = np.stack([samples[labels == c].mean(axis=0) for c in range(k)]).astype(np.float32)
    emb = np.zeros((N, 2))
    cols = vecs[:, 1:3]
    emb[:, : cols.shape[1]] = cols
    return SpectralResult(vals, k, labels, means, sizes, tuple(n / N for n in sizes), emb, M)
