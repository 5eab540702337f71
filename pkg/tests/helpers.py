"""Synthetic corpora with known structure, shared across the test suite."""

import numpy as np

from cvdlab.backend import DEFAULT_MARKER, hash_bucket
from cvdlab.corpus import CodeSample


def distinct_vocab(prefix, count, dim, forbidden_buckets=()):
    """Tokens with pairwise-distinct hash buckets, avoiding `forbidden_buckets`."""
    out = []
    used = set(forbidden_buckets)
    i = 0
    while len(out) < count:
        token = f"{prefix}{i}"
        bucket = hash_bucket(token, dim)
        if bucket not in used:
            out.append(token)
            used.add(bucket)
        i += 1
    return out


def make_marker_corpus(n=200, dim=256, seed=0, marker=DEFAULT_MARKER):
    """Balanced corpus where exactly the vulnerable half contains `marker`.

    Filler tokens stay out of the marker's hash bucket, so marker presence
    is linearly recoverable from the bag-of-tokens vector.
    """
    rng = np.random.default_rng(seed)
    vocab = distinct_vocab("tok", 24, dim, {hash_bucket(marker, dim)})
    cwes = ("CWE-787", "CWE-89", "CWE-125")
    samples = []
    for i in range(n):
        label = i % 2
        picks = rng.choice(len(vocab), size=int(rng.integers(3, 7)), replace=False)
        toks = [vocab[j] for j in picks]
        if label == 1:
            toks.insert(int(rng.integers(0, len(toks) + 1)), marker)
        code = f"{toks[0]}({', '.join(toks[1:])});"
        samples.append(
            CodeSample(
                id=f"m{i:04d}",
                code=code,
                label=label,
                cwe=cwes[i % len(cwes)] if label == 1 else None,
                origin="synthetic",
            )
        )
    return samples


def make_cluster_corpus(n_clusters=6, per_cluster=20, dim=256, seed=0, flag_token="flag"):
    """Clustered corpus whose label rule flips per cluster.

    Every sample repeats its cluster token three times, so nearest neighbors
    stay within the cluster; `flag_token` marks half of each cluster, and its
    meaning alternates with cluster parity. No single linear weighting fits
    all clusters at once (the shared flag weight would have to be positive
    for even clusters and negative for odd ones), but the local rule is
    learnable from same-cluster neighbors.
    """
    forbidden = {hash_bucket(flag_token, dim)}
    cluster_tokens = distinct_vocab("clu", n_clusters, dim, forbidden)
    filler = distinct_vocab(
        "fil", 8, dim, forbidden | {hash_bucket(t, dim) for t in cluster_tokens}
    )
    rng = np.random.default_rng(seed)
    samples = []
    for c, cluster_token in enumerate(cluster_tokens):
        for j in range(per_cluster):
            flagged = j % 2 == 0
            label = int(flagged) if c % 2 == 0 else int(not flagged)
            toks = [cluster_token] * 3
            toks += [filler[idx] for idx in rng.choice(len(filler), size=2, replace=False)]
            if flagged:
                toks.append(flag_token)
            samples.append(CodeSample(id=f"c{c:02d}s{j:03d}", code=" ".join(toks), label=label))
    return samples


def split_cluster_corpus(samples, holdout_per_cluster=4):
    """Hold out the last few members of every cluster as the test set."""
    by_cluster = {}
    for sample in samples:
        by_cluster.setdefault(sample.id.split("s")[0], []).append(sample)
    train, test = [], []
    for members in by_cluster.values():
        train.extend(members[:-holdout_per_cluster])
        test.extend(members[-holdout_per_cluster:])
    return train, test


def separated_centers(count, dim, scale=12.0, seed=9):
    """Well-separated cluster centers: unit directions pushed out to `scale`."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(count, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    return centers * scale


def make_blobs(n_per_blob, centers, noise=1.0, seed=0):
    """Gaussian blobs around the given centers; returns (vectors, blob labels)."""
    rng = np.random.default_rng(seed)
    vectors = []
    labels = []
    for index, center in enumerate(centers):
        vectors.append(center + noise * rng.normal(size=(n_per_blob, len(center))))
        labels.extend([index] * n_per_blob)
    return np.vstack(vectors), np.array(labels)


def nearest_centroid_recovery(points, labels):
    """Fraction of points whose nearest class centroid is their own class."""
    centroids = {value: points[labels == value].mean(axis=0) for value in set(labels.tolist())}
    hits = 0
    for point, label in zip(points, labels):
        best = min(centroids, key=lambda value: float(np.sum((point - centroids[value]) ** 2)))
        hits += best == label
    return hits / len(labels)
