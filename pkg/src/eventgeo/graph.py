"""Heterogeneous message network, homogeneous projection and node features."""

from __future__ import annotations

import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from eventgeo.gazetteer import Gazetteer
from eventgeo.ingest import Message, ole_date, tokenize


@dataclass(frozen=True)
class FeatureConfig:
    semantic_dim: int = 128
    word_min_freq: int = 2
    standardize: bool = True

    def __post_init__(self):
        if self.semantic_dim < 2:
            raise ValueError("semantic_dim must be >= 2")
        if self.word_min_freq < 0:
            raise ValueError("word_min_freq must be >= 0")


@dataclass(frozen=True)
class HeteroGraph:
    """Message/word/user network with publish, contain and interact edges.

    Node sets are stored as sorted tuples so iteration order is canonical.
    """

    message_nodes: tuple[str, ...]
    word_nodes: tuple[str, ...]
    user_nodes: tuple[str, ...]
    publish_edges: frozenset[tuple[str, str]] = frozenset()  # (user, message)
    contain_edges: frozenset[tuple[str, str]] = frozenset()  # (message, word)
    interact_edges: frozenset[tuple[str, str]] = frozenset()  # (user, message)

    def __post_init__(self):
        msgs, words, users = set(self.message_nodes), set(self.word_nodes), set(self.user_nodes)
        for name, nodes in (("message", self.message_nodes), ("word", self.word_nodes), ("user", self.user_nodes)):
            if len(set(nodes)) != len(nodes):
                raise ValueError(f"duplicate {name} node ids")
        for u, m in self.publish_edges | self.interact_edges:
            if u not in users or m not in msgs:
                raise ValueError(f"dangling user edge ({u}, {m})")
        for m, w in self.contain_edges:
            if m not in msgs or w not in words:
                raise ValueError(f"dangling contain edge ({m}, {w})")

    def message_neighbors(self) -> dict[str, set[tuple[str, str]]]:
        """Typed non-message neighbours of every message node."""
        nbrs: dict[str, set[tuple[str, str]]] = {m: set() for m in self.message_nodes}
        for m, w in self.contain_edges:
            nbrs[m].add(("w", w))
        for u, m in self.publish_edges | self.interact_edges:
            nbrs[m].add(("u", u))
        return nbrs

    def edge_list(self) -> list[tuple[str, str, str]]:
        rows = [("publish", u, m) for u, m in self.publish_edges]
        rows += [("contain", m, w) for m, w in self.contain_edges]
        rows += [("interact", u, m) for u, m in self.interact_edges]
        return sorted(rows)


@dataclass
class MessageGraph:
    message_ids: list[str]
    adjacency: sparse.csr_matrix
    features: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.message_ids)
        if self.adjacency.shape != (n, n):
            raise ValueError(f"adjacency shape {self.adjacency.shape} does not match {n} messages")
        if self.features.shape[0] != n:
            raise ValueError(f"feature rows {self.features.shape[0]} do not match {n} messages")
        self.index = {m: i for i, m in enumerate(self.message_ids)}

    @property
    def n(self) -> int:
        return len(self.message_ids)


def word_vocabulary(token_lists: Sequence[Sequence[str]], config: FeatureConfig, gazetteer: Gazetteer | None) -> set[str]:
    """Tokens frequent enough, or geographic, to become word nodes."""
    freq = Counter(t for toks in token_lists for t in toks)
    keep = set()
    for tok, count in freq.items():
        if count >= config.word_min_freq or (gazetteer is not None and gazetteer.resolve(tok) is not None):
            keep.add(tok)
    return keep


def build_hetero_graph(
    messages: Sequence[Message],
    config: FeatureConfig | None = None,
    gazetteer: Gazetteer | None = None,
    token_lists: Sequence[Sequence[str]] | None = None,
) -> HeteroGraph:
    if not messages:
        raise ValueError("cannot build a graph from zero messages")
    config = config or FeatureConfig()
    if token_lists is None:
        token_lists = [tokenize(m, gazetteer) for m in messages]
    vocab = word_vocabulary(token_lists, config, gazetteer)

    users, publish, contain, interact = set(), set(), set(), set()
    for msg, toks in zip(messages, token_lists):
        users.add(msg.user_id)
        publish.add((msg.user_id, msg.id))
        for mentioned in msg.mentioned_user_ids:
            users.add(mentioned)
            interact.add((mentioned, msg.id))
        contain.update((msg.id, t) for t in toks if t in vocab)
    words = {w for _, w in contain}
    return HeteroGraph(
        message_nodes=tuple(m.id for m in messages),
        word_nodes=tuple(sorted(words)),
        user_nodes=tuple(sorted(users)),
        publish_edges=frozenset(publish),
        contain_edges=frozenset(contain),
        interact_edges=frozenset(interact),
    )


def project_homogeneous(g: HeteroGraph) -> sparse.csr_matrix:
    """Connect messages that share at least one word or user neighbour.

    Off-diagonal only; self-loops are added by the encoder.
    """
    index = {m: i for i, m in enumerate(g.message_nodes)}
    members: dict[tuple[str, str], set[int]] = defaultdict(set)
    for m, w in g.contain_edges:
        members[("w", w)].add(index[m])
    for u, m in g.publish_edges | g.interact_edges:
        members[("u", u)].add(index[m])

    pairs = set()
    for group in members.values():
        if len(group) > 1:
            pairs.update(combinations(sorted(group), 2))
    n = len(g.message_nodes)
    if not pairs:
        return sparse.csr_matrix((n, n), dtype=np.float64)
    rows, cols = zip(*sorted(pairs))
    r = np.array(rows + cols)
    c = np.array(cols + rows)
    return sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n), dtype=np.float64)


def _token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def embed_text(tokens: Sequence[str], dim: int) -> np.ndarray:
    """Signed feature-hashing bag of words, L2-normalised.

    If signed collisions cancel to an all-zero vector for a non-empty bag,
    unsigned counts are used instead so the result keeps unit norm.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    vec = np.zeros(dim)
    counts = np.zeros(dim)
    for tok in tokens:
        h = _token_hash(tok)
        bucket = h % dim
        vec[bucket] += 1.0 if (h >> 63) & 1 else -1.0
        counts[bucket] += 1.0
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        if not tokens:
            return vec
        vec, norm = counts, np.linalg.norm(counts)
    return vec / norm


def initial_features(
    messages: Sequence[Message],
    config: FeatureConfig | None = None,
    token_lists: Sequence[Sequence[str]] | None = None,
    gazetteer: Gazetteer | None = None,
) -> np.ndarray:
    """Semantic embedding concatenated with the 2-d OLE-date time feature."""
    config = config or FeatureConfig()
    if token_lists is None:
        token_lists = [tokenize(m, gazetteer) for m in messages]
    X = np.zeros((len(messages), config.semantic_dim + 2))
    for i, (msg, toks) in enumerate(zip(messages, token_lists)):
        X[i, : config.semantic_dim] = embed_text(toks, config.semantic_dim)
        X[i, config.semantic_dim :] = ole_date(msg.timestamp).as_vector()
    if config.standardize and len(messages):
        X = standardize_columns(X)
    return X


def standardize_columns(X: np.ndarray) -> np.ndarray:
    mean = X.mean(axis=0)
    centered = X - mean
    sd = np.sqrt((centered**2).mean(axis=0))
    # scale-relative threshold: a column of equal values can still carry rounding noise
    const = sd <= 1e-12 * np.maximum(np.abs(mean), 1.0)
    out = np.zeros_like(X)
    out[:, ~const] = centered[:, ~const] / sd[~const]
    return out


def build_message_graph(
    messages: Sequence[Message],
    config: FeatureConfig | None = None,
    gazetteer: Gazetteer | None = None,
) -> tuple[HeteroGraph, MessageGraph]:
    config = config or FeatureConfig()
    token_lists = [tokenize(m, gazetteer) for m in messages]
    hetero = build_hetero_graph(messages, config, gazetteer, token_lists)
    A = project_homogeneous(hetero)
    X = initial_features(messages, config, token_lists)
    return hetero, MessageGraph([m.id for m in messages], A, X)


def dump_edges(g: HeteroGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for kind, src, dst in g.edge_list():
            fh.write(f"{kind}\t{src}\t{dst}\n")


def dump_adjacency(A: sparse.spmatrix, path: str | Path) -> None:
    upper = sparse.triu(A, k=1).tocoo()
    pairs = sorted(zip(upper.row.tolist(), upper.col.tolist()))
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in pairs:
            fh.write(f"{i}\t{j}\n")
