"""Independent dense reference for the homogeneous projection."""

import numpy as np

from eventgeo.graph import HeteroGraph


def dense_projection(g: HeteroGraph) -> np.ndarray:
    """min(sum_k W_mk W_mk^T, 1) over k in {word, user}, diagonal zeroed."""
    mi = {m: i for i, m in enumerate(g.message_nodes)}
    wi = {w: i for i, w in enumerate(g.word_nodes)}
    ui = {u: i for i, u in enumerate(g.user_nodes)}
    Ww = np.zeros((len(mi), len(wi)))
    Wu = np.zeros((len(mi), len(ui)))
    for m, w in g.contain_edges:
        Ww[mi[m], wi[w]] = 1
    for u, m in g.publish_edges | g.interact_edges:
        Wu[mi[m], ui[u]] = 1
    A = np.minimum(Ww @ Ww.T + Wu @ Wu.T, 1)
    np.fill_diagonal(A, 0)
    return A


def random_hetero(rng: np.random.Generator, max_messages=50, max_others=200) -> HeteroGraph:
    n_m = int(rng.integers(1, max_messages + 1))
    n_w = int(rng.integers(0, max_others // 2 + 1))
    n_u = int(rng.integers(1, max_others // 2 + 1))
    msgs = [f"m{i}" for i in range(n_m)]
    words = [f"w{i}" for i in range(n_w)]
    users = [f"u{i}" for i in range(n_u)]
    publish = {(users[rng.integers(n_u)], m) for m in msgs}
    density = rng.uniform(0, 0.08)
    contain = {(m, w) for m in msgs for w in words if rng.random() < density}
    interact = {(u, m) for m in msgs for u in users if rng.random() < density / 2}
    return HeteroGraph(
        tuple(msgs),
        tuple(sorted({w for _, w in contain})),
        tuple(sorted({u for u, _ in publish | interact})),
        frozenset(publish),
        frozenset(contain),
        frozenset(interact),
    )
