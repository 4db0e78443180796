import numpy as np
import pytest

from hcmgnn.graph import DISEASE, GENE, MICROBE, HetGraph


def toy_graph(seed=0, feat_dim=3):
    """2 genes, 2 microbes, 2 diseases; 3 triangles worth of structure."""
    rng = np.random.default_rng(seed)
    node_ids = {GENE: ["g0", "g1"], MICROBE: ["m0", "m1"], DISEASE: ["d0", "d1"]}
    edges = {
        (GENE, MICROBE): [(0, 0), (1, 0), (1, 1)],
        (GENE, DISEASE): [(0, 0), (1, 1)],
        (MICROBE, DISEASE): [(0, 0), (0, 1), (1, 1)],
    }
    feats = {t: rng.normal(size=(2, feat_dim)) for t in (GENE, MICROBE, DISEASE)}
    return HetGraph(node_ids, edges, feats)


def random_graph(rng, n_g, n_m, n_d, p=0.3, feat_dim=4):
    node_ids = {GENE: [f"g{i}" for i in range(n_g)],
                MICROBE: [f"m{i}" for i in range(n_m)],
                DISEASE: [f"d{i}" for i in range(n_d)]}
    edges = {}
    for kind, (na, nb) in [((GENE, MICROBE), (n_g, n_m)),
                           ((GENE, DISEASE), (n_g, n_d)),
                           ((MICROBE, DISEASE), (n_m, n_d))]:
        mask = rng.uniform(size=(na, nb)) < p
        edges[kind] = [(int(i), int(j)) for i, j in np.argwhere(mask)]
    feats = {GENE: rng.normal(size=(n_g, feat_dim)),
             MICROBE: rng.normal(size=(n_m, feat_dim)),
             DISEASE: rng.normal(size=(n_d, feat_dim))}
    return HetGraph(node_ids, edges, feats)


@pytest.fixture
def tiny_graph():
    return toy_graph()
