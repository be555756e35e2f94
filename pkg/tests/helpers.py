import numpy as np

from oepg.graph import Graph


def random_graph(n, p, dim, seed):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    hit = rng.random(len(iu)) < p
    return Graph(rng.normal(size=(n, dim)), np.stack([iu[hit], ju[hit]], axis=1))
