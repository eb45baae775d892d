"""Dynamic deformation graph over map points.

Nodes are map points, edges select which pairs of points are regularized
together. Edges carry the observed distance history (d0 at creation, running
min/max) and the pairwise weight derived from the running max. Edges whose
observed stretch exceeds a threshold are pruned; pruned edges are tombstoned
and never resurrected.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .deformation import pairwise_weight
from .errors import DuplicatePoint, TooFewPoints, UnknownPoint


@dataclass
class PairState:
    """Distance history of one regularized pair."""

    d0: float
    d_min: float
    d_max: float
    b: float

    def stretch(self):
        return (self.d_max - self.d_min) / self.d_min


@dataclass
class DdgEdge:
    i: int
    j: int
    state: PairState
    alive: bool = True


@dataclass
class DdgConfig:
    th_stretching: float = 0.3
    max_degree: int = 3
    sigma: float = 1.0
    k_nearest: int = 6

    def __post_init__(self):
        if self.th_stretching <= 0:
            raise ValueError("th_stretching must be > 0")
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")


def _key(i, j):
    return (i, j) if i < j else (j, i)


class DeformationGraph:
    """Mutable graph owned by the mapping/tracking thread (single writer)."""

    def __init__(self, sigma):
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        self.sigma = float(sigma)
        self.neighbors = {}  # id -> set of live-neighbor ids
        self.edges = {}  # canonical (i, j) -> DdgEdge, includes tombstones

    def __contains__(self, point_id):
        return point_id in self.neighbors

    @property
    def node_ids(self):
        return list(self.neighbors.keys())

    def add_node(self, point_id):
        if point_id in self.neighbors:
            raise DuplicatePoint(f"point {point_id} already in graph")
        self.neighbors[point_id] = set()

    def add_edge(self, i, j, distance):
        """Create a live edge at the given current distance.

        No-op (returns False) for self-edges, existing live edges and
        tombstoned pairs: a pruned connection is never resurrected.
        """
        if i == j:
            return False
        key = _key(i, j)
        if key in self.edges:
            return False
        for pid in key:
            if pid not in self.neighbors:
                raise UnknownPoint(f"point {pid} not in graph")
        d = float(distance)
        self.edges[key] = DdgEdge(key[0], key[1], PairState(
            d0=d, d_min=d, d_max=d, b=pairwise_weight(d, self.sigma)))
        self.neighbors[key[0]].add(key[1])
        self.neighbors[key[1]].add(key[0])
        return True

    def edge(self, i, j):
        return self.edges.get(_key(i, j))

    def live_edges(self):
        return [e for e in self.edges.values() if e.alive]

    def update_distances(self, positions):
        """Fold current positions into each live edge's distance history.

        ``positions`` maps point id to a 3-vector; edges missing either
        endpoint are skipped. Returns the number of edges updated.
        """
        n = 0
        for e in self.edges.values():
            if not e.alive or e.i not in positions or e.j not in positions:
                continue
            d = float(np.linalg.norm(np.asarray(positions[e.i], float)
                                     - np.asarray(positions[e.j], float)))
            if d > e.state.d_max:
                e.state.d_max = d
                e.state.b = pairwise_weight(d, self.sigma)
            if d < e.state.d_min:
                e.state.d_min = d
            n += 1
        return n

    def prune_stretched(self, th_stretching):
        """Tombstone every live edge with (d_max - d_min) / d_min > threshold."""
        if th_stretching <= 0:
            raise ValueError("th_stretching must be > 0")
        pruned = []
        for key, e in self.edges.items():
            if e.alive and e.state.stretch() > th_stretching:
                e.alive = False
                self.neighbors[e.i].discard(e.j)
                self.neighbors[e.j].discard(e.i)
                pruned.append(key)
        return pruned

    def regularization_partners(self, point_id, max_degree):
        """Live neighbors with the ``max_degree`` largest weights b.

        Ties are broken toward the lower neighbor id so the selection is
        deterministic.
        """
        if point_id not in self.neighbors:
            raise UnknownPoint(f"point {point_id} not in graph")
        nbrs = self.neighbors[point_id]
        ranked = sorted(nbrs, key=lambda j: (-self.edges[_key(point_id, j)].state.b, j))
        return ranked[:max_degree]

    def connect_new_point(self, point_id, position, existing_positions, config):
        """Insert a point and link it to its k nearest live neighbors."""
        self.add_node(point_id)
        position = np.asarray(position, dtype=float)
        others = [(pid, np.asarray(p, float)) for pid, p in existing_positions.items()
                  if pid != point_id and pid in self.neighbors]
        n_new = 0
        if others:
            dists = sorted(((float(np.linalg.norm(p - position)), pid) for pid, p in others),
                           key=lambda t: (t[0], t[1]))
            for d, pid in dists[:config.k_nearest]:
                if self.add_edge(point_id, pid, d):
                    n_new += 1
        return n_new

    def export_edge_list(self):
        """Plain-text edge dump: ``i j d0 dmin dmax b alive`` per line."""
        lines = []
        for key in sorted(self.edges):
            e = self.edges[key]
            s = e.state
            lines.append(f"{e.i} {e.j} {s.d0:.12g} {s.d_min:.12g} {s.d_max:.12g} "
                         f"{s.b:.12g} {int(e.alive)}")
        return "\n".join(lines) + ("\n" if lines else "")


def build_from_geometry(points, config, k_nearest=None):
    """Graph connecting each point to its k nearest Euclidean neighbors.

    ``points`` is a list of (id, 3-vector). Edge states start at the current
    distance (d0 = d_min = d_max).
    """
    if len(points) < 2:
        raise TooFewPoints(f"need >= 2 points, got {len(points)}")
    k = config.k_nearest if k_nearest is None else k_nearest
    if k < 1:
        raise ValueError("k_nearest must be >= 1")
    ids = [pid for pid, _ in points]
    xyz = np.asarray([p for _, p in points], dtype=float)
    graph = DeformationGraph(config.sigma)
    for pid in ids:
        graph.add_node(pid)
    tree = cKDTree(xyz)
    kq = min(k + 1, len(points))
    dists, idxs = tree.query(xyz, k=kq)
    for a in range(len(points)):
        for d, bidx in zip(np.atleast_1d(dists[a]), np.atleast_1d(idxs[a])):
            if bidx == a:
                continue
            graph.add_edge(ids[a], ids[int(bidx)], d)
    return graph


def build_from_clusters(track_ids, labels, sigma, positions=None):
    """Preliminary graph connecting all points sharing a cluster label.

    Label -1 marks noise; those points stay isolated. When ``positions`` is
    given, edge states are initialized from the current 3D distances;
    otherwise they start at d0 = 1 and must be re-seeded before use.
    """
    graph = DeformationGraph(sigma)
    for pid in track_ids:
        graph.add_node(pid)
    by_label = {}
    for pid, lab in zip(track_ids, labels):
        if lab == -1:
            continue
        by_label.setdefault(lab, []).append(pid)
    for members in by_label.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = members[a], members[b]
                if positions is not None:
                    d = float(np.linalg.norm(np.asarray(positions[i], float)
                                             - np.asarray(positions[j], float)))
                else:
                    d = 1.0
                graph.add_edge(i, j, d)
    return graph
