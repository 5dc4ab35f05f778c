"""Two-stage construction of the layer's mergeability complex.

Stage A picks candidate triangles: every 3-clique of the subgraph whose
pairwise barriers sit at or below the median barrier, uniform-randomly
subsampled to a cap with a fixed seed when too many qualify.  Stage B
sweeps a threshold tau over an 80-point grid on [0, 1.1 * max edge
barrier], builds the subcomplex of edges and candidate triangles at or
below tau, and keeps the Betti-maximizing threshold, breaking ties toward
the larger edge set and then the larger tau.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .complexes import Complex2, betti1, build_incidence, complete_edges
from .moe import BarrierTable

GRID_POINTS = 80
DEFAULT_CAP = 500
DEFAULT_SEED = 42


@dataclass(frozen=True, eq=False)
class FiltrationResult:
    """Betti curve over the threshold grid and the chosen complex."""

    tau_star: float
    betti_curve: tuple[tuple[float, int], ...]
    chosen_complex: Complex2

    def to_json(self) -> str:
        return json.dumps({
            "tau_star": self.tau_star,
            "betti_curve": [[tau, beta] for tau, beta in self.betti_curve],
            "chosen_complex": json.loads(self.chosen_complex.to_json()),
        })

    def curve_csv(self) -> str:
        lines = ["tau,beta1"]
        lines += [f"{tau!r},{beta}" for tau, beta in self.betti_curve]
        return "\n".join(lines) + "\n"


def stage_a_candidates(barriers: BarrierTable, cap: int = DEFAULT_CAP,
                       seed: int = DEFAULT_SEED) -> np.ndarray:
    """Candidate triangles: 3-cliques of the median-pairwise-barrier subgraph.

    The comparison against the median is inclusive, so all-equal barrier
    tables qualify every triple.  Above the cap, a uniform-random subsample
    with the fixed seed is kept; output is lexicographically sorted either
    way.
    """
    n = barriers.n
    if n < 3:
        return np.zeros((0, 3), dtype=np.int64)
    tau_cand = float(np.median(barriers.upper_entries()))
    adj = barriers.pairwise <= tau_cand
    np.fill_diagonal(adj, False)

    triples: list[tuple[int, int, int]] = []
    for i in range(n - 2):
        for j in np.nonzero(adj[i, i + 1:])[0] + i + 1:
            common = np.nonzero(adj[i, j + 1:] & adj[j, j + 1:])[0] + j + 1
            triples.extend((i, int(j), int(c)) for c in common)

    out = np.array(triples, dtype=np.int64).reshape(-1, 3)
    if len(out) > cap:
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(out), size=cap, replace=False)
        out = out[np.sort(keep)]
    return out


def stage_b_filtration(barriers: BarrierTable, candidates: np.ndarray) -> FiltrationResult:
    """Sweep the threshold grid and keep the Betti-maximizing complex.

    At each tau the subcomplex holds the edges with barrier at or below tau
    and the candidate triangles whose own barrier and all three edge
    barriers sit at or below tau.  Ties in the Betti count break toward the
    larger edge set, then the larger tau, so the result is deterministic.
    """
    n = barriers.n
    candidates = np.asarray(candidates, dtype=np.int64).reshape(-1, 3)
    tri_vals = np.array([_triplet_value(barriers, t) for t in candidates])
    edges = complete_edges(n)
    edge_vals = barriers.pairwise[edges[:, 0], edges[:, 1]]
    if len(candidates):
        worst_edge = np.maximum.reduce([
            barriers.pairwise[candidates[:, 0], candidates[:, 1]],
            barriers.pairwise[candidates[:, 0], candidates[:, 2]],
            barriers.pairwise[candidates[:, 1], candidates[:, 2]],
        ])
    else:
        worst_edge = np.zeros(0)

    top = 1.1 * float(edge_vals.max()) if len(edge_vals) else 0.0
    grid = np.linspace(0.0, top, GRID_POINTS)

    curve: list[tuple[float, int]] = []
    best: tuple[int, int, float] | None = None
    best_complex: Complex2 | None = None
    for tau in grid:
        k_tau = Complex2(
            n,
            edges[edge_vals <= tau],
            candidates[(tri_vals <= tau) & (worst_edge <= tau)] if len(candidates)
            else candidates,
        )
        beta = betti1(k_tau, build_incidence(k_tau))
        curve.append((float(tau), beta))
        score = (beta, k_tau.num_edges, float(tau))
        if best is None or score > best:
            best = score
            best_complex = k_tau
    assert best_complex is not None
    return FiltrationResult(best[2], tuple(curve), best_complex)


def _triplet_value(barriers: BarrierTable, triple: np.ndarray) -> float:
    key = tuple(int(v) for v in triple)
    try:
        return float(barriers.triplet[key])
    except KeyError:
        raise ValueError(f"triplet barrier missing for candidate {key}") from None
