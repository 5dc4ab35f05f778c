"""Deterministic synthetic sparse-MoE layer and all KL merge machinery.

An expert is distribution-valued: one logit row over a finite output
alphabet, so its next-token distribution is a fixed softmax and a
frequency-weighted merge of experts is an exact convex combination of
distributions rather than a weight-space approximation.  Contexts come from
a finite alphabet, which makes every corpus statistic exactly reproducible
from (seed, size, alphabet).

The layer output at a context is the gate-weighted mixture of the
top-fanout experts' distributions, gates renormalized over the routed set.
Merge barriers are mean calibration-corpus KL divergences between the
original layer and the layer with a pair or triple replaced by its
frequency-weighted merge; the merged expert's router logit is the
log-sum-exp of the absorbed logits, which preserves total pre-softmax
routing mass.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

if TYPE_CHECKING:  # pragma: no cover
    from .selector import SurvivorPlan

KL_FLOOR = 1e-12        # probability floor on the merged (second) argument
FREQ_GUARD = 1e-12      # below this total routing mass, fall back to the plain average


@dataclass(frozen=True, eq=False)
class MoeLayer:
    """Synthetic sparse-MoE layer: expert bank, router, top-fanout routing."""

    n: int
    vocab: int
    ctx: int
    fanout: int
    expert_logits: np.ndarray   # (n, vocab)
    router_logits: np.ndarray   # (n, ctx)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "expert_logits",
                           np.asarray(self.expert_logits, dtype=np.float64))
        object.__setattr__(self, "router_logits",
                           np.asarray(self.router_logits, dtype=np.float64))
        if self.expert_logits.shape != (self.n, self.vocab):
            raise ValueError("expert_logits shape mismatch")
        if self.router_logits.shape != (self.n, self.ctx):
            raise ValueError("router_logits shape mismatch")
        if not (1 <= self.fanout <= self.n):
            raise ValueError(f"fanout must be in [1, {self.n}], got {self.fanout}")
        if not (np.isfinite(self.expert_logits).all() and np.isfinite(self.router_logits).all()):
            raise ValueError("logits must be finite")

    @cached_property
    def expert_dists(self) -> np.ndarray:
        """Per-expert output distributions, (n, vocab) rows summing to 1."""
        return softmax(self.expert_logits, axis=1)

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n, "vocab": self.vocab, "ctx": self.ctx,
            "fanout": self.fanout, "seed": self.seed,
            "expert_logits": self.expert_logits.tolist(),
            "router_logits": self.router_logits.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "MoeLayer":
        doc = json.loads(text)
        return cls(doc["n"], doc["vocab"], doc["ctx"], doc["fanout"],
                   np.array(doc["expert_logits"]), np.array(doc["router_logits"]),
                   doc["seed"])


@dataclass(frozen=True, eq=False)
class CalibCorpus:
    """Token stream over the context alphabet, reproducible from (seed, size)."""

    contexts: np.ndarray
    seed: int
    size: int

    def __post_init__(self):
        object.__setattr__(self, "contexts", np.asarray(self.contexts, dtype=np.int64))
        if self.contexts.shape != (self.size,):
            raise ValueError("corpus size mismatch")

    @classmethod
    def sample(cls, ctx: int, size: int = 2048, seed: int = 42) -> "CalibCorpus":
        rng = np.random.default_rng(seed)
        return cls(rng.integers(0, ctx, size=size), seed=seed, size=size)

    @cached_property
    def symbol_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique context symbols and their empirical weights (sum to 1)."""
        symbols, counts = np.unique(self.contexts, return_counts=True)
        return symbols, counts / self.size

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "size": self.size,
                           "contexts": self.contexts.tolist()})


def synth_layer(n: int = 16, vocab: int = 32, ctx: int = 256, fanout: int = 2,
                clusters: int = 4, seed: int = 0, *, noise: float = 0.35,
                spread: float = 2.0, router_scale: float = 3.0,
                router_bias: float = 2.5,
                cluster_sizes: Sequence[int] | None = None) -> MoeLayer:
    """Planted-structure generator: cluster centroids plus per-expert noise.

    Experts are assigned to ``clusters`` contiguous groups; members of one
    group share a centroid logit row, so intra-cluster merge barriers are
    low while cross-cluster barriers are high.  ``clusters == n`` plants no
    sharing; ``clusters == 1`` with ``noise == 0`` makes all experts
    identical.  ``cluster_sizes`` overrides the near-equal split.

    Router logits carry a per-expert popularity bias on top of per-context
    preferences.  The bias spreads routing frequencies over orders of
    magnitude, which is what makes merge barriers heavy-tailed: folding a
    rarely-routed expert into a popular one is nearly free while the
    reverse is not, so the barrier table's energy sits in idiosyncratic
    per-pair variation rather than in one flat level.  Deterministic for a
    fixed seed.
    """
    if not (1 <= clusters <= n):
        raise ValueError(f"clusters must be in [1, {n}], got {clusters}")
    if vocab < 2 or ctx < 1:
        raise ValueError("need vocab >= 2 and ctx >= 1")
    assignment = cluster_assignment(n, clusters, cluster_sizes)
    rng = np.random.default_rng(seed)
    centroids = rng.normal(0.0, spread, size=(clusters, vocab))
    expert_logits = centroids[assignment] + rng.normal(0.0, noise, size=(n, vocab))
    router_logits = (router_bias * rng.normal(0.0, 1.0, size=(n, 1))
                     + rng.normal(0.0, router_scale, size=(n, ctx)))
    return MoeLayer(n, vocab, ctx, fanout, expert_logits, router_logits, seed)


def cluster_assignment(n: int, clusters: int,
                       cluster_sizes: Sequence[int] | None = None) -> np.ndarray:
    """Contiguous cluster labels used by :func:`synth_layer`."""
    if cluster_sizes is not None:
        if len(cluster_sizes) != clusters or sum(cluster_sizes) != n or min(cluster_sizes) < 1:
            raise ValueError(f"cluster_sizes must be {clusters} positive ints summing to {n}")
        return np.repeat(np.arange(clusters), cluster_sizes)
    return np.repeat(np.arange(clusters), -(-n // clusters))[:n]


def plant_discordant_triple(layer: MoeLayer, triple: Sequence[int], *,
                            scale: float = 1.0, boost: float = 2.0,
                            seed: int = 7) -> MoeLayer:
    """Rewrite three experts so they are pairwise mergeable but jointly costly.

    The three logit rows are placed at symmetric 120-degree offsets of
    magnitude ``scale`` around their common mean in a random 2-plane.  Any
    pair's frequency-weighted merge stays close to both members, while the
    joint merge lands at the centroid, far from all three, so the triplet
    barrier exceeds the worst pairwise barrier by a wide margin.  ``boost``
    raises the triple's router logits so the planted obstruction carries
    real routing mass.
    """
    a, b, c = sorted(int(i) for i in triple)
    if len({a, b, c}) != 3 or not (0 <= a and c < layer.n):
        raise ValueError(f"triple {triple!r} is not three distinct experts of the layer")
    rng = np.random.default_rng(seed)
    plane = rng.normal(size=(2, layer.vocab))
    q, _ = np.linalg.qr(plane.T)
    u, v = q[:, 0], q[:, 1]
    base = layer.expert_logits[[a, b, c]].mean(axis=0)
    logits = layer.expert_logits.copy()
    router = layer.router_logits.copy()
    for m, idx in enumerate((a, b, c)):
        angle = 2.0 * np.pi * m / 3.0
        logits[idx] = base + scale * (np.cos(angle) * u + np.sin(angle) * v)
        router[idx] = router[idx] - router[idx].mean() + boost
    return MoeLayer(layer.n, layer.vocab, layer.ctx, layer.fanout,
                    logits, router, layer.seed)


# ---------------------------------------------------------------------------
# Routing and layer evaluation


def _route(router_cols: np.ndarray, fanout: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-fanout expert indices and renormalized gates per context column.

    Ties in router logits break toward the lower expert index (stable sort),
    so routing is deterministic even for degenerate layers.
    """
    idx = np.argsort(-router_cols, axis=0, kind="stable")[:fanout]
    sel = np.take_along_axis(router_cols, idx, axis=0)
    gates = softmax(sel, axis=0)
    return idx, gates


def _mixture_outputs(dists: np.ndarray, router_cols: np.ndarray, fanout: int) -> np.ndarray:
    """Gate-weighted mixture over routed experts for every context column.

    ``dists`` is (m, vocab) for context-independent experts or
    (m, u, vocab) when expert outputs vary per symbol (pruned survivors).
    """
    idx, gates = _route(router_cols, fanout)
    if dists.ndim == 2:
        chosen = dists[idx]                                     # (f, u, vocab)
    else:
        chosen = np.take_along_axis(dists, idx[:, :, None], axis=0)
    return np.einsum("fu,fuv->uv", gates, chosen)


def layer_symbol_outputs(layer: MoeLayer, symbols: np.ndarray) -> np.ndarray:
    """Layer output distribution at each context symbol, (u, vocab)."""
    cols = layer.router_logits[:, np.asarray(symbols, dtype=np.int64)]
    return _mixture_outputs(layer.expert_dists, cols, layer.fanout)


def layer_output(layer: MoeLayer, context: int) -> np.ndarray:
    """Output next-token distribution at a single context symbol."""
    if not (0 <= context < layer.ctx):
        raise ValueError(f"context {context} outside alphabet [0, {layer.ctx})")
    return layer_symbol_outputs(layer, np.array([context]))[0]


def routing_frequencies(layer: MoeLayer, corpus: CalibCorpus) -> np.ndarray:
    """Fraction of corpus tokens routing each expert; sums to fanout."""
    symbols, weights = corpus.symbol_weights
    idx, _ = _route(layer.router_logits[:, symbols], layer.fanout)
    freq = np.zeros(layer.n)
    np.add.at(freq, idx, weights[None, :])
    return freq


# ---------------------------------------------------------------------------
# Frequency-weighted merges


def merged_distribution(dists: np.ndarray, group: Sequence[int],
                        freqs: np.ndarray) -> np.ndarray:
    """Frequency-weighted convex combination of the group's distributions.

    Falls back to the unweighted average when the group's total routing
    mass is below the 1e-12 guard, so never-routed groups stay NaN-free.
    """
    group = np.asarray(group, dtype=np.int64)
    w = np.asarray(freqs, dtype=np.float64)[group]
    total = float(w.sum())
    if total < FREQ_GUARD:
        w = np.full(len(group), 1.0 / len(group))
    else:
        w = w / total
    return w @ dists[group]


@dataclass(frozen=True, eq=False)
class MergedLayer:
    """The layer with one expert group replaced by its merged expert.

    The merged expert occupies the slot of the group's lowest index; its
    router logit row is the log-sum-exp of the group's rows.  Calling the
    object evaluates the merged layer's output distribution.
    """

    dists: np.ndarray            # (n - |group| + 1, vocab)
    router_logits: np.ndarray    # (n - |group| + 1, ctx)
    fanout: int

    def outputs(self, symbols: np.ndarray) -> np.ndarray:
        cols = self.router_logits[:, np.asarray(symbols, dtype=np.int64)]
        return _mixture_outputs(self.dists, cols, self.fanout)

    def __call__(self, context: int) -> np.ndarray:
        return self.outputs(np.array([context]))[0]


def _merge_group(layer: MoeLayer, group: Sequence[int], freqs: np.ndarray) -> MergedLayer:
    group = sorted(int(g) for g in group)
    rep = group[0]
    keep = [i for i in range(layer.n) if i not in group[1:]]
    dists = layer.expert_dists[keep].copy()
    router = layer.router_logits[keep].copy()
    slot = keep.index(rep)
    dists[slot] = merged_distribution(layer.expert_dists, group, freqs)
    router[slot] = logsumexp(layer.router_logits[group], axis=0)
    return MergedLayer(dists, router, min(layer.fanout, len(keep)))


def merge_experts(layer: MoeLayer, group: Iterable[int], freqs: np.ndarray) -> MergedLayer:
    """Replace a pair or triple of experts by their frequency-weighted merge."""
    group = sorted(int(g) for g in group)
    if len(group) not in (2, 3) or len(set(group)) != len(group):
        raise ValueError(f"merge group must be 2 or 3 distinct experts, got {group}")
    if group[0] < 0 or group[-1] >= layer.n:
        raise ValueError(f"merge group {group} outside expert range [0, {layer.n})")
    return _merge_group(layer, group, freqs)


# ---------------------------------------------------------------------------
# Barriers


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q) in nats with the 1e-12 floor on q."""
    q = np.maximum(q, KL_FLOOR)
    terms = np.where(p > 0.0, p * (np.log(np.maximum(p, KL_FLOOR)) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def _mean_merge_kl(layer: MoeLayer, corpus: CalibCorpus, group: Sequence[int],
                   freqs: np.ndarray, originals: np.ndarray | None = None) -> float:
    symbols, weights = corpus.symbol_weights
    if originals is None:
        originals = layer_symbol_outputs(layer, symbols)
    merged = _merge_group(layer, group, freqs).outputs(symbols)
    return float(weights @ kl_rows(originals, merged))


def pairwise_barrier(layer: MoeLayer, corpus: CalibCorpus, i: int, j: int) -> float:
    """Mean corpus KL cost of replacing {i, j} by their weighted merge."""
    if i == j:
        raise ValueError("pairwise barrier needs two distinct experts")
    freqs = routing_frequencies(layer, corpus)
    return _mean_merge_kl(layer, corpus, (i, j), freqs)


def triplet_barrier(layer: MoeLayer, corpus: CalibCorpus, i: int, j: int, k: int) -> float:
    """Mean corpus KL cost of replacing {i, j, k} by their joint merge."""
    if len({i, j, k}) != 3:
        raise ValueError("triplet barrier needs three distinct experts")
    freqs = routing_frequencies(layer, corpus)
    return _mean_merge_kl(layer, corpus, (i, j, k), freqs)


@dataclass(frozen=True, eq=False)
class BarrierTable:
    """All pairwise barriers, candidate triplet barriers, routing frequencies."""

    pairwise: np.ndarray                              # (n, n) symmetric, zero diagonal
    triplet: Mapping[tuple[int, int, int], float]
    routing_freq: np.ndarray                          # (n,)

    def __post_init__(self):
        object.__setattr__(self, "pairwise", np.asarray(self.pairwise, dtype=np.float64))
        object.__setattr__(self, "routing_freq", np.asarray(self.routing_freq, dtype=np.float64))
        if not np.isfinite(self.pairwise).all():
            raise ValueError("pairwise barriers must be finite")
        if self.triplet and not all(np.isfinite(v) for v in self.triplet.values()):
            raise ValueError("triplet barriers must be finite")

    @property
    def n(self) -> int:
        return self.pairwise.shape[0]

    def upper_entries(self) -> np.ndarray:
        i, j = np.triu_indices(self.n, k=1)
        return self.pairwise[i, j]

    def to_json(self) -> str:
        return json.dumps({
            "pairwise": self.pairwise.tolist(),
            "triplet": {",".join(map(str, key)): val for key, val in self.triplet.items()},
            "routing_freq": self.routing_freq.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "BarrierTable":
        doc = json.loads(text)
        triplet = {tuple(int(v) for v in key.split(",")): val
                   for key, val in doc["triplet"].items()}
        return cls(np.array(doc["pairwise"]), triplet, np.array(doc["routing_freq"]))

    def pairwise_csv(self) -> str:
        lines = [",".join(repr(float(v)) for v in row) for row in self.pairwise]
        return "\n".join(lines) + "\n"


def barrier_sweep(layer: MoeLayer, corpus: CalibCorpus,
                  triangle_candidates: Iterable[Sequence[int]] = (),
                  *, workers: int = 1) -> BarrierTable:
    """Fill every pairwise barrier plus the candidate triplet barriers.

    Each (pair or triple) cell is a pure function of the layer and corpus,
    so the thread-parallel path is bit-identical to the serial one: results
    land in preassigned slots and no cross-cell reduction exists.
    """
    freqs = routing_frequencies(layer, corpus)
    symbols, _ = corpus.symbol_weights
    originals = layer_symbol_outputs(layer, symbols)
    pairs = [(i, j) for i in range(layer.n) for j in range(i + 1, layer.n)]
    triples = [tuple(sorted(int(v) for v in t)) for t in triangle_candidates]

    def cell(group: tuple[int, ...]) -> float:
        return _mean_merge_kl(layer, corpus, group, freqs, originals)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pair_vals = list(pool.map(cell, pairs))
            tri_vals = list(pool.map(cell, triples))
    else:
        pair_vals = [cell(g) for g in pairs]
        tri_vals = [cell(g) for g in triples]

    pairwise = np.zeros((layer.n, layer.n))
    for (i, j), val in zip(pairs, pair_vals):
        pairwise[i, j] = pairwise[j, i] = val
    return BarrierTable(pairwise, dict(zip(triples, tri_vals)), freqs)


# ---------------------------------------------------------------------------
# Saliency


@dataclass(frozen=True, eq=False)
class SaliencyVector:
    """Per-expert gate-weighted output-norm scores, min-max normalized."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


def saliency(layer: MoeLayer, corpus: CalibCorpus) -> SaliencyVector:
    """Mean routed gate mass times output norm per expert, scaled to [0, 1].

    A never-routed expert scores raw 0.  When all raw scores coincide the
    min-max normalization degenerates and the vector is all-zero.
    """
    symbols, weights = corpus.symbol_weights
    idx, gates = _route(layer.router_logits[:, symbols], layer.fanout)
    raw = np.zeros(layer.n)
    np.add.at(raw, idx, gates * weights[None, :])
    raw *= np.linalg.norm(layer.expert_dists, axis=1)
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0.0:
        return SaliencyVector(np.zeros(layer.n))
    return SaliencyVector((raw - lo) / (hi - lo))


# ---------------------------------------------------------------------------
# Compressed-layer evaluation


def compressed_symbol_outputs(layer: MoeLayer, plan: "SurvivorPlan",
                              symbols: np.ndarray,
                              pruned: Mapping[int, np.ndarray] | None = None) -> np.ndarray:
    """Output of the compressed layer at each symbol.

    Redirect plans keep survivors bit-exact and fold each dropped expert's
    router logit into its redirect target by log-sum-exp; merge-group plans
    replace each group by its frequency-weighted merged expert.  ``pruned``
    optionally maps a survivor to its pruned context-to-logit matrix
    (vocab x ctx) from the weight-pruning stage.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    survivors = list(plan.survivors)
    _check_plan_indices(layer, plan)

    if plan.merge_groups is not None:
        weights = plan.merge_weights
        if weights is None:
            raise ValueError("merge-group plan is missing its routing weights")
        dists = np.stack([merged_distribution(layer.expert_dists, g, np.asarray(weights))
                          for g in plan.merge_groups])
        router = np.stack([logsumexp(layer.router_logits[list(g)], axis=0)
                           for g in plan.merge_groups])
        cols = router[:, symbols]
        return _mixture_outputs(dists, cols, min(layer.fanout, len(dists)))

    folded = np.full((len(survivors), layer.ctx), -np.inf)
    for row, j in enumerate(survivors):
        sources = [j] + [i for i, target in plan.redirect.items() if target == j]
        folded[row] = logsumexp(layer.router_logits[sources], axis=0)
    if pruned is None:
        dists = layer.expert_dists[survivors]
    else:
        dists = np.stack([
            softmax(pruned[j][:, symbols].T, axis=1) if j in pruned
            else np.repeat(layer.expert_dists[j][None, :], len(symbols), axis=0)
            for j in survivors
        ])                                                     # (k, u, vocab)
    cols = folded[:, symbols]
    return _mixture_outputs(dists, cols, min(layer.fanout, len(survivors)))


def compression_loss(layer: MoeLayer, corpus_heldout: CalibCorpus,
                     plan: "SurvivorPlan",
                     pruned: Mapping[int, np.ndarray] | None = None) -> float:
    """Mean held-out KL between the original and the compressed layer."""
    symbols, weights = corpus_heldout.symbol_weights
    original = layer_symbol_outputs(layer, symbols)
    compressed = compressed_symbol_outputs(layer, plan, symbols, pruned)
    return float(weights @ kl_rows(original, compressed))


def _check_plan_indices(layer: MoeLayer, plan: "SurvivorPlan") -> None:
    members = set(plan.survivors) | set(plan.redirect) | set(plan.redirect.values())
    if plan.merge_groups is not None:
        members |= {i for g in plan.merge_groups for i in g}
    if members and (min(members) < 0 or max(members) >= layer.n):
        raise ValueError("plan references experts outside this layer")
