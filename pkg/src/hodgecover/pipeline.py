"""Per-layer composition: sweep, build, decompose, select, evaluate.

The flow for one layer is fixed: pairwise barrier sweep, Stage-A candidate
triangles, triplet sweep over the candidates, Stage-B Betti-maximizing
filtration, Hodge decomposition of the edge-barrier signal on the chosen
complex, then survivor selection by the requested method.  Layers are
independent, so models are compressed layer by layer under a cross-layer
budget allocator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .builder import FiltrationResult, stage_a_candidates, stage_b_filtration
from .complexes import Complex2, EdgeSignal, SignedIncidence, betti1, build_incidence
from .hodge import HodgeDecomp, decompose
from .moe import (BarrierTable, CalibCorpus, MoeLayer, SaliencyVector, barrier_sweep,
                  compression_loss, saliency)
from .selector import (CoverageInstance, SurvivorPlan, build_coverage, greedy_select,
                       phi, redirect, select_ablation, select_random)
from .wanda import prune_survivors, residual_sparsity

logger = logging.getLogger(__name__)

METHODS = ("hodgecover", "random", "no_triangle", "greedy_barrier",
           "triplet_penalty", "triplet_hypergraph")


@dataclass(frozen=True, eq=False)
class SelectorParams:
    """Frozen selection defaults; every field mirrors the shipped defaults."""

    p: float = 20.0
    q_t: float = 20.0
    lam_e: float = 1.0
    lam_t: float = 0.5
    alpha: float = 3.0
    alpha_t: float = 1.0


@dataclass(frozen=True, eq=False)
class LayerAnalysis:
    """Everything the selectors need about one layer, computed once."""

    layer: MoeLayer
    table: BarrierTable
    candidates: np.ndarray
    filtration: FiltrationResult
    complex: Complex2
    incidence: SignedIncidence
    signal: EdgeSignal
    decomp: HodgeDecomp
    sal: SaliencyVector
    beta1: int


def pairwise_signal(k: Complex2, table: BarrierTable) -> EdgeSignal:
    """The edge-barrier cochain of a complex, read off the pairwise table."""
    return EdgeSignal(table.pairwise[k.edges[:, 0], k.edges[:, 1]])


def analyze_layer(layer: MoeLayer, corpus: CalibCorpus, *, cap: int = 500,
                  seed: int = 42, workers: int = 1) -> LayerAnalysis:
    """Run the full topological analysis for one layer."""
    pair_table = barrier_sweep(layer, corpus, workers=workers)
    candidates = stage_a_candidates(pair_table, cap=cap, seed=seed)
    table = barrier_sweep(layer, corpus, candidates, workers=workers)
    filtration = stage_b_filtration(table, candidates)
    k = filtration.chosen_complex
    if k.num_edges < layer.n * (layer.n - 1) // 2:
        logger.warning("chosen complex has %d of %d edges; expected the complete "
                       "edge set on planted layers", k.num_edges,
                       layer.n * (layer.n - 1) // 2)
    inc = build_incidence(k)
    signal = pairwise_signal(k, table)
    return LayerAnalysis(
        layer=layer, table=table, candidates=candidates, filtration=filtration,
        complex=k, incidence=inc, signal=signal,
        decomp=decompose(k, inc, signal),
        sal=saliency(layer, corpus),
        beta1=betti1(k, inc),
    )


def plan_layer(analysis: LayerAnalysis, k: int, method: str,
               params: SelectorParams = SelectorParams(), *,
               layer_id: int = 0, seed: int = 0) -> SurvivorPlan:
    """Select survivors for one analyzed layer with the requested method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    inst = build_coverage(analysis.complex, analysis.decomp, analysis.table,
                          analysis.sal, p=params.p, q_t=params.q_t,
                          lam_e=params.lam_e, lam_t=params.lam_t)
    if method == "hodgecover":
        survivors = greedy_select(inst, k)
    elif method == "random":
        survivors = select_random(analysis.layer.n, k, seed)
    else:
        return select_ablation(method, analysis.table, k, coverage=inst,
                               complex_=analysis.complex, decomp=analysis.decomp,
                               alpha=params.alpha, alpha_t=params.alpha_t,
                               layer=layer_id)
    return SurvivorPlan(
        n=analysis.layer.n, k=k, survivors=survivors,
        redirect=redirect(analysis.complex, analysis.table, analysis.decomp,
                          survivors, params.alpha),
        method=method, phi=phi(inst, survivors), alpha=params.alpha, layer=layer_id,
    )


def coverage_for(analysis: LayerAnalysis,
                 params: SelectorParams = SelectorParams()) -> CoverageInstance:
    return build_coverage(analysis.complex, analysis.decomp, analysis.table,
                          analysis.sal, p=params.p, q_t=params.q_t,
                          lam_e=params.lam_e, lam_t=params.lam_t)


def compress_model(analyses: Sequence[LayerAnalysis], budget_ks: Sequence[int],
                   method: str, params: SelectorParams = SelectorParams(), *,
                   seed: int = 0) -> list[SurvivorPlan]:
    """Plan every layer of a model at its allocated survivor count."""
    if len(analyses) != len(budget_ks):
        raise ValueError("one survivor count per layer required")
    return [plan_layer(a, k, method, params, layer_id=idx, seed=seed + idx)
            for idx, (a, k) in enumerate(zip(analyses, budget_ks))]


def model_loss(layers: Sequence[MoeLayer], corpus: CalibCorpus,
               plans: Sequence[SurvivorPlan],
               pruned: Sequence[Mapping[int, np.ndarray] | None] | None = None) -> float:
    """Mean per-layer compression loss of a planned model."""
    losses = []
    for idx, (layer, plan) in enumerate(zip(layers, plans)):
        extra = pruned[idx] if pruned is not None else None
        losses.append(compression_loss(layer, corpus, plan, extra))
    return float(np.mean(losses))


def hybrid_stage2(layers: Sequence[MoeLayer], corpus: CalibCorpus,
                  plans: Sequence[SurvivorPlan], r_total: float,
                  r1: float) -> tuple[float, list[dict[int, np.ndarray]]]:
    """Residual-sparsity pass over every layer's survivors.

    Returns the applied weight sparsity r2 and the per-layer pruned
    matrices, which the loss evaluator consumes alongside the plans.
    """
    r2 = residual_sparsity(r_total, r1)
    pruned = [prune_survivors(layer, corpus, plan.survivors, r2)[0]
              for layer, plan in zip(layers, plans)]
    return r2, pruned
