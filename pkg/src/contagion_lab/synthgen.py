"""Synthetic worlds for tests and demos.

Three generators: heavy-tailed directed follower graphs (optionally with a
latent binary trait that tilts tie formation toward same-trait nodes),
trait-driven adoption logs with zero peer influence, and cascades with a
single mechanism enabled.  Everything is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import NEVER, AdoptionLog, MechanismParams
from .cascade import CascadeEvent, run_realization
from .errors import DataError
from .netgraph import DirectedGraph
from .rngstream import ADOPTION_GEN, GRAPH_GEN, stream


@dataclass(frozen=True)
class SynthConfig:
    """Degree/homophily knobs for graph generation."""

    n_nodes: int
    mean_degree: float = 8.0
    exponent: float = 2.5  # in-degree tail index; > 1
    homophily: float = 0.0  # 0 = trait-blind ties, 1 = same-trait only
    trait_balance: float = 0.5  # P(trait = 1)
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise DataError("need at least 2 nodes")
        if self.exponent <= 1:
            raise DataError("tail exponent must exceed 1")
        if not 0 <= self.homophily <= 1:
            raise DataError("homophily must lie in [0, 1]")
        if not 0 < self.trait_balance < 1:
            raise DataError("trait balance must lie in (0, 1)")
        if not 1 <= self.mean_degree <= self.n_nodes - 1:
            raise DataError("mean degree must lie in [1, n-1]")


def gen_traits(cfg: SynthConfig) -> np.ndarray:
    """Latent binary trait per node."""
    rng = stream(cfg.seed, GRAPH_GEN, 1)
    return (rng.random(cfg.n_nodes) < cfg.trait_balance).astype(np.int64)


def gen_graph(cfg: SynthConfig, trait: np.ndarray | None = None) -> DirectedGraph:
    """Heavy-tailed directed graph; followee counts are Pareto-distributed.

    Each node's followee count is drawn from a Pareto tail with index
    `exponent`, rescaled to hit mean_degree, and clipped to [1, n-1].
    With homophily h and a trait vector, cross-trait candidates get weight
    1-h during followee selection.
    """
    rng = stream(cfg.seed, GRAPH_GEN, 0)
    n = cfg.n_nodes
    if trait is not None and len(trait) != n:
        raise DataError("trait length must equal n_nodes")
    if cfg.homophily > 0 and trait is None:
        trait = gen_traits(cfg)

    # Pareto with x_m = 1: survival (1-u)^(-1/(exponent-1))
    u = rng.random(n)
    raw = np.power(1.0 - u, -1.0 / (cfg.exponent - 1.0))
    k = np.clip(np.rint(raw * (cfg.mean_degree / raw.mean())), 1, n - 1).astype(
        np.int64
    )

    all_ids = np.arange(n)
    src, dst = [], []
    for i in range(n):
        if trait is None or cfg.homophily == 0:
            cand = np.concatenate([all_ids[:i], all_ids[i + 1 :]])
            chosen = rng.choice(cand, size=k[i], replace=False)
        else:
            w = np.where(trait == trait[i], 1.0, 1.0 - cfg.homophily)
            w[i] = 0.0
            total = w.sum()
            if total == 0:
                raise DataError("node has no eligible followees under homophily 1")
            ki = min(k[i], int(np.count_nonzero(w)))
            chosen = rng.choice(n, size=ki, replace=False, p=w / total)
        src.append(np.full(len(chosen), i, dtype=np.int64))
        dst.append(chosen.astype(np.int64))
    edges = np.column_stack([np.concatenate(src), np.concatenate(dst)])
    return DirectedGraph.from_edges(edges, n_nodes=n)


def gen_homophily_adoptions(
    g: DirectedGraph,
    trait: np.ndarray,
    rates: np.ndarray,
    horizon_days: int,
    seed: int = 0,
) -> AdoptionLog:
    """Trait-rate adoptions with zero peer influence.

    Node u adopts on the first day a Bernoulli(rates[trait[u]]) check
    succeeds, independently of everyone else; never within the horizon
    stays NEVER.  One uniform draw per node (inverse-CDF geometric), so
    output is deterministic given the seed.
    """
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0) or np.any(rates > 1):
        raise DataError("per-trait rates must lie in [0, 1]")
    if len(trait) != g.node_count:
        raise DataError("trait length must equal node count")
    rng = stream(seed, ADOPTION_GEN)
    rho = rates[np.asarray(trait, dtype=np.int64)]
    u = rng.random(g.node_count)
    days = np.full(g.node_count, NEVER, dtype=np.int64)
    live = rho > 0
    sure = rho >= 1.0
    days[sure] = 0
    mid = live & ~sure
    with np.errstate(divide="ignore"):
        geo = np.floor(np.log1p(-u[mid]) / np.log1p(-rho[mid])).astype(np.int64)
    days[mid] = geo
    days[days >= horizon_days] = NEVER
    return AdoptionLog(days, first_day=0, last_day=horizon_days - 1)


def mask_params(params: MechanismParams, mechanism: str) -> MechanismParams:
    """Copy of params with every rule except `mechanism` disabled."""
    n = params.n_nodes
    off = {
        "beta": np.zeros(n),
        "phi": np.full(n, 2.0),  # saturation never reaches 2
        "r": 0.0,
        "shock_prob_at_peak": 0.0,
    }
    keep = {
        "Simple": ("beta",),
        "Complex": ("phi",),
        "Spontaneous": ("r",),
        "Shock": ("shock_prob_at_peak",),
    }
    if mechanism not in keep:
        raise DataError(f"unknown mechanism: {mechanism!r}")
    fields = {
        "beta": params.beta,
        "phi": params.phi,
        "r": params.r,
        "shock_prob_at_peak": params.shock_prob_at_peak,
    }
    for name in off:
        if name not in keep[mechanism]:
            fields[name] = off[name]
    return MechanismParams(
        beta=fields["beta"],
        phi=fields["phi"],
        r=fields["r"],
        activity=params.activity,
        shock_schedule=params.shock_schedule,
        shock_prob_at_peak=fields["shock_prob_at_peak"],
    )


def gen_pure_cascade(
    g: DirectedGraph,
    mechanism: str,
    params: MechanismParams,
    seed: int,
    seeds=None,
    stop_fraction: float = 1.0,
    horizon_days: int = 120,
) -> tuple[AdoptionLog, list[CascadeEvent]]:
    """Cascade with a single rule enabled; every event bears that label.

    Seed adopters (spontaneous by construction) are excluded from the
    returned event list's label guarantee but present in the log.
    """
    masked = mask_params(params, mechanism)
    events = run_realization(
        g,
        masked,
        seed,
        stop_fraction=stop_fraction,
        horizon_days=horizon_days,
        seeds=seeds,
    )
    days = np.full(g.node_count, NEVER, dtype=np.int64)
    for e in events:
        days[e.node] = e.day
    log = AdoptionLog(days, first_day=0, last_day=horizon_days - 1)
    non_seed = [e for e in events if not (e.day == 0 and e.fired == ("Spontaneous",))]
    if mechanism != "Spontaneous":
        bad = [e for e in non_seed if e.mechanism != mechanism]
        if bad:
            raise DataError("masking failed: foreign mechanism fired")
    return log, events
