"""Bundled benchmark scenarios: named sweeps over clients and strategies.

Each scenario expands to a list of fully resolved configurations, one per
sweep point, so a bench run is just a sequence of independent simulations.
Scenario defaults are chosen so the full sweep finishes in minutes on a
laptop while still exhibiting the effects each experiment is after.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import CounterSpec, SimConfig, Strategy

DEFAULT_CLIENTS = (10, 50, 100, 200)
ALL_STRATEGIES = (
    Strategy.WEAK,
    Strategy.STRONG,
    Strategy.BCCLT,
    Strategy.BCSRV,
    Strategy.BCSRV_NOBATCH,
)

LARGE_INITIAL = 10**9  # effectively inexhaustible within a bench run


@dataclass(frozen=True)
class SweepPoint:
    name: str
    config: SimConfig


def _base(strategy: Strategy, clients: int, seed: int) -> SimConfig:
    return SimConfig(strategy=strategy, clients_per_dc=clients, seed=seed)


def _single_counter(strategy: Strategy, clients: int, seed: int) -> SimConfig:
    cfg = _base(strategy, clients, seed)
    cfg.counters = [CounterSpec("c", bound=0, initial=LARGE_INITIAL)]
    cfg.duration_ms = 12000.0
    cfg.warmup_ms = 2000.0
    return cfg


def _multi_counter(strategy: Strategy, clients: int, seed: int) -> SimConfig:
    cfg = _base(strategy, clients, seed)
    cfg.counters = [
        CounterSpec(f"c{i:03d}", bound=0, initial=LARGE_INITIAL) for i in range(100)
    ]
    cfg.duration_ms = 8000.0
    cfg.warmup_ms = 2000.0
    return cfg


def _exhaustion(strategy: Strategy, clients: int, seed: int) -> SimConfig:
    cfg = _base(strategy, clients, seed)
    cfg.counters = [CounterSpec("c", bound=0, initial=6000)]
    cfg.inc_fraction = 0.0
    cfg.run_until_depleted = True
    cfg.post_depletion_ms = 1500.0
    cfg.max_duration_ms = 120000.0
    return cfg


def _violation_count(strategy: Strategy, clients: int, seed: int) -> SimConfig:
    cfg = _exhaustion(strategy, clients, seed)
    cfg.post_depletion_ms = 1000.0
    return cfg


_SCENARIOS = {
    "single-counter": (_single_counter, ALL_STRATEGIES, DEFAULT_CLIENTS),
    "multi-counter-100": (_multi_counter, ALL_STRATEGIES, DEFAULT_CLIENTS),
    "exhaustion-6000": (_exhaustion, (Strategy.BCSRV,), (20,)),
    "violation-count": (_violation_count, ALL_STRATEGIES, DEFAULT_CLIENTS),
}


def scenario_names() -> list[str]:
    return sorted(_SCENARIOS)


def expand(
    name: str,
    strategies: tuple[Strategy, ...] | None = None,
    clients: tuple[int, ...] | None = None,
    seed: int = 0,
    duration_ms: float | None = None,
) -> list[SweepPoint]:
    """Resolve a scenario name into its sweep points, with overrides."""
    if name not in _SCENARIOS:
        known = ", ".join(scenario_names())
        raise KeyError(f"unknown scenario {name!r}; known: {known}")
    build, default_strategies, default_clients = _SCENARIOS[name]
    points = []
    for strategy in strategies or default_strategies:
        for n in clients or default_clients:
            cfg = build(strategy, n, seed)
            if duration_ms is not None:
                cfg = replace_duration(cfg, duration_ms)
            cfg.validate()
            points.append(SweepPoint(f"{name}-{strategy.value}-c{n}", cfg))
    return points


def replace_duration(cfg: SimConfig, duration_ms: float) -> SimConfig:
    cfg.duration_ms = duration_ms
    if cfg.run_until_depleted:
        cfg.max_duration_ms = max(cfg.max_duration_ms, duration_ms)
    return cfg
