"""Constrained parameter space and a simple genetic algorithm over it."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .core import ChannelConfig, ConfigError
from .metrics import caf
from .simulator import random_message, run_session
from .trace import ImpairmentConfig, generate_synthetic_trace

log = logging.getLogger(__name__)

GENES = ("bitlength", "epsilon", "poi_filter", "inputsource", "subchanneling_mode",
         "subchanneling_bits", "ecc", "rehash_bits", "oood_bits")


@dataclass(frozen=True)
class ParameterSpace:
    bitlength: tuple = (2, 3, 4, 8)
    epsilon: tuple = (0, 1, 3)  # 1 s, 100 ms, 1 ms
    poi_filter: tuple = ("all", "broadcast_domain")
    inputsource: tuple = ("IPD", "ISD", "ICD", "ISPN", "timestamp")
    subchanneling_mode: tuple = ("none", "baseipd", "iphash", "clockhash")
    subchanneling_bits: tuple = (0, 2, 4, 8)
    ecc: tuple = ("none", "hamming", "hamming+", "inline-hamming+")
    rehash_bits: tuple = (0, 2, 4, 7)
    oood_bits: tuple = (0,)
    base: ChannelConfig = ChannelConfig()

    @classmethod
    def with_unrounded(cls, **kw) -> "ParameterSpace":
        """Adds 'no rounding' as a fourth epsilon value."""
        return cls(epsilon=(0, 1, 3, 6), **kw)

    def values(self, gene: str) -> tuple:
        return getattr(self, gene)

    @property
    def raw_size(self) -> int:
        return math.prod(len(self.values(g)) for g in GENES)

    def is_valid(self, genes: dict) -> bool:
        if (genes["subchanneling_mode"] == "none") != (genes["subchanneling_bits"] == 0):
            return False
        return caf(genes["bitlength"], genes["rehash_bits"], genes["oood_bits"]) > 1

    def build(self, genes: dict) -> ChannelConfig:
        return self.base.replace(**genes)

    def sample(self, rng: np.random.Generator) -> dict:
        return {g: self.values(g)[int(rng.integers(len(self.values(g))))] for g in GENES}


def genes_of(cfg: ChannelConfig) -> dict:
    return {g: getattr(cfg, g) for g in GENES}


def config_key(cfg: ChannelConfig) -> str:
    return json.dumps(genes_of(cfg), sort_keys=True)


def enumerate_space(space: Optional[ParameterSpace] = None) -> Iterator[ChannelConfig]:
    """Valid configurations in Cartesian-product order."""
    space = space or ParameterSpace()
    for combo in itertools.product(*(space.values(g) for g in GENES)):
        genes = dict(zip(GENES, combo))
        if space.is_valid(genes):
            yield space.build(genes)


def count_space(space: Optional[ParameterSpace] = None) -> tuple:
    space = space or ParameterSpace()
    return space.raw_size, sum(1 for _ in enumerate_space(space))


# --- evaluation registry ----------------------------------------------------


@dataclass
class Individual:
    config: ChannelConfig
    fitness: Optional[float] = None

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


class EvaluationRegistry:
    """Every configuration ever scored, optionally mirrored to a JSON-lines log."""

    def __init__(self, log_path=None):
        self.records: dict = {}
        self.log_path = Path(log_path) if log_path else None
        self._lock = threading.Lock()
        if self.log_path and self.log_path.exists():
            for line in self.log_path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self.records[json.dumps(rec["config"], sort_keys=True)] = rec

    def __contains__(self, cfg: ChannelConfig) -> bool:
        return config_key(cfg) in self.records

    def __len__(self) -> int:
        return len(self.records)

    def get(self, cfg: ChannelConfig) -> Optional[dict]:
        return self.records.get(config_key(cfg))

    def add(self, cfg: ChannelConfig, fitness: float, report_digest: str, generation: int) -> dict:
        with self._lock:
            key = config_key(cfg)
            if key in self.records:
                raise ValueError(f"configuration evaluated twice: {key}")
            rec = {"index": len(self.records), "generation": generation,
                   "config": genes_of(cfg), "fitness": fitness, "report_digest": report_digest}
            self.records[key] = rec
            if self.log_path:
                with open(self.log_path, "a") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            return rec


@dataclass
class Population:
    individuals: list
    generation: int = 0
    registry: EvaluationRegistry = field(default_factory=EvaluationRegistry)
    seed: int = 0
    best_history: list = field(default_factory=list)

    def best(self) -> Optional[Individual]:
        done = [i for i in self.individuals if i.evaluated]
        return min(done, key=rank_key) if done else None


def rank_key(ind: Individual):
    """Fitness desc, then CAF desc, then lexicographic configuration."""
    c = ind.config
    return (-(ind.fitness or 0.0), -caf(c.bitlength, c.rehash_bits, c.oood_bits), config_key(c))


# --- fitness ----------------------------------------------------------------


@dataclass(frozen=True)
class SessionTemplate:
    """Everything about a fitness session except the channel configuration."""

    rate: float = 120.0
    duration: float = 5.0
    trace_seed: int = 0
    message_bits: int = 4096
    message_seed: int = 0
    sender_impair: ImpairmentConfig = ImpairmentConfig()
    receiver_impair: ImpairmentConfig = ImpairmentConfig()


_TRACE_CACHE: dict = {}


def _template_trace(t: SessionTemplate):
    key = (t.rate, t.duration, t.trace_seed)
    if key not in _TRACE_CACHE:
        _TRACE_CACHE.clear()
        _TRACE_CACHE[key] = generate_synthetic_trace(t.rate, t.duration, seed=t.trace_seed)
    return _TRACE_CACHE[key]


def evaluate(template: SessionTemplate, cfg: ChannelConfig) -> tuple:
    """(fitness, report digest) of one session."""
    report = run_session(cfg, _template_trace(template),
                         random_message(template.message_bits, template.message_seed),
                         template.sender_impair, template.receiver_impair)
    digest = hashlib.sha256(report.to_json().encode()).hexdigest()
    return report.fitness, digest


def _evaluate_remote(args):
    template, cfg = args
    return evaluate(template, cfg)


class Evaluator:
    """Scores batches of configs, in worker processes when ``workers > 1``."""

    is_batch = True

    def __init__(self, template: SessionTemplate, workers: int = 1):
        self.template = template
        self.workers = workers
        self.calls = 0

    def __call__(self, configs: Sequence[ChannelConfig]) -> list:
        self.calls += len(configs)
        if self.workers > 1 and len(configs) > 1:
            with ProcessPoolExecutor(self.workers) as pool:
                return list(pool.map(_evaluate_remote, [(self.template, c) for c in configs]))
        return [evaluate(self.template, c) for c in configs]


def _as_batch(fitness_fn: Callable) -> Callable:
    """Accept either a batch evaluator or a plain config -> fitness function."""
    if getattr(fitness_fn, "is_batch", False):
        return fitness_fn

    def batch(configs):
        out = []
        for c in configs:
            v = fitness_fn(c)
            out.append(v if isinstance(v, tuple) else (float(v), ""))
        return out

    return batch


def _score(pop_registry: EvaluationRegistry, configs: list, fitness_fn, generation: int) -> list:
    results = _as_batch(fitness_fn)(configs)
    out = []
    for cfg, (fit, digest) in zip(configs, results):
        pop_registry.add(cfg, fit, digest, generation)
        out.append(Individual(cfg, fit))
    return out


# --- SGA --------------------------------------------------------------------


def _random_unevaluated(space: ParameterSpace, rng, taken: set, registry, tries: int = 2000):
    for _ in range(tries):
        genes = space.sample(rng)
        if not space.is_valid(genes):
            continue
        cfg = space.build(genes)
        if cfg not in registry and config_key(cfg) not in taken:
            return cfg
    return None


def initial_population(space: ParameterSpace, size: int, fitness_fn, seed: int = 0,
                       registry: Optional[EvaluationRegistry] = None) -> Population:
    rng = np.random.default_rng([seed, 0])
    registry = registry if registry is not None else EvaluationRegistry()
    configs, taken = [], set()
    while len(configs) < size:
        cfg = _random_unevaluated(space, rng, taken, registry)
        if cfg is None:
            break
        taken.add(config_key(cfg))
        configs.append(cfg)
    inds = _score(registry, configs, fitness_fn, 0)
    pop = Population(inds, 0, registry, seed)
    pop.best_history.append(pop.best().fitness if pop.best() else None)
    return pop


def crossover(a: ChannelConfig, b: ChannelConfig, rng) -> dict:
    ga, gb = genes_of(a), genes_of(b)
    return {g: (ga[g] if rng.random() < 0.5 else gb[g]) for g in GENES}


def mutate(genes: dict, space: ParameterSpace, rate: float, rng) -> dict:
    out = dict(genes)
    for g in GENES:
        if rng.random() < rate:
            vals = space.values(g)
            out[g] = vals[int(rng.integers(len(vals)))]
    return out


def sga_step(pop: Population, fitness_fn, elite_fraction: float = 0.25,
             mutation_rate: float = 0.1, seed: Optional[int] = None,
             space: Optional[ParameterSpace] = None, max_offspring: Optional[int] = None,
             max_retries: int = 50) -> Population:
    """One generation: keep elites, breed and mutate offspring, score them."""
    if not pop.individuals:
        raise ValueError("cannot evolve an empty population")
    if not 0 < elite_fraction <= 1:
        raise ValueError("elite_fraction must be within (0, 1]")
    if not 0 <= mutation_rate <= 1:
        raise ValueError("mutation_rate must be within [0, 1]")
    space = space or ParameterSpace()
    gen = pop.generation + 1
    rng = np.random.default_rng([pop.seed if seed is None else seed, gen])
    ranked = sorted((i for i in pop.individuals if i.evaluated), key=rank_key)
    size = len(pop.individuals)
    n_elite = max(1, math.ceil(elite_fraction * size))
    elites = ranked[:n_elite]
    want = size - len(elites)
    if max_offspring is not None:
        want = min(want, max_offspring)
    taken = {config_key(e.config) for e in elites}
    children = []
    for _ in range(want):
        child = None
        for _ in range(max_retries):
            if len(elites) > 1:
                ia, ib = rng.choice(len(elites), 2, replace=False)
            else:
                ia = ib = 0
            genes = mutate(crossover(elites[ia].config, elites[ib].config, rng),
                           space, mutation_rate, rng)
            if not space.is_valid(genes):
                continue
            cfg = space.build(genes)
            if cfg in pop.registry or config_key(cfg) in taken:
                continue
            child = cfg
            break
        if child is None:
            child = _random_unevaluated(space, rng, taken, pop.registry)
        if child is None:
            log.info("parameter space exhausted at generation %d", gen)
            break
        taken.add(config_key(child))
        children.append(child)
    scored = _score(pop.registry, children, fitness_fn, gen)
    nxt = Population(list(elites) + scored, gen, pop.registry, pop.seed, list(pop.best_history))
    nxt.best_history.append(nxt.best().fitness)
    return nxt


@dataclass
class SearchResult:
    ranked: list  # Individuals, best first
    generations: int
    evaluations: int
    best_history: list


def run_search(space: Optional[ParameterSpace] = None, budget: int = 32,
               template: Optional[SessionTemplate] = None, seed: int = 0,
               population_size: int = 32, elite_fraction: float = 0.25,
               mutation_rate: float = 0.1, workers: int = 1, log_path=None,
               fitness_fn=None, max_generations: Optional[int] = None) -> SearchResult:
    """Evolve configurations until ``budget`` unique evaluations are spent.

    A log from an earlier run with the same seed is replayed instead of
    re-evaluated, which makes interrupted searches resumable.
    """
    if budget < population_size:
        raise ValueError(f"budget {budget} is smaller than population size {population_size}")
    space = space or ParameterSpace()
    registry = EvaluationRegistry(log_path)
    cached = dict(registry.records)
    if cached:
        registry.records.clear()
        if registry.log_path:
            registry.log_path.write_text("")
    inner = fitness_fn or Evaluator(template or SessionTemplate(), workers)
    batch = _as_batch(inner)

    def replaying(configs):
        todo = [c for c in configs if config_key(c) not in cached]
        fresh = iter(batch(todo)) if todo else iter(())
        out = []
        for c in configs:
            rec = cached.get(config_key(c))
            out.append((rec["fitness"], rec["report_digest"]) if rec else next(fresh))
        return out

    replaying.is_batch = True
    pop = initial_population(space, population_size, replaying, seed, registry)
    while len(registry) < budget:
        if max_generations is not None and pop.generation >= max_generations:
            break
        before = len(registry)
        pop = sga_step(pop, replaying, elite_fraction, mutation_rate, space=space,
                       max_offspring=budget - len(registry))
        if len(registry) == before:
            break
    ranked = sorted((Individual(space.build(r["config"]), r["fitness"])
                     for r in registry.records.values()), key=rank_key)
    return SearchResult(ranked, pop.generation + 1, len(registry), pop.best_history)


__all__ = [
    "GENES", "ParameterSpace", "enumerate_space", "count_space", "Population", "Individual",
    "EvaluationRegistry", "SessionTemplate", "Evaluator", "sga_step", "run_search",
    "initial_population", "crossover", "mutate", "rank_key", "ConfigError",
]
