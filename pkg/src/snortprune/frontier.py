"""ROC frontiers and the iterative removal search.

The search starts from the unmodified ruleset, then tries one removal per
option keyword, then keeps extending only the configurations that sit on the
current frontier. It stops once an iteration no longer grows the area under
the frontier by more than ``epsilon``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, MutableMapping, Sequence

from .hull import upper_left_chain
from .matching import PERMISSIVE, run_ruleset
from .metrics import (
    ALLOW_ALL,
    BLOCK_ALL,
    ConfusionCounts,
    RocPoint,
    confusion,
    cost,
    frontier_area,
    invert,
    roc_point,
)
from .mutation import ALL, MULTI_CONTENT_ONLY, VariantRuleset, extend_ruleset
from .rules import RemovablePolicy, Rule, is_multi_content, removable_options
from .traffic import LabeledIpSpace, PacketRecord

__all__ = [
    "PER_CONFIGURATION",
    "CROSS_FRONTIER",
    "EvaluationError",
    "Step",
    "Configuration",
    "ExploreConfig",
    "ExplorationState",
    "MatchEvaluator",
    "roc_hull",
    "pareto_staircase",
    "iteration_one_steps",
    "explore_iteration",
    "explore",
]

log = logging.getLogger(__name__)

PER_CONFIGURATION = "per_configuration"
CROSS_FRONTIER = "cross_frontier"


class EvaluationError(RuntimeError):
    def __init__(self, config_label: str, cause: BaseException):
        self.config_label = config_label
        super().__init__(f"evaluating configuration {config_label!r} failed: {cause}")


def _orient(p: RocPoint) -> RocPoint:
    return invert(p) if p.is_bad else p


def roc_hull(points: Iterable[RocPoint]) -> list[RocPoint]:
    """Upper-left ROC hull of ``points`` plus the two anchors, sorted by fpr.

    Points worse than chance are replaced by their inversion first. When
    several points coincide the first one given keeps its label.
    """
    by_xy: dict[tuple[float, float], RocPoint] = {}
    for p in points:
        p = _orient(p)
        by_xy.setdefault(p.xy, p)
    by_xy.setdefault(ALLOW_ALL.xy, ALLOW_ALL)
    by_xy.setdefault(BLOCK_ALL.xy, BLOCK_ALL)
    return [by_xy[xy] for xy in upper_left_chain(list(by_xy))]


def pareto_staircase(points: Iterable[RocPoint]) -> list[RocPoint]:
    """Non-dominated points (lower fpr and higher tpr are better), by fpr."""
    ordered = sorted(points, key=lambda p: (p.fpr, -p.tpr))
    front: list[RocPoint] = []
    best_tpr = -1.0
    for p in ordered:
        if p.tpr > best_tpr:
            front.append(p)
            best_tpr = p.tpr
    return front


@dataclass(frozen=True, order=True)
class Step:
    keyword: str
    scope: str = ALL

    @property
    def label(self) -> str:
        if self.keyword == "content" and self.scope == MULTI_CONTENT_ONLY:
            return "content@multi"
        return self.keyword


@dataclass(frozen=True)
class Configuration:
    """A sequence of "remove one more occurrence of keyword" steps."""

    steps: tuple[Step, ...] = ()

    @property
    def label(self) -> str:
        return "+".join(s.label for s in self.steps) if self.steps else "original"

    def extended(self, step: Step) -> "Configuration":
        return Configuration(self.steps + (step,))

    def merged(self, other: "Configuration") -> "Configuration":
        extra = list(other.steps)
        for s in self.steps:
            if s in extra:
                extra.remove(s)
        return Configuration(self.steps + tuple(extra))

    def build(self, rules: Sequence[Rule], policy: RemovablePolicy | None = None) -> VariantRuleset:
        ruleset = VariantRuleset.from_rules(rules, "original")
        for step in self.steps:
            ruleset = extend_ruleset(ruleset, step.keyword, policy, step.scope)
        return ruleset.relabel(self.label)


@dataclass(frozen=True)
class ExploreConfig:
    epsilon: float = 1e-4
    max_iterations: int = 4
    policy: RemovablePolicy = field(default_factory=RemovablePolicy)
    composition: str = PER_CONFIGURATION
    workers: int = 1

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.composition not in (PER_CONFIGURATION, CROSS_FRONTIER):
            raise ValueError(f"unknown composition {self.composition!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class ExplorationState:
    iteration: int = 0
    evaluated: dict[str, RocPoint] = field(default_factory=dict)
    raw_points: dict[str, RocPoint] = field(default_factory=dict)
    counts: dict[str, ConfusionCounts] = field(default_factory=dict)
    configs: dict[str, Configuration] = field(default_factory=dict)
    digests: dict[str, str] = field(default_factory=dict)
    introduced_at: dict[str, int] = field(default_factory=dict)
    frontier: list[RocPoint] = field(default_factory=list)
    frontiers: list[list[RocPoint]] = field(default_factory=list)
    area_history: list[float] = field(default_factory=list)
    frontier_configs: list[Configuration] = field(default_factory=list)
    evaluator_calls: int = 0
    stopped: bool = False
    stop_reason: str = ""

    @property
    def gain(self) -> float | None:
        if len(self.area_history) < 2:
            return None
        return self.area_history[-1] - self.area_history[-2]

    @property
    def union_frontier(self) -> list[RocPoint]:
        """Hull of every frontier point seen across iterations."""
        return roc_hull(p for f in self.frontiers for p in f)

    def best_configuration(self, theta: float = 0.5) -> str:
        """Label of the evaluated configuration with the lowest cost at ``theta``."""
        return min(self.evaluated, key=lambda lab: (cost(theta, self.evaluated[lab]), lab))


@dataclass(frozen=True)
class MatchEvaluator:
    """Default evaluator: run the matcher and count flagged IPs. Picklable."""

    traffic: tuple[PacketRecord, ...]
    labels: LabeledIpSpace
    unevaluable: str = PERMISSIVE

    def __call__(self, ruleset: VariantRuleset) -> ConfusionCounts:
        result = run_ruleset(ruleset, self.traffic, unevaluable=self.unevaluable)
        return confusion(result.flagged, self.labels)


Evaluator = Callable[[VariantRuleset], ConfusionCounts]


def iteration_one_steps(rules: Sequence[Rule], policy: RemovablePolicy | None = None) -> list[Step]:
    """One step per distinct removable keyword, plus multi-content ``content``."""
    keywords = set()
    for rule in rules:
        for pos in removable_options(rule, policy):
            keywords.add(rule.option_at(pos).keyword)
    steps = [Step(k) for k in sorted(keywords)]
    if "content" in keywords and any(is_multi_content(r) for r in rules):
        steps.append(Step("content", MULTI_CONTENT_ONLY))
    return sorted(steps)


def _candidates(state: ExplorationState, rules, policy, composition) -> list[Configuration]:
    steps = iteration_one_steps(rules, policy)
    if not state.area_history[1:]:
        return [Configuration((s,)) for s in steps]
    out: dict[str, Configuration] = {}
    for base in state.frontier_configs:
        for s in steps:
            c = base.extended(s)
            out.setdefault(c.label, c)
    if composition == CROSS_FRONTIER:
        fcs = state.frontier_configs
        for i, a in enumerate(fcs):
            for b in fcs[i + 1:]:
                c = a.merged(b)
                out.setdefault(c.label, c)
    return [out[k] for k in sorted(out)]


def _evaluate_all(rulesets: list[VariantRuleset], evaluator: Evaluator, workers: int) -> list:
    def guarded(rs):
        try:
            return evaluator(rs)
        except Exception as exc:
            raise EvaluationError(rs.label, exc) from exc

    if workers <= 1 or len(rulesets) <= 1:
        return [guarded(rs) for rs in rulesets]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(evaluator, rs) for rs in rulesets]
        results = []
        for rs, fut in zip(rulesets, futures):
            try:
                results.append(fut.result())
            except Exception as exc:
                raise EvaluationError(rs.label, exc) from exc
        return results


def _record(state: ExplorationState, config: Configuration, digest: str,
            counts: ConfusionCounts, iteration: int) -> None:
    raw = roc_point(counts, config.label)
    state.raw_points[config.label] = raw
    state.evaluated[config.label] = _orient(raw)
    state.counts[config.label] = counts
    state.configs[config.label] = config
    state.digests[config.label] = digest
    state.introduced_at[config.label] = iteration


def explore_iteration(
    state: ExplorationState | None,
    rules: Sequence[Rule],
    traffic: Sequence[PacketRecord] | None = None,
    labels: LabeledIpSpace | None = None,
    policy: RemovablePolicy | None = None,
    evaluator: Evaluator | None = None,
    *,
    composition: str = PER_CONFIGURATION,
    cache: MutableMapping[str, ConfusionCounts] | None = None,
    workers: int = 1,
) -> ExplorationState:
    """Run the next iteration and return the updated state.

    Iteration 0 evaluates the original rules, iteration 1 every single-keyword
    removal, later iterations extend the frontier configurations by one step.
    ``cache`` maps ruleset digests to counts and is shared across calls.
    """
    state = state if state is not None else ExplorationState()
    policy = policy or RemovablePolicy()
    if evaluator is None:
        if traffic is None or labels is None:
            raise ValueError("traffic and labels are required without an evaluator")
        evaluator = MatchEvaluator(tuple(traffic), labels)
    cache = cache if cache is not None else {}
    fingerprint = getattr(evaluator, "fingerprint", "")
    iteration = len(state.area_history)

    if iteration == 0:
        configs = [Configuration()]
    else:
        configs = [c for c in _candidates(state, rules, policy, composition)
                   if c.label not in state.evaluated]

    built = sorted(((c, c.build(rules, policy)) for c in configs), key=lambda cb: cb[0].label)
    pending: dict[str, VariantRuleset] = {}
    for config, ruleset in built:
        key = fingerprint + ruleset.digest()
        if key not in cache and key not in pending:
            pending[key] = ruleset
    results = _evaluate_all(list(pending.values()), evaluator, workers)
    state.evaluator_calls += len(results)
    for key, counts in zip(pending, results):
        cache[key] = counts
    for config, ruleset in built:
        _record(state, config, ruleset.digest(), cache[fingerprint + ruleset.digest()], iteration)

    state.frontier = roc_hull(state.evaluated.values())
    state.frontiers.append(list(state.frontier))
    state.area_history.append(frontier_area(state.frontier))
    state.frontier_configs = [
        state.configs[p.variant_label] for p in state.frontier
        if p.variant_label in state.configs
    ]
    state.iteration = iteration
    log.info("iteration %d: %d new configurations, area %.6f",
             iteration, len(built), state.area_history[-1])
    return state


def explore(
    rules: Sequence[Rule],
    traffic: Sequence[PacketRecord] | None = None,
    labels: LabeledIpSpace | None = None,
    config: ExploreConfig | None = None,
    *,
    evaluator: Evaluator | None = None,
    cache: MutableMapping[str, ConfusionCounts] | None = None,
) -> ExplorationState:
    config = config or ExploreConfig()
    cache = cache if cache is not None else {}
    if evaluator is None:
        if traffic is None or labels is None:
            raise ValueError("traffic and labels are required without an evaluator")
        evaluator = MatchEvaluator(tuple(traffic), labels)
    kwargs = dict(composition=config.composition, cache=cache, workers=config.workers)
    state = explore_iteration(None, rules, traffic, labels, config.policy, evaluator, **kwargs)
    while state.iteration < config.max_iterations:
        state = explore_iteration(state, rules, traffic, labels, config.policy, evaluator, **kwargs)
        if state.gain <= config.epsilon:
            state.stopped = True
            state.stop_reason = f"area gain {state.gain:.3g} <= epsilon {config.epsilon:g}"
            break
    else:
        state.stop_reason = f"reached max_iterations={config.max_iterations}"
    return state
