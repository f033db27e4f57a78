"""
snortprune
==========

Loosen Snort 3 rules by removing options and map where the variants land in
ROC space.

- parse rules into an AST and serialize them back (:mod:`snortprune.rules`)
- enumerate and apply option removals (:mod:`snortprune.mutation`)
- load labelled telescope traffic and blocklists (:mod:`snortprune.traffic`)
- match rules against packets (:mod:`snortprune.matching`)
- ROC points, f1 scores, cost curves (:mod:`snortprune.metrics`)
- hulls, frontiers and the iterative search (:mod:`snortprune.frontier`)

Basic example
-------------

.. code:: python

    from snortprune import parse_ruleset, load_traffic, load_blocklist
    from snortprune import label_ips, observed_sources, explore

    rules = parse_ruleset(open("rules.txt").read())
    traffic = load_traffic("traffic.jsonl")
    labels = label_ips(observed_sources(traffic), load_blocklist("level4.netset"))
    state = explore(rules, traffic, labels)
    state.area_history
"""

from .rules import (
    DEFAULT_EXCLUDED,
    DuplicateSidError,
    RemovablePolicy,
    Rule,
    RuleHeader,
    RuleOption,
    RuleSyntaxError,
    is_multi_content,
    parse_rule,
    parse_ruleset,
    removable_options,
    serialize_rule,
    serialize_ruleset,
)
from .mutation import (
    ALL,
    MULTI_CONTENT_ONLY,
    PolicyViolationError,
    RemovalMask,
    RuleVariant,
    TrivialRuleError,
    VariantRuleset,
    apply_mask,
    count_removal_space,
    enumerate_removals,
    extend_ruleset,
    select_by_option,
)
from .traffic import (
    Blocklist,
    Label,
    LabeledIpSpace,
    LabelPolicy,
    PacketRecord,
    TcpFlag,
    label_ips,
    load_blocklist,
    load_traffic,
    observed_sources,
)
from .matching import AlertRecord, MatchContext, RunResult, eval_rule, run_ruleset
from .metrics import (
    ConfusionCounts,
    CostCurve,
    RocPoint,
    confusion,
    cost,
    frontier_area,
    invert,
    macro_f1,
    min_cost_curve,
    prf1,
    roc_point,
)
from .frontier import (
    Configuration,
    ExplorationState,
    ExploreConfig,
    Step,
    explore,
    explore_iteration,
    pareto_staircase,
    roc_hull,
)

__version__ = "0.1.0"
