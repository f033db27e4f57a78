# %% [markdown]
# # Searching for better rulesets on a toy telescope
#
# The synthetic corpus has 20 rules, 200 packets and a 40-entry blocklist.
# Rule 1001 needs both "EXPLOIT" and "VARIANT_A"; ten more blocklisted
# sources send "EXPLOIT" with a different variant string. Dropping a content
# from multi-content rules should pick them up.

# %%
import numpy as np

from snortprune import (
    ExploreConfig,
    Blocklist,
    explore,
    label_ips,
    min_cost_curve,
    observed_sources,
    parse_ruleset,
)
from snortprune.datasets import synthetic_corpus
from snortprune.metrics import ALLOW_ALL, BLOCK_ALL

corpus = synthetic_corpus()
rules = parse_ruleset(corpus.rules_text)
blocklist = Blocklist(l for l in corpus.blocklist_text.splitlines() if l and not l.startswith("#"))
labels = label_ips(observed_sources(corpus.packets), blocklist)
len(rules), len(corpus.packets), len(labels.malicious), len(labels.benign)

# %%
state = explore(rules, corpus.packets, labels, ExploreConfig(max_iterations=4))
print("area by iteration:", [round(a, 4) for a in state.area_history])
print("stopped:", state.stop_reason)

# %%
# every configuration tried, as raw ROC coordinates
for label, p in sorted(state.raw_points.items(), key=lambda kv: kv[1].fpr):
    flag = " (worse than chance)" if p.is_bad else ""
    print(f"{label:<32} fpr={p.fpr:.3f} tpr={p.tpr:.3f}{flag}")

# %%
[(p.variant_label, round(p.fpr, 3), round(p.tpr, 3)) for p in state.frontier]

# %% [markdown]
# Which configuration to deploy depends on how a false positive is weighed
# against a miss. theta is the weight on false positives.

# %%
points = [ALLOW_ALL, BLOCK_ALL, state.raw_points["original"]]
before = min_cost_curve(points)
after = min_cost_curve([ALLOW_ALL, BLOCK_ALL] + list(state.raw_points.values()))
print(f"area under min-cost curve: {before.area:.4f} -> {after.area:.4f}")
for theta in (0.1, 0.5, 0.9):
    i = int(np.argmin(np.abs(after.thetas - theta)))
    print(theta, after.argmin_labels[i], round(float(after.min_costs[i]), 4))

# %%
state.best_configuration(0.5)
