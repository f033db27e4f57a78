# %% [markdown]
# # Loosening one rule
#
# A rule is a header plus an ordered list of options. Most options can be
# dropped; sid, rev and the descriptive ones (msg, reference, classtype, ...)
# stay. Here we parse a rule, list what can go, and look at a few variants.

# %%
from snortprune import (
    apply_mask,
    count_removal_space,
    enumerate_removals,
    parse_rule,
    removable_options,
    serialize_rule,
    RemovalMask,
)

rule = parse_rule(
    'alert tcp $EXTERNAL_NET any -> $HOME_NET 80 ( msg:"probe"; flow:to_server,established; '
    'content:"GET"; content:"|2F 61 64 6D 69 6E|",distance 0,nocase; '
    'isdataat:4,relative; sid:9001; rev:2; )'
)
[(i, o.keyword) for i, o in enumerate(rule.options)]

# %%
positions = removable_options(rule)
positions, [rule.options[i].keyword for i in positions]

# %% [markdown]
# Four removable options give 2**4 - 2 = 14 variants: dropping nothing is the
# original and dropping everything leaves a rule that matches all traffic.

# %%
count_removal_space([rule]), [len(enumerate_removals(rule, k)) for k in range(1, 5)]

# %%
# dropping the second content takes its distance/nocase modifiers with it
variant = apply_mask(rule, RemovalMask.of(9001, [3]))
print(variant.variant_id)
print(serialize_rule(variant.derived))

# %%
for v in enumerate_removals(rule, 2)[:3]:
    print(f"{v.variant_id:>10}  {serialize_rule(v.derived)}")
