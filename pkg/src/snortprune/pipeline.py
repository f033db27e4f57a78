"""Pipeline phases behind the CLI: parse, run, explore, report.

Matcher output (flagged IPs and alerts) is cached on disk under a key built
from three content hashes: the variant ruleset, the traffic file, and the
engine configuration. ``report`` rebuilds every table from that cache
without matching again.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .frontier import (
    PER_CONFIGURATION,
    Configuration,
    ExplorationState,
    ExploreConfig,
    Step,
    explore,
    pareto_staircase,
    roc_hull,
)
from .matching import PERMISSIVE, AlertRecord, read_alerts_csv, run_ruleset, write_alerts_csv
from .metrics import (
    ConfusionCounts,
    MetricsRow,
    RocPoint,
    confusion,
    frontier_area,
    invert,
    metrics_row,
    metrics_table_csv,
    min_cost_curve,
    roc_point,
)
from .mutation import (
    ALL,
    MULTI_CONTENT_ONLY,
    VariantRuleset,
    count_removal_space,
    load_mask_file,
    ruleset_from_masks,
)
from .rules import (
    DEFAULT_EXCLUDED,
    RemovablePolicy,
    Rule,
    is_multi_content,
    parse_ruleset,
    removable_options,
)
from .traffic import LabeledIpSpace, LabelPolicy, PacketRecord, label_ips, load_blocklist, load_traffic, observed_sources

__all__ = [
    "CACHE_ENV",
    "ConfigError",
    "PipelineConfig",
    "FlaggedCache",
    "CachedMatchEvaluator",
    "parse_descriptor",
    "cmd_parse",
    "cmd_run",
    "cmd_explore",
    "cmd_report",
    "crosscheck",
]

CACHE_ENV = "SNORTPRUNE_CACHE_DIR"


class ConfigError(ValueError):
    pass


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# configuration

@dataclass
class PipelineConfig:
    rules_path: str | None = None
    traffic_path: str | None = None
    blocklist_path: str | None = None
    excluded_keywords: list[str] = field(default_factory=lambda: sorted(DEFAULT_EXCLUDED))
    dependency_check: bool = True
    label_policy: str = LabelPolicy.PAPER_INVERTED.value
    unevaluable: str = PERMISSIVE
    epsilon: float = 1e-4
    max_iterations: int = 4
    composition: str = PER_CONFIGURATION
    cache_dir: str = ".snortprune-cache"
    output_dir: str = "snortprune-out"
    workers: int = 1

    @property
    def policy(self) -> RemovablePolicy:
        return RemovablePolicy(frozenset(self.excluded_keywords), self.dependency_check)

    @property
    def effective_cache_dir(self) -> Path:
        return Path(os.environ.get(CACHE_ENV) or self.cache_dir)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def validate(self, need: Sequence[str] = ("rules_path", "traffic_path", "blocklist_path")) -> None:
        for name in need:
            value = getattr(self, name)
            if not value:
                raise ConfigError(f"{name} is required")
            if not Path(value).is_file():
                raise ConfigError(f"{name}: no such file {value}")
        try:
            LabelPolicy(self.label_policy)
        except ValueError:
            raise ConfigError(f"unknown label policy {self.label_policy!r}") from None
        if self.unevaluable not in ("permissive", "strict"):
            raise ConfigError(f"unknown unevaluable policy {self.unevaluable!r}")
        try:
            ExploreConfig(self.epsilon, self.max_iterations, self.policy, self.composition, self.workers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def engine_config(self) -> dict:
        return {"unevaluable": self.unevaluable, "engine_version": __version__}


# --------------------------------------------------------------------------
# cache

class FlaggedCache:
    """Directory of ``<key>.json`` files holding flagged IPs and alerts."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    @staticmethod
    def key(ruleset_digest: str, traffic_hash: str, engine_config: dict) -> str:
        h = hashlib.sha256()
        for part in (ruleset_digest, traffic_hash, json.dumps(engine_config, sort_keys=True)):
            h.update(part.encode())
            h.update(b"\0")
        return h.hexdigest()

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def __contains__(self, key: str) -> bool:
        return self.path(key).is_file()

    def get(self, key: str) -> tuple[frozenset[str], list[AlertRecord]] | None:
        try:
            data = json.loads(self.path(key).read_text())
        except FileNotFoundError:
            return None
        alerts = [AlertRecord(a[0], a[1], a[2], a[3]) for a in data["alerts"]]
        return frozenset(data["flagged"]), alerts

    def put(self, key: str, flagged: Iterable[str], alerts: Iterable[AlertRecord]) -> None:
        payload = {
            "flagged": sorted(flagged),
            "alerts": [[a.timestamp, a.variant_id, a.sid, a.src_ip] for a in alerts],
        }
        _atomic_write(self.path(key), json.dumps(payload, sort_keys=True))


@dataclass(frozen=True)
class CachedMatchEvaluator:
    """Picklable evaluator that runs the matcher only on cache misses."""

    traffic: tuple[PacketRecord, ...]
    traffic_hash: str
    labels: LabeledIpSpace
    engine_config: tuple[tuple[str, str], ...]
    cache_dir: str

    @property
    def fingerprint(self) -> str:
        return self.traffic_hash + json.dumps(dict(self.engine_config), sort_keys=True)

    def run(self, ruleset: VariantRuleset) -> tuple[frozenset[str], list[AlertRecord], bool]:
        cache = FlaggedCache(self.cache_dir)
        engine = dict(self.engine_config)
        key = cache.key(ruleset.digest(), self.traffic_hash, engine)
        hit = cache.get(key)
        if hit is not None:
            return hit[0], hit[1], True
        result = run_ruleset(ruleset, self.traffic, unevaluable=engine["unevaluable"])
        cache.put(key, result.flagged, result.alerts)
        return result.flagged, list(result.alerts), False

    def __call__(self, ruleset: VariantRuleset) -> ConfusionCounts:
        flagged, _, _ = self.run(ruleset)
        return confusion(flagged, self.labels)


# --------------------------------------------------------------------------
# shared loading

@dataclass
class _Inputs:
    rules: list[Rule]
    traffic: tuple[PacketRecord, ...]
    labels: LabeledIpSpace
    hashes: dict[str, str]


def _load_inputs(config: PipelineConfig, timings: dict) -> _Inputs:
    config.validate()
    t0 = time.perf_counter()
    rules = parse_ruleset(Path(config.rules_path).read_text())
    traffic = tuple(load_traffic(config.traffic_path))
    blocklist = load_blocklist(config.blocklist_path)
    labels = label_ips(observed_sources(traffic), blocklist, config.label_policy)
    timings["parsing"] = time.perf_counter() - t0
    hashes = {
        "rules": sha256_file(config.rules_path),
        "traffic": sha256_file(config.traffic_path),
        "blocklist": sha256_file(config.blocklist_path),
    }
    return _Inputs(rules, traffic, labels, hashes)


def _evaluator(config: PipelineConfig, inputs: _Inputs) -> CachedMatchEvaluator:
    return CachedMatchEvaluator(
        traffic=inputs.traffic,
        traffic_hash=inputs.hashes["traffic"],
        labels=inputs.labels,
        engine_config=tuple(sorted(config.engine_config().items())),
        cache_dir=str(config.effective_cache_dir),
    )


def _result_digest(flagged: Iterable[str]) -> str:
    return hashlib.sha256("\n".join(sorted(flagged)).encode()).hexdigest()


def _manifest(config: PipelineConfig, inputs: _Inputs, results: dict, timings: dict,
              cache_hits: Sequence[str]) -> dict:
    return {
        "tool_version": __version__,
        "config": json.loads(config.to_json()),
        "input_hashes": inputs.hashes,
        "engine_config": config.engine_config(),
        "results": results,
        "cache_hits": sorted(cache_hits),
        "timings": {k: round(v, 6) for k, v in timings.items()},
    }


# --------------------------------------------------------------------------
# parse

def cmd_parse(rules_path: str | Path, policy: RemovablePolicy | None = None) -> dict:
    """Rule statistics: option instance counts, multi-content share,
    removable-option histogram and the size of the full removal space."""
    rules = parse_ruleset(Path(rules_path).read_text())
    policy = policy or RemovablePolicy()
    option_counts = Counter(opt.keyword for r in rules for opt in r.options)
    removable_hist = Counter(len(removable_options(r, policy)) for r in rules)
    multi = sum(1 for r in rules if is_multi_content(r))
    return {
        "rule_count": len(rules),
        "option_counts": dict(sorted(option_counts.items(), key=lambda kv: (-kv[1], kv[0]))),
        "multi_content_rules": multi,
        "multi_content_ratio": multi / len(rules) if rules else 0.0,
        "rules_without_content": sum(1 for r in rules if "content" not in r.keywords()),
        "removable_histogram": {str(k): v for k, v in sorted(removable_hist.items())},
        "removal_space": count_removal_space(rules, policy),
    }


# --------------------------------------------------------------------------
# run

def parse_descriptor(descriptor: str) -> Configuration | Path:
    """``original``, ``<keyword>``, ``content@multi``, ``a+b`` or ``mask:<file>``."""
    descriptor = descriptor.strip()
    if descriptor.startswith("mask:"):
        return Path(descriptor[5:])
    if descriptor in ("", "original"):
        return Configuration()
    steps = []
    for part in descriptor.split("+"):
        part = part.strip()
        if part == "content@multi":
            steps.append(Step("content", MULTI_CONTENT_ONLY))
        elif part and "@" not in part:
            steps.append(Step(part, ALL))
        else:
            raise ConfigError(f"bad configuration descriptor {descriptor!r}")
    return Configuration(tuple(steps))


def _safe_name(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "@+-_." else "_" for ch in label)


def cmd_run(config: PipelineConfig, descriptor: str) -> dict:
    """Evaluate one configuration; writes ``alerts/<id>.csv``,
    ``metrics/<id>.json`` and ``runs/<id>.manifest.json``.

    Returns the metrics record. The exploration ``manifest.json`` is left alone.
    """
    timings: dict[str, float] = {}
    inputs = _load_inputs(config, timings)
    parsed = parse_descriptor(descriptor)
    t0 = time.perf_counter()
    if isinstance(parsed, Path):
        ruleset = ruleset_from_masks(inputs.rules, load_mask_file(parsed), config.policy,
                                     label=f"mask-{parsed.stem}")
    else:
        ruleset = parsed.build(inputs.rules, config.policy)
    timings["rule_selection"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    flagged, alerts, hit = _evaluator(config, inputs).run(ruleset)
    timings["matching"] = time.perf_counter() - t0

    counts = confusion(flagged, inputs.labels)
    point = roc_point(counts, ruleset.label)
    row = metrics_row(counts, ruleset.label, inverted=False)
    out = Path(config.output_dir)
    name = _safe_name(ruleset.label)
    buf = io.StringIO()
    _write_alerts(buf, alerts)
    _atomic_write(out / "alerts" / f"{name}.csv", buf.getvalue())
    record = {
        "label": ruleset.label,
        "counts": asdict(counts),
        "row": asdict(row),
        "bad_classifier": point.is_bad,
        "ruleset_digest": ruleset.digest(),
        "result_digest": _result_digest(flagged),
        "cache_hit": hit,
    }
    _atomic_write(out / "metrics" / f"{name}.json", json.dumps(record, indent=2, sort_keys=True) + "\n")
    results = {ruleset.label: {"ruleset_digest": record["ruleset_digest"],
                               "result_digest": record["result_digest"],
                               "cache_key": FlaggedCache.key(ruleset.digest(), inputs.hashes["traffic"],
                                                             config.engine_config())}}
    manifest = _manifest(config, inputs, results, timings, [ruleset.label] if hit else [])
    _atomic_write(out / "runs" / f"{name}.manifest.json",
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return record


def _write_alerts(fh, alerts: Iterable[AlertRecord]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("variant_id", "sid", "src_ip", "timestamp"))
    for a in alerts:
        writer.writerow((a.variant_id, a.sid, a.src_ip, repr(a.timestamp)))


# --------------------------------------------------------------------------
# explore / report artifacts

@dataclass(frozen=True)
class _Evaluated:
    label: str
    counts: ConfusionCounts
    iteration: int
    steps: tuple[Step, ...]


def _point_json(p: RocPoint) -> dict:
    return {"label": p.variant_label, "fpr": p.fpr, "tpr": p.tpr, "inverted": p.inverted}


def _curve_csv(points: Sequence[RocPoint]) -> str:
    lines = ["fpr,tpr"] + [f"{p.fpr!r},{p.tpr!r}" for p in points]
    return "\n".join(lines) + "\n"


def _write_artifacts(out: Path, evaluated: Sequence[_Evaluated], extra: dict) -> dict:
    """Write frontier.json, curves/, area_history.csv, min_cost.csv and
    f1_table.csv from evaluated configurations alone."""
    evaluated = sorted(evaluated, key=lambda e: (e.iteration, e.label))
    raw = {e.label: roc_point(e.counts, e.label) for e in evaluated}
    oriented = {k: invert(p) if p.is_bad else p for k, p in raw.items()}
    last = max(e.iteration for e in evaluated)

    frontiers, areas = [], []
    for it in range(last + 1):
        pts = [oriented[e.label] for e in evaluated if e.iteration <= it]
        hull = roc_hull(pts)
        frontiers.append(hull)
        areas.append(frontier_area(hull))
    union = roc_hull(p for f in frontiers for p in f)

    doc = {
        "iterations": [
            {"iteration": i, "area": areas[i], "frontier": [_point_json(p) for p in f]}
            for i, f in enumerate(frontiers)
        ],
        "final_frontier": [_point_json(p) for p in frontiers[-1]],
        "union_frontier": [_point_json(p) for p in union],
        "staircase": [_point_json(p) for p in pareto_staircase(oriented.values())],
        "points": [
            {
                "label": e.label,
                "iteration": e.iteration,
                "steps": [s.label for s in e.steps],
                "counts": asdict(e.counts),
                "raw": {"fpr": raw[e.label].fpr, "tpr": raw[e.label].tpr},
                "fpr": oriented[e.label].fpr,
                "tpr": oriented[e.label].tpr,
                "inverted": oriented[e.label].inverted,
            }
            for e in evaluated
        ],
        **extra,
    }
    _atomic_write(out / "frontier.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for i, f in enumerate(frontiers):
        _atomic_write(out / "curves" / f"iteration_{i}.csv", _curve_csv(f))
    _atomic_write(out / "curves" / "union.csv", _curve_csv(union))
    _atomic_write(out / "curves" / "points.csv",
                  _curve_csv([oriented[e.label] for e in evaluated]))
    _atomic_write(out / "area_history.csv",
                  "iteration,area\n" + "".join(f"{i},{a!r}\n" for i, a in enumerate(areas)))

    original = [oriented[e.label] for e in evaluated if e.iteration == 0]
    anchors = [RocPoint(0.0, 0.0, "allow-all"), RocPoint(1.0, 1.0, "block-all")]
    first = min_cost_curve(original + anchors)
    final = min_cost_curve(list(oriented.values()) + anchors)
    lines = ["theta,min_cost_original,argmin_original,min_cost_final,argmin_final"]
    for (t, c0, l0), (_, c1, l1) in zip(first.samples, final.samples):
        lines.append(f"{t:.6f},{c0:.10f},{l0},{c1:.10f},{l1}")
    _atomic_write(out / "min_cost.csv", "\n".join(lines) + "\n")

    rows: list[MetricsRow] = []
    for e in sorted(evaluated, key=lambda e: e.label):
        rows.append(metrics_row(e.counts, e.label))
        if raw[e.label].is_bad:
            rows.append(metrics_row(e.counts, e.label, inverted=True))
    _atomic_write(out / "f1_table.csv", metrics_table_csv(rows))
    return {"areas": areas, "min_cost_area_original": first.area, "min_cost_area_final": final.area}


def _state_records(state: ExplorationState) -> list[_Evaluated]:
    return [
        _Evaluated(label, state.counts[label], state.introduced_at[label], state.configs[label].steps)
        for label in state.evaluated
    ]


def cmd_explore(config: PipelineConfig) -> ExplorationState:
    timings: dict[str, float] = {}
    inputs = _load_inputs(config, timings)
    evaluator = _evaluator(config, inputs)
    cache = FlaggedCache(config.effective_cache_dir)
    engine = config.engine_config()

    t0 = time.perf_counter()
    explore_cfg = ExploreConfig(config.epsilon, config.max_iterations, config.policy,
                                config.composition, config.workers)
    # keys present before the run are the cache hits
    before = {f.stem for f in cache.directory.glob("*.json")} if cache.directory.is_dir() else set()
    state = explore(inputs.rules, config=explore_cfg, evaluator=evaluator)
    timings["matching"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    out = Path(config.output_dir)
    results = {}
    hits = []
    for label in sorted(state.evaluated):
        key = cache.key(state.digests[label], inputs.hashes["traffic"], engine)
        cached = cache.get(key)
        if cached is None:
            cached = evaluator.run(state.configs[label].build(inputs.rules, config.policy))[:2]
        flagged, alerts = cached
        if key in before:
            hits.append(label)
        buf = io.StringIO()
        _write_alerts(buf, alerts)
        _atomic_write(out / "alerts" / f"{_safe_name(label)}.csv", buf.getvalue())
        results[label] = {
            "ruleset_digest": state.digests[label],
            "result_digest": _result_digest(flagged),
            "cache_key": key,
            "iteration": state.introduced_at[label],
            "steps": [[s.keyword, s.scope] for s in state.configs[label].steps],
        }
    extra = {
        "best_configuration": state.best_configuration(),
        "stop_reason": state.stop_reason,
    }
    _write_artifacts(out, _state_records(state), extra)
    timings["output"] = time.perf_counter() - t0
    manifest = _manifest(config, inputs, results, timings, hits)
    manifest["evaluator_calls"] = state.evaluator_calls
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return state


def cmd_report(config: PipelineConfig) -> dict:
    """Rebuild tables from ``manifest.json`` and the cache; no matching."""
    out = Path(config.output_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    config.validate(need=("traffic_path", "blocklist_path"))
    traffic = load_traffic(config.traffic_path)
    labels = label_ips(observed_sources(traffic), load_blocklist(config.blocklist_path),
                       config.label_policy)
    cache = FlaggedCache(config.effective_cache_dir)
    evaluated = []
    for label, entry in sorted(manifest["results"].items()):
        hit = cache.get(entry["cache_key"])
        if hit is None:
            raise ConfigError(f"no cached result for {label!r}; run explore first")
        steps = tuple(Step(k, s) for k, s in entry.get("steps", []))
        evaluated.append(_Evaluated(label, confusion(hit[0], labels), entry.get("iteration", 0), steps))
    frontier_doc = json.loads((out / "frontier.json").read_text()) if (out / "frontier.json").exists() else {}
    extra = {k: frontier_doc[k] for k in ("best_configuration", "stop_reason") if k in frontier_doc}
    return _write_artifacts(out, evaluated, extra)


def crosscheck(config: PipelineConfig) -> list[str]:
    """Recompute each f1-table row from its alerts CSV and the labels.

    Returns a list of mismatch descriptions; empty means consistent.
    """
    out = Path(config.output_dir)
    traffic = load_traffic(config.traffic_path)
    labels = label_ips(observed_sources(traffic), load_blocklist(config.blocklist_path),
                       config.label_policy)
    problems = []
    with open(out / "f1_table.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    for row in table:
        alerts_path = out / "alerts" / f"{_safe_name(row['variant_label'])}.csv"
        if not alerts_path.exists():
            problems.append(f"{row['variant_label']}: missing {alerts_path.name}")
            continue
        flagged = {a.src_ip for a in read_alerts_csv(alerts_path)}
        expect = metrics_row(confusion(flagged, labels), row["variant_label"],
                             inverted=row["inverted"] == "true")
        rendered = metrics_table_csv([expect]).splitlines()[1]
        actual = ",".join(row[f] for f in MetricsRow.FIELDS)
        if rendered != actual:
            problems.append(f"{row['variant_label']}: table {actual} != recomputed {rendered}")
    return problems
