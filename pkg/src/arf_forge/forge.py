"""Benchmark generation: groups of synthetic series sharing a clock,
cross-series incident events, anomaly injection, question assembly,
and a soundness gate before anything is written to disk.

Generation is deterministic in the config: every random draw comes
from a stream keyed by (seed, purpose, ordinal), so inserting a new
draw in one place does not reshuffle the rest. A benchmark directory
is only valid once ``manifest.json`` exists; the manifest is written
last so an interrupted build is never mistaken for a finished one.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from datetime import timedelta

from .anomalies import (
    AnomalyKind,
    AnomalyRecord,
    IncidentEvent,
    PlanConfig,
    inject,
    make_incident_event,
    sample_plan,
    write_events,
    write_key,
)
from .dataset import Benchmark, build_manifest, write_manifest
from .errors import ConfigError, PairingError
from .questions import (
    ALL_CATEGORIES,
    Category,
    Question,
    gen_categorization,
    gen_correlation,
    gen_end_time,
    gen_identification,
    gen_indicator,
    gen_magnitude,
    gen_presence,
    gen_start_time,
    pair_series,
    write_questions,
)
from .rng import child_rng
from .synth import SynthConfig, TimeSeries, generate_series, parse_rfc3339, write_series_csv
from .verify import check_question

MAX_GROUPS = 4096

SINGLE_SERIES_GENERATORS = {
    Category.PRESENCE: gen_presence,
    Category.IDENTIFICATION: gen_identification,
    Category.START_TIME: gen_start_time,
    Category.END_TIME: gen_end_time,
    Category.MAGNITUDE: gen_magnitude,
    Category.CATEGORIZATION: gen_categorization,
}


@dataclass
class PairingSettings:
    max_pairs_per_group: int = 10
    negative_fraction: float = 0.3

    def validate(self) -> None:
        if self.max_pairs_per_group < 1:
            raise ConfigError("max_pairs_per_group must be at least 1")
        if not 0.0 <= self.negative_fraction <= 1.0:
            raise ConfigError("negative_fraction must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "max_pairs_per_group": self.max_pairs_per_group,
            "negative_fraction": self.negative_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairingSettings":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown pairing keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class IncidentSettings:
    group_size_range: tuple[int, int] = (2, 4)
    p_event_member: float = 0.75
    max_lag_steps: int = 30
    p_zero_lag: float = 0.25

    def validate(self) -> None:
        lo, hi = self.group_size_range
        if not (1 <= lo <= hi):
            raise ConfigError("group_size_range must satisfy 1 <= lo <= hi")
        if not 0.0 <= self.p_event_member <= 1.0:
            raise ConfigError("p_event_member must be a probability")
        if not 0.0 <= self.p_zero_lag <= 1.0:
            raise ConfigError("p_zero_lag must be a probability")
        if self.max_lag_steps < 0:
            raise ConfigError("max_lag_steps must be non-negative")

    def to_dict(self) -> dict:
        return {
            "group_size_range": list(self.group_size_range),
            "p_event_member": self.p_event_member,
            "max_lag_steps": self.max_lag_steps,
            "p_zero_lag": self.p_zero_lag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IncidentSettings":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown incident keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "group_size_range" in kwargs:
            kwargs["group_size_range"] = tuple(kwargs["group_size_range"])
        return cls(**kwargs)


@dataclass
class ForgeConfig:
    seed: int = 0
    total_questions: int = 80
    synth: SynthConfig = field(default_factory=SynthConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    pairing: PairingSettings = field(default_factory=PairingSettings)
    incidents: IncidentSettings = field(default_factory=IncidentSettings)

    def validate(self) -> None:
        if self.total_questions < 1:
            raise ConfigError("total_questions must be positive")
        self.synth.validate()
        self.plan.validate()
        self.pairing.validate()
        self.incidents.validate()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "total_questions": self.total_questions,
            "synth": self.synth.to_dict(),
            "plan": self.plan.to_dict(),
            "pairing": self.pairing.to_dict(),
            "incidents": self.incidents.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForgeConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "synth" in kwargs:
            kwargs["synth"] = SynthConfig.from_dict(kwargs["synth"])
        if "plan" in kwargs:
            kwargs["plan"] = PlanConfig.from_dict(kwargs["plan"])
        if "pairing" in kwargs:
            kwargs["pairing"] = PairingSettings.from_dict(kwargs["pairing"])
        if "incidents" in kwargs:
            kwargs["incidents"] = IncidentSettings.from_dict(kwargs["incidents"])
        return cls(**kwargs)


def category_quotas(total: int) -> dict[str, int]:
    """Spread ``total`` questions over the eight categories, remainder
    to the earlier categories in canonical order."""
    base, rem = divmod(total, len(ALL_CATEGORIES))
    return {cat: base + (1 if i < rem else 0) for i, cat in enumerate(ALL_CATEGORIES)}


@dataclass
class _GroupBuild:
    members: list[TimeSeries]
    records: dict[str, list[AnomalyRecord]]
    event: IncidentEvent | None


def _build_group(config: ForgeConfig, group_index: int, first_series_index: int) -> _GroupBuild:
    gi = group_index
    seed = config.seed
    lo, hi = config.incidents.group_size_range
    size = int(child_rng(seed, "group", gi, "size").integers(lo, hi + 1))

    rng_start = child_rng(seed, "group", gi, "start")
    base = parse_rfc3339(config.synth.start_epoch)
    jitter_minutes = int(rng_start.integers(0, max(1, config.synth.start_jitter_days * 24 * 60)))
    start_time = base + timedelta(minutes=jitter_minutes)

    members = [
        generate_series(
            config.synth,
            child_rng(seed, "group", gi, "member", k),
            series_id=f"s{first_series_index + k:05d}",
            incident_group=f"g{gi:04d}",
            start_time=start_time,
        )
        for k in range(size)
    ]

    rng_roles = child_rng(seed, "group", gi, "roles")
    roles = []
    for _ in members:
        if rng_roles.random() < config.plan.p_none:
            roles.append("clean")
        elif rng_roles.random() < config.incidents.p_event_member:
            roles.append("event")
        else:
            roles.append("solo")

    participants = [m for m, role in zip(members, roles) if role == "event"]
    event = None
    event_records: dict[str, AnomalyRecord] = {}
    if len(participants) >= 2:
        kind_pool = [k for k in config.plan.kinds]
        for attempt in range(6):
            rng_ev = child_rng(seed, "group", gi, "event", attempt)
            kind = AnomalyKind(rng_ev.choice([k.value for k in kind_pool]))
            max_lag = max(config.incidents.max_lag_steps >> attempt, 1)
            lags: dict[str, int] = {participants[0].series_id: 0}
            for m in participants[1:]:
                if rng_ev.random() < config.incidents.p_zero_lag:
                    lags[m.series_id] = 0
                else:
                    sign = -1 if rng_ev.random() < 0.5 else 1
                    lags[m.series_id] = sign * int(rng_ev.integers(1, max_lag + 1))
            try:
                event, event_records = make_incident_event(
                    participants, kind, lags, config.plan, rng_ev, event_id=f"ev{gi:04d}"
                )
                break
            except PairingError:
                continue
    if event is None:
        # No shared event (too few participants, or no feasible
        # placement); marked members fall back to independent plans.
        roles = ["solo" if r == "event" else r for r in roles]

    solo_plan = dataclasses.replace(config.plan, p_none=0.0)
    records: dict[str, list[AnomalyRecord]] = {}
    out_members = []
    for k, (member, role) in enumerate(zip(members, roles)):
        if role == "clean":
            plan: list[AnomalyRecord] = []
        elif role == "event":
            plan = [event_records[member.series_id]]
        else:
            plan = sample_plan(member, solo_plan, child_rng(seed, "group", gi, "plan", k))
        injected = inject(member, plan) if plan else member
        records[member.series_id] = plan
        out_members.append(injected)
    return _GroupBuild(members=out_members, records=records, event=event)


def _eligible(series_list: list[TimeSeries], records: dict[str, list[AnomalyRecord]]) -> dict[str, list[TimeSeries]]:
    """Per-category pools of usable series, in generation order."""
    pools: dict[str, list[TimeSeries]] = {cat: [] for cat in SINGLE_SERIES_GENERATORS}
    for s in series_list:
        recs = records[s.series_id]
        pools[Category.PRESENCE].append(s)
        pools[Category.START_TIME].append(s)
        pools[Category.END_TIME].append(s)
        pools[Category.CATEGORIZATION].append(s)
        if s.n_channels >= 3:
            pools[Category.IDENTIFICATION].append(s)
        if not recs or any(r.magnitude is not None and r.magnitude > 0 for r in recs):
            pools[Category.MAGNITUDE].append(s)
    return pools


def _pair_capacity(group_sizes: list[int], pairing: PairingSettings) -> int:
    within = sum(min(g * (g - 1) // 2, pairing.max_pairs_per_group) for g in group_sizes)
    return within + int(round(pairing.negative_fraction * within))


def generate_benchmark(config: ForgeConfig, out_dir: str) -> Benchmark:
    """Generate a complete benchmark directory and return it loaded.

    Refuses to overwrite a finished benchmark (one with a manifest).
    Every question is re-derived from ground truth before any file is
    written; an IntegrityError here means a generator bug, not bad
    input.
    """
    config.validate()
    manifest_path = os.path.join(out_dir, "manifest.json")
    if os.path.exists(manifest_path):
        raise ConfigError(f"{out_dir} already holds a finished benchmark")

    quotas = category_quotas(config.total_questions)
    pair_quota = max(quotas[Category.CORRELATION], quotas[Category.INDICATOR])
    need_pairs = quotas[Category.CORRELATION] + quotas[Category.INDICATOR] > 0

    all_series: list[TimeSeries] = []
    records_by_id: dict[str, list[AnomalyRecord]] = {}
    events: list[IncidentEvent] = []
    group_sizes: list[int] = []

    gi = 0
    while True:
        pools = _eligible(all_series, records_by_id)
        enough_singles = all(
            len(pools[cat]) >= quotas[cat] for cat in SINGLE_SERIES_GENERATORS
        )
        enough_pairs = (not need_pairs) or (
            _pair_capacity(group_sizes, config.pairing) >= pair_quota
            and len(group_sizes) >= 2
        )
        if enough_singles and enough_pairs:
            break
        if gi >= MAX_GROUPS:
            raise ConfigError(
                "could not satisfy question quotas after "
                f"{MAX_GROUPS} incident groups; lower total_questions"
            )
        build = _build_group(config, gi, len(all_series))
        all_series.extend(build.members)
        records_by_id.update(build.records)
        if build.event is not None:
            events.append(build.event)
        group_sizes.append(len(build.members))
        gi += 1

    series_by_id = {s.series_id: s for s in all_series}

    # Tier-3 pairs: built once, shared by both paired categories.
    pairs: list[tuple[str, str, str]] = []
    if need_pairs:
        pairs = pair_series(
            all_series,
            config.pairing.max_pairs_per_group,
            config.pairing.negative_fraction,
            child_rng(config.seed, "pairs"),
        )
        if len(pairs) < pair_quota:
            raise ConfigError(
                f"only {len(pairs)} series pairs available for {pair_quota} questions"
            )

    questions: list[Question] = []
    q_counter = 0
    for cat in ALL_CATEGORIES:
        quota = quotas[cat]
        if quota == 0:
            continue
        rng_assign = child_rng(config.seed, "assign", cat)
        if cat in SINGLE_SERIES_GENERATORS:
            pool = _eligible(all_series, records_by_id)[cat]
            order = rng_assign.permutation(len(pool))
            chosen = [pool[int(i)] for i in order[:quota]]
            for s in chosen:
                qid = f"q{q_counter:05d}"
                q_counter += 1
                rng_q = child_rng(config.seed, "question", qid)
                questions.append(
                    SINGLE_SERIES_GENERATORS[cat](s, records_by_id[s.series_id], rng_q, qid)
                )
        else:
            order = rng_assign.permutation(len(pairs))
            chosen_pairs = [pairs[int(i)] for i in order[:quota]]
            gen = gen_correlation if cat == Category.CORRELATION else gen_indicator
            for id_1, id_2, relation in chosen_pairs:
                qid = f"q{q_counter:05d}"
                q_counter += 1
                rng_q = child_rng(config.seed, "question", qid)
                questions.append(
                    gen(
                        series_by_id[id_1],
                        records_by_id[id_1],
                        series_by_id[id_2],
                        records_by_id[id_2],
                        rng_q,
                        qid,
                        negative_pair=(relation == "cross"),
                    )
                )

    # Soundness gate: every stored answer must be re-derivable from the
    # raw series and the ground-truth records.
    for q in questions:
        check_question(q, series_by_id, records_by_id)

    os.makedirs(os.path.join(out_dir, "series"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "keys"), exist_ok=True)
    for s in all_series:
        write_series_csv(s, os.path.join(out_dir, "series", f"{s.series_id}.csv"))
    for sid in sorted(records_by_id):
        write_key(os.path.join(out_dir, "keys", f"{sid}.key.json"), sid, records_by_id[sid])
    write_events(os.path.join(out_dir, "keys", "events.json"), events)
    write_questions(os.path.join(out_dir, "questions.jsonl"), questions)

    counts = {
        "questions": len(questions),
        "series": len(all_series),
        "groups": len(group_sizes),
        "events": len(events),
        "pairs": len(pairs),
        "by_category": {cat: quotas[cat] for cat in ALL_CATEGORIES},
    }
    manifest = build_manifest(out_dir, config.to_dict(), counts)
    write_manifest(out_dir, manifest)
    return Benchmark(out_dir, manifest)
