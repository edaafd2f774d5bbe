"""The closed loop: cold-start slates, agent feedback, weighted retraining,
model-driven recommendation, iterated with full logging.

Every source of randomness draws from a stream derived from (config seed,
purpose tag, user index), so runs with the rule backend are bit-reproducible
regardless of cross-user execution order.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import (
    AgentHistory,
    ChatEndpoint,
    FeedbackRecord,
    LLMAgent,
    RuleAgent,
    TranscriptAgent,
)
from .catalog import Catalog, save_catalog
from .metrics import (
    WATCH_MODES,
    WINDOW_MODES,
    compute_metrics,
    write_metrics_csv,
    write_summary_csv,
)
from .personas import MOTIVATION_KINDS, UserProfile, generate_profiles, save_profiles
from .recommender import (
    CSCMR_VALUES,
    FMModel,
    LABEL_MODES,
    MFModel,
    STRATEGIES,
    cold_start_slate,
    feedback_to_sample,
    recommend,
    save_checkpoint,
    train,
)

logger = logging.getLogger(__name__)

MODEL_KINDS = ("mf", "fm")
BACKENDS = ("rule", "llm", "transcript")

# rng stream tags; never reuse across purposes
_STREAM_MODEL = 1
_STREAM_COLDSTART = 2
_STREAM_AGENT = 3
_STREAM_TRAIN = 4

INCOMPLETE_SENTINEL = ".incomplete"


class SimulationError(RuntimeError):
    """Runtime failure inside a simulation (e.g. candidate exhaustion)."""


class ConfigError(ValueError):
    """Invalid simulation configuration."""


@dataclass(frozen=True)
class TrainingConfig:
    dim: int = 16
    lr: float = 0.05
    reg: float = 1e-4
    epochs: int = 5
    init_scale: float = 0.1
    label_mode: str = "label-flip"
    cumulative: bool = True

    def __post_init__(self):
        if self.dim < 1 or self.epochs < 0:
            raise ConfigError("dim must be >= 1 and epochs >= 0")
        if self.label_mode not in LABEL_MODES:
            raise ConfigError(f"label_mode must be one of {LABEL_MODES}")


@dataclass(frozen=True)
class LLMSettings:
    base_url: str = ""
    model: str = ""
    api_key_env: str = "BUBBLESIM_LLM_API_KEY"
    temperature: float = 0.7
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    parallelism: int = 4

    def endpoint(self) -> ChatEndpoint:
        return ChatEndpoint(
            base_url=self.base_url,
            model=self.model,
            api_key_env=self.api_key_env,
            temperature=self.temperature,
            timeout=self.timeout,
            max_retries=self.max_retries,
            backoff_base=self.backoff_base,
        )


@dataclass(frozen=True)
class SimulationConfig:
    n_users: int = 20
    items_per_iteration: int = 5
    n_iterations: int = 20
    model: str = "mf"
    strategy: str = "default"
    cscmr: int = 50
    motivation: str = "gratification"
    backend: str = "rule"
    seed: int = 0
    history_window: int = 20
    metric_window: str = "per_iteration"
    watch_mode: str = "positive"
    save_transcripts: bool = True
    save_checkpoints: bool = False
    training: TrainingConfig = field(default_factory=TrainingConfig)
    llm: LLMSettings = field(default_factory=LLMSettings)

    def __post_init__(self):
        if min(self.n_users, self.items_per_iteration, self.n_iterations) < 1:
            raise ConfigError("n_users, items_per_iteration, n_iterations must be positive")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {tuple(STRATEGIES)}")
        if self.cscmr not in CSCMR_VALUES:
            raise ConfigError(f"cscmr must be one of {CSCMR_VALUES}")
        if self.motivation not in MOTIVATION_KINDS:
            raise ConfigError(f"motivation must be one of {MOTIVATION_KINDS}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.history_window < 1:
            raise ConfigError("history_window must be >= 1")
        if self.metric_window not in WINDOW_MODES:
            raise ConfigError(f"metric_window must be one of {WINDOW_MODES}")
        if self.watch_mode not in WATCH_MODES:
            raise ConfigError(f"watch_mode must be one of {WATCH_MODES}")
        if self.backend == "llm" and not (self.llm.base_url and self.llm.model):
            raise ConfigError("llm backend requires llm.base_url and llm.model")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "training" in data and isinstance(data["training"], dict):
            extra = set(data["training"]) - set(TrainingConfig.__dataclass_fields__)
            if extra:
                raise ConfigError(f"unknown training fields: {sorted(extra)}")
            data["training"] = TrainingConfig(**data["training"])
        if "llm" in data and isinstance(data["llm"], dict):
            extra = set(data["llm"]) - set(LLMSettings.__dataclass_fields__)
            if extra:
                raise ConfigError(f"unknown llm fields: {sorted(extra)}")
            data["llm"] = LLMSettings(**data["llm"])
        return cls(**data)


@dataclass(frozen=True)
class SlateEntry:
    iteration: int
    user_id: str
    items: tuple

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "user_id": self.user_id, "items": list(self.items)}

    @classmethod
    def from_dict(cls, data: dict) -> "SlateEntry":
        return cls(data["iteration"], data["user_id"], tuple(data["items"]))


@dataclass
class RunLog:
    config: SimulationConfig
    profiles: list
    records: list
    slates: list
    metrics: list
    summary: list
    transcripts: list = field(default_factory=list)
    final_model: object = None


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _build_model(config: SimulationConfig, profiles, catalog: Catalog):
    t = config.training
    if config.model == "mf":
        return MFModel.init(
            [p.user_id for p in profiles],
            [item.item_id for item in catalog.items],
            dim=t.dim,
            seed=[config.seed, _STREAM_MODEL],
            init_scale=t.init_scale,
        )
    return FMModel.init(profiles, catalog, dim=t.dim, seed=[config.seed, _STREAM_MODEL],
                        init_scale=t.init_scale)


def _build_agents(config: SimulationConfig, profiles, transport, transcripts):
    agents = {}
    for idx, profile in enumerate(profiles):
        if config.backend == "rule":
            agents[profile.user_id] = RuleAgent(
                profile, _stream(config.seed, _STREAM_AGENT, idx)
            )
        elif config.backend == "llm":
            agents[profile.user_id] = LLMAgent(profile, config.llm.endpoint(), transport)
        else:
            responses = [
                t["response"] for t in transcripts if t["user_id"] == profile.user_id
            ]
            agents[profile.user_id] = TranscriptAgent(profile, responses)
    return agents


def run(
    config: SimulationConfig,
    catalog: Catalog,
    transport=None,
    replay_transcripts: list | None = None,
) -> RunLog:
    """Execute the full feedback loop and return the complete run log.

    `transport` is handed to LLM agents (tests inject mocks);
    `replay_transcripts` feeds the offline transcript backend.
    """
    needed = config.n_iterations * config.items_per_iteration
    if len(catalog) < needed:
        raise SimulationError(
            f"catalog has {len(catalog)} items but the run needs {needed} per user"
        )
    profiles = generate_profiles(config.n_users, config.seed, config.motivation, catalog)
    model = _build_model(config, profiles, catalog)
    strategy = STRATEGIES[config.strategy]
    agents = _build_agents(config, profiles, transport, replay_transcripts or [])
    histories = {p.user_id: AgentHistory(config.history_window) for p in profiles}
    shown: dict = {p.user_id: set() for p in profiles}
    profile_by_id = {p.user_id: p for p in profiles}

    records: list[FeedbackRecord] = []
    slates: list[SlateEntry] = []
    transcripts: list[dict] = []
    all_samples: list = []

    parallel = config.backend == "llm" and config.llm.parallelism > 1

    def session(profile: UserProfile, slate, iteration: int) -> list[FeedbackRecord]:
        # items presented in series; each response lands in the history
        # before the next item is shown
        agent = agents[profile.user_id]
        history = histories[profile.user_id]
        out = []
        for item_id in slate:
            item = catalog.by_id[item_id]
            feedback, explanation = agent.decide(history, item)
            history.append(item, feedback)
            out.append(
                FeedbackRecord(profile.user_id, item_id, iteration, feedback, explanation)
            )
        return out

    for iteration in range(config.n_iterations):
        slate_map = {}
        for idx, profile in enumerate(profiles):
            if iteration == 0:
                slate = cold_start_slate(
                    profile,
                    catalog,
                    config.cscmr,
                    config.items_per_iteration,
                    _stream(config.seed, _STREAM_COLDSTART, idx),
                )
            else:
                slate = recommend(
                    model,
                    profile,
                    config.items_per_iteration,
                    shown[profile.user_id],
                    catalog,
                )
            slate_map[profile.user_id] = slate
            slates.append(SlateEntry(iteration, profile.user_id, tuple(slate)))

        if parallel:
            with ThreadPoolExecutor(max_workers=config.llm.parallelism) as pool:
                futures = [
                    pool.submit(session, p, slate_map[p.user_id], iteration)
                    for p in profiles
                ]
                results = [f.result() for f in futures]
        else:
            results = [session(p, slate_map[p.user_id], iteration) for p in profiles]

        for profile, session_records in zip(profiles, results):
            records.extend(session_records)
            shown[profile.user_id].update(r.item_id for r in session_records)

        if config.backend == "llm":
            for profile in profiles:
                agent = agents[profile.user_id]
                if config.save_transcripts:
                    for position, exchange in enumerate(agent.exchanges):
                        transcripts.append(
                            {
                                "user_id": profile.user_id,
                                "iteration": iteration,
                                "position": position,
                                **exchange,
                            }
                        )
                agent.exchanges.clear()

        new_samples = []
        for record in records[-config.n_users * config.items_per_iteration :]:
            features = ()
            if config.model == "fm":
                features = model.features_for(profile_by_id[record.user_id], record.item_id)
            sample = feedback_to_sample(
                record,
                strategy,
                config.training.label_mode,
                user_index=model.user_index,
                item_index=model.item_index,
                features=features,
            )
            if sample is not None:
                new_samples.append(sample)
        all_samples.extend(new_samples)
        train_set = all_samples if config.training.cumulative else new_samples
        if train_set:
            train(
                model,
                train_set,
                epochs=config.training.epochs,
                lr=config.training.lr,
                reg=config.training.reg,
                seed=[config.seed, _STREAM_TRAIN, iteration],
            )
        else:
            logger.info("iteration %d produced no trainable samples", iteration)

    for agent in agents.values():
        close = getattr(agent, "close", None)
        if close is not None:
            close()

    metric_rows, summary_rows = compute_metrics(
        records,
        [p.user_id for p in profiles],
        catalog,
        window=config.metric_window,
        watch=config.watch_mode,
    )
    return RunLog(
        config=config,
        profiles=profiles,
        records=records,
        slates=slates,
        metrics=metric_rows,
        summary=summary_rows,
        transcripts=transcripts,
        final_model=model,
    )


def audit_run_log(run_log: RunLog) -> list[str]:
    """Check the no-repeat and slate-size invariants; returns violations."""
    problems = []
    k = run_log.config.items_per_iteration
    slate_lookup = {(s.iteration, s.user_id): set(s.items) for s in run_log.slates}
    for entry in run_log.slates:
        if len(entry.items) != k:
            problems.append(
                f"slate ({entry.iteration}, {entry.user_id}) has {len(entry.items)} items"
            )
    per_pair: dict = {}
    seen_per_user: dict = {}
    for record in run_log.records:
        per_pair[(record.iteration, record.user_id)] = (
            per_pair.get((record.iteration, record.user_id), 0) + 1
        )
        key = slate_lookup.get((record.iteration, record.user_id), set())
        if record.item_id not in key:
            problems.append(
                f"record ({record.iteration}, {record.user_id}, {record.item_id}) "
                "not in that iteration's slate"
            )
        seen = seen_per_user.setdefault(record.user_id, set())
        if record.item_id in seen:
            problems.append(
                f"item {record.item_id} shown to {record.user_id} more than once"
            )
        seen.add(record.item_id)
    for pair, count in per_pair.items():
        if count != k:
            problems.append(f"(iteration, user) {pair} has {count} records, expected {k}")
    return problems


# --- persistence -----------------------------------------------------------------


def persist_run(run_log: RunLog, out_dir: str | Path, catalog: Catalog | None = None) -> Path:
    """Write the run directory artifacts. Passing the catalog stores a copy
    so the run is self-contained for later metric recomputation."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if catalog is not None:
        save_catalog(catalog, out / "catalog.jsonl")
    (out / "config.json").write_text(
        json.dumps(run_log.config.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    save_profiles(run_log.profiles, out / "profiles.jsonl")
    with (out / "records.jsonl").open("w", encoding="utf-8") as fh:
        for record in run_log.records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
    with (out / "slates.jsonl").open("w", encoding="utf-8") as fh:
        for entry in run_log.slates:
            fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")
    write_metrics_csv(run_log.metrics, out / "metrics.csv")
    write_summary_csv(run_log.summary, out / "summary.csv")
    if run_log.transcripts:
        tdir = out / "transcripts"
        tdir.mkdir(exist_ok=True)
        with (tdir / "transcripts.jsonl").open("w", encoding="utf-8") as fh:
            for entry in run_log.transcripts:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
    if run_log.config.save_checkpoints and run_log.final_model is not None:
        save_checkpoint(run_log.final_model, out / "model_final.json")
    return out


def load_records(path: str | Path) -> list[FeedbackRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(FeedbackRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SimulationError(f"records.jsonl line {line_no}: {exc}") from None
    return records


def load_slates(path: str | Path) -> list[SlateEntry]:
    slates = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                slates.append(SlateEntry.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SimulationError(f"slates.jsonl line {line_no}: {exc}") from None
    return slates


def load_transcripts(path: str | Path) -> list[dict]:
    entries = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(json.loads(line))
    return entries


# --- sweeps ------------------------------------------------------------------------

SWEEP_AXES = {
    "cscmr": "cscmr",
    "strategy": "strategy",
    "motivation": "motivation",
    "model": "model",
}

SWEEP_COLUMNS = (
    "axis", "value", "seed", "iteration",
    "mean_entropy_l1", "mean_entropy_l2", "mean_entropy_l3",
    "mean_satisfaction",
    "bubble_proportion_l1", "bubble_proportion_l2", "bubble_proportion_l3",
)


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: str
    seed: int
    iteration: int
    mean_entropy: tuple  # levels 1..3
    mean_satisfaction: float
    bubble_proportion: tuple  # levels 1..3


@dataclass
class SweepReport:
    axis: str
    values: list
    seeds: list
    rows: list
    failures: list  # (value, seed, message)
    run_dirs: list


def _summary_to_sweep_rows(axis: str, value, seed: int, summary) -> list[SweepRow]:
    by_iter: dict = {}
    for row in summary:
        by_iter.setdefault(row.iteration, {})[row.level] = row
    rows = []
    for iteration in sorted(by_iter):
        levels = by_iter[iteration]
        rows.append(
            SweepRow(
                axis=axis,
                value=str(value),
                seed=seed,
                iteration=iteration,
                mean_entropy=tuple(levels[l].mean_entropy for l in (1, 2, 3)),
                mean_satisfaction=levels[1].mean_satisfaction,
                bubble_proportion=tuple(levels[l].bubble_proportion for l in (1, 2, 3)),
            )
        )
    return rows


def run_sweep(
    base: SimulationConfig,
    axis: str,
    values,
    seeds,
    catalog: Catalog,
    out_root: str | Path | None = None,
    transport=None,
) -> SweepReport:
    """One run per (value, seed); failures are recorded, not fatal."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {tuple(SWEEP_AXES)}")
    if not list(seeds):
        raise ConfigError("seeds list must not be empty")
    if not list(values):
        raise ConfigError("values list must not be empty")
    report = SweepReport(axis=axis, values=list(values), seeds=list(seeds),
                         rows=[], failures=[], run_dirs=[])
    for value in values:
        for seed in seeds:
            try:
                config = replace(base, **{SWEEP_AXES[axis]: value, "seed": seed})
                run_log = run(config, catalog, transport=transport)
            except (SimulationError, ConfigError) as exc:
                logger.warning("sweep run %s=%r seed=%d failed: %s", axis, value, seed, exc)
                report.failures.append((str(value), seed, str(exc)))
                continue
            if out_root is not None:
                run_dir = Path(out_root) / f"{axis}_{value}_seed{seed}"
                persist_run(run_log, run_dir, catalog=catalog)
                report.run_dirs.append(str(run_dir))
            report.rows.extend(_summary_to_sweep_rows(axis, value, seed, run_log.summary))
    return report


def write_sweep_summary_csv(report: SweepReport, path: str | Path) -> None:
    import csv

    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in report.rows:
            writer.writerow(
                [row.axis, row.value, row.seed, row.iteration,
                 *row.mean_entropy, row.mean_satisfaction, *row.bubble_proportion]
            )


def sweep_aggregates(report: SweepReport) -> list[dict]:
    """Mean entropy/satisfaction trajectories per axis value, averaged over seeds."""
    grouped: dict = {}
    for row in report.rows:
        grouped.setdefault((row.value, row.iteration), []).append(row)
    out = []
    for (value, iteration), rows in sorted(grouped.items()):
        out.append(
            {
                "value": value,
                "iteration": iteration,
                "mean_entropy_l1": sum(r.mean_entropy[0] for r in rows) / len(rows),
                "mean_satisfaction": sum(r.mean_satisfaction for r in rows) / len(rows),
            }
        )
    return out
