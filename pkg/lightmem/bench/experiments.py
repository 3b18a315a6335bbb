"""Experiment runners over synthetic corpora, with mock backends.

Every runner builds fresh engines, so a seed fully determines its report
(latency reports excepted: they measure wall time).
"""

from __future__ import annotations

import asyncio
import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Final

import numpy as np

from ..broker import MemoryBroker
from ..const import (
    CONF_CAPACITY_B,
    CONF_EMBEDDING_DIM,
    CONF_K,
    CONF_MERGE_THRESHOLD,
    CONF_SAVE_INTERVAL,
    CONF_STAGE2,
    CONF_TRIGGER_INTERVAL,
    DEFAULT_K,
    REPORT_SCHEMA_VERSION,
    ConsolidationFlag,
    Role,
    Stage2Mode,
    StressGroup,
    TargetStore,
    UpdateGapMode,
)
from ..exceptions import PreconditionError
from ..gateway import ModelGateway
from ..helpers import stable_id
from ..mock import MockResponder
from ..models import DialogueTurn, MemoryItem
from ..planner import RetrievalPlan, route_hq
from ..retrieval import RetrievedSet, stage1_coarse
from ..schemas import SCH_ENGINE_CONFIG, SZ_ANSWER, SZ_SUMMARIES
from ..stm import StmBuffer
from ..vector_index import EmbeddingConfig
from .corpus import (
    KB_USER,
    STEP_MS,
    Quiz,
    Statement,
    SyntheticCorpus,
    noise_statements,
    noise_text,
    personal_corpus,
    split_corpus,
)
from .metrics import MetricSet, score_answer
from .stats import latency_percentiles, paired_bootstrap

_LOGGER = logging.getLogger(__name__)

ACK: Final = "Noted."
DEFAULT_NOISE_RATE: Final[float] = 0.5
DEFAULT_CHECKPOINTS: Final = (100, 1_000, 5_000, 10_000)
ABLATIONS: Final = ("full", "no_stage2", "no_hq", "no_consolidation")

_DIGITS: Final = 6


@dataclass(frozen=True, kw_only=True)
class StressConfig:
    group: StressGroup
    noise_rate: float = DEFAULT_NOISE_RATE
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.noise_rate <= 1:
            raise PreconditionError(f"noise_rate not in [0, 1]: {self.noise_rate}")

    @property
    def hq_noise(self) -> bool:
        return self.group in (StressGroup.B_HQ_NOISE, StressGroup.E_CASCADE)

    @property
    def bypass(self) -> bool:
        return self.group in (StressGroup.C_NO_STAGE2, StressGroup.E_CASCADE)

    @property
    def write_noise(self) -> bool:
        return self.group in (StressGroup.D_WRITE_NOISE, StressGroup.E_CASCADE)


class NoisyWriter:
    """Wraps a mock responder, replacing a share of writer summaries by noise."""

    def __init__(self, inner: MockResponder, *, rate: float, seed: int) -> None:
        self._inner = inner
        self._rate = rate
        self._rng = np.random.default_rng([seed, 3])

    def __call__(self, role: Role, payload: dict[str, Any]) -> dict[str, Any]:
        out = self._inner(role, payload)
        if role != Role.WRITER:
            return out
        return {
            SZ_SUMMARIES: [
                noise_text(self._rng) if self._rng.random() < self._rate else s
                for s in out[SZ_SUMMARIES]
            ]
        }


@dataclass
class HqNoise:
    """Replaces a share of a plan's HQs by unrelated queries."""

    pool: Sequence[str]
    rate: float
    rng: np.random.Generator

    def perturb(self, text: str) -> str:
        if self.pool and self.rng.random() < self.rate:
            return self.pool[int(self.rng.integers(0, len(self.pool)))]
        return text


def bench_options(k: int = DEFAULT_K, **overrides: Any) -> dict[str, Any]:
    """Return a validated engine config for bench runs (mock backends)."""

    config: dict[str, Any] = {
        CONF_K: k,
        CONF_STAGE2: Stage2Mode.MODEL,
        CONF_SAVE_INTERVAL: 0,
        CONF_TRIGGER_INTERVAL: 1_000_000,  # cycles are run explicitly
    }
    return SCH_ENGINE_CONFIG(config | overrides)  # type: ignore[no-any-return]


def make_engine(
    options: dict[str, Any], *, write_noise: float = 0.0, seed: int = 0
) -> MemoryBroker:
    responder = MockResponder(
        embedding=EmbeddingConfig(dimension=options[CONF_EMBEDDING_DIM])
    )
    mock = NoisyWriter(responder, rate=write_noise, seed=seed) if write_noise else None
    return MemoryBroker(options, gateway=ModelGateway(mock=mock or responder))


class _Ingest:
    """Feeds statements to an engine's writer as acknowledged turns."""

    def __init__(self, engine: MemoryBroker) -> None:
        self.engine = engine
        self._sessions: dict[str, StmBuffer] = {}

    async def async_write(self, statement: Statement) -> None:
        session = self._sessions.setdefault(
            statement.user_id, StmBuffer(statement.user_id)
        )
        turn = DialogueTurn(
            user_id=statement.user_id,
            turn_index=0 if session.last_index is None else session.last_index + 1,
            input_text=statement.text,
            response_text=ACK,
            timestamp=statement.timestamp,
        )
        session.append(turn)
        await self.engine.writer.async_write_turn(
            turn, session, self.engine.stores.mtm
        )

    async def async_write_all(self, statements: Iterable[Statement]) -> None:
        for statement in statements:
            await self.async_write(statement)


async def async_flood(engine: MemoryBroker, statements: Iterable[Statement]) -> int:
    """Insert summaries straight into MTM, skipping merge and eviction."""

    count = 0
    for st in statements:
        turn = DialogueTurn(
            user_id=st.user_id,
            turn_index=count,
            input_text=st.text,
            response_text=ACK,
            timestamp=st.timestamp,
        )
        for summary in await engine.writer.async_summarize_turn(
            turn, StmBuffer(st.user_id)
        ):
            engine.stores.mtm.insert(
                MemoryItem(
                    item_id=stable_id("noise", st.user_id, count, summary),
                    user_id=st.user_id,
                    summary=summary,
                    embedding=await engine.embedder.async_embed(summary),
                    created_at=st.timestamp,
                    last_accessed=st.timestamp,
                )
            )
            count += 1
    return count


async def async_build_ltm(
    engine: MemoryBroker, corpus: SyntheticCorpus, *, consolidate: bool = True
) -> None:
    """Consolidate the general facts, then forget the MTM they came from."""

    if not corpus.general:
        return
    await _Ingest(engine).async_write_all(corpus.general)
    if consolidate:
        await engine.async_consolidate(now=corpus.general[-1].timestamp + STEP_MS)
    for item in engine.stores.mtm.items(KB_USER):
        engine.stores.mtm.remove(KB_USER, item.item_id)


async def async_generate(engine: MemoryBroker, text: str, r_t: RetrievedSet) -> str:
    payload = {"input": text, "context": "", "memories": r_t.summaries}
    response = await engine.gateway.async_complete(Role.GENERATOR, payload)
    return str(response.parsed[SZ_ANSWER]) if response.parsed else ""


async def async_plan(
    engine: MemoryBroker,
    quiz: Quiz,
    *,
    now: int,
    route: TargetStore | None = None,
    single_hq: bool = False,
    hq_noise: HqNoise | None = None,
) -> RetrievalPlan:
    """Plan a quiz, optionally forcing routes, one raw HQ or HQ noise."""

    if route is None and not single_hq and hq_noise is None:
        return await engine.planner.async_build_plan(
            quiz.question, StmBuffer(quiz.user_id), now=now
        )

    rules = engine.planner.rules
    draft = rules.draft(quiz.question)
    hqs = draft.hqs
    if single_hq:
        hqs = ((quiz.question, TargetStore.BOTH),)
    if hq_noise is not None:
        noisy = [hq_noise.perturb(text) for text, _ in hqs]
        hqs = tuple(
            (new, r if new == old else route_hq(new, rules.lexicon))
            for new, (old, r) in zip(noisy, hqs, strict=True)
        )
    if route is not None:
        hqs = tuple((text, route) for text, _ in hqs)

    return await engine.planner.async_plan_from_draft(
        replace(draft, hqs=hqs), quiz.user_id, now=now
    )


async def async_answer(
    engine: MemoryBroker,
    quiz: Quiz,
    *,
    now: int,
    stage2: Stage2Mode | None = None,
    **plan_kwargs: Any,
) -> str:
    plan = await async_plan(engine, quiz, now=now, **plan_kwargs)
    c = stage1_coarse(plan, engine.stores, now=now)
    r_t = await engine.retriever.async_stage2_filter(plan, c, mode=stage2, now=now)
    return await async_generate(engine, quiz.question, r_t)


def _quiz_time(corpus: SyntheticCorpus) -> int:
    stamps = [s.timestamp for s in (*corpus.statements, *corpus.general)]
    return max(stamps) + STEP_MS


def _score(
    engine: MemoryBroker, answers: Sequence[str], quizzes: Sequence[Quiz]
) -> list[MetricSet]:
    return [
        score_answer(a, p.answer, engine.embedder)
        for a, p in zip(answers, quizzes, strict=True)
    ]


def _rounded(metrics: MetricSet) -> dict[str, float]:
    return {k: round(v, _DIGITS) for k, v in metrics.as_dict().items()}


def report(experiment: str, *, seed: int, k: int, rows: list[Any]) -> dict[str, Any]:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "experiment": experiment,
        "seed": seed,
        "k": k,
        "rows": rows,
    }


def write_report(data: dict[str, Any], path: str | Path | None) -> str:
    text = json.dumps(data, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


#
# Error injection


async def async_run_stress_group(
    corpus: SyntheticCorpus, config: StressConfig, *, k: int = DEFAULT_K
) -> MetricSet:
    engine = make_engine(
        bench_options(k),
        write_noise=config.noise_rate if config.write_noise else 0.0,
        seed=config.seed,
    )
    await async_build_ltm(engine, corpus)
    await _Ingest(engine).async_write_all(corpus.statements)

    hq_noise = None
    if config.hq_noise:
        hq_noise = HqNoise(
            pool=corpus.distractor_questions,
            rate=config.noise_rate,
            rng=np.random.default_rng([config.seed, 4]),
        )

    now = _quiz_time(corpus)
    answers = [
        await async_answer(
            engine,
            quiz,
            now=now,
            stage2=Stage2Mode.BYPASS if config.bypass else None,
            hq_noise=hq_noise,
        )
        for quiz in corpus.quizzes
    ]
    return MetricSet.mean(_score(engine, answers, corpus.quizzes))


async def async_run_error_injection(
    corpus: SyntheticCorpus,
    *,
    k: int = DEFAULT_K,
    noise_rate: float = DEFAULT_NOISE_RATE,
    groups: Iterable[StressGroup] = tuple(StressGroup),
) -> dict[str, Any]:
    """Score every stress group on the same corpus under a fixed K."""

    rows = []
    for group in groups:
        config = StressConfig(group=group, noise_rate=noise_rate, seed=corpus.seed)
        metrics = await async_run_stress_group(corpus, config, k=k)
        _LOGGER.info("Group %s: f1=%.4f", group, metrics.f1)
        rows.append({"group": str(group), "metrics": _rounded(metrics)})
    return report("error-injection", seed=corpus.seed, k=k, rows=rows)


#
# MTM growth


async def async_run_growth(
    seed: int,
    *,
    checkpoints: Sequence[int] = DEFAULT_CHECKPOINTS,
    k: int = DEFAULT_K,
    facts: int = 100,
    corpus: SyntheticCorpus | None = None,
) -> dict[str, Any]:
    """Replay one growing stream, scoring both Stage-2 arms at each checkpoint.

    Merging is off so the store grows by one item per statement, and scoring
    leaves access counts and flags untouched.
    """

    if not checkpoints:
        raise PreconditionError("no checkpoints given")
    pending = sorted(set(checkpoints))
    corpus = corpus or personal_corpus(
        seed, facts=facts, distractors=2 * pending[-1]
    )
    engine = make_engine(
        bench_options(
            k, **{CONF_CAPACITY_B: max(pending[-1], 1), CONF_MERGE_THRESHOLD: 1.0}
        )
    )
    ingest = _Ingest(engine)
    user_id = corpus.quizzes[0].user_id

    rows: list[dict[str, Any]] = []
    for statement in corpus.statements:
        if not pending:
            break
        await ingest.async_write(statement)
        size = engine.stores.mtm.size(user_id)
        while pending and size >= pending[0]:
            now = statement.timestamp + STEP_MS
            full, vector_only = [], []
            for quiz in corpus.quizzes:
                plan = await async_plan(engine, quiz, now=now)
                c = stage1_coarse(plan, engine.stores, now=now, record_hits=False)
                for mode, out in (
                    (Stage2Mode.MODEL, full),
                    (Stage2Mode.BYPASS, vector_only),
                ):
                    r_t = await engine.retriever.async_stage2_filter(
                        plan, c, mode=mode, now=now
                    )
                    out.append(await async_generate(engine, quiz.question, r_t))

            full_f1 = MetricSet.mean(_score(engine, full, corpus.quizzes)).f1
            vector_f1 = MetricSet.mean(_score(engine, vector_only, corpus.quizzes)).f1
            rows.append(
                {
                    "checkpoint": pending.pop(0),
                    "reached": True,
                    "mtm_size": size,
                    "full_f1": round(full_f1, _DIGITS),
                    "vector_only_f1": round(vector_f1, _DIGITS),
                    "delta": round(full_f1 - vector_f1, _DIGITS),
                }
            )

    rows += [{"checkpoint": cp, "reached": False} for cp in pending]
    return report("growth", seed=seed, k=k, rows=rows)


#
# Update gap


async def async_run_update_gap(
    corpus: SyntheticCorpus,
    mode: UpdateGapMode,
    *,
    k: int = DEFAULT_K,
    noise_factor: int = 5,
) -> MetricSet:
    """Score a split corpus with one store-routing mode."""

    engine = make_engine(bench_options(k))
    await async_build_ltm(engine, corpus)
    await _Ingest(engine).async_write_all(corpus.statements)

    if mode == UpdateGapMode.MTM_NOISE:
        personal = sum(1 for p in corpus.quizzes if not p.general)
        await async_flood(
            engine,
            noise_statements(corpus, noise_factor * personal, seed=corpus.seed),
        )

    route = {
        UpdateGapMode.LTM_ONLY: TargetStore.LTM,
        UpdateGapMode.MTM_ONLY: TargetStore.MTM,
    }.get(mode)

    now = _quiz_time(corpus) + noise_factor * len(corpus.quizzes) * STEP_MS
    answers = [
        await async_answer(engine, quiz, now=now, route=route)
        for quiz in corpus.quizzes
    ]
    return MetricSet.mean(_score(engine, answers, corpus.quizzes))


async def async_run_update_gaps(
    corpus: SyntheticCorpus,
    *,
    modes: Iterable[UpdateGapMode] = tuple(UpdateGapMode),
    k: int = DEFAULT_K,
) -> dict[str, Any]:
    rows = []
    for mode in modes:
        metrics = await async_run_update_gap(corpus, mode, k=k)
        rows.append({"mode": str(mode), "f1": round(metrics.f1, _DIGITS)})
    return report("update-gap", seed=corpus.seed, k=k, rows=rows)


#
# Ablations and significance


async def async_ablation_scores(
    corpus: SyntheticCorpus, variant: str, *, k: int = DEFAULT_K
) -> list[MetricSet]:
    """Per-question metrics of one component ablation."""

    if variant not in ABLATIONS:
        raise PreconditionError(f"unknown ablation: {variant}")

    engine = make_engine(bench_options(k))
    await async_build_ltm(engine, corpus, consolidate=variant != "no_consolidation")
    await _Ingest(engine).async_write_all(corpus.statements)

    now = _quiz_time(corpus)
    answers = [
        await async_answer(
            engine,
            quiz,
            now=now,
            stage2=Stage2Mode.BYPASS if variant == "no_stage2" else None,
            single_hq=variant == "no_hq",
        )
        for quiz in corpus.quizzes
    ]
    return _score(engine, answers, corpus.quizzes)


async def async_run_ablation(
    corpus: SyntheticCorpus,
    *,
    variants: Iterable[str] = ABLATIONS,
    k: int = DEFAULT_K,
) -> dict[str, Any]:
    rows = []
    for variant in variants:
        scores = await async_ablation_scores(corpus, variant, k=k)
        rows.append({"variant": variant, "metrics": _rounded(MetricSet.mean(scores))})
    return report("ablation", seed=corpus.seed, k=k, rows=rows)


async def async_run_significance(
    seeds: Sequence[int],
    *,
    baseline: str = "no_stage2",
    system: str = "full",
    k: int = DEFAULT_K,
    resamples: int = 1_000,
) -> dict[str, Any]:
    """Paired bootstrap of per-question F1, pooled over the seeds' corpora."""

    if not seeds:
        raise PreconditionError("no seeds given")

    a: list[float] = []
    b: list[float] = []
    for seed in seeds:
        corpus = split_corpus(seed)
        a += [m.f1 for m in await async_ablation_scores(corpus, baseline, k=k)]
        b += [m.f1 for m in await async_ablation_scores(corpus, system, k=k)]

    result = paired_bootstrap(a, b, resamples=resamples, seed=seeds[0])
    row = {
        "baseline": baseline,
        "system": system,
        "n": len(a),
        **result.as_dict(_DIGITS),
    }
    return report("significance", seed=seeds[0], k=k, rows=[row])


#
# Latency


async def async_run_latency(
    seed: int,
    *,
    n: int = 200,
    items: int = 10_000,
    k: int = DEFAULT_K,
    flagged: int = 32,
) -> dict[str, Any]:
    """Time queries against a full MTM, then again while a cycle commits."""

    if n < 1 or items < 1:
        raise PreconditionError("n and items must be positive")

    corpus = personal_corpus(seed, facts=20, distractors=max(0, items - 20))
    engine = make_engine(bench_options(k, **{CONF_CAPACITY_B: items + 2 * n}))
    await engine.async_setup()

    for i, st in enumerate(corpus.statements):
        summary = f"user {st.user_id} said: {st.text} ; outcome: {ACK}"
        engine.stores.mtm.insert(
            MemoryItem(
                item_id=stable_id("fill", i, summary),
                user_id=st.user_id,
                summary=summary,
                embedding=await engine.embedder.async_embed(summary),
                created_at=st.timestamp,
                last_accessed=st.timestamp,
                consolidation_flag=(
                    ConsolidationFlag.NEWLY_WRITTEN
                    if i < flagged
                    else ConsolidationFlag.NONE
                ),
            )
        )

    now = _quiz_time(corpus)
    quizzes = corpus.quizzes
    baseline = []
    for i in range(n):
        quiz = quizzes[i % len(quizzes)]
        result = await engine.async_handle_query(
            quiz.user_id, quiz.question, timestamp=now + i
        )
        baseline.append(result.latency)
    await engine.async_drain()

    cycle = asyncio.create_task(engine.async_consolidate(now=now + n))
    during = []
    while not cycle.done():
        quiz = quizzes[len(during) % len(quizzes)]
        result = await engine.async_handle_query(
            quiz.user_id, quiz.question, timestamp=now + n + len(during)
        )
        during.append(result.latency.retrieval_ms)
        await asyncio.sleep(0)
    cycle_report = await cycle
    await engine.async_stop()

    row: dict[str, Any] = {
        "mtm_items": engine.stores.mtm.size(corpus.quizzes[0].user_id),
        "queries": n,
        "retrieval_ms": latency_percentiles([r.retrieval_ms for r in baseline]),
        "end_to_end_ms": latency_percentiles([r.end_to_end_ms for r in baseline]),
        "commit_ms": cycle_report.commit_ms,
        "queries_during_cycle": len(during),
    }
    if during:
        row["retrieval_ms_during_cycle"] = latency_percentiles(during)
    return report("latency", seed=seed, k=k, rows=[row])
