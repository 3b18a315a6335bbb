"""Seeded synthetic dialogue corpora with planted answers.

Personal facts read "my <owner>'s <attribute> is <value>" and are asked as
"what is my <owner>'s <attribute>". Distractors swap the owner or the attribute
for a near-name ("stepsister", "nickname"), so they stay lexically close to the
question without answering it. A few echo the question's wording and tend to
outscore the planted fact on cosine alone. General facts ("the capital of
<place> is <value>") come from a separate knowledge-base user and are meant to
be consolidated.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass
from typing import Final

import numpy as np

from ..exceptions import PreconditionError

KB_USER: Final = "kb_source"  # author of the general facts
DEFAULT_USER: Final = "quiz_user"

START_MS: Final[int] = 1_700_000_000_000
STEP_MS: Final[int] = 60_000

ECHO_RATE: Final[float] = 0.05  # share of distractors worded as a question

OWNERS: Final = (
    "sister", "brother", "cousin", "uncle", "aunt", "neighbour", "friend",
    "boss", "coach", "dentist", "landlord", "nephew", "niece", "mentor",
)  # fmt: skip
ATTRIBUTES: Final = (
    "name", "job", "hometown", "car", "hobby", "pet", "team", "language",
    "school", "band", "drink", "sport",
)  # fmt: skip
NEAR_ATTRIBUTE: Final[dict[str, str]] = {
    "name": "nickname",
    "job": "jobsite",
    "hometown": "hometeam",
    "car": "carpool",
    "hobby": "hobbyist",
    "pet": "petname",
    "team": "teammate",
    "language": "languages",
    "school": "preschool",
    "band": "bandmate",
    "drink": "drinking",
    "sport": "sportswear",
}
GENERAL_TEMPLATES: Final = (
    ("the capital of {place} is {value}", "what is the capital of {place}"),
    ("the population of {place} is {value}", "what is the population of {place}"),
    ("{place} is known for {value}", "what is {place} known for"),
)

_SYLLABLES: Final = (
    "ka", "lo", "mi", "ra", "te", "su", "no", "vi", "da", "re", "lu", "po",
    "zan", "mer", "tol", "bri", "kel", "dor", "fen", "gal",
)  # fmt: skip


@dataclass(frozen=True, kw_only=True)
class Statement:
    user_id: str
    text: str
    timestamp: int


@dataclass(frozen=True, kw_only=True)
class Quiz:
    user_id: str
    question: str
    answer: str
    general: bool = False  # answered from consolidated knowledge


@dataclass(frozen=True, kw_only=True)
class SyntheticCorpus:
    seed: int
    statements: tuple[Statement, ...]  # the questioned user's own turns
    general: tuple[Statement, ...] = ()  # the knowledge-base user's turns
    quizzes: tuple[Quiz, ...] = ()
    distractor_questions: tuple[str, ...] = ()  # for HQ noise


class _Words:
    """Distinct pseudo-words from a seeded generator."""

    def __init__(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self._used: set[str] = set()

    def __call__(self) -> str:
        while True:
            count = int(self._rng.integers(2, 5))
            word = "".join(
                _SYLLABLES[int(i)]
                for i in self._rng.integers(0, len(_SYLLABLES), count)
            )
            if word not in self._used:
                self._used.add(word)
                return word


def _clock(start: int = START_MS) -> Iterator[int]:
    t = start
    while True:
        yield t
        t += STEP_MS


def fact(owner: str, attribute: str, value: str) -> str:
    return f"my {owner}'s {attribute} is {value}"


def question(owner: str, attribute: str) -> str:
    return f"what is my {owner}'s {attribute}"


def _pairs(rng: np.random.Generator, n: int) -> list[tuple[str, str]]:
    pairs = [(o, a) for o in OWNERS for a in ATTRIBUTES]
    if n > len(pairs):
        raise PreconditionError(f"at most {len(pairs)} planted facts, asked for {n}")
    order = rng.permutation(len(pairs))[:n]
    return [pairs[int(i)] for i in order]


def echo(owner: str, attribute: str, value: str) -> str:
    """A near-name fact phrased like the question, so it embeds closer to it."""
    return f"{question(owner, attribute)}? it is {value}"


def _distractor(
    rng: np.random.Generator, pair: tuple[str, str], value: str
) -> str:
    owner, attribute = pair
    near_owner = ("step" if rng.random() < 0.5 else "god") + owner
    if rng.random() < ECHO_RATE:
        if rng.random() < 0.5:
            return echo(near_owner, attribute, value)
        return echo(owner, NEAR_ATTRIBUTE[attribute], value)
    match int(rng.integers(0, 3)):
        case 0:
            return fact(near_owner, attribute, value)
        case 1:
            return fact(owner, NEAR_ATTRIBUTE[attribute], value)
        case _:
            return fact(near_owner, NEAR_ATTRIBUTE[attribute], value)


def personal_corpus(
    seed: int,
    *,
    facts: int = 20,
    distractors: int = 100,
    user_id: str = DEFAULT_USER,
) -> SyntheticCorpus:
    """Planted facts first, then distractors about the same owners and attributes."""

    rng = np.random.default_rng(seed)
    words = _Words(rng)
    clock = _clock()

    planted = _pairs(rng, facts)
    values = [words() for _ in planted]

    statements = [
        Statement(user_id=user_id, text=fact(o, a, v), timestamp=next(clock))
        for (o, a), v in zip(planted, values, strict=True)
    ]
    for _ in range(distractors):
        pair = planted[int(rng.integers(0, len(planted)))]
        statements.append(
            Statement(
                user_id=user_id,
                text=_distractor(rng, pair, words()),
                timestamp=next(clock),
            )
        )

    quizzes = tuple(
        Quiz(user_id=user_id, question=question(o, a), answer=v)
        for (o, a), v in zip(planted, values, strict=True)
    )
    unasked = [(o, a) for o in OWNERS for a in ATTRIBUTES if (o, a) not in planted]
    return SyntheticCorpus(
        seed=seed,
        statements=tuple(statements),
        quizzes=quizzes,
        distractor_questions=tuple(question(o, a) for o, a in unasked),
    )


def split_corpus(
    seed: int,
    *,
    recent: int = 10,
    consolidated: int = 10,
    distractors: int = 30,
    user_id: str = DEFAULT_USER,
) -> SyntheticCorpus:
    """Recent personal facts (MTM only) plus general facts meant for LTM."""

    base = personal_corpus(
        seed, facts=recent, distractors=distractors, user_id=user_id
    )

    rng = np.random.default_rng([seed, 1])
    words = _Words(rng)
    clock = _clock(START_MS - consolidated * STEP_MS)  # written before the user's

    general = []
    quizzes = []
    for i in range(consolidated):
        statement, ask = GENERAL_TEMPLATES[i % len(GENERAL_TEMPLATES)]
        place, value = words(), words()
        general.append(
            Statement(
                user_id=KB_USER,
                text=statement.format(place=place, value=value),
                timestamp=next(clock),
            )
        )
        quizzes.append(
            Quiz(
                user_id=user_id,
                question=ask.format(place=place),
                answer=value,
                general=True,
            )
        )

    return SyntheticCorpus(
        seed=seed,
        statements=base.statements,
        general=tuple(general),
        quizzes=base.quizzes + tuple(quizzes),
        distractor_questions=base.distractor_questions,
    )


def noise_statements(
    corpus: SyntheticCorpus, count: int, *, seed: int
) -> list[Statement]:
    """Near-duplicates of the asked facts with wrong values (MTM saturation)."""

    rng = np.random.default_rng([seed, 2])
    words = _Words(rng)
    last = max((s.timestamp for s in corpus.statements), default=START_MS)
    personal = [p for p in corpus.quizzes if not p.general]

    out = []
    for i in range(count):
        quiz = personal[int(rng.integers(0, len(personal)))]
        owner, attribute = quiz.question.removeprefix("what is my ").split("'s ")
        text = (
            fact(owner, attribute, words())
            if rng.random() < 0.5
            else _distractor(rng, (owner, attribute), words())
        )
        out.append(
            Statement(
                user_id=quiz.user_id, text=text, timestamp=last + (i + 1) * STEP_MS
            )
        )
    return out


def noise_text(rng: np.random.Generator, words: int = 6) -> str:
    """A seeded string of pseudo-words (injected writer noise)."""
    gen = _Words(rng)
    return " ".join(gen() for _ in range(words))
