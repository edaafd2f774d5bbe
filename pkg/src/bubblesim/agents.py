"""User agents that react to recommended items.

Two interchangeable backends: a deterministic rule-based persona agent
(the desk-scale test oracle) and an LLM-backed agent speaking the common
chat-completion wire protocol. Both emit one of six feedback actions plus
a free-text explanation.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass
from enum import Enum

import httpx

from .catalog import VideoItem, summarize_item
from .personas import UserProfile, render_profile

logger = logging.getLogger(__name__)


class FeedbackType(str, Enum):
    JUST_WATCH = "just_watch"
    WATCH_AND_LIKE = "watch_and_like"
    WATCH_AND_COMMENT = "watch_and_comment"
    WATCH_AND_COLLECT = "watch_and_collect"
    SKIP = "skip"
    DISLIKE = "dislike"

    @property
    def label(self) -> str:
        return self.value.replace("_", " ").upper()

    @property
    def is_positive(self) -> bool:
        return self in POSITIVE_FEEDBACK


POSITIVE_FEEDBACK = frozenset(
    {
        FeedbackType.JUST_WATCH,
        FeedbackType.WATCH_AND_LIKE,
        FeedbackType.WATCH_AND_COMMENT,
        FeedbackType.WATCH_AND_COLLECT,
    }
)
NEGATIVE_FEEDBACK = frozenset({FeedbackType.SKIP, FeedbackType.DISLIKE})
ALL_LABELS = tuple(fb.label for fb in FeedbackType)


@dataclass(frozen=True)
class FeedbackRecord:
    user_id: str
    item_id: str
    iteration: int
    feedback: FeedbackType
    explanation: str

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "item_id": self.item_id,
            "iteration": self.iteration,
            "feedback": self.feedback.value,
            "explanation": self.explanation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeedbackRecord":
        return cls(
            user_id=data["user_id"],
            item_id=data["item_id"],
            iteration=data["iteration"],
            feedback=FeedbackType(data["feedback"]),
            explanation=data["explanation"],
        )


@dataclass(frozen=True)
class HistoryEntry:
    item: VideoItem
    feedback: FeedbackType

    @property
    def summary(self) -> str:
        it = self.item
        return f"{it.title} [{it.category_l1} > {it.category_l2} > {it.category_l3}]"


class AgentHistory:
    """Chronological watch/feedback record for one user, bounded to a window."""

    def __init__(self, window: int = 20):
        if window < 1:
            raise ValueError("history window must be >= 1")
        self.window = window
        self._entries: list[HistoryEntry] = []

    def append(self, item: VideoItem, feedback: FeedbackType) -> None:
        self._entries.append(HistoryEntry(item, feedback))
        if len(self._entries) > self.window:
            del self._entries[: len(self._entries) - self.window]

    @property
    def entries(self) -> tuple[HistoryEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def seen_categories(self, level: int) -> set[str]:
        return {entry.item.category(level) for entry in self._entries}

    def positive_categories(self, level: int) -> set[str]:
        return {
            entry.item.category(level)
            for entry in self._entries
            if entry.feedback.is_positive
        }


def build_prompt(profile_text: str, history: AgentHistory, item_summary: str) -> str:
    """Full decision prompt: profile, windowed history, item, answer format."""
    if history.entries:
        history_block = "\n".join(
            f"- {entry.summary} -> {entry.feedback.label}" for entry in history.entries
        )
    else:
        history_block = "(no videos watched yet)"
    labels = ", ".join(ALL_LABELS)
    return (
        "You are browsing a short-video feed. Your profile:\n"
        f"{profile_text}\n\n"
        "Your recent watch history (most recent last):\n"
        f"{history_block}\n\n"
        "The next recommended video:\n"
        f"{item_summary}\n\n"
        f"Choose exactly one feedback action: {labels}.\n"
        "Reply with two lines:\n"
        "FEEDBACK: <one of the six labels>\n"
        "REASON: <one short sentence explaining your choice>"
    )


class UnparseableResponse(ValueError):
    """Model output contained no recognizable feedback label."""


_FEEDBACK_RE = re.compile(r"FEEDBACK\s*:\s*([^\n]*)", re.IGNORECASE)
_REASON_RE = re.compile(r"REASON\s*:\s*([^\n]*)", re.IGNORECASE)


def _normalize(text: str) -> str:
    return re.sub(r"[\s_]+", " ", text).strip().lower()


_LABEL_TO_TYPE = {_normalize(fb.label): fb for fb in FeedbackType}


def parse_response(text: str) -> tuple[FeedbackType, str]:
    """Extract (feedback, explanation) from raw model output.

    Tolerates surrounding prose; label matching is case-insensitive with
    spaces and underscores interchangeable.
    """
    reason_match = _REASON_RE.search(text)
    explanation = reason_match.group(1).strip() if reason_match else ""
    for match in _FEEDBACK_RE.finditer(text):
        candidate = _normalize(match.group(1))
        for normalized, feedback in _LABEL_TO_TYPE.items():
            if candidate.startswith(normalized):
                return feedback, explanation
    raise UnparseableResponse(f"no feedback label found in response: {text[:200]!r}")


# --- rule-based agent ---------------------------------------------------

# Affinity contributions. Interest-matched content dominates (this is what
# drives bubble formation); openness / variety seeking injects exploration.
BASE_AFFINITY = 0.15
INTEREST_MATCH_BONUS = 0.35
SEEN_L2_BONUS = 0.15
SEEN_L3_BONUS = 0.10
NOVELTY_BONUS = 0.10

# Conditional on positive/negative, how the mass splits across actions.
_POSITIVE_SPLIT = (
    (FeedbackType.JUST_WATCH, 0.55),
    (FeedbackType.WATCH_AND_LIKE, 0.25),
    (FeedbackType.WATCH_AND_COMMENT, 0.10),
    (FeedbackType.WATCH_AND_COLLECT, 0.10),
)
_SKIP_SHARE = 0.8  # remaining negative mass splits 80/20 skip/dislike


def affinity(profile: UserProfile, history: AgentHistory, item: VideoItem) -> float:
    """Probability in [0, 1] that the agent reacts positively to the item."""
    a = BASE_AFFINITY
    if item.category_l1 in profile.initial_interests:
        a += INTEREST_MATCH_BONUS
    if item.category_l2 in history.positive_categories(2):
        a += SEEN_L2_BONUS
    if item.category_l3 in history.positive_categories(3):
        a += SEEN_L3_BONUS
    if item.category_l1 not in history.seen_categories(1):
        if profile.motivation.kind == "personality":
            a += NOVELTY_BONUS * profile.motivation.trait("openness")
        elif profile.motivation.gratification == "BrowsingVarietySeeking":
            a += NOVELTY_BONUS
    return min(a, 1.0)


def feedback_from_uniform(a: float, u: float) -> FeedbackType:
    """Map a uniform draw u in [0, 1) to a feedback action given affinity a."""
    threshold = 0.0
    for feedback, share in _POSITIVE_SPLIT:
        threshold += a * share
        if u < threshold:
            return feedback
    if u < a + (1.0 - a) * _SKIP_SHARE:
        return FeedbackType.SKIP
    return FeedbackType.DISLIKE


def rule_decide(
    profile: UserProfile, history: AgentHistory, item: VideoItem, rng
) -> tuple[FeedbackType, str]:
    """Deterministic persona decision given the rng stream state."""
    a = affinity(profile, history, item)
    u = float(rng.random())
    return feedback_from_uniform(a, u), ""


class RuleAgent:
    """Per-user agent wrapping rule_decide with the user's own rng stream."""

    def __init__(self, profile: UserProfile, rng):
        self.profile = profile
        self.rng = rng

    def decide(self, history: AgentHistory, item: VideoItem) -> tuple[FeedbackType, str]:
        return rule_decide(self.profile, history, item, self.rng)


# --- LLM-backed agent ----------------------------------------------------

SYSTEM_MESSAGE = (
    "You are role-playing a specific short-video platform user. Stay in "
    "character: react to each recommended video exactly as that user would, "
    "given the profile, motivations, and watch history provided."
)

DEFAULT_API_KEY_ENV = "BUBBLESIM_LLM_API_KEY"


@dataclass(frozen=True)
class ChatEndpoint:
    """Descriptor for a chat-completion service (messages-array protocol)."""

    base_url: str
    model: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    temperature: float = 0.7
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "temperature": self.temperature,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "backoff_base": self.backoff_base,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChatEndpoint":
        return cls(**data)


def chat_completion(endpoint: ChatEndpoint, prompt: str, client: httpx.Client) -> str:
    headers = {}
    api_key = os.environ.get(endpoint.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    response = client.post(
        endpoint.base_url.rstrip("/") + "/chat/completions",
        headers=headers,
        json={
            "model": endpoint.model,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": prompt},
            ],
            "temperature": endpoint.temperature,
        },
        timeout=endpoint.timeout,
    )
    response.raise_for_status()
    try:
        return response.json()["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise UnparseableResponse(f"malformed completion body: {exc}") from None


def llm_decide(
    endpoint: ChatEndpoint,
    prompt: str,
    retries: int | None = None,
    transport: httpx.BaseTransport | None = None,
    _sleep=time.sleep,
) -> tuple[FeedbackType, str]:
    """Query the endpoint and parse the reply; fall back to Skip when beat.

    Transport failures and unparseable replies are retried with exponential
    backoff; after the last attempt the least-distorting action (Skip) is
    recorded and the error logged.
    """
    attempts = max(1, retries if retries is not None else endpoint.max_retries)
    last_error: Exception | None = None
    with httpx.Client(transport=transport) as client:
        for attempt in range(attempts):
            try:
                return parse_response(chat_completion(endpoint, prompt, client))
            except (httpx.HTTPError, UnparseableResponse) as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    _sleep(endpoint.backoff_base * (2**attempt))
    logger.warning("agent fell back to SKIP after %d attempts: %s", attempts, last_error)
    return FeedbackType.SKIP, "unparseable"


class LLMAgent:
    """Per-user LLM agent; keeps the raw exchange log for transcript replay."""

    def __init__(
        self,
        profile: UserProfile,
        endpoint: ChatEndpoint,
        transport: httpx.BaseTransport | None = None,
        _sleep=time.sleep,
    ):
        self.profile = profile
        self.profile_text = render_profile(profile)
        self.endpoint = endpoint
        self.exchanges: list[dict] = []  # prompt/response pairs, presentation order
        self._client = httpx.Client(transport=transport)
        self._sleep = _sleep

    def close(self) -> None:
        self._client.close()

    def decide(self, history: AgentHistory, item: VideoItem) -> tuple[FeedbackType, str]:
        prompt = build_prompt(self.profile_text, history, summarize_item(item))
        attempts = max(1, self.endpoint.max_retries)
        raw = None
        result: tuple[FeedbackType, str] | None = None
        last_error: Exception | None = None
        for attempt in range(attempts):
            try:
                raw = chat_completion(self.endpoint, prompt, self._client)
                result = parse_response(raw)
                break
            except (httpx.HTTPError, UnparseableResponse) as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    self._sleep(self.endpoint.backoff_base * (2**attempt))
        if result is None:
            logger.warning(
                "user %s fell back to SKIP after %d attempts: %s",
                self.profile.user_id,
                attempts,
                last_error,
            )
            raw = raw if raw is not None else f"<error: {last_error}>"
            result = (FeedbackType.SKIP, "unparseable")
        self.exchanges.append(
            {"item_id": item.item_id, "prompt": prompt, "response": raw}
        )
        return result


class TranscriptAgent:
    """Replays persisted raw responses in presentation order, offline."""

    def __init__(self, profile: UserProfile, responses: list[str]):
        self.profile = profile
        self._responses = list(responses)
        self._cursor = 0

    def decide(self, history: AgentHistory, item: VideoItem) -> tuple[FeedbackType, str]:
        if self._cursor >= len(self._responses):
            raise RuntimeError(f"transcript exhausted for user {self.profile.user_id}")
        raw = self._responses[self._cursor]
        self._cursor += 1
        try:
            return parse_response(raw)
        except UnparseableResponse:
            return FeedbackType.SKIP, "unparseable"
