"""Seeded artificial user profiles: demographics, initial interests, motivation.

Profiles are static for the whole simulation; interest drift is carried by
the per-user watch history, not by mutating the profile.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import Catalog

GRATIFICATIONS = (
    "SocialInteraction",
    "Entertainment",
    "InformationSeeking",
    "BrowsingVarietySeeking",
    "Escapism",
)
TRAIT_NAMES = ("openness", "conscientiousness", "extraversion", "agreeableness", "neuroticism")

GENDERS = ("female", "male")
CITY_LEVELS = (1, 2, 3, 4)
# Price bands in RMB; an income proxy that platforms can actually observe.
PHONE_PRICE_BANDS = ("<1000", "1000-2000", "2000-3000", "3000-5000", ">5000")
AGE_RANGE = (16, 60)

MOTIVATION_KINDS = ("gratification", "personality")


@dataclass(frozen=True)
class Motivation:
    """Either a uses-and-gratifications label or a five-trait personality vector."""

    gratification: str | None = None
    personality: tuple[float, ...] | None = None

    def __post_init__(self):
        if (self.gratification is None) == (self.personality is None):
            raise ValueError("motivation needs exactly one of gratification/personality")
        if self.gratification is not None and self.gratification not in GRATIFICATIONS:
            raise ValueError(f"unknown gratification {self.gratification!r}")
        if self.personality is not None:
            if len(self.personality) != len(TRAIT_NAMES):
                raise ValueError("personality must have five dimensions")
            if any(not (0.0 <= v <= 1.0) for v in self.personality):
                raise ValueError("personality dimensions must lie in [0, 1]")

    @property
    def kind(self) -> str:
        return "gratification" if self.gratification is not None else "personality"

    def trait(self, name: str) -> float:
        assert self.personality is not None
        return self.personality[TRAIT_NAMES.index(name)]

    def to_dict(self) -> dict:
        if self.gratification is not None:
            return {"kind": "gratification", "value": self.gratification}
        return {"kind": "personality", "value": list(self.personality)}

    @classmethod
    def from_dict(cls, data: dict) -> "Motivation":
        if data["kind"] == "gratification":
            return cls(gratification=data["value"])
        return cls(personality=tuple(data["value"]))


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    age: int
    gender: str
    city_level: int
    phone_price: str
    initial_interests: tuple[str, str, str]
    motivation: Motivation

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"unknown gender {self.gender!r}")
        if self.city_level not in CITY_LEVELS:
            raise ValueError(f"city_level must be 1..4, got {self.city_level}")
        if self.phone_price not in PHONE_PRICE_BANDS:
            raise ValueError(f"unknown phone price band {self.phone_price!r}")
        if not (AGE_RANGE[0] <= self.age <= AGE_RANGE[1]):
            raise ValueError(f"age {self.age} outside configured bounds {AGE_RANGE}")
        if len(set(self.initial_interests)) != 3:
            raise ValueError("initial_interests must be three distinct level-1 categories")

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "age": self.age,
            "gender": self.gender,
            "city_level": self.city_level,
            "phone_price": self.phone_price,
            "initial_interests": list(self.initial_interests),
            "motivation": self.motivation.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UserProfile":
        return cls(
            user_id=data["user_id"],
            age=data["age"],
            gender=data["gender"],
            city_level=data["city_level"],
            phone_price=data["phone_price"],
            initial_interests=tuple(data["initial_interests"]),
            motivation=Motivation.from_dict(data["motivation"]),
        )


def generate_profiles(n: int, seed: int, kind: str, catalog: Catalog) -> list[UserProfile]:
    """Draw n profiles from uniform demographic marginals, deterministically.

    Interests are sampled without replacement from the catalog's level-1
    names; personality traits are uniform on [0, 1].
    """
    if kind not in MOTIVATION_KINDS:
        raise ValueError(f"unknown motivation kind {kind!r}")
    level1 = sorted(catalog.hierarchy.level_names(1))
    if len(level1) < 3:
        raise ValueError("catalog must have at least 3 level-1 categories")
    rng = np.random.default_rng(seed)
    profiles = []
    for idx in range(n):
        interests = tuple(sorted(rng.choice(level1, size=3, replace=False).tolist()))
        if kind == "gratification":
            motivation = Motivation(gratification=GRATIFICATIONS[int(rng.integers(len(GRATIFICATIONS)))])
        else:
            motivation = Motivation(personality=tuple(float(v) for v in rng.uniform(0.0, 1.0, size=5)))
        profiles.append(
            UserProfile(
                user_id=f"u{idx:03d}",
                age=int(rng.integers(AGE_RANGE[0], AGE_RANGE[1] + 1)),
                gender=GENDERS[int(rng.integers(2))],
                city_level=int(rng.integers(1, 5)),
                phone_price=PHONE_PRICE_BANDS[int(rng.integers(len(PHONE_PRICE_BANDS)))],
                initial_interests=interests,  # type: ignore[arg-type]
                motivation=motivation,
            )
        )
    return profiles


def render_profile(profile: UserProfile) -> str:
    """Human-readable profile block used verbatim in agent prompts."""
    if profile.motivation.kind == "gratification":
        motivation = f"Primary motivation for using the platform: {profile.motivation.gratification}"
    else:
        traits = ", ".join(
            f"{name}={value:.2f}"
            for name, value in zip(TRAIT_NAMES, profile.motivation.personality)
        )
        motivation = f"Personality traits (0 to 1): {traits}"
    interests = ", ".join(profile.initial_interests)
    return (
        f"Age: {profile.age}\n"
        f"Gender: {profile.gender}\n"
        f"City level: {profile.city_level} (1 = most developed)\n"
        f"Phone price band: {profile.phone_price} RMB\n"
        f"{motivation}\n"
        f"Initial interested categories: {interests}"
    )


def save_profiles(profiles: list[UserProfile], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for profile in profiles:
            fh.write(json.dumps(profile.to_dict(), ensure_ascii=False) + "\n")


def load_profiles(path: str | Path) -> list[UserProfile]:
    profiles = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                profiles.append(UserProfile.from_dict(json.loads(line)))
    return profiles
