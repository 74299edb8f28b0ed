"""Structured text prompts: "A {gender} {action} {environment}" plus negatives."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

GENDERS = ("man", "woman")
NEGATIVE_PROMPTS = (
    "ugly",
    "extra limbs",
    "poorly drawn face",
    "poorly drawn hands",
    "poorly drawn feet",
)


@dataclass
class PromptSpec:
    gender: str
    action: str
    environment: str
    negative: list = field(default_factory=lambda: list(NEGATIVE_PROMPTS))


def render_prompt(spec: PromptSpec) -> str:
    if spec.gender not in GENDERS:
        raise ValueError(f"gender must be one of {GENDERS}, got {spec.gender!r}")
    action, env = spec.action.strip(), spec.environment.strip()
    if not action:
        raise ValueError("action slot is empty")
    if not env:
        raise ValueError("environment slot is empty")
    return f"A {spec.gender} {action} {env}"


def default_negative(extras=()) -> list:
    out = list(NEGATIVE_PROMPTS)
    out.extend(e for e in extras if e not in out)
    return out


def read_table(path) -> list:
    """Non-empty, non-comment lines of a UTF-8 text table."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def _packaged(name) -> list:
    text = resources.files("humansynth").joinpath("data", name).read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


class EnvironmentTable:
    def __init__(self, indoor=None, outdoor=None, client=None):
        self.indoor = list(indoor) if indoor is not None else _packaged("environments_indoor.txt")
        self.outdoor = list(outdoor) if outdoor is not None else _packaged("environments_outdoor.txt")
        self.client = client

    @classmethod
    def from_files(cls, indoor_path=None, outdoor_path=None, client=None):
        return cls(read_table(indoor_path) if indoor_path else None,
                   read_table(outdoor_path) if outdoor_path else None, client)

    def pick(self, rng, indoor: bool) -> str:
        table = self.indoor if indoor else self.outdoor
        choice = table[int(rng.integers(0, len(table)))] if table else None
        if self.client is not None:
            kind = "indoor" if indoor else "outdoor"
            try:
                text = self.client.text(
                    f"Describe a short {kind} location phrase for a photo, starting with a preposition.",
                    seed=int(rng.integers(0, 2**31)),
                ).strip()
                if text:
                    return text
            except Exception as exc:  # any client failure falls back to the table
                log.warning("environment client failed (%s), using static table", exc)
        if choice is None:
            raise ValueError(f"no {'indoor' if indoor else 'outdoor'} environments and no client")
        return choice


def pick_environment(rng, indoor: bool, table: EnvironmentTable | None = None) -> str:
    return (table or EnvironmentTable()).pick(rng, indoor)


class ActionTable:
    """Pose class -> candidate action phrases."""

    def __init__(self, rows=None):
        if rows is None:
            rows = _packaged("actions.txt")
        self.by_class = {}
        for row in rows:
            cls, action = row.split("\t", 1)
            self.by_class.setdefault(cls.strip(), []).append(action.strip())

    @classmethod
    def from_file(cls, path):
        return cls(read_table(path))

    def pick(self, rng, pose_class: str) -> str:
        options = self.by_class.get(pose_class) or [a for v in self.by_class.values() for a in v]
        return options[int(rng.integers(0, len(options)))]
