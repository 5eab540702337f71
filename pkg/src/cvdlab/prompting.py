"""Prompt construction, few-shot example selection, and output parsing.

Prompts are pure string functions: same inputs, same bytes. Code bodies are
inserted verbatim (no escaping), and every prompt ends with the bare cue
"Label: " so the model's continuation is the label word itself.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Sequence

from .corpus import CodeSample
from .index import FlatIndex

INSTRUCTION = (
    "Classify the source code into Vulnerable or Safe, "
    "and return the answer as the corresponding label."
)
EXAMPLES_SUFFIX = " Here are some examples:"
LABEL_WORDS = {0: "Safe", 1: "Vulnerable"}
DEFAULT_SHOTS = 6  # 3 vulnerable + 3 safe
DEFAULT_RAG_K = 6

STRATEGIES = ("random-balanced", "same-cwe", "rag")

_LABEL_RE = re.compile(r"\b(vulnerable|safe)\b", re.IGNORECASE)


@dataclass(frozen=True)
class RenderedPrompt:
    """Final prompt text plus the template that produced it."""

    text: str
    template_id: str  # "zero-shot" or "few-shot"


@dataclass
class FewShotSelection:
    """Ordered examples chosen for one test sample.

    `examples` pairs each sample with its label word. `degraded` is set
    when a strategy could not fully honor its own rule (e.g. too few
    same-category matches) and had to fall back to random picks.
    """

    examples: list[tuple[CodeSample, str]]
    strategy: str
    seed: int | None = None
    distances: list[float] | None = None
    degraded: bool = False

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if not self.examples:
            raise ValueError("selection must contain at least one example")
        for sample, word in self.examples:
            if word != LABEL_WORDS[sample.label]:
                raise ValueError(f"label word {word!r} does not match label {sample.label} of {sample.id!r}")
        if self.strategy in ("random-balanced", "same-cwe"):
            labels = sorted(s.label for s, _ in self.examples)
            if labels != [0, 0, 0, 1, 1, 1]:
                raise ValueError(f"{self.strategy} selection must hold 3 vulnerable + 3 safe examples")


def render_zero_shot(code: str) -> RenderedPrompt:
    """Build the instruction-only prompt for one code snippet."""
    if not code:
        raise ValueError("cannot render a prompt for empty code")
    return RenderedPrompt(f"{INSTRUCTION}\nCode: {code}\nLabel: ", "zero-shot")


def render_few_shot(code: str, selection: FewShotSelection) -> RenderedPrompt:
    """Build the with-examples prompt: instruction, example blocks, test block."""
    if not code:
        raise ValueError("cannot render a prompt for empty code")
    selection.validate()
    parts = [INSTRUCTION + EXAMPLES_SUFFIX + "\n"]
    for sample, word in selection.examples:
        parts.append(f"Code: {sample.code}\nLabel: {word}\n")
    parts.append(f"Code: {code}\nLabel: ")
    return RenderedPrompt("".join(parts), "few-shot")


def _class_pools(
    train: Sequence[CodeSample], exclude_id: str | None
) -> tuple[list[CodeSample], list[CodeSample]]:
    vulnerable = [s for s in train if s.label == 1 and s.id != exclude_id]
    safe = [s for s in train if s.label == 0 and s.id != exclude_id]
    if len(vulnerable) < 3:
        raise ValueError(f"need at least 3 vulnerable examples to select from, have {len(vulnerable)}")
    if len(safe) < 3:
        raise ValueError(f"need at least 3 safe examples to select from, have {len(safe)}")
    return vulnerable, safe


def select_random_balanced(
    train: Sequence[CodeSample], seed: int, exclude_id: str | None = None
) -> FewShotSelection:
    """Pick 3 vulnerable + 3 safe examples uniformly, then shuffle the order."""
    vulnerable, safe = _class_pools(train, exclude_id)
    rng = random.Random(seed)
    chosen = rng.sample(vulnerable, 3) + rng.sample(safe, 3)
    rng.shuffle(chosen)
    selection = FewShotSelection(
        examples=[(s, LABEL_WORDS[s.label]) for s in chosen],
        strategy="random-balanced",
        seed=seed,
    )
    selection.validate()
    return selection


def select_same_cwe(
    train: Sequence[CodeSample],
    cwe: str | None,
    seed: int,
    exclude_id: str | None = None,
) -> FewShotSelection:
    """Pick 3 vulnerable examples sharing the test sample's weakness category.

    When fewer than 3 matches exist, the deficit is filled from random
    vulnerable samples and the selection is flagged degraded. The 3 safe
    examples are always random.
    """
    vulnerable, safe = _class_pools(train, exclude_id)
    rng = random.Random(seed)
    matches = [s for s in vulnerable if cwe is not None and s.cwe == cwe]
    degraded = len(matches) < 3
    if degraded:
        others = [s for s in vulnerable if s not in matches]
        chosen_vuln = list(matches) + rng.sample(others, 3 - len(matches))
    else:
        chosen_vuln = rng.sample(matches, 3)
    chosen = chosen_vuln + rng.sample(safe, 3)
    rng.shuffle(chosen)
    selection = FewShotSelection(
        examples=[(s, LABEL_WORDS[s.label]) for s in chosen],
        strategy="same-cwe",
        seed=seed,
        degraded=degraded,
    )
    selection.validate()
    return selection


def select_rag(
    index: FlatIndex,
    query_embedding,
    train: Sequence[CodeSample],
    k: int = DEFAULT_RAG_K,
    exclude_id: str | None = None,
) -> FewShotSelection:
    """Pick the k nearest training examples, kept in nearest-first order."""
    by_id = {s.id: s for s in train}
    hits = index.query(query_embedding, k, exclude_id=exclude_id)
    examples = []
    for sample_id, _ in hits:
        if sample_id not in by_id:
            raise ValueError(f"index id {sample_id!r} is not in the training collection")
        sample = by_id[sample_id]
        examples.append((sample, LABEL_WORDS[sample.label]))
    selection = FewShotSelection(
        examples=examples,
        strategy="rag",
        distances=[d for _, d in hits],
    )
    selection.validate()
    return selection


def parse_label(text: str) -> int | None:
    """Map model output to 0/1 via the first whole-word label mention.

    Scans case-insensitively for "vulnerable" or "safe" as whole words;
    the first hit decides. Returns None when neither word appears, which
    callers treat as an unparseable (but non-fatal) outcome.
    """
    if not text:
        return None
    m = _LABEL_RE.search(text)
    if m is None:
        return None
    return 1 if m.group(1).lower() == "vulnerable" else 0
