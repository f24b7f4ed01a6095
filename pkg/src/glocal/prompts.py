"""Prompt grammar: expansion into query sets and reverse report synthesis.

Positive queries follow ``adverb verb [effect] [location] synonym``;
negative queries follow ``adverb verb absence synonym``. Bracketed slots
are optional and contribute an empty alternative to the product. All
combinations are generated; inference later averages each set's
embeddings.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml


class GrammarError(ValueError):
    """Invalid grammar structure or degenerate query request."""


@dataclass(frozen=True)
class ClassGrammar:
    """Per-class vocabulary; effects/locations may be empty (optional slots)."""

    synonyms: tuple[str, ...]
    effects: tuple[str, ...] = ()
    locations: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.synonyms:
            raise GrammarError("class synonyms must be non-empty")


@dataclass(frozen=True)
class PromptGrammar:
    """Shared slot vocabularies plus one ClassGrammar per class, in class order."""

    class_names: tuple[str, ...]
    classes: dict[str, ClassGrammar]
    adverbs: tuple[str, ...]
    indication_verbs: tuple[str, ...]
    absence_markers: tuple[str, ...]

    def __post_init__(self):
        if not self.absence_markers:
            raise GrammarError("absence_markers must be non-empty")
        if not self.adverbs or not self.indication_verbs:
            raise GrammarError("adverbs and indication_verbs must be non-empty")
        missing = [c for c in self.class_names if c not in self.classes]
        if missing:
            raise GrammarError(f"classes missing grammar entries: {missing}")

    def for_class(self, class_name: str) -> ClassGrammar:
        try:
            return self.classes[class_name]
        except KeyError:
            raise GrammarError(f"unknown class {class_name!r}") from None


@dataclass
class PromptSet:
    """Positive/negative query texts for one class, plus averaged embeddings.

    Embeddings are filled per head space by ``embed_prompt_set``; keys are
    ("pos"|"neg", "local"|"global").
    """

    class_name: str
    positive_queries: list[str]
    negative_queries: list[str]
    embeddings: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.positive_queries or not self.negative_queries:
            raise GrammarError(f"{self.class_name}: query lists must be non-empty")


def _join(parts) -> str:
    return " ".join(p for p in parts if p)


def expand_basic(class_name: str) -> PromptSet:
    """The minimal scheme: the class name vs its negation."""
    if not class_name or not class_name.strip():
        raise GrammarError("class name is empty")
    return PromptSet(
        class_name=class_name,
        positive_queries=[class_name],
        negative_queries=["No " + class_name],
    )


def expand_detailed(grammar: PromptGrammar, class_name: str) -> PromptSet:
    """All slot combinations for one class.

    Positive count: |adverbs| * |verbs| * (|effects|+1) * (|locations|+1) * |synonyms|.
    Negative count: |adverbs| * |verbs| * |absence| * |synonyms|.
    """
    cg = grammar.for_class(class_name)
    effects = ("",) + cg.effects
    locations = ("",) + cg.locations
    positives = [
        _join(parts)
        for parts in itertools.product(grammar.adverbs, grammar.indication_verbs, effects, locations, cg.synonyms)
    ]
    negatives = [
        _join(parts)
        for parts in itertools.product(
            grammar.adverbs, grammar.indication_verbs, grammar.absence_markers, cg.synonyms
        )
    ]
    return PromptSet(class_name=class_name, positive_queries=positives, negative_queries=negatives)


def expand(grammar: PromptGrammar, class_name: str, scheme: str) -> PromptSet:
    if scheme == "basic":
        return expand_basic(class_name)
    if scheme == "detailed":
        return expand_detailed(grammar, class_name)
    raise GrammarError(f"unknown prompt scheme {scheme!r}")


def positive_count(grammar: PromptGrammar, class_name: str) -> int:
    cg = grammar.for_class(class_name)
    return (
        len(grammar.adverbs)
        * len(grammar.indication_verbs)
        * (len(cg.effects) + 1)
        * (len(cg.locations) + 1)
        * len(cg.synonyms)
    )


def negative_count(grammar: PromptGrammar, class_name: str) -> int:
    cg = grammar.for_class(class_name)
    return len(grammar.adverbs) * len(grammar.indication_verbs) * len(grammar.absence_markers) * len(cg.synonyms)


def synthesize_report(
    labels,
    grammar: PromptGrammar,
    rng_seed: int,
    k_pos: int = 1,
    k_neg: int = 1,
    max_neg_classes: int = 3,
) -> list[str]:
    """Reverse the prompt expansion: sample sentences from a label vector.

    Classes labeled 1 contribute ``k_pos`` sentences from their positive
    expansion, classes labeled 0 contribute ``k_neg`` from the negative
    expansion (at most ``max_neg_classes`` absent classes are mentioned,
    chosen at random); -1/-2 labels contribute nothing. Sentence order is
    shuffled under the seed.
    """
    labels = list(labels)
    if len(labels) != len(grammar.class_names):
        raise GrammarError(f"{len(labels)} labels for {len(grammar.class_names)} grammar classes")
    if not any(v in (0, 1) for v in labels):
        raise GrammarError("all labels uncertain or missing; nothing to synthesize")
    rng = np.random.default_rng(rng_seed)
    sentences: list[str] = []
    present = [c for c, v in zip(grammar.class_names, labels) if v == 1]
    absent = [c for c, v in zip(grammar.class_names, labels) if v == 0]
    for cname in present:
        pool = expand_detailed(grammar, cname).positive_queries
        for _ in range(k_pos):
            sentences.append(pool[int(rng.integers(len(pool)))])
    if len(absent) > max_neg_classes:
        idx = rng.choice(len(absent), size=max_neg_classes, replace=False)
        absent = [absent[i] for i in sorted(idx)]
    for cname in absent:
        pool = expand_detailed(grammar, cname).negative_queries
        for _ in range(k_neg):
            sentences.append(pool[int(rng.integers(len(pool)))])
    order = rng.permutation(len(sentences))
    return [sentences[i] for i in order]


def match_sentence(grammar: PromptGrammar, sentence: str) -> tuple[str, str] | None:
    """Identify which class expansion a sentence came from.

    Returns (class_name, "pos"|"neg") or None; trailing terminators and
    case are normalized before matching.
    """
    norm = " ".join(sentence.split()).rstrip(".!?").lower()
    for cname in grammar.class_names:
        ps = expand_detailed(grammar, cname)
        if any(norm == q.lower() for q in ps.positive_queries):
            return cname, "pos"
        if any(norm == q.lower() for q in ps.negative_queries):
            return cname, "neg"
        basic = expand_basic(cname)
        if any(norm == q.lower() for q in basic.positive_queries):
            return cname, "pos"
        if any(norm == q.lower() for q in basic.negative_queries):
            return cname, "neg"
    return None


def load_grammar(path: str | Path) -> PromptGrammar:
    """Read a grammar YAML file.

    Expected layout: top-level ``classes`` mapping each class name to
    ``synonyms`` (required) plus optional ``effects``/``locations``, and
    shared ``adverbs``, ``indication_verbs``, ``absence_markers`` lists.
    """
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "classes" not in raw:
        raise GrammarError(f"{path}: grammar file must define a top-level 'classes' mapping")
    classes = {}
    names = []
    for cname, spec in raw["classes"].items():
        spec = spec or {}
        classes[cname] = ClassGrammar(
            synonyms=tuple(spec.get("synonyms", ())),
            effects=tuple(spec.get("effects", ())),
            locations=tuple(spec.get("locations", ())),
        )
        names.append(cname)
    return PromptGrammar(
        class_names=tuple(names),
        classes=classes,
        adverbs=tuple(raw.get("adverbs", ())),
        indication_verbs=tuple(raw.get("indication_verbs", ())),
        absence_markers=tuple(raw.get("absence_markers", ())),
    )


def save_grammar(grammar: PromptGrammar, path: str | Path) -> None:
    doc = {
        "adverbs": list(grammar.adverbs),
        "indication_verbs": list(grammar.indication_verbs),
        "absence_markers": list(grammar.absence_markers),
        "classes": {
            c: {
                "synonyms": list(grammar.classes[c].synonyms),
                "effects": list(grammar.classes[c].effects),
                "locations": list(grammar.classes[c].locations),
            }
            for c in grammar.class_names
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def default_grammar() -> PromptGrammar:
    """Illustrative six-class vocabulary for the synthetic benchmark.

    Class names are deliberately neutral tokens, not clinical terms.
    """
    shared = dict(
        adverbs=("clearly", "faintly"),
        indication_verbs=("shows", "demonstrates"),
        absence_markers=("no", "no sign of"),
    )
    classes = {
        "alpha opacity": ClassGrammar(
            synonyms=("alpha opacity", "alpha shadowing"),
            effects=("new", "enlarging"),
            locations=("upper field", "mid field"),
        ),
        "beta ring": ClassGrammar(
            synonyms=("beta ring", "beta halo"),
            effects=("thin", "thick"),
            locations=("upper field",),
        ),
        "gamma streak": ClassGrammar(
            synonyms=("gamma streak", "gamma line"),
            effects=("faint", "dense"),
            locations=("mid field",),
        ),
        "delta band": ClassGrammar(
            synonyms=("delta band", "delta stripe"),
            effects=("narrow", "wide"),
            locations=("lateral field",),
        ),
        "epsilon texture": ClassGrammar(
            synonyms=("epsilon texture", "epsilon mottling"),
            effects=("coarse", "fine"),
            locations=("lower field",),
        ),
        "zeta shadow": ClassGrammar(
            synonyms=("zeta shadow", "zeta lucency"),
            effects=("subtle", "marked"),
            locations=("lower field", "mid field"),
        ),
    }
    return PromptGrammar(class_names=tuple(classes), classes=classes, **shared)
