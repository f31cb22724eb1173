"""Lexicon, templates and prompt generation for the six agreement structures.

Every surface form is a single word-level token, so swapping a subject's
number never changes the length of a prompt.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InsufficientCombinations, InvalidFlag, IoFailure, ValidationError

SG, PL = "sg", "pl"
NUMBERS = (SG, PL)

START = "The"
DET = "the"
COMPLEMENTIZER = "that"
CONJUNCTION = "and"
TERMINATOR = "."
FUNCTION_WORDS = (TERMINATOR, START, DET, COMPLEMENTIZER, CONJUNCTION)

# Candidate pools; build_lexicon samples a seeded subset of each.
_ANIMATE_POOL = (
    "athlete", "lawyer", "friend", "farmer", "parent", "author", "mother",
    "father", "kid", "teacher", "doctor", "pilot", "senator", "officer",
    "banker", "dancer", "singer", "painter", "surgeon", "manager", "student",
    "clerk", "nurse", "soldier",
)
_INANIMATE_POOL = ("car", "table", "tree", "house", "bridge", "tower", "window", "garden")
_VERB_POOL = (
    "confuse", "like", "admire", "avoid", "approve", "love", "hate", "know",
    "praise", "trust", "blame", "greet", "thank", "help", "hire", "meet",
    "mock", "recall", "adore", "fear", "ignore", "insult", "amuse", "annoy",
    "distract", "encourage", "resent", "warn",
)
_ADVERB_POOL = (
    "gently", "openly", "deliberately", "quickly", "quietly", "rarely", "often",
    "clearly", "truly", "certainly", "suddenly", "secretly", "probably",
    "honestly", "really", "calmly",
)
_PREPOSITION_POOL = ("behind", "near", "beside", "above", "below", "under", "around", "before")

N_ANIMATE, N_INANIMATE, N_VERBS, N_ADVERBS, N_PREPOSITIONS = 16, 4, 20, 10, 5


@dataclass(frozen=True)
class NounLexeme:
    lemma: str
    surface_sg: str
    surface_pl: str
    animate: bool = True  # animate nouns may be subjects; all nouns may be attractors

    def __post_init__(self):
        if self.surface_sg == self.surface_pl:
            raise ValidationError(f"noun {self.lemma!r} has identical sg/pl forms")

    def form(self, number: str) -> str:
        return self.surface_sg if number == SG else self.surface_pl


@dataclass(frozen=True)
class VerbLexeme:
    lemma: str
    surface_sg: str
    surface_pl: str

    def __post_init__(self):
        if self.surface_sg == self.surface_pl:
            raise ValidationError(f"verb {self.lemma!r} has identical sg/pl forms")

    def form(self, number: str) -> str:
        return self.surface_sg if number == SG else self.surface_pl


def _noun(lemma: str, animate: bool = True) -> NounLexeme:
    return NounLexeme(lemma, lemma, lemma + "s", animate)


def _verb(lemma: str) -> VerbLexeme:
    return VerbLexeme(lemma, lemma + "s", lemma)


class Structure(enum.Enum):
    SIMPLE_AGREEMENT = "simple_agreement"
    WITHIN_OBJ_RC = "within_obj_rc"
    ACROSS_ONE_DISTRACTOR = "across_one_distractor"
    ACROSS_TWO_DISTRACTORS = "across_two_distractors"
    ACROSS_PP = "across_pp"
    ACROSS_OBJ_RC = "across_obj_rc"

    @property
    def has_attractor(self) -> bool:
        return self in (Structure.WITHIN_OBJ_RC, Structure.ACROSS_PP, Structure.ACROSS_OBJ_RC)

    @property
    def is_rc(self) -> bool:
        return self in (Structure.WITHIN_OBJ_RC, Structure.ACROSS_OBJ_RC)


STRUCTURES = tuple(Structure)


@dataclass(frozen=True)
class StructureKind:
    """A structure plus its variant flags.

    ``attractor_number`` is None exactly for the attractor-free structures and
    ``complementizer`` is None exactly for the non-RC structures.
    """

    structure: Structure
    attractor_number: str | None = None
    complementizer: bool | None = None

    def __post_init__(self):
        s = self.structure
        if s.has_attractor != (self.attractor_number is not None):
            raise ValidationError(f"{s.value}: attractor_number must be {'sg/pl' if s.has_attractor else 'None'}")
        if self.attractor_number not in (None, SG, PL):
            raise ValidationError(f"bad attractor number {self.attractor_number!r}")
        if s.is_rc != (self.complementizer is not None):
            raise ValidationError(f"{s.value}: complementizer flag applies only to RC structures")

    @property
    def label(self) -> str:
        parts = [self.structure.value]
        if self.attractor_number:
            parts.append(self.attractor_number)
        if self.complementizer is False:
            parts.append("nocomp")
        return "_".join(parts)

    @classmethod
    def from_label(cls, label: str) -> "StructureKind":
        for s in STRUCTURES:
            if label == s.value or label.startswith(s.value + "_"):
                rest = label[len(s.value):].strip("_").split("_") if label != s.value else []
                attractor = next((r for r in rest if r in NUMBERS), None)
                comp = None
                if s.is_rc:
                    comp = "nocomp" not in rest
                kind = cls(s, attractor, comp)
                if kind.label != label:
                    break
                return kind
        raise ValidationError(f"unknown structure label {label!r}")

    def with_complementizer(self, flag: bool) -> "StructureKind":
        if not self.structure.is_rc:
            raise InvalidFlag(f"complementizer is undefined for {self.structure.value}")
        return dataclasses.replace(self, complementizer=flag)


def all_kinds(include_nocomp: bool = True) -> list[StructureKind]:
    """Every structure variant: 9 with the complementizer, 13 with the ablation."""
    kinds = []
    for s in STRUCTURES:
        numbers = NUMBERS if s.has_attractor else (None,)
        comps = ((True, False) if include_nocomp else (True,)) if s.is_rc else (None,)
        for number in numbers:
            for comp in comps:
                kinds.append(StructureKind(s, number, comp))
    return kinds


ANALYSIS_KINDS = tuple(all_kinds(include_nocomp=False))
ALL_KINDS = tuple(all_kinds(include_nocomp=True))


@dataclass(frozen=True)
class Lexicon:
    nouns: tuple[NounLexeme, ...]
    verbs: tuple[VerbLexeme, ...]
    adverbs: tuple[str, ...]
    prepositions: tuple[str, ...]
    seed: int = 0

    @property
    def subject_nouns(self) -> tuple[NounLexeme, ...]:
        return tuple(n for n in self.nouns if n.animate)

    def attractor_nouns(self, structure: Structure) -> tuple[NounLexeme, ...]:
        # RC attractors act as clause subjects or objects of a transitive verb.
        if structure.is_rc:
            return self.subject_nouns
        return self.nouns

    def vocabulary(self) -> list[str]:
        words = list(FUNCTION_WORDS)
        for n in self.nouns:
            words += [n.surface_sg, n.surface_pl]
        for v in self.verbs:
            words += [v.surface_sg, v.surface_pl]
        words += list(self.adverbs) + list(self.prepositions)
        return words

    def noun(self, lemma: str) -> NounLexeme:
        for n in self.nouns:
            if n.lemma == lemma:
                return n
        raise KeyError(lemma)

    def verb(self, lemma: str) -> VerbLexeme:
        for v in self.verbs:
            if v.lemma == lemma:
                return v
        raise KeyError(lemma)


def build_lexicon(seed: int = 0) -> Lexicon:
    """Sample a lexicon from the fixed pools; the same seed gives the same lexicon."""
    rng = np.random.default_rng(seed)

    def pick(pool, k):
        idx = np.sort(rng.choice(len(pool), size=k, replace=False))
        return [pool[i] for i in idx]

    nouns = [_noun(w) for w in pick(_ANIMATE_POOL, N_ANIMATE)]
    nouns += [_noun(w, animate=False) for w in pick(_INANIMATE_POOL, N_INANIMATE)]
    verbs = [_verb(w) for w in pick(_VERB_POOL, N_VERBS)]
    lex = Lexicon(tuple(nouns), tuple(verbs), tuple(pick(_ADVERB_POOL, N_ADVERBS)),
                  tuple(pick(_PREPOSITION_POOL, N_PREPOSITIONS)), seed)
    words = lex.vocabulary()
    assert len(words) == len(set(words)), "surface forms collide"
    return lex


class Vocabulary:
    """Word-level tokenizer: one id per inflected surface form."""

    def __init__(self, words: Sequence[str]):
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValidationError("duplicate vocabulary entries")

    @classmethod
    def from_lexicon(cls, lexicon: Lexicon) -> "Vocabulary":
        return cls(lexicon.vocabulary())

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        try:
            return np.array([self.index[t] for t in tokens], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.words[int(i)] for i in ids]


@dataclass(frozen=True)
class Prompt:
    """A rendered left context ending right before the target verb."""

    prompt_id: str
    tokens: tuple[str, ...]
    kind: StructureKind
    subject_index: int
    subject_number: str
    attractor_index: int | None
    verb: VerbLexeme
    seed: int
    subject: NounLexeme
    attractor: NounLexeme | None = None
    adverbs: tuple[str, ...] = ()
    preposition: str | None = None
    rc_verb: VerbLexeme | None = None

    @property
    def structure(self) -> StructureKind:
        return self.kind

    @property
    def correct_verb(self) -> str:
        return self.verb.form(self.subject_number)

    @property
    def incorrect_verb(self) -> str:
        return self.verb.form(_flip(self.subject_number))

    def to_record(self) -> dict:
        a = self.attractor
        return {
            "prompt_id": self.prompt_id,
            "tokens": list(self.tokens),
            "structure": self.kind.label,
            "subject_index": self.subject_index,
            "subject_number": self.subject_number,
            "attractor_index": self.attractor_index,
            "verb_sg": self.verb.surface_sg,
            "verb_pl": self.verb.surface_pl,
            "seed": self.seed,
            "subject_sg": self.subject.surface_sg,
            "subject_pl": self.subject.surface_pl,
            "attractor_sg": a.surface_sg if a else None,
            "attractor_pl": a.surface_pl if a else None,
            "attractor_animate": a.animate if a else None,
            "adverbs": list(self.adverbs),
            "preposition": self.preposition,
            "rc_verb_sg": self.rc_verb.surface_sg if self.rc_verb else None,
            "rc_verb_pl": self.rc_verb.surface_pl if self.rc_verb else None,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Prompt":
        def noun(sg, pl, animate=True):
            return None if sg is None else NounLexeme(sg, sg, pl, bool(animate))

        def verb(sg, pl):
            return None if sg is None else VerbLexeme(pl, sg, pl)

        prompt = cls(
            prompt_id=rec["prompt_id"],
            tokens=tuple(rec["tokens"]),
            kind=StructureKind.from_label(rec["structure"]),
            subject_index=int(rec["subject_index"]),
            subject_number=rec["subject_number"],
            attractor_index=rec["attractor_index"],
            verb=verb(rec["verb_sg"], rec["verb_pl"]),
            seed=int(rec["seed"]),
            subject=noun(rec["subject_sg"], rec["subject_pl"]),
            attractor=noun(rec.get("attractor_sg"), rec.get("attractor_pl"), rec.get("attractor_animate", True)),
            adverbs=tuple(rec.get("adverbs") or ()),
            preposition=rec.get("preposition"),
            rc_verb=verb(rec.get("rc_verb_sg"), rec.get("rc_verb_pl")),
        )
        if render_tokens(prompt, prompt.kind.complementizer).tokens != prompt.tokens:
            raise ValidationError(f"prompt {prompt.prompt_id}: tokens disagree with slots")
        return prompt


def _flip(number: str) -> str:
    return PL if number == SG else SG


class Rendered(NamedTuple):
    tokens: tuple[str, ...]
    subject_index: int
    attractor_index: int | None


def render_tokens(prompt: Prompt, complementizer: bool | None = None) -> Rendered:
    """Surface realization of a prompt's slots.

    ``complementizer`` only matters for RC structures; asking for it on any
    other structure raises InvalidFlag.
    """
    s = prompt.kind.structure
    if complementizer and not s.is_rc:
        raise InvalidFlag(f"complementizer requested for {s.value}")
    subj = prompt.subject.form(prompt.subject_number)
    att = prompt.attractor.form(prompt.kind.attractor_number) if prompt.attractor else None
    comp = [COMPLEMENTIZER] if complementizer else []
    if s is Structure.SIMPLE_AGREEMENT:
        toks = [START, subj]
        si, ai = 1, None
    elif s is Structure.WITHIN_OBJ_RC:
        toks = [START, att, *comp, DET, subj]
        si, ai = len(toks) - 1, 1
    elif s is Structure.ACROSS_ONE_DISTRACTOR:
        toks = [START, subj, prompt.adverbs[0]]
        si, ai = 1, None
    elif s is Structure.ACROSS_TWO_DISTRACTORS:
        toks = [START, subj, prompt.adverbs[0], CONJUNCTION, prompt.adverbs[1]]
        si, ai = 1, None
    elif s is Structure.ACROSS_PP:
        toks = [START, subj, prompt.preposition, DET, att]
        si, ai = 1, 4
    else:  # ACROSS_OBJ_RC
        toks = [START, subj, *comp, DET, att, prompt.rc_verb.form(prompt.kind.attractor_number)]
        si, ai = 1, len(toks) - 2
    return Rendered(tuple(toks), si, ai)


def with_complementizer(prompt: Prompt, flag: bool) -> Prompt:
    """Re-render an RC prompt with or without ``that``; indices follow the tokens."""
    kind = prompt.kind.with_complementizer(flag)
    r = render_tokens(dataclasses.replace(prompt, kind=kind), flag)
    return dataclasses.replace(prompt, kind=kind, tokens=r.tokens,
                               subject_index=r.subject_index, attractor_index=r.attractor_index)


def apply_swap_number(prompt: Prompt) -> Prompt:
    """Replace the subject by the same lexeme in the opposite number."""
    number = _flip(prompt.subject_number)
    toks = list(prompt.tokens)
    toks[prompt.subject_index] = prompt.subject.form(number)
    return dataclasses.replace(prompt, tokens=tuple(toks), subject_number=number)


def cross_product_size(kind: StructureKind, lexicon: Lexicon) -> int:
    n_subj = len(lexicon.subject_nouns)
    n = n_subj * len(lexicon.verbs)
    if kind.structure.has_attractor:
        # attractor lemma differs from the subject lemma
        attractors = lexicon.attractor_nouns(kind.structure)
        n_att = len(attractors) - 1
        n = n_subj * n_att * len(lexicon.verbs)
    return n


def _kind_stream(kind: StructureKind) -> int:
    # complementizer is excluded so on/off variants draw identical slots
    return STRUCTURES.index(kind.structure) * 3 + {None: 0, SG: 1, PL: 2}[kind.attractor_number]


def generate_prompts(kind: StructureKind, n: int, lexicon: Lexicon, seed: int) -> list[Prompt]:
    """Sample ``n`` prompts without replacement from subject x attractor x verb.

    Subject numbers are balanced exactly: floor(n/2) singular, ceil(n/2) plural.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    total = cross_product_size(kind, lexicon)
    if total < n:
        raise InsufficientCombinations(
            f"{kind.label}: requested {n} prompts but only {total} subject/attractor/verb combinations exist")
    rng = np.random.default_rng([seed, _kind_stream(kind)])
    subjects = lexicon.subject_nouns
    verbs = lexicon.verbs
    attractor_pool = lexicon.attractor_nouns(kind.structure)
    n_att = len(attractor_pool) - 1 if kind.structure.has_attractor else 1
    flat = rng.choice(total, size=n, replace=False)
    numbers = np.array([SG] * (n // 2) + [PL] * (n - n // 2))
    numbers = numbers[rng.permutation(n)]
    prompts = []
    for i, code in enumerate(flat):
        si, ai, vi = np.unravel_index(int(code), (len(subjects), n_att, len(verbs)))
        subject, verb = subjects[si], verbs[vi]
        attractor = None
        if kind.structure.has_attractor:
            others = [a for a in attractor_pool if a.lemma != subject.lemma]
            attractor = others[ai]
        adverbs: tuple[str, ...] = ()
        prep = rc_verb = None
        if kind.structure is Structure.ACROSS_ONE_DISTRACTOR:
            adverbs = (lexicon.adverbs[rng.integers(len(lexicon.adverbs))],)
        elif kind.structure is Structure.ACROSS_TWO_DISTRACTORS:
            pair = rng.choice(len(lexicon.adverbs), size=2, replace=False)
            adverbs = tuple(lexicon.adverbs[j] for j in pair)
        elif kind.structure is Structure.ACROSS_PP:
            prep = lexicon.prepositions[rng.integers(len(lexicon.prepositions))]
        elif kind.structure is Structure.ACROSS_OBJ_RC:
            candidates = [v for v in verbs if v.lemma != verb.lemma]
            rc_verb = candidates[rng.integers(len(candidates))]
        stub = Prompt(f"{kind.label}-{i:04d}", (), kind, 0, str(numbers[i]), None, verb, seed,
                      subject, attractor, adverbs, prep, rc_verb)
        r = render_tokens(stub, kind.complementizer)
        prompts.append(dataclasses.replace(stub, tokens=r.tokens, subject_index=r.subject_index,
                                           attractor_index=r.attractor_index))
    return prompts


# --- template and agreement checking --------------------------------------

_PROMPT_PATTERNS = {
    Structure.SIMPLE_AGREEMENT: r"B(?P<s>[nN])",
    Structure.WITHIN_OBJ_RC: r"B(?P<a>[nN])C?D(?P<s>[nN])",
    Structure.ACROSS_ONE_DISTRACTOR: r"B(?P<s>[nN])A",
    Structure.ACROSS_TWO_DISTRACTORS: r"B(?P<s>[nN])AJA",
    Structure.ACROSS_PP: r"B(?P<s>[nN])PD(?P<a>[nN])",
    Structure.ACROSS_OBJ_RC: r"B(?P<s>[nN])C?D(?P<a>[nN])(?P<r>[vV])",
}


def _tagger(lexicon: Lexicon) -> dict[str, str]:
    tags = {START: "B", DET: "D", COMPLEMENTIZER: "C", CONJUNCTION: "J", TERMINATOR: "E"}
    for n in lexicon.nouns:
        tags[n.surface_sg], tags[n.surface_pl] = "n", "N"
    for v in lexicon.verbs:
        tags[v.surface_sg], tags[v.surface_pl] = "v", "V"
    tags.update({a: "A" for a in lexicon.adverbs})
    tags.update({p: "P" for p in lexicon.prepositions})
    return tags


def _tag_string(tokens: Sequence[str], lexicon: Lexicon) -> str:
    tags = _tagger(lexicon)
    try:
        return "".join(tags[t] for t in tokens)
    except KeyError as exc:
        raise ValidationError(f"unknown token {exc.args[0]!r}") from None


def match_template(tokens: Sequence[str], lexicon: Lexicon) -> Structure | None:
    """Return the structure whose template accepts ``tokens`` (a prompt), if any."""
    tags = _tag_string(tokens, lexicon)
    for s, pat in _PROMPT_PATTERNS.items():
        m = re.fullmatch(pat, tags)
        if m and (s is not Structure.ACROSS_OBJ_RC or m["a"].isupper() == m["r"].isupper()):
            return s
    return None


def check_prompt(prompt: Prompt, lexicon: Lexicon) -> bool:
    """Template fidelity plus annotation consistency for a generated prompt."""
    if match_template(prompt.tokens, lexicon) is not prompt.kind.structure:
        return False
    if prompt.tokens[prompt.subject_index] != prompt.subject.form(prompt.subject_number):
        return False
    if (prompt.kind.complementizer is True) != (COMPLEMENTIZER in prompt.tokens):
        return False
    if prompt.attractor_index is not None:
        return prompt.tokens[prompt.attractor_index] == prompt.attractor.form(prompt.kind.attractor_number)
    return prompt.attractor is None


_SENTENCE_RE = re.compile(
    "(?:" + "|".join(f"(?P<k{i}>{p.replace('?P<', f'?P<k{i}')})" for i, p in enumerate(_PROMPT_PATTERNS.values()))
    + r")(?P<verb>[vV])(?:D[nN])?E"
)


def is_grammatical(sentence: Sequence[str], lexicon: Lexicon) -> bool:
    """True iff ``sentence`` is prompt + agreeing verb + optional object + '.'."""
    tags = _tag_string(sentence, lexicon)
    m = _SENTENCE_RE.fullmatch(tags)
    if not m:
        return False
    for i, s in enumerate(_PROMPT_PATTERNS):
        if m[f"k{i}"] is None:
            continue
        subject = m[f"k{i}s"]
        if s is Structure.ACROSS_OBJ_RC and m[f"k{i}a"].isupper() != m[f"k{i}r"].isupper():
            return False
        return subject.isupper() == m["verb"].isupper()
    return False


# --- training corpus ------------------------------------------------------

@dataclass
class Corpus:
    sentences: list[tuple[str, ...]]
    heldout_pairs: frozenset[tuple[str, str]] = field(default_factory=frozenset)
    seed: int = 0

    def __len__(self):
        return len(self.sentences)

    def write(self, path: str | Path) -> None:
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                for s in self.sentences:
                    fh.write(" ".join(s) + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write corpus {path}: {exc}") from exc

    @classmethod
    def read(cls, path: str | Path) -> "Corpus":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls([tuple(line.split()) for line in fh if line.strip()])
        except FileNotFoundError as exc:
            raise IoFailure(f"corpus not found: {path}") from exc


def heldout_pairs(lexicon: Lexicon, fraction: float = 0.1, seed: int = 0) -> frozenset[tuple[str, str]]:
    """Reserve ceil(fraction * |pairs|) subject-noun/verb lemma pairs for evaluation."""
    pairs = [(n.lemma, v.lemma) for n in lexicon.subject_nouns for v in lexicon.verbs]
    k = math.ceil(fraction * len(pairs))
    order = np.random.default_rng([seed, 991]).permutation(len(pairs))
    return frozenset(pairs[i] for i in order[:k])


def make_training_corpus(lexicon: Lexicon, size: int, seed: int, heldout_fraction: float = 0.1,
                         object_rate: float = 0.5) -> Corpus:
    """Grammatical sentences from all six structures, avoiding held-out pairs.

    Each sentence is a prompt, its agreeing verb, an optional object noun
    phrase (the filler clause) and the terminator.
    """
    if size < 1:
        raise ValidationError("size must be >= 1")
    held = heldout_pairs(lexicon, heldout_fraction, seed)
    subjects, verbs, nouns = lexicon.subject_nouns, lexicon.verbs, lexicon.nouns
    if len(subjects) * len(verbs) - len(held) < 1:
        raise InsufficientCombinations("every subject/verb pair is held out")
    rng = np.random.default_rng([seed, 7])
    out = []
    while len(out) < size:
        s = STRUCTURES[rng.integers(len(STRUCTURES))]
        att_num = NUMBERS[rng.integers(2)] if s.has_attractor else None
        comp = bool(rng.integers(2)) if s.is_rc else None
        kind = StructureKind(s, att_num, comp)
        subject = subjects[rng.integers(len(subjects))]
        verb = verbs[rng.integers(len(verbs))]
        if (subject.lemma, verb.lemma) in held:
            continue
        attractor = None
        if s.has_attractor:
            pool = [a for a in lexicon.attractor_nouns(s) if a.lemma != subject.lemma]
            attractor = pool[rng.integers(len(pool))]
        adverbs, prep, rc_verb = (), None, None
        if s is Structure.ACROSS_ONE_DISTRACTOR:
            adverbs = (lexicon.adverbs[rng.integers(len(lexicon.adverbs))],)
        elif s is Structure.ACROSS_TWO_DISTRACTORS:
            adverbs = tuple(lexicon.adverbs[j] for j in rng.choice(len(lexicon.adverbs), 2, replace=False))
        elif s is Structure.ACROSS_PP:
            prep = lexicon.prepositions[rng.integers(len(lexicon.prepositions))]
        elif s is Structure.ACROSS_OBJ_RC:
            rc_verb = verbs[rng.integers(len(verbs))]
            if (attractor.lemma, rc_verb.lemma) in held:
                continue
        number = NUMBERS[rng.integers(2)]
        stub = Prompt("", (), kind, 0, number, None, verb, seed, subject, attractor, adverbs, prep, rc_verb)
        toks = list(render_tokens(stub, comp).tokens) + [verb.form(number)]
        if rng.random() < object_rate:
            obj = nouns[rng.integers(len(nouns))]
            toks += [DET, obj.form(NUMBERS[rng.integers(2)])]
        toks.append(TERMINATOR)
        out.append(tuple(toks))
    return Corpus(out, held, seed)


def is_heldout(prompt: Prompt, held: frozenset[tuple[str, str]]) -> bool:
    return (prompt.subject.lemma, prompt.verb.lemma) in held


# --- serialization --------------------------------------------------------

def write_prompts(path: str | Path, prompts: Sequence[Prompt]) -> None:
    """One JSON record per line, keys in fixed order."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for p in prompts:
                fh.write(json.dumps(p.to_record(), separators=(",", ":")) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write prompts {path}: {exc}") from exc


def read_prompts(path: str | Path) -> list[Prompt]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [Prompt.from_record(json.loads(line)) for line in fh if line.strip()]
    except FileNotFoundError as exc:
        raise IoFailure(f"prompt file not found: {path}") from exc
