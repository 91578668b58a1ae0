"""Rewrite lemmas self-contained and decide whether they qualify.

A lemma qualifies for the benchmark when (a) a cheap deterministic filter
finds no disqualifying artifacts (citations, unresolved references, floats)
in its rewritten form, and (b) a judge model, reading only the statement and
its extracted assumptions, rules the result understandable on its own.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass

from .errors import LlmProtocolError
from .latex_corpus import LemmaRecord
from .llm_gateway import Gateway
from .prompting import render
from .retrieval import ContextBundle

log = logging.getLogger(__name__)

EXTRACT_REPROMPTS = 2
JUDGE_REPROMPTS = 2

_CITATION_RE = re.compile(r"\\(?:cite[A-Za-z]*|parencite|textcite|footcite)\b")
_REF_RE = re.compile(r"\\(?:ref|eqref|cref|Cref|autoref|vref|pageref)\{([^{}]+)\}")
_LABEL_RE = re.compile(r"\\label\{([^{}]+)\}")
_FORBIDDEN_ENVS = (
    "figure",
    "figure*",
    "table",
    "table*",
    "tikzpicture",
    "algorithm",
    "algorithmic",
    "proof",
)

_BLOCK_RE = re.compile(
    r"DEFINITIONS:\s*```+[^\n`]*\n(.*?)```.*?HYPOTHESES:\s*```+[^\n`]*\n(.*?)```",
    re.DOTALL,
)
_ITEM_SEP_RE = re.compile(r"(?m)^---$")
_VERDICT_RE = re.compile(r"^VERDICT:\s*(SELF-CONTAINED|NOT-SELF-CONTAINED)\s*$")

_FORMAT_NUDGES = (
    "",
    "\n\nFormat reminder: follow the reply format exactly as instructed.",
    "\n\nYour previous reply was unreadable. Follow the reply format exactly, "
    "with no surrounding commentary.",
)


def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class AssumptionSet:
    lemma_id: str
    definitions: tuple[str, ...]
    hypotheses: tuple[str, ...]
    prompt_hash: str
    protocol_ok: bool = True

    def block(self) -> str:
        """The assumptions rendered as judge/prover-facing context."""
        parts = []
        if self.definitions:
            parts.append("Definitions:\n" + "\n\n".join(self.definitions))
        if self.hypotheses:
            parts.append("Hypotheses:\n" + "\n\n".join(self.hypotheses))
        return "\n\n".join(parts)

    def to_json_dict(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "definitions": list(self.definitions),
            "hypotheses": list(self.hypotheses),
            "prompt_hash": self.prompt_hash,
            "protocol_ok": self.protocol_ok,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AssumptionSet":
        return cls(
            lemma_id=d["lemma_id"],
            definitions=tuple(d["definitions"]),
            hypotheses=tuple(d["hypotheses"]),
            prompt_hash=d["prompt_hash"],
            protocol_ok=d["protocol_ok"],
        )


@dataclass(frozen=True)
class FilterResult:
    passed: bool
    violations: tuple[str, ...]


@dataclass(frozen=True)
class Judgment:
    model_id: str
    verdict: bool
    reply: str
    prompt_hash: str
    protocol_ok: bool = True

    def to_json_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "verdict": self.verdict,
            "reply": self.reply,
            "prompt_hash": self.prompt_hash,
            "protocol_ok": self.protocol_ok,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Judgment":
        return cls(d["model_id"], d["verdict"], d["reply"], d["prompt_hash"], d["protocol_ok"])


@dataclass(frozen=True)
class BenchmarkBundle:
    """One rewritten lemma plus everything that decided its membership."""

    lemma_id: str
    arxiv_id: str
    mode: str
    statement: str
    title: str
    definitions: tuple[str, ...]
    hypotheses: tuple[str, ...]
    extraction_ok: bool
    filter_passed: bool
    filter_violations: tuple[str, ...]
    judgments: tuple[Judgment, ...]
    judge_model: str
    is_member: bool

    def assumption_block(self) -> str:
        return AssumptionSet(
            self.lemma_id, self.definitions, self.hypotheses, "", True
        ).block()

    def to_json_dict(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "arxiv_id": self.arxiv_id,
            "mode": self.mode,
            "statement": self.statement,
            "title": self.title,
            "definitions": list(self.definitions),
            "hypotheses": list(self.hypotheses),
            "extraction_ok": self.extraction_ok,
            "filter_passed": self.filter_passed,
            "filter_violations": list(self.filter_violations),
            "judgments": [j.to_json_dict() for j in self.judgments],
            "judge_model": self.judge_model,
            "is_member": self.is_member,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "BenchmarkBundle":
        return cls(
            lemma_id=d["lemma_id"],
            arxiv_id=d["arxiv_id"],
            mode=d["mode"],
            statement=d["statement"],
            title=d["title"],
            definitions=tuple(d["definitions"]),
            hypotheses=tuple(d["hypotheses"]),
            extraction_ok=d["extraction_ok"],
            filter_passed=d["filter_passed"],
            filter_violations=tuple(d["filter_violations"]),
            judgments=tuple(Judgment.from_json_dict(j) for j in d["judgments"]),
            judge_model=d["judge_model"],
            is_member=d["is_member"],
        )


# ---------------------------------------------------------------------------
# Assumption extraction


def parse_assumption_reply(reply: str) -> tuple[list[str], list[str]]:
    m = _BLOCK_RE.search(reply)
    if m is None:
        raise LlmProtocolError("reply lacks DEFINITIONS/HYPOTHESES blocks")

    def items(block: str) -> list[str]:
        return [part.strip() for part in _ITEM_SEP_RE.split(block) if part.strip()]

    return items(m.group(1)), items(m.group(2))


def extract_assumptions(
    gateway: Gateway,
    model: str,
    lemma: LemmaRecord,
    context: ContextBundle,
    *,
    stage: str = "extract",
) -> AssumptionSet:
    """Mine the context for the lemma's definitions and silent hypotheses.

    After repeated protocol failures the set degrades to empty (flagged), so
    one misbehaving reply cannot sink a corpus run; an empty set then has to
    survive the judges on its own.
    """
    base = render("extract.txt", statement=lemma.statement, context=context.context_text)
    for attempt in range(1 + EXTRACT_REPROMPTS):
        prompt = base + _FORMAT_NUDGES[attempt]
        reply = gateway.chat(model, prompt, stage=stage, mode=context.mode)
        try:
            definitions, hypotheses = parse_assumption_reply(reply)
        except LlmProtocolError:
            log.warning("assumption extraction attempt %d unparseable", attempt + 1)
            continue
        return AssumptionSet(
            lemma_id=lemma.lemma_id,
            definitions=tuple(definitions),
            hypotheses=tuple(hypotheses),
            prompt_hash=_prompt_hash(prompt),
        )
    log.error("assumption extraction failed %d times for %s", 1 + EXTRACT_REPROMPTS, lemma.lemma_id)
    return AssumptionSet(lemma.lemma_id, (), (), _prompt_hash(base), protocol_ok=False)


# ---------------------------------------------------------------------------
# Deterministic filter


def deterministic_sc_filter(statement: str, supporting_text: str) -> FilterResult:
    """Cheap disqualification of bundles that cannot be self-contained.

    Flags citation commands anywhere, reference commands whose label no part
    of the bundle defines, and environments that depend on material a text
    bundle cannot carry (floats, TikZ, algorithms, proofs).
    """
    combined = statement + "\n" + supporting_text
    violations: list[str] = []
    for m in _CITATION_RE.finditer(combined):
        violations.append(f"citation:{m.group(0)}")
    labels = set(_LABEL_RE.findall(combined))
    for m in _REF_RE.finditer(combined):
        for label in (part.strip() for part in m.group(1).split(",")):
            if label and label not in labels:
                violations.append(f"unresolved-ref:{label}")
    for env in _FORBIDDEN_ENVS:
        if re.search(r"\\begin\{" + re.escape(env) + r"\}", combined):
            violations.append(f"environment:{env}")
    return FilterResult(passed=not violations, violations=tuple(violations))


# ---------------------------------------------------------------------------
# Judge


def parse_verdict(reply: str) -> bool:
    for line in reversed(reply.strip().splitlines()):
        line = line.strip()
        if not line:
            continue
        m = _VERDICT_RE.match(line)
        if m is None:
            break
        return m.group(1) == "SELF-CONTAINED"
    raise LlmProtocolError("reply lacks a terminal VERDICT line")


def judge_self_containedness(
    gateway: Gateway,
    model: str,
    statement: str,
    context: str,
    *,
    stage: str = "extract",
    mode: str = "",
) -> Judgment:
    """One model's verdict; unparseable replies default to NOT self-contained."""
    handle = gateway.resolve(model)
    base = render("sc_judge.txt", statement=statement, context=context)
    reply = ""
    prompt = base
    for attempt in range(1 + JUDGE_REPROMPTS):
        prompt = base + _FORMAT_NUDGES[attempt]
        reply = gateway.chat(model, prompt, stage=stage, mode=mode)
        try:
            verdict = parse_verdict(reply)
        except LlmProtocolError:
            log.warning("SC judge %s attempt %d unparseable", handle.model_id, attempt + 1)
            continue
        return Judgment(handle.model_id, verdict, reply, _prompt_hash(prompt))
    log.error("SC judge %s never produced a verdict; defaulting to False", handle.model_id)
    return Judgment(handle.model_id, False, reply, _prompt_hash(prompt), protocol_ok=False)


def cross_judge_sc(
    gateway: Gateway,
    models: list[str],
    statement: str,
    context: str,
    *,
    stage: str = "extract",
    mode: str = "",
) -> list[Judgment]:
    return [
        judge_self_containedness(gateway, m, statement, context, stage=stage, mode=mode)
        for m in models
    ]


# ---------------------------------------------------------------------------
# Bundle assembly


def build_bundle(
    gateway: Gateway,
    lemma: LemmaRecord,
    context: ContextBundle,
    *,
    extractor_model: str,
    judge_models: list[str],
) -> BenchmarkBundle:
    """Extract, filter, judge; membership needs the filter plus the first
    (designated) judge. Extra judges are recorded for agreement analysis.
    Bundles the filter rejects never reach a judge."""
    if not judge_models:
        raise ValueError("at least one judge model is required")
    assumptions = extract_assumptions(gateway, extractor_model, lemma, context)
    filt = deterministic_sc_filter(lemma.statement, assumptions.block())
    judgments: tuple[Judgment, ...] = ()
    if filt.passed:
        judgments = tuple(
            cross_judge_sc(
                gateway, judge_models, lemma.statement, assumptions.block(), mode=context.mode
            )
        )
    judge_id = gateway.resolve(judge_models[0]).model_id
    is_member = filt.passed and bool(judgments) and judgments[0].verdict
    return BenchmarkBundle(
        lemma_id=lemma.lemma_id,
        arxiv_id=lemma.arxiv_id,
        mode=context.mode,
        statement=lemma.statement,
        title=lemma.title,
        definitions=assumptions.definitions,
        hypotheses=assumptions.hypotheses,
        extraction_ok=assumptions.protocol_ok,
        filter_passed=filt.passed,
        filter_violations=filt.violations,
        judgments=judgments,
        judge_model=judge_id,
        is_member=is_member,
    )
