"""Drive prover models against benchmark bundles and judge the results.

A proof is a numbered list of steps (SUBGOAL / CITES / THEOREMS / PROOF).
Judges rule on every step independently; an attempt is accepted only when
every step is ruled correct, and an attempt with no parseable steps is
rejected outright.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass

from .errors import LlmProtocolError
from .extraction import BenchmarkBundle
from .llm_gateway import Gateway
from .prompting import render

log = logging.getLogger(__name__)

PROVE_REPROMPTS = 2
JUDGE_REPROMPTS = 1

_STEP_HEAD_RE = re.compile(r"(?m)^STEP (\d+):\s*$")
# Horizontal whitespace only: a greedy \s* would cross the newline after an
# empty field ("THEOREMS:") and swallow the next field line into its value.
_FIELD_RE = re.compile(r"(?m)^(SUBGOAL|CITES|THEOREMS|PROOF):[ \t]*(.*)$")
_VERDICT_LINE_RE = re.compile(r"(?m)^STEP (\d+):\s*(TRUE|FALSE)\b")

_FORMAT_NUDGES = (
    "",
    "\n\nFormat reminder: follow the step grammar exactly as instructed.",
    "\n\nYour previous reply was unreadable. Emit only STEP blocks in the "
    "exact grammar, nothing else.",
)


def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ProofStep:
    number: int
    subgoal: str
    cites: tuple[str, ...]
    theorems: tuple[str, ...]
    proof: str

    def to_json_dict(self) -> dict:
        return {
            "number": self.number,
            "subgoal": self.subgoal,
            "cites": list(self.cites),
            "theorems": list(self.theorems),
            "proof": self.proof,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ProofStep":
        return cls(
            d["number"], d["subgoal"], tuple(d["cites"]), tuple(d["theorems"]), d["proof"]
        )


@dataclass(frozen=True)
class ProofAttempt:
    attempt_id: str
    lemma_id: str
    prover_model: str
    attempt_index: int
    steps: tuple[ProofStep, ...]
    reply: str
    prompt_hash: str
    parse_ok: bool

    def to_json_dict(self) -> dict:
        return {
            "attempt_id": self.attempt_id,
            "lemma_id": self.lemma_id,
            "prover_model": self.prover_model,
            "attempt_index": self.attempt_index,
            "steps": [s.to_json_dict() for s in self.steps],
            "reply": self.reply,
            "prompt_hash": self.prompt_hash,
            "parse_ok": self.parse_ok,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ProofAttempt":
        return cls(
            attempt_id=d["attempt_id"],
            lemma_id=d["lemma_id"],
            prover_model=d["prover_model"],
            attempt_index=d["attempt_index"],
            steps=tuple(ProofStep.from_json_dict(s) for s in d["steps"]),
            reply=d["reply"],
            prompt_hash=d["prompt_hash"],
            parse_ok=d["parse_ok"],
        )


@dataclass(frozen=True)
class ProofJudgment:
    attempt_id: str
    lemma_id: str
    prover_model: str
    judge_model: str
    step_verdicts: tuple[bool, ...]
    overall: bool
    reply: str
    prompt_hash: str
    parse_ok: bool

    def to_json_dict(self) -> dict:
        return {
            "attempt_id": self.attempt_id,
            "lemma_id": self.lemma_id,
            "prover_model": self.prover_model,
            "judge_model": self.judge_model,
            "step_verdicts": list(self.step_verdicts),
            "overall": self.overall,
            "reply": self.reply,
            "prompt_hash": self.prompt_hash,
            "parse_ok": self.parse_ok,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ProofJudgment":
        return cls(
            attempt_id=d["attempt_id"],
            lemma_id=d["lemma_id"],
            prover_model=d["prover_model"],
            judge_model=d["judge_model"],
            step_verdicts=tuple(d["step_verdicts"]),
            overall=d["overall"],
            reply=d["reply"],
            prompt_hash=d["prompt_hash"],
            parse_ok=d["parse_ok"],
        )


# ---------------------------------------------------------------------------
# Proof grammar


def _split_csv(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def parse_proof(reply: str) -> tuple[ProofStep, ...]:
    """Parse STEP blocks; raises LlmProtocolError when the grammar is broken.

    Step numbers must run 1..n in order and every step needs a SUBGOAL and a
    PROOF field. CITES and THEOREMS are optional.
    """
    heads = list(_STEP_HEAD_RE.finditer(reply))
    if not heads:
        raise LlmProtocolError("no STEP blocks found")
    steps: list[ProofStep] = []
    for i, head in enumerate(heads):
        number = int(head.group(1))
        if number != i + 1:
            raise LlmProtocolError(f"step numbering broken at STEP {number}")
        block_end = heads[i + 1].start() if i + 1 < len(heads) else len(reply)
        block = reply[head.end() : block_end]
        fields: dict[str, str] = {}
        matches = list(_FIELD_RE.finditer(block))
        for j, fm in enumerate(matches):
            key = fm.group(1)
            if key == "PROOF":
                fields[key] = (fm.group(2) + block[fm.end() :]).strip()
                break
            fields[key] = fm.group(2).strip()
        if "SUBGOAL" not in fields or "PROOF" not in fields:
            raise LlmProtocolError(f"STEP {number} lacks SUBGOAL or PROOF")
        steps.append(
            ProofStep(
                number=number,
                subgoal=fields["SUBGOAL"],
                cites=_split_csv(fields.get("CITES", "")),
                theorems=_split_csv(fields.get("THEOREMS", "")),
                proof=fields["PROOF"],
            )
        )
    return tuple(steps)


def render_steps(steps: tuple[ProofStep, ...]) -> str:
    """Canonical text form of parsed steps, as shown to judges and reviewers."""
    lines: list[str] = []
    for s in steps:
        lines.append(f"STEP {s.number}:")
        lines.append(f"SUBGOAL: {s.subgoal}")
        if s.cites:
            lines.append("CITES: " + ", ".join(s.cites))
        if s.theorems:
            lines.append("THEOREMS: " + ", ".join(s.theorems))
        lines.append(f"PROOF: {s.proof}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Generation and judging


def generate_proof(
    gateway: Gateway,
    model: str,
    bundle: BenchmarkBundle,
    attempt_index: int = 0,
    *,
    stage: str = "prove",
) -> ProofAttempt:
    """One attempt; after repeated grammar failures a zero-step attempt is
    returned, which every judge rejects by construction."""
    handle = gateway.resolve(model)
    base = render(
        "prove.txt",
        statement=bundle.statement,
        definitions="\n\n".join(bundle.definitions),
        hypotheses="\n\n".join(bundle.hypotheses),
    )
    if attempt_index:
        base += f"\n\n(Independent attempt {attempt_index + 1}; take a fresh approach.)"
    attempt_id = f"{bundle.lemma_id}:{handle.model_id}:{attempt_index}"
    reply = ""
    prompt = base
    for attempt in range(1 + PROVE_REPROMPTS):
        prompt = base + _FORMAT_NUDGES[attempt]
        reply = gateway.chat(model, prompt, stage=stage, mode=bundle.mode)
        try:
            steps = parse_proof(reply)
        except LlmProtocolError as exc:
            log.warning("prover %s attempt unparseable: %s", handle.model_id, exc)
            continue
        return ProofAttempt(
            attempt_id=attempt_id,
            lemma_id=bundle.lemma_id,
            prover_model=handle.model_id,
            attempt_index=attempt_index,
            steps=steps,
            reply=reply,
            prompt_hash=_prompt_hash(prompt),
            parse_ok=True,
        )
    log.error("prover %s produced no parseable proof for %s", handle.model_id, bundle.lemma_id)
    return ProofAttempt(
        attempt_id=attempt_id,
        lemma_id=bundle.lemma_id,
        prover_model=handle.model_id,
        attempt_index=attempt_index,
        steps=(),
        reply=reply,
        prompt_hash=_prompt_hash(prompt),
        parse_ok=False,
    )


def judge_proof(
    gateway: Gateway,
    model: str,
    bundle: BenchmarkBundle,
    attempt: ProofAttempt,
    *,
    stage: str = "judge",
) -> ProofJudgment:
    """Per-step verdicts; overall acceptance is the AND across steps.

    A zero-step attempt is rejected without a model call. A step the judge
    never rules on is counted FALSE after one re-prompt.
    """
    handle = gateway.resolve(model)
    if not attempt.steps:
        return ProofJudgment(
            attempt_id=attempt.attempt_id,
            lemma_id=attempt.lemma_id,
            prover_model=attempt.prover_model,
            judge_model=handle.model_id,
            step_verdicts=(),
            overall=False,
            reply="",
            prompt_hash="",
            parse_ok=False,
        )
    base = render(
        "proof_judge.txt", statement=bundle.statement, steps=render_steps(attempt.steps)
    )
    n = len(attempt.steps)
    reply = ""
    prompt = base
    verdict_map: dict[int, bool] = {}
    for attempt_no in range(1 + JUDGE_REPROMPTS):
        prompt = base + _FORMAT_NUDGES[attempt_no]
        reply = gateway.chat(model, prompt, stage=stage, mode=bundle.mode)
        verdict_map = {
            int(m.group(1)): m.group(2) == "TRUE"
            for m in _VERDICT_LINE_RE.finditer(reply)
            if 1 <= int(m.group(1)) <= n
        }
        if len(verdict_map) == n:
            break
        log.warning(
            "judge %s ruled on %d/%d steps (attempt %d)",
            handle.model_id, len(verdict_map), n, attempt_no + 1,
        )
    parse_ok = len(verdict_map) == n
    verdicts = tuple(verdict_map.get(i, False) for i in range(1, n + 1))
    return ProofJudgment(
        attempt_id=attempt.attempt_id,
        lemma_id=attempt.lemma_id,
        prover_model=attempt.prover_model,
        judge_model=handle.model_id,
        step_verdicts=verdicts,
        overall=bool(verdicts) and all(verdicts),
        reply=reply,
        prompt_hash=_prompt_hash(prompt),
        parse_ok=parse_ok,
    )


def run_matrix(
    gateway: Gateway,
    provers: list[str],
    judges: list[str],
    bundles: list[BenchmarkBundle],
    *,
    pass_at: int = 1,
) -> tuple[list[ProofAttempt], list[ProofJudgment]]:
    """Every member bundle x prover x attempt, each judged by every judge."""
    if pass_at < 1:
        raise ValueError("pass_at must be >= 1")
    attempts: list[ProofAttempt] = []
    judgments: list[ProofJudgment] = []
    for bundle in bundles:
        if not bundle.is_member:
            continue
        for prover in provers:
            for idx in range(pass_at):
                attempt = generate_proof(gateway, prover, bundle, idx)
                attempts.append(attempt)
                for judge in judges:
                    judgments.append(judge_proof(gateway, judge, bundle, attempt))
    return attempts, judgments
