"""Single choke-point for chat and embedding traffic.

Every model call in the pipeline flows through :class:`Gateway`, which owns
provider selection (live HTTP, deterministic scripted, or file-backed
record/replay), rate limiting, retries, and the call ledger used for token
accounting. Fixture files are keyed by a deterministic request hash so a
recorded run can be replayed bit-for-bit without network access.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import (
    AuthError,
    ContextLengthError,
    LemmaForgeError,
    MissingFixtureError,
    TransientError,
)

DEFAULT_EMBED_BATCH = 64
RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 1.0


def estimate_tokens(text: str) -> int:
    """Cheap length-based token estimate (4 chars per token)."""
    return (len(text) + 3) // 4


@dataclass(frozen=True)
class LlmHandle:
    """Configuration for one model endpoint.

    ``auth_env`` names the environment variable holding the credential; the
    credential value itself is read at call time and never persisted.
    """

    model_id: str
    provider: str = "scripted"
    endpoint: str = ""
    auth_env: str = ""
    temperature: float = 0.0
    max_tokens: int = 4096
    dim: int = 64
    max_in_flight: int = 8
    requests_per_minute: int | None = None
    max_prompt_chars: int | None = None

    def decode_params(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens}


@dataclass(frozen=True)
class CallRecord:
    request_hash: str
    kind: str  # "chat" | "embed"
    model_id: str
    stage: str
    mode: str
    prompt: str
    reply: str
    prompt_tokens: int
    completion_tokens: int
    latency_s: float
    timestamp: str

    def to_json_dict(self) -> dict:
        return {
            "request_hash": self.request_hash,
            "kind": self.kind,
            "model_id": self.model_id,
            "stage": self.stage,
            "mode": self.mode,
            "prompt": self.prompt,
            "reply": self.reply,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency_s": self.latency_s,
            "timestamp": self.timestamp,
        }


def request_hash(model_id: str, kind: str, payload, decode_params: dict) -> str:
    """Deterministic hash over (model, request payload, decode parameters)."""
    canonical = json.dumps(
        {"model_id": model_id, "kind": kind, "payload": payload, "decode": decode_params},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Providers


class ChatReply:
    __slots__ = ("text", "prompt_tokens", "completion_tokens")

    def __init__(self, text: str, prompt_tokens: int, completion_tokens: int):
        self.text = text
        self.prompt_tokens = prompt_tokens
        self.completion_tokens = completion_tokens


class HttpProvider:
    """Chat-completions style JSON wire format over HTTP."""

    def __init__(self, timeout: float = 120.0):
        self.timeout = timeout

    def _post(self, handle: LlmHandle, body: dict) -> dict:
        key = os.environ.get(handle.auth_env, "") if handle.auth_env else ""
        if handle.auth_env and not key:
            raise AuthError(f"environment variable {handle.auth_env} is not set")
        req = urllib.request.Request(
            handle.endpoint,
            data=json.dumps(body).encode("utf-8"),
            headers={
                "Content-Type": "application/json",
                **({"Authorization": f"Bearer {key}"} if key else {}),
            },
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", "replace")[:500]
            if exc.code in (401, 403):
                raise AuthError(f"HTTP {exc.code}: {detail}") from exc
            if "context" in detail.lower() and "length" in detail.lower():
                raise ContextLengthError(detail) from exc
            if exc.code in (408, 429) or exc.code >= 500:
                raise TransientError(f"HTTP {exc.code}: {detail}") from exc
            raise LemmaForgeError(f"HTTP {exc.code}: {detail}") from exc
        except urllib.error.URLError as exc:
            raise TransientError(str(exc)) from exc

    def chat(self, handle: LlmHandle, prompt: str) -> ChatReply:
        body = {
            "model": handle.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": handle.temperature,
            "max_tokens": handle.max_tokens,
        }
        data = self._post(handle, body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise LemmaForgeError(f"malformed chat response: {data}") from exc
        usage = data.get("usage", {})
        return ChatReply(
            text,
            int(usage.get("prompt_tokens", estimate_tokens(prompt))),
            int(usage.get("completion_tokens", estimate_tokens(text))),
        )

    def embed(self, handle: LlmHandle, texts: Sequence[str]) -> list[list[float]]:
        body = {"model": handle.model_id, "input": list(texts)}
        data = self._post(handle, body)
        try:
            rows = sorted(data["data"], key=lambda d: d.get("index", 0))
            return [list(map(float, row["embedding"])) for row in rows]
        except (KeyError, TypeError) as exc:
            raise LemmaForgeError(f"malformed embedding response: {data}") from exc


# -- deterministic scripted provider ----------------------------------------

_SECTION_RE = re.compile(r"^=== ([A-Z ]+) ===$", re.MULTILINE)

_MATH_SPAN_RES = [
    re.compile(r"\$\$(.+?)\$\$", re.DOTALL),
    re.compile(r"(?<!\$)\$([^$]+)\$(?!\$)"),
    re.compile(r"\\\((.+?)\\\)", re.DOTALL),
    re.compile(r"\\\[(.+?)\\\]", re.DOTALL),
    re.compile(r"\\begin\{equation\*?\}(.+?)\\end\{equation\*?\}", re.DOTALL),
    re.compile(r"\\begin\{align\*?\}(.+?)\\end\{align\*?\}", re.DOTALL),
]

_STANDARD_COMMANDS = (
    "log|exp|ln|sin|cos|tan|max|min|sup|inf|lim|det|deg|dim|frac|sqrt|sum|prod|int"
    "|leq|le|geq|ge|neq|ne|in|notin|subset|subseteq|supseteq|cup|cap|setminus"
    "|to|mapsto|rightarrow|longrightarrow|cdot|cdots|dots|ldots|times|pm|mp|infty"
    "|left|right|big|Big|bigg|Bigg|quad|qquad|text|mathrm|operatorname"
    "|alpha|beta|gamma|delta|epsilon|varepsilon|zeta|eta|theta|iota|kappa|lambda"
    "|mu|nu|xi|pi|rho|sigma|tau|upsilon|phi|varphi|chi|psi|omega|ell|partial|nabla"
)

_STANDARD_CMD_RE = re.compile(r"\\(?:%s)\b" % _STANDARD_COMMANDS)
_STANDARD_SET_RE = re.compile(r"\\mathbb\{[RCNZQ]\}")


def parse_sections(prompt: str) -> dict[str, str]:
    """Split a prompt into its ``=== NAME ===`` delimited sections."""
    sections: dict[str, str] = {}
    matches = list(_SECTION_RE.finditer(prompt))
    for i, m in enumerate(matches):
        name = m.group(1).strip()
        start = m.end()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(prompt)
        sections[name] = prompt[start:end].strip()
    return sections


def _span_is_standard(content: str) -> bool:
    s = _STANDARD_SET_RE.sub("", content)
    s = _STANDARD_CMD_RE.sub("", s)
    s = re.sub(r"\\[{}%,;!| ]", "", s)
    if re.search(r"\\[A-Za-z]+", s):
        return False
    if re.search(r"[A-Z]", s):
        return False
    return True


def nontrivial_math_spans(text: str) -> list[str]:
    """Math spans (as written, delimiters included) judged non-standard."""
    seen: set[str] = set()
    out: list[str] = []
    for pattern in _MATH_SPAN_RES:
        for m in pattern.finditer(text):
            inner = m.group(1).strip()
            core = re.sub(r"\s+", "", inner)
            if not core or core in seen:
                continue
            if _span_is_standard(inner):
                continue
            seen.add(core)
            out.append(m.group(0).strip())
    return out[:8]


def _strip_math_delimiters(surface: str) -> str:
    s = surface.strip()
    for pattern in _MATH_SPAN_RES:
        m = pattern.fullmatch(s)
        if m:
            return m.group(1).strip()
    return s


def _stable_digest(text: str) -> bytes:
    return hashlib.sha256(re.sub(r"\s+", " ", text.strip()).encode("utf-8")).digest()


class ScriptedProvider:
    """Deterministic stand-in for a live model.

    Replies are pure functions of the prompt content, so recording a scripted
    run and replaying it later is exact. The heuristics are intentionally
    simple; they exist to exercise the pipeline offline, not to be clever.
    """

    def chat(self, handle: LlmHandle, prompt: str) -> ChatReply:
        task = prompt.splitlines()[0].strip() if prompt else ""
        sections = parse_sections(prompt)
        if task == "TASK: ENUMERATE-OBJECTS":
            text = self._enumerate(sections)
        elif task == "TASK: EXTRACT-ASSUMPTIONS":
            text = self._extract(sections)
        elif task == "TASK: JUDGE-SELF-CONTAINEDNESS":
            text = self._judge_sc(sections)
        elif task == "TASK: PROVE":
            text = self._prove(sections)
        elif task == "TASK: JUDGE-PROOF":
            text = self._judge_proof(sections)
        else:
            text = "UNSUPPORTED TASK"
        return ChatReply(text, estimate_tokens(prompt), estimate_tokens(text))

    def _enumerate(self, sections: dict[str, str]) -> str:
        statement = sections.get("STATEMENT", "")
        spans = nontrivial_math_spans(statement)
        listing = "\n".join(spans)
        return f"Objects that are neither standard nor defined in place:\n```\n{listing}\n```"

    def _extract(self, sections: dict[str, str]) -> str:
        context = sections.get("CONTEXT", "")
        paragraphs = [p.strip() for p in re.split(r"\n\s*\n", context) if p.strip()]
        definitions: list[str] = []
        hypotheses: list[str] = []
        for para in paragraphs:
            is_def = (
                ":=" in para
                or "\\begin{definition" in para
                or re.search(r"\bis called\b", para) is not None
            )
            is_hyp = re.search(r"\b(?:Assume|Suppose|we assume)\b", para) is not None
            if is_def:
                items = re.split(r"\\item\b", para)
                if len(items) > 1:
                    definitions.extend(it.strip() for it in items[1:] if ":=" in it)
                else:
                    definitions.append(para)
            elif is_hyp:
                hypotheses.append(para)
        def_block = "\n---\n".join(definitions)
        hyp_block = "\n---\n".join(hypotheses)
        return (
            "DEFINITIONS:\n```\n" + def_block + "\n```\n"
            "HYPOTHESES:\n```\n" + hyp_block + "\n```"
        )

    def _judge_sc(self, sections: dict[str, str]) -> str:
        statement = sections.get("STATEMENT", "")
        context = sections.get("CONTEXT", "")
        haystack = re.sub(r"\s+", "", context)
        missing = []
        for span in nontrivial_math_spans(statement):
            core = re.sub(r"\s+", "", _strip_math_delimiters(span))
            if core not in haystack:
                missing.append(span)
        if missing:
            reasons = ", ".join(missing)
            return (
                f"The following objects are used but defined nowhere in the "
                f"supplied material: {reasons}.\nVERDICT: NOT-SELF-CONTAINED"
            )
        return (
            "Every non-standard object in the statement is covered by the "
            "supplied definitions and hypotheses.\nVERDICT: SELF-CONTAINED"
        )

    def _prove(self, sections: dict[str, str]) -> str:
        statement = sections.get("STATEMENT", "")
        hypotheses = sections.get("HYPOTHESES", "")
        digest = _stable_digest(statement)
        n_steps = 2 + digest[0] % 3
        has_hyp = bool(hypotheses.strip())
        lines = []
        for i in range(1, n_steps + 1):
            sketchy = digest[i] % 5 == 0
            lines.append(f"STEP {i}:")
            lines.append(f"SUBGOAL: Establish intermediate claim {i} toward the statement.")
            if has_hyp:
                lines.append("CITES: 1")
            if digest[i] % 2 == 0:
                lines.append("THEOREMS: Cauchy-Schwarz inequality")
            if sketchy:
                lines.append("PROOF: The claim follows (sketch) by a routine estimate.")
            else:
                lines.append(
                    "PROOF: Expanding the definitions and applying the cited "
                    "hypothesis directly gives the bound, which proves the claim."
                )
        return "\n".join(lines)

    def _judge_proof(self, sections: dict[str, str]) -> str:
        steps = sections.get("STEPS", "")
        blocks = re.split(r"(?m)^STEP (\d+):", steps)
        lines = []
        # re.split yields [preamble, idx, body, idx, body, ...]
        for i in range(1, len(blocks) - 1, 2):
            idx = blocks[i]
            body = blocks[i + 1]
            if "(sketch)" in body:
                lines.append(f"STEP {idx}: FALSE - the argument is only sketched, not carried out.")
            else:
                lines.append(f"STEP {idx}: TRUE - follows from the cited hypotheses.")
        return "\n".join(lines)

    def embed(self, handle: LlmHandle, texts: Sequence[str]) -> list[list[float]]:
        return [self._embed_one(t, handle.dim) for t in texts]

    @staticmethod
    def _embed_one(text: str, dim: int) -> list[float]:
        # Occurrence-weighted bag of math-span concepts; texts sharing the
        # same symbols land close together, unrelated texts nearly orthogonal.
        concepts: dict[str, int] = {}
        for pattern in _MATH_SPAN_RES:
            for m in pattern.finditer(text):
                core = re.sub(r"\s+", "", m.group(1))
                if core:
                    concepts[core] = concepts.get(core, 0) + 1
        vec = np.zeros(dim, dtype=np.float64)
        if not concepts:
            concepts = {re.sub(r"\s+", " ", text.strip()): 1}
        for core, count in concepts.items():
            seed = int.from_bytes(hashlib.sha256(core.encode("utf-8")).digest()[:8], "big")
            rng = np.random.Generator(np.random.PCG64(seed))
            direction = rng.standard_normal(dim)
            direction /= np.linalg.norm(direction)
            vec += count * direction
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return [float(x) for x in vec]


# ---------------------------------------------------------------------------
# Rate limiting


class TokenBucket:
    """Blocking requests-per-minute limiter."""

    def __init__(self, rpm: int, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.capacity = float(rpm)
        self.tokens = float(rpm)
        self.rate = rpm / 60.0
        self.clock = clock
        self.sleep = sleep
        self.updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self.sleep(wait)


# ---------------------------------------------------------------------------
# Gateway


def _utc_now_iso() -> str:
    import datetime as _dt

    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Gateway:
    """Thread-safe front door for all model calls.

    ``mode`` selects how requests are served:

    * ``"live"``   — each handle's configured provider is called directly.
    * ``"record"`` — as live, but every reply is written to ``fixture_dir``.
    * ``"replay"`` — replies come exclusively from ``fixture_dir``; an
      unrecorded request raises :class:`MissingFixtureError`.
    """

    def __init__(
        self,
        handles: dict[str, LlmHandle] | None = None,
        mode: str = "live",
        fixture_dir: str | Path | None = None,
        ledger_path: str | Path | None = None,
        max_in_flight: int = 8,
        sleep: Callable[[float], None] = time.sleep,
        providers: dict[str, object] | None = None,
    ):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown gateway mode {mode!r}")
        self.handles = dict(handles or {})
        self.mode = mode
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        if mode in ("record", "replay") and self.fixture_dir is None:
            raise ValueError(f"mode {mode!r} requires a fixture directory")
        self.ledger_path = Path(ledger_path) if ledger_path else None
        self._records: list[CallRecord] = []
        self._ledger_lock = threading.Lock()
        self._inflight = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep
        self._buckets: dict[str, TokenBucket] = {}
        self._providers = {"http": HttpProvider(), "scripted": ScriptedProvider()}
        if providers:
            self._providers.update(providers)

    # -- bookkeeping --------------------------------------------------------

    @property
    def records(self) -> list[CallRecord]:
        with self._ledger_lock:
            return list(self._records)

    def resolve(self, name: str | LlmHandle) -> LlmHandle:
        if isinstance(name, LlmHandle):
            return name
        if name in self.handles:
            return self.handles[name]
        for handle in self.handles.values():
            if handle.model_id == name:
                return handle
        raise KeyError(f"no configured model named {name!r}")

    def _provider_for(self, handle: LlmHandle):
        try:
            return self._providers[handle.provider]
        except KeyError:
            raise ValueError(f"unknown provider kind {handle.provider!r}") from None

    def _bucket(self, handle: LlmHandle) -> TokenBucket | None:
        if not handle.requests_per_minute:
            return None
        with self._ledger_lock:
            if handle.model_id not in self._buckets:
                self._buckets[handle.model_id] = TokenBucket(
                    handle.requests_per_minute, sleep=self._sleep
                )
            return self._buckets[handle.model_id]

    def _append(self, record: CallRecord) -> None:
        with self._ledger_lock:
            self._records.append(record)
            if self.ledger_path is not None:
                self.ledger_path.parent.mkdir(parents=True, exist_ok=True)
                with self.ledger_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record.to_json_dict(), ensure_ascii=False) + "\n")

    # -- fixtures ------------------------------------------------------------

    def _fixture_path(self, rhash: str) -> Path:
        assert self.fixture_dir is not None
        return self.fixture_dir / f"{rhash}.json"

    def _load_fixture(self, rhash: str) -> dict:
        path = self._fixture_path(rhash)
        if not path.exists():
            raise MissingFixtureError(rhash)
        return json.loads(path.read_text("utf-8"))

    def _store_fixture(self, rhash: str, payload: dict) -> None:
        assert self.fixture_dir is not None
        self.fixture_dir.mkdir(parents=True, exist_ok=True)
        tmp = self._fixture_path(rhash).with_suffix(".json.tmp")
        tmp.write_text(json.dumps(payload, ensure_ascii=False, indent=1), "utf-8")
        tmp.replace(self._fixture_path(rhash))

    # -- calls ---------------------------------------------------------------

    def _with_retries(self, fn):
        last: Exception | None = None
        for attempt in range(RETRY_ATTEMPTS):
            try:
                return fn()
            except TransientError as exc:
                last = exc
                if attempt < RETRY_ATTEMPTS - 1:
                    self._sleep(RETRY_BASE_DELAY * (2**attempt))
        assert last is not None
        raise last

    def chat(self, model: str | LlmHandle, prompt: str, stage: str = "",
             mode: str = "") -> str:
        handle = self.resolve(model)
        if handle.max_prompt_chars is not None and len(prompt) > handle.max_prompt_chars:
            raise ContextLengthError(
                f"prompt of {len(prompt)} chars exceeds limit "
                f"{handle.max_prompt_chars} for {handle.model_id}"
            )
        rhash = request_hash(handle.model_id, "chat", prompt, handle.decode_params())
        start = time.monotonic()
        if self.mode == "replay":
            fixture = self._load_fixture(rhash)
            reply = ChatReply(
                fixture["reply"], fixture["prompt_tokens"], fixture["completion_tokens"]
            )
        else:
            bucket = self._bucket(handle)
            if bucket is not None:
                bucket.acquire()
            with self._inflight:
                reply = self._with_retries(
                    lambda: self._provider_for(handle).chat(handle, prompt)
                )
            if self.mode == "record":
                self._store_fixture(
                    rhash,
                    {
                        "request_hash": rhash,
                        "kind": "chat",
                        "model_id": handle.model_id,
                        "prompt": prompt,
                        "reply": reply.text,
                        "prompt_tokens": reply.prompt_tokens,
                        "completion_tokens": reply.completion_tokens,
                    },
                )
        self._append(
            CallRecord(
                request_hash=rhash,
                kind="chat",
                model_id=handle.model_id,
                stage=stage,
                mode=mode,
                prompt=prompt,
                reply=reply.text,
                prompt_tokens=reply.prompt_tokens,
                completion_tokens=reply.completion_tokens,
                latency_s=round(time.monotonic() - start, 6),
                timestamp=_utc_now_iso(),
            )
        )
        return reply.text

    def embed(self, model: str | LlmHandle, texts: Sequence[str], stage: str = "",
              mode: str = "", batch_size: int = DEFAULT_EMBED_BATCH) -> list[list[float]]:
        handle = self.resolve(model)
        texts = list(texts)
        for t in texts:
            if not isinstance(t, str) or not t:
                raise ValueError("embed() requires non-empty strings")
        vectors: list[list[float]] = []
        for off in range(0, len(texts), batch_size):
            batch = texts[off : off + batch_size]
            vectors.extend(self._embed_batch(handle, batch, stage, mode))
        return vectors

    def _embed_batch(self, handle: LlmHandle, batch: list[str], stage: str,
                     mode: str) -> list[list[float]]:
        rhash = request_hash(handle.model_id, "embed", batch, {"dim": handle.dim})
        start = time.monotonic()
        if self.mode == "replay":
            fixture = self._load_fixture(rhash)
            vectors = fixture["vectors"]
            prompt_tokens = fixture["prompt_tokens"]
        else:
            bucket = self._bucket(handle)
            if bucket is not None:
                bucket.acquire()
            with self._inflight:
                vectors = self._with_retries(
                    lambda: self._provider_for(handle).embed(handle, batch)
                )
            prompt_tokens = sum(estimate_tokens(t) for t in batch)
            if self.mode == "record":
                self._store_fixture(
                    rhash,
                    {
                        "request_hash": rhash,
                        "kind": "embed",
                        "model_id": handle.model_id,
                        "texts": batch,
                        "vectors": vectors,
                        "prompt_tokens": prompt_tokens,
                        "completion_tokens": 0,
                    },
                )
        self._append(
            CallRecord(
                request_hash=rhash,
                kind="embed",
                model_id=handle.model_id,
                stage=stage,
                mode=mode,
                prompt="\n".join(batch),
                reply=f"<{len(vectors)} vectors>",
                prompt_tokens=prompt_tokens,
                completion_tokens=0,
                latency_s=round(time.monotonic() - start, 6),
                timestamp=_utc_now_iso(),
            )
        )
        return vectors


# ---------------------------------------------------------------------------
# Token accounting


def token_ledger(records: Sequence[CallRecord]) -> dict:
    """Aggregate call records into per-stage and per-mode token totals.

    Chat and embedding traffic are separate line items: ``prompt_tokens``
    counts chat prompts only, while embedding input accrues under
    ``embed_tokens``, so context-size comparisons between retrieval modes
    are not skewed by vector-indexing traffic.
    """

    def empty() -> dict:
        return {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0, "embed_tokens": 0}

    totals = empty()
    by_stage: dict[str, dict] = {}
    by_mode: dict[str, dict] = {}

    def bump(bucket: dict, rec: CallRecord) -> None:
        bucket["calls"] += 1
        if rec.kind == "embed":
            bucket["embed_tokens"] += rec.prompt_tokens
        else:
            bucket["prompt_tokens"] += rec.prompt_tokens
            bucket["completion_tokens"] += rec.completion_tokens

    for rec in records:
        bump(totals, rec)
        bump(by_stage.setdefault(rec.stage or "<unstaged>", empty()), rec)
        bump(by_mode.setdefault(rec.mode or "<unmoded>", empty()), rec)
    return {"total": totals, "by_stage": by_stage, "by_mode": by_mode}


def load_call_records(path: str | Path) -> list[CallRecord]:
    records = []
    path = Path(path)
    if not path.exists():
        return records
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(CallRecord(**json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# Configuration


_HANDLE_KEYS = {
    "model_id",
    "provider",
    "endpoint",
    "auth_env",
    "temperature",
    "max_tokens",
    "dim",
    "max_in_flight",
    "requests_per_minute",
    "max_prompt_chars",
}


def load_models_config(path: str | Path) -> tuple[dict[str, LlmHandle], dict]:
    """Read a TOML config with ``[models.<alias>]`` and ``[embedders.<alias>]``
    tables; returns (alias -> handle, gateway options)."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    handles: dict[str, LlmHandle] = {}
    for section in ("models", "embedders"):
        for alias, table in raw.get(section, {}).items():
            unknown = set(table) - _HANDLE_KEYS
            if unknown:
                raise ValueError(f"unknown keys {sorted(unknown)} in [{section}.{alias}]")
            handles[alias] = LlmHandle(**table)
    return handles, raw.get("gateway", {})
