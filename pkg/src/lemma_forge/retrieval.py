"""Build the context a lemma is read against.

Two modes. ``full_context`` hands the prover everything that precedes the
lemma in the paper. ``vector_retrieval`` asks a model which objects in the
statement need defining, then pulls the defining paragraphs by exact literal
match and by embedding similarity over the preceding paragraphs.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import EmbeddingServiceError, LlmProtocolError
from .latex_corpus import LemmaRecord, NormalizedDocument, Paragraph, full_prefix, preceding_paragraphs
from .llm_gateway import Gateway, estimate_tokens
from .prompting import render

log = logging.getLogger(__name__)

FULL_CONTEXT = "full_context"
VECTOR_RETRIEVAL = "vector_retrieval"

DEFAULT_K = 8
MIN_K, MAX_K = 3, 12
DEFAULT_TAU = 0.75

ENUMERATE_REPROMPTS = 2

_FENCE_RE = re.compile(r"```+[^\n`]*\n(.*?)```", re.DOTALL)

_REPROMPT_NUDGES = (
    "",
    "\n\nFormat reminder: reply with exactly one fenced code block, one object per line.",
    "\n\nYour previous reply was unreadable. Output ONLY a fenced code block "
    "(``` on its own line before and after), one object per line, nothing else.",
)


@dataclass(frozen=True)
class MathObject:
    """An object the statement uses but does not define."""

    name: str

    @property
    def query(self) -> str:
        return f"Definition of {self.name}"


@dataclass(frozen=True)
class RetrievalHit:
    object_name: str
    paragraph_index: int
    source: str  # "regex" | "vector"
    score: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "object_name": self.object_name,
            "paragraph_index": self.paragraph_index,
            "source": self.source,
            "score": self.score,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RetrievalHit":
        return cls(d["object_name"], d["paragraph_index"], d["source"], d.get("score"))


@dataclass(frozen=True)
class ContextBundle:
    lemma_id: str
    arxiv_id: str
    mode: str
    objects: tuple[str, ...]
    hits: tuple[RetrievalHit, ...]
    member_indices: tuple[int, ...]
    context_text: str
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU
    degraded: bool = False

    @property
    def token_estimate(self) -> int:
        return estimate_tokens(self.context_text)

    def to_json_dict(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "arxiv_id": self.arxiv_id,
            "mode": self.mode,
            "objects": list(self.objects),
            "hits": [h.to_json_dict() for h in self.hits],
            "member_indices": list(self.member_indices),
            "context_text": self.context_text,
            "k": self.k,
            "tau": self.tau,
            "degraded": self.degraded,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ContextBundle":
        return cls(
            lemma_id=d["lemma_id"],
            arxiv_id=d["arxiv_id"],
            mode=d["mode"],
            objects=tuple(d["objects"]),
            hits=tuple(RetrievalHit.from_json_dict(h) for h in d["hits"]),
            member_indices=tuple(d["member_indices"]),
            context_text=d["context_text"],
            k=d["k"],
            tau=d["tau"],
            degraded=d["degraded"],
        )


# ---------------------------------------------------------------------------
# Object enumeration


def parse_fenced_list(reply: str) -> list[str]:
    m = _FENCE_RE.search(reply)
    if m is None:
        raise LlmProtocolError("reply carries no fenced code block")
    return [line.strip() for line in m.group(1).splitlines() if line.strip()]


def enumerate_objects(
    gateway: Gateway, model: str, statement: str, *, stage: str = "retrieve",
    mode: str = VECTOR_RETRIEVAL,
) -> list[MathObject]:
    """Objects needing definitions, deduplicated, statement order preserved.

    Malformed replies are re-prompted with an increasingly explicit format
    nudge; after the final attempt the lemma degrades to zero objects.
    """
    base = render("enumerate_objects.txt", statement=statement)
    for attempt in range(1 + ENUMERATE_REPROMPTS):
        reply = gateway.chat(model, base + _REPROMPT_NUDGES[attempt], stage=stage, mode=mode)
        try:
            names = parse_fenced_list(reply)
        except LlmProtocolError:
            log.warning("object enumeration attempt %d unparseable", attempt + 1)
            continue
        seen: set[str] = set()
        out = []
        for name in names:
            if name not in seen:
                seen.add(name)
                out.append(MathObject(name))
        return out
    log.error("object enumeration failed %d times; no objects", 1 + ENUMERATE_REPROMPTS)
    return []


# ---------------------------------------------------------------------------
# Literal matching


_MATH_DELIM_RE = re.compile(r"^\$\$?|\$\$?$|^\\\(|\\\)$|^\\\[|\\\]$")


def _strip_delims(name: str) -> str:
    prev = None
    out = name.strip()
    while prev != out:
        prev = out
        out = _MATH_DELIM_RE.sub("", out).strip()
    return out


def _flex_pattern(literal: str) -> re.Pattern | None:
    parts = [re.escape(tok) for tok in literal.split()]
    if not parts:
        return None
    return re.compile(r"\s+".join(parts))


def regex_paragraph_match(paragraphs: list[Paragraph], obj: MathObject) -> list[RetrievalHit]:
    """Paragraphs containing the object literally.

    Two spellings are tried: the object exactly as enumerated, and with
    outer math delimiters stripped (so ``$\\rho_T$`` still matches a
    paragraph that writes ``\\rho_T`` inside a larger formula). Whitespace
    differences never block a match.
    """
    patterns = []
    for variant in (obj.name, _strip_delims(obj.name)):
        pat = _flex_pattern(variant)
        if pat is not None and pat.pattern not in {p.pattern for p in patterns}:
            patterns.append(pat)
    hits = []
    for para in paragraphs:
        if any(p.search(para.text) for p in patterns):
            hits.append(RetrievalHit(obj.name, para.index, "regex"))
    return hits


# ---------------------------------------------------------------------------
# Embedding index


@dataclass
class EmbeddingIndex:
    paragraphs: list[Paragraph]
    vectors: np.ndarray = field(repr=False)  # shape (n, dim)

    def __post_init__(self):
        if len(self.paragraphs) != self.vectors.shape[0]:
            raise ValueError("one vector per paragraph required")


def build_index(
    gateway: Gateway, embedder: str, paragraphs: list[Paragraph], *,
    stage: str = "retrieve", mode: str = VECTOR_RETRIEVAL,
) -> EmbeddingIndex:
    texts = [p.text for p in paragraphs]
    if not texts:
        return EmbeddingIndex([], np.zeros((0, 1)))
    vectors = np.asarray(gateway.embed(embedder, texts, stage=stage, mode=mode), dtype=np.float64)
    return EmbeddingIndex(list(paragraphs), vectors)


def cosine_scores(index: EmbeddingIndex, query_vec: np.ndarray) -> np.ndarray:
    if index.vectors.shape[0] == 0:
        return np.zeros(0)
    qn = float(np.linalg.norm(query_vec))
    norms = np.linalg.norm(index.vectors, axis=1)
    denom = norms * qn
    dots = index.vectors @ query_vec
    return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


def query_index(
    index: EmbeddingIndex, query_vec: np.ndarray, obj: MathObject,
    k: int = DEFAULT_K, tau: float = DEFAULT_TAU,
) -> list[RetrievalHit]:
    """Top-k paragraphs with cosine strictly above tau; ties broken by
    ascending paragraph index."""
    if not MIN_K <= k <= MAX_K:
        raise ValueError(f"k={k} outside [{MIN_K}, {MAX_K}]")
    scores = cosine_scores(index, query_vec)
    candidates = [
        (float(s), p) for s, p in zip(scores, index.paragraphs) if float(s) > tau
    ]
    candidates.sort(key=lambda sp: (-sp[0], sp[1].index))
    return [
        RetrievalHit(obj.name, p.index, "vector", round(s, 9))
        for s, p in candidates[:k]
    ]


# ---------------------------------------------------------------------------
# Bundle assembly


def assemble_context(
    gateway: Gateway,
    *,
    chat_model: str,
    embedder: str,
    doc: NormalizedDocument,
    lemma: LemmaRecord,
    mode: str = VECTOR_RETRIEVAL,
    k: int = DEFAULT_K,
    tau: float = DEFAULT_TAU,
) -> ContextBundle:
    paragraphs = preceding_paragraphs(doc, lemma)
    if mode == FULL_CONTEXT:
        return ContextBundle(
            lemma_id=lemma.lemma_id,
            arxiv_id=lemma.arxiv_id,
            mode=mode,
            objects=(),
            hits=(),
            member_indices=tuple(p.index for p in paragraphs),
            context_text=full_prefix(doc, lemma).strip(),
            k=k,
            tau=tau,
        )
    if mode != VECTOR_RETRIEVAL:
        raise ValueError(f"unknown retrieval mode {mode!r}")

    objects = enumerate_objects(gateway, chat_model, lemma.statement, mode=mode)
    hits: list[RetrievalHit] = []
    degraded = False
    for obj in objects:
        hits.extend(regex_paragraph_match(paragraphs, obj))
    if objects and paragraphs:
        try:
            index = build_index(gateway, embedder, paragraphs, mode=mode)
            query_vecs = gateway.embed(
                embedder, [o.query for o in objects], stage="retrieve", mode=mode
            )
            for obj, qv in zip(objects, query_vecs):
                hits.extend(query_index(index, np.asarray(qv), obj, k=k, tau=tau))
        except EmbeddingServiceError as exc:
            log.error("embedding service failed (%s); literal matches only", exc)
            degraded = True
    member_indices = tuple(sorted({h.paragraph_index for h in hits}))
    by_index = {p.index: p for p in paragraphs}
    context_text = "\n\n".join(by_index[i].text for i in member_indices)
    return ContextBundle(
        lemma_id=lemma.lemma_id,
        arxiv_id=lemma.arxiv_id,
        mode=mode,
        objects=tuple(o.name for o in objects),
        hits=tuple(hits),
        member_indices=member_indices,
        context_text=context_text,
        k=k,
        tau=tau,
        degraded=degraded,
    )
