"""Normalize LaTeX sources and extract lemma statements with positional context.

Normalization produces a single flattened body per paper: comments stripped,
``\\input``/``\\include`` spliced in, user macros expanded (bounded), and
theorem-environment declarations collected into a catalog. A character index
maps every offset of the normalized body back to (source file, source offset)
so downstream tooling can point at the original archive.
"""

from __future__ import annotations

import bisect
import hashlib
import logging
import re
from dataclasses import dataclass, field

from .errors import MacroRecursionError, UnbalancedEnvironmentError
from .harvester import SourceArchive

log = logging.getLogger(__name__)

MACRO_EXPANSION_PASSES = 64
MISSING_INPUT_MARKER = "[[missing input: {name}]]"

_VERBATIM_ENVS = ("verbatim", "verbatim*", "lstlisting", "minted")

# Environment names that always denote a lemma, before any catalog additions.
LEMMA_ENV_ALIASES = frozenset({"lemma", "lem", "lemm", "lemme", "Lemma"})

_DEFINITION_ENV_NAMES = frozenset({"definition", "defn", "defi"})
_THEOREMLIKE_ENV_NAMES = frozenset(
    {
        "theorem",
        "thm",
        "lemma",
        "lem",
        "lemm",
        "lemme",
        "proposition",
        "prop",
        "corollary",
        "cor",
        "claim",
        "conjecture",
        "conj",
    }
)
_THEOREMLIKE_DISPLAYS = frozenset(
    {"theorem", "lemma", "proposition", "corollary", "claim", "conjecture"}
)
_DISPLAY_MATH_ENVS = frozenset(
    {
        "equation",
        "equation*",
        "align",
        "align*",
        "alignat",
        "alignat*",
        "gather",
        "gather*",
        "multline",
        "multline*",
        "eqnarray",
        "eqnarray*",
        "displaymath",
    }
)

_CITATION_RE = re.compile(r"\\(?:cite[A-Za-z]*|parencite|textcite|footcite)\b")

PROSE = "prose"
DEFINITION_ENV = "definition_env"
THEOREMLIKE_ENV = "theoremlike_env"
DISPLAY_MATH = "display_math"
OTHER_ENV = "other_env"


@dataclass(frozen=True)
class SourcePosition:
    file: str
    offset: int


class SegmentedText:
    """A string plus a map from its offsets back to source-file offsets.

    Internally a sorted list of segments ``(start, file, src_offset, literal)``;
    a literal segment advances the source offset with the text, a synthetic one
    (inserted markers, macro expansions) pins every char to one source spot.
    """

    __slots__ = ("text", "_segs")

    def __init__(self, text: str, segs: list[tuple[int, str, int, bool]]):
        self.text = text
        self._segs = segs

    @classmethod
    def from_file(cls, text: str, file_name: str) -> "SegmentedText":
        return cls(text, [(0, file_name, 0, True)] if text else [])

    def resolve(self, pos: int) -> SourcePosition:
        if not self._segs:
            return SourcePosition("", 0)
        pos = max(0, min(pos, len(self.text) - 1)) if self.text else 0
        idx = bisect.bisect_right([s[0] for s in self._segs], pos) - 1
        start, name, src, literal = self._segs[max(idx, 0)]
        return SourcePosition(name, src + (pos - start) if literal else src)

    def _clip(self, a: int, b: int) -> list[tuple[int, str, int, bool]]:
        out = []
        for i, (start, name, src, literal) in enumerate(self._segs):
            end = self._segs[i + 1][0] if i + 1 < len(self._segs) else len(self.text)
            lo, hi = max(start, a), min(end, b)
            if lo >= hi:
                continue
            out.append((lo, name, src + (lo - start) if literal else src, literal))
        return out

    def splice(self, start: int, end: int, replacement: "SegmentedText") -> None:
        """Replace ``[start, end)`` with another segmented text, keeping maps."""
        pre = self._clip(0, start)
        post = self._clip(end, len(self.text))
        delta = start + len(replacement.text) - end
        mid = [(s + start, n, o, lit) for (s, n, o, lit) in replacement._segs]
        self.text = self.text[:start] + replacement.text + self.text[end:]
        self._segs = pre + mid + [(s + delta, n, o, lit) for (s, n, o, lit) in post]

    def replace(self, start: int, end: int, new_text: str) -> None:
        """Replace ``[start, end)`` with synthetic text anchored at ``start``."""
        anchor = self.resolve(start)
        seg = [(0, anchor.file, anchor.offset, False)] if new_text else []
        self.splice(start, end, SegmentedText(new_text, seg))


@dataclass(frozen=True)
class NormalizedDocument:
    arxiv_id: str
    body: str
    env_catalog: dict[str, str]
    index: SegmentedText = field(repr=False, compare=False)

    def source_position(self, pos: int) -> SourcePosition:
        return self.index.resolve(pos)


@dataclass(frozen=True)
class LemmaRecord:
    lemma_id: str
    arxiv_id: str
    env_name: str
    title: str
    statement: str
    start: int
    end: int
    ordinal: int
    bears_reference: bool

    def to_json_dict(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "arxiv_id": self.arxiv_id,
            "env_name": self.env_name,
            "title": self.title,
            "statement": self.statement,
            "start": self.start,
            "end": self.end,
            "ordinal": self.ordinal,
            "bears_reference": self.bears_reference,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "LemmaRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class Paragraph:
    index: int
    kind: str
    text: str
    start: int
    end: int


# ---------------------------------------------------------------------------
# Scanning primitives


def _decode(data: bytes) -> str:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        text = data.decode("latin-1")
    return text.replace("\r\n", "\n").replace("\r", "\n")


def _escaped(text: str, pos: int) -> bool:
    """True when the char at ``pos`` is preceded by an odd run of backslashes."""
    n = 0
    while pos - n - 1 >= 0 and text[pos - n - 1] == "\\":
        n += 1
    return n % 2 == 1


def _verbatim_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    pos = 0
    while True:
        starts = [
            (text.find(f"\\begin{{{env}}}", pos), env)
            for env in _VERBATIM_ENVS
        ]
        starts = [(i, env) for i, env in starts if i >= 0]
        if not starts:
            return spans
        i, env = min(starts)
        close = text.find(f"\\end{{{env}}}", i)
        if close < 0:
            spans.append((i, len(text)))
            return spans
        end = close + len(f"\\end{{{env}}}")
        spans.append((i, end))
        pos = end


def _in_spans(pos: int, spans: list[tuple[int, int]]) -> bool:
    return any(a <= pos < b for a, b in spans)


def _read_group(text: str, pos: int) -> tuple[str, int] | None:
    """Read a balanced ``{...}`` group starting at ``pos``; None if absent."""
    if pos >= len(text) or text[pos] != "{":
        return None
    depth = 0
    i = pos
    while i < len(text):
        c = text[i]
        if c in "{}" and not _escaped(text, i):
            depth += 1 if c == "{" else -1
            if depth == 0:
                return text[pos + 1 : i], i + 1
        i += 1
    return None


def _read_optional(text: str, pos: int) -> tuple[str, int] | None:
    if pos >= len(text) or text[pos] != "[":
        return None
    depth = 0
    i = pos
    while i < len(text):
        c = text[i]
        if c in "[]" and not _escaped(text, i):
            depth += 1 if c == "[" else -1
            if depth == 0:
                return text[pos + 1 : i], i + 1
        i += 1
    return None


def _find_env_close(text: str, name: str, search_from: int) -> tuple[int, int]:
    """Offsets of the matching ``\\end{name}`` (start, end), honoring nesting.

    Raises UnbalancedEnvironmentError when the environment never closes.
    """
    token = re.compile(
        r"\\(begin|end)\{" + re.escape(name) + r"\}"
    )
    depth = 1
    for m in token.finditer(text, search_from):
        depth += 1 if m.group(1) == "begin" else -1
        if depth == 0:
            return m.start(), m.end()
    raise UnbalancedEnvironmentError(name, search_from)


# ---------------------------------------------------------------------------
# Normalization passes


def _strip_comments(seg: SegmentedText) -> None:
    text = seg.text
    verbatim = _verbatim_spans(text)
    removals: list[tuple[int, int]] = []
    pos = 0
    while True:
        pct = text.find("%", pos)
        if pct < 0:
            break
        if _escaped(text, pct) or _in_spans(pct, verbatim):
            pos = pct + 1
            continue
        eol = text.find("\n", pct)
        eol = len(text) if eol < 0 else eol
        line_start = text.rfind("\n", 0, pct) + 1
        if text[line_start:pct].strip() == "":
            # Whole-line comment: drop the line, newline included.
            removals.append((line_start, min(eol + 1, len(text))))
        else:
            removals.append((pct, eol))
        pos = eol
    for a, b in reversed(removals):
        seg.replace(a, b, "")


_INPUT_RE = re.compile(r"\\(?:input|include)\s*\{([^{}]+)\}")


def _resolve_input(name: str, files: dict[str, bytes]) -> str | None:
    name = name.strip().lstrip("./")
    for candidate in (name, name + ".tex"):
        if candidate in files:
            return candidate
    return None


def _inline_inputs(seg: SegmentedText, files: dict[str, bytes], stack: tuple[str, ...]) -> None:
    while True:
        verbatim = _verbatim_spans(seg.text)
        m = next(
            (m for m in _INPUT_RE.finditer(seg.text) if not _in_spans(m.start(), verbatim)),
            None,
        )
        if m is None:
            return
        target = _resolve_input(m.group(1), files)
        if target is None:
            log.warning("missing input file %r", m.group(1))
            seg.replace(m.start(), m.end(), MISSING_INPUT_MARKER.format(name=m.group(1).strip()))
            continue
        if target in stack:
            log.warning("cyclic input %r skipped", target)
            seg.replace(m.start(), m.end(), MISSING_INPUT_MARKER.format(name=target))
            continue
        child = SegmentedText.from_file(_decode(files[target]), target)
        _strip_comments(child)
        _inline_inputs(child, files, stack + (target,))
        seg.splice(m.start(), m.end(), child)


_NEWTHEOREM_RE = re.compile(r"\\newtheorem\*?\{(\w+)\}")


def _collect_newtheorems(seg: SegmentedText) -> dict[str, str]:
    catalog: dict[str, str] = {}
    while True:
        m = _NEWTHEOREM_RE.search(seg.text)
        if m is None:
            return catalog
        pos = m.end()
        opt = _read_optional(seg.text, pos)
        if opt is not None:
            pos = opt[1]
        display = _read_group(seg.text, pos)
        if display is None:
            # Malformed declaration: drop the token to guarantee progress.
            seg.replace(m.start(), m.end(), "")
            continue
        catalog[m.group(1)] = display[0].strip()
        pos = display[1]
        trailing = _read_optional(seg.text, pos)
        if trailing is not None:
            pos = trailing[1]
        seg.replace(m.start(), pos, "")


@dataclass(frozen=True)
class MacroDef:
    name: str
    n_args: int
    opt_default: str | None
    body: str


_NEWCOMMAND_RE = re.compile(
    r"\\(?:re|provide)?newcommand\*?\s*(?:\{\\(\w+)\}|\\(\w+))\s*"
)
_DEF_RE = re.compile(r"\\def\s*\\(\w+)((?:#\d)*)\s*")


def _collect_macros(seg: SegmentedText) -> dict[str, MacroDef]:
    macros: dict[str, MacroDef] = {}
    pos = 0
    while True:
        m_new = _NEWCOMMAND_RE.search(seg.text, pos)
        m_def = _DEF_RE.search(seg.text, pos)
        candidates = [m for m in (m_new, m_def) if m is not None]
        if not candidates:
            return macros
        m = min(candidates, key=lambda x: x.start())
        cursor = m.end()
        if m.re is _NEWCOMMAND_RE:
            name = m.group(1) or m.group(2)
            n_args, opt_default = 0, None
            got = _read_optional(seg.text, cursor)
            if got is not None and got[0].strip().isdigit():
                n_args, cursor = int(got[0]), got[1]
                got = _read_optional(seg.text, cursor)
                if got is not None:
                    opt_default, cursor = got
        else:
            name = m.group(1)
            n_args, opt_default = len(m.group(2)) // 2, None
        body = _read_group(seg.text, cursor)
        if body is None:
            pos = m.end()  # malformed: leave in place, move past it
            continue
        if n_args > 9:
            pos = body[1]
            continue
        macros[name] = MacroDef(name, n_args, opt_default, body[0])
        seg.replace(m.start(), body[1], "")


def _expand_call(text: str, m: re.Match, macro: MacroDef) -> tuple[int, str] | None:
    """Parse one call's arguments; returns (call end, replacement) or None."""
    cursor = m.end()
    args: list[str] = []
    if macro.opt_default is not None:
        got = _read_optional(text, cursor)
        if got is not None:
            args.append(got[0])
            cursor = got[1]
        else:
            args.append(macro.opt_default)
    while len(args) < macro.n_args:
        while cursor < len(text) and text[cursor] in " \t\n":
            cursor += 1
        got = _read_group(text, cursor)
        if got is None:
            if cursor < len(text) and macro.n_args - len(args) == 1 and text[cursor] not in "\\":
                # TeX lets a single non-brace token serve as the last argument.
                args.append(text[cursor])
                cursor += 1
                continue
            return None
        args.append(got[0])
        cursor = got[1]
    replacement = re.sub(
        r"#(\d)",
        lambda g: args[int(g.group(1)) - 1] if int(g.group(1)) <= len(args) else g.group(0),
        macro.body,
    )
    return cursor, replacement


def _expand_macros(seg: SegmentedText, macros: dict[str, MacroDef]) -> None:
    if not macros:
        return
    name_re = re.compile(
        r"\\(" + "|".join(sorted(map(re.escape, macros), key=len, reverse=True)) + r")(?![A-Za-z])"
    )
    for _ in range(MACRO_EXPANSION_PASSES):
        verbatim = _verbatim_spans(seg.text)
        edits: list[tuple[int, int, str]] = []
        scan_from = 0
        while True:
            m = name_re.search(seg.text, scan_from)
            if m is None:
                break
            scan_from = m.end()
            if _escaped(seg.text, m.start()) or _in_spans(m.start(), verbatim):
                continue
            parsed = _expand_call(seg.text, m, macros[m.group(1)])
            if parsed is None:
                continue
            edits.append((m.start(), parsed[0], parsed[1]))
            scan_from = parsed[0]
        if not edits:
            return
        for a, b, rep in reversed(edits):
            seg.replace(a, b, rep)
    raise MacroRecursionError(
        f"macro expansion did not settle within {MACRO_EXPANSION_PASSES} passes "
        f"(candidates: {sorted(macros)[:5]})"
    )


def normalize(archive: SourceArchive) -> NormalizedDocument:
    """Flatten an archive's main file into one normalized body."""
    seg = SegmentedText.from_file(_decode(archive.files[archive.main_tex]), archive.main_tex)
    _strip_comments(seg)
    _inline_inputs(seg, archive.files, (archive.main_tex,))
    catalog = _collect_newtheorems(seg)
    macros = _collect_macros(seg)
    _expand_macros(seg, macros)
    return NormalizedDocument(
        arxiv_id=archive.arxiv_id, body=seg.text, env_catalog=catalog, index=seg
    )


def normalize_text(
    text: str, *, files: dict[str, bytes] | None = None, arxiv_id: str = "test"
) -> NormalizedDocument:
    """Normalize a loose TeX string (testing convenience)."""
    payload = dict(files or {})
    payload["main.tex"] = text.encode("utf-8")
    if b"\\begin{document}" not in payload["main.tex"]:
        payload["main.tex"] += b"\n\\begin{document}\\end{document}\n"
        doc = normalize(SourceArchive(arxiv_id, payload, "main.tex"))
        trailer = "\n\\begin{document}\\end{document}\n"
        return NormalizedDocument(
            arxiv_id=doc.arxiv_id,
            body=doc.body[: -len(trailer)],
            env_catalog=doc.env_catalog,
            index=doc.index,
        )
    return normalize(SourceArchive(arxiv_id, payload, "main.tex"))


# ---------------------------------------------------------------------------
# Lemma extraction


def lemma_env_names(catalog: dict[str, str]) -> frozenset[str]:
    extra = {name for name, display in catalog.items() if display.strip().lower() == "lemma"}
    return LEMMA_ENV_ALIASES | extra


def extract_lemmas(doc: NormalizedDocument) -> list[LemmaRecord]:
    """Lemma records in document order; unbalanced environments are skipped."""
    names = lemma_env_names(doc.env_catalog)
    begin_re = re.compile(
        r"\\begin\{(" + "|".join(sorted(map(re.escape, names))) + r")\}"
    )
    records: list[LemmaRecord] = []
    pos = 0
    ordinal = 0
    while True:
        m = begin_re.search(doc.body, pos)
        if m is None:
            return records
        name = m.group(1)
        try:
            close_start, close_end = _find_env_close(doc.body, name, m.end())
        except UnbalancedEnvironmentError as exc:
            log.warning("%s: unbalanced %s at offset %d, skipped", doc.arxiv_id, name, exc.offset)
            pos = m.end()
            continue
        inner_start = m.end()
        title = ""
        opt = _read_optional(doc.body, inner_start)
        if opt is not None:
            title, inner_start = opt[0].strip(), opt[1]
        statement = doc.body[inner_start:close_start].strip()
        ordinal += 1
        digest = hashlib.sha256(
            f"{doc.arxiv_id}\n{statement}".encode("utf-8")
        ).hexdigest()
        records.append(
            LemmaRecord(
                lemma_id=digest[:16],
                arxiv_id=doc.arxiv_id,
                env_name=name,
                title=title,
                statement=statement,
                start=m.start(),
                end=close_end,
                ordinal=ordinal,
                bears_reference=bool(_CITATION_RE.search(statement)),
            )
        )
        pos = close_end


# ---------------------------------------------------------------------------
# Paragraph segmentation


def _classify_env(name: str, catalog: dict[str, str]) -> str:
    display = catalog.get(name, "").strip().lower()
    if name in _DEFINITION_ENV_NAMES or display.startswith("definition"):
        return DEFINITION_ENV
    if name in _THEOREMLIKE_ENV_NAMES or display in _THEOREMLIKE_DISPLAYS:
        return THEOREMLIKE_ENV
    if name in _DISPLAY_MATH_ENVS:
        return DISPLAY_MATH
    return OTHER_ENV


_BLOCK_OPEN_RE = re.compile(r"\\begin\{([\w*]+)\}|\\\[|\$\$")
_BLANK_RE = re.compile(r"\n[ \t]*\n+")


def _body_start(doc: NormalizedDocument) -> int:
    marker = doc.body.find("\\begin{document}")
    return marker + len("\\begin{document}") if marker >= 0 else 0


def segment_paragraphs(doc: NormalizedDocument, end: int | None = None) -> list[Paragraph]:
    """Split ``body[body_start:end]`` into paragraphs.

    Environments and display math are atomic paragraphs; the prose between
    them splits on blank lines. Blocks that never close are swallowed up to
    ``end`` rather than dropped.
    """
    lo = _body_start(doc)
    hi = len(doc.body) if end is None else end
    text = doc.body
    paragraphs: list[Paragraph] = []

    def flush_prose(a: int, b: int) -> None:
        cursor = a
        for gap in _BLANK_RE.finditer(text, a, b):
            _append(PROSE, cursor, gap.start())
            cursor = gap.end()
        _append(PROSE, cursor, b)

    def _append(kind: str, a: int, b: int) -> None:
        chunk = text[a:b].strip()
        if chunk:
            paragraphs.append(Paragraph(len(paragraphs), kind, chunk, a, b))

    pos = lo
    prose_from = lo
    while pos < hi:
        m = _BLOCK_OPEN_RE.search(text, pos, hi)
        if m is None:
            break
        if _escaped(text, m.start()) or (m.group(0) == "$$" and _escaped(text, m.start())):
            pos = m.start() + 1
            continue
        flush_prose(prose_from, m.start())
        if m.group(1):  # \begin{...}
            name = m.group(1)
            try:
                _, block_end = _find_env_close(text[:hi], name, m.end())
            except UnbalancedEnvironmentError:
                block_end = hi
            _append(_classify_env(name, doc.env_catalog), m.start(), block_end)
        elif m.group(0) == "\\[":
            close = text.find("\\]", m.end(), hi)
            block_end = hi if close < 0 else close + 2
            _append(DISPLAY_MATH, m.start(), block_end)
        else:  # $$
            close = text.find("$$", m.end(), hi)
            block_end = hi if close < 0 else close + 2
            _append(DISPLAY_MATH, m.start(), block_end)
        pos = prose_from = block_end
    flush_prose(prose_from, hi)
    return paragraphs


def preceding_paragraphs(doc: NormalizedDocument, lemma: LemmaRecord) -> list[Paragraph]:
    """Every paragraph that closes strictly before the lemma's environment."""
    return segment_paragraphs(doc, end=lemma.start)


def full_prefix(doc: NormalizedDocument, lemma: LemmaRecord) -> str:
    """The document body from ``\\begin{document}`` up to the lemma."""
    return doc.body[_body_start(doc) : lemma.start]
