"""Snapshot persistence: JSONL stages under a manifest of content hashes.

Every stage is written atomically (temp file + rename) and fingerprinted in
``manifest.json``, so a rerun can prove a stage is current before skipping
it, and any corruption is caught on read rather than propagated. Stage rows
are canonical JSON (sorted keys), which makes round-trips byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import ManifestIntegrityError, SchemaError, StageOrderError
from .harvester import SnapshotConfig

MANIFEST_NAME = "manifest.json"

STAGE_FILES = {
    "meta": "meta.jsonl",
    "lemmas": "lemmas.jsonl",
    "contexts": "contexts.jsonl",
    "bundles": "bundles.jsonl",
    "attempts": "attempts.jsonl",
    "judgments": "judgments.jsonl",
    "human_reviews": "human_reviews.jsonl",
}

STAGE_UPSTREAM = {
    "meta": (),
    "lemmas": ("meta",),
    "contexts": ("lemmas",),
    "bundles": ("contexts",),
    "attempts": ("bundles",),
    "judgments": ("attempts",),
    "human_reviews": ("bundles",),
}

# Keys whose values vary run to run even when the content is identical.
VOLATILE_KEYS = ("timestamp", "submitted_at", "latency_s")


def snapshot_id_for(config: SnapshotConfig) -> str:
    blob = json.dumps(config.to_json_dict(), sort_keys=True).encode("utf-8")
    return f"{config.week_start.isoformat()}-{hashlib.sha256(blob).hexdigest()[:12]}"


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def strip_volatile(value: Any, volatile: tuple[str, ...] = VOLATILE_KEYS) -> Any:
    """Recursively drop run-dependent keys (for determinism comparisons)."""
    if isinstance(value, dict):
        return {
            k: strip_volatile(v, volatile) for k, v in value.items() if k not in volatile
        }
    if isinstance(value, list):
        return [strip_volatile(v, volatile) for v in value]
    return value


class Snapshot:
    """One benchmark snapshot rooted at a directory."""

    def __init__(self, root: str | Path, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def create(cls, root: str | Path, config: SnapshotConfig) -> "Snapshot":
        root = Path(root)
        if (root / MANIFEST_NAME).exists():
            return cls.open(root)
        manifest = {
            "snapshot_id": snapshot_id_for(config),
            "config": config.to_json_dict(),
            "stages": {},
        }
        snap = cls(root, manifest)
        snap._write_manifest()
        return snap

    @classmethod
    def open(cls, root: str | Path) -> "Snapshot":
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.exists():
            raise FileNotFoundError(f"no snapshot manifest at {path}")
        return cls(root, json.loads(path.read_text(encoding="utf-8")))

    @property
    def snapshot_id(self) -> str:
        return self.manifest["snapshot_id"]

    @property
    def config(self) -> SnapshotConfig:
        return SnapshotConfig.from_json_dict(self.manifest["config"])

    def _write_manifest(self) -> None:
        data = json.dumps(self.manifest, indent=2, sort_keys=True) + "\n"
        _atomic_write(self.root / MANIFEST_NAME, data.encode("utf-8"))

    # -- stages ------------------------------------------------------------

    def stage_path(self, stage: str) -> Path:
        if stage not in STAGE_FILES:
            raise KeyError(f"unknown stage {stage!r}")
        return self.root / STAGE_FILES[stage]

    def has_stage(self, stage: str) -> bool:
        return stage in self.manifest["stages"] and self.stage_path(stage).exists()

    def require_upstream(self, stage: str) -> None:
        """Raise StageOrderError naming the first missing/stale prerequisite."""
        for upstream in STAGE_UPSTREAM[stage]:
            self.require_upstream(upstream)
            if not self.has_stage(upstream):
                raise StageOrderError(stage, upstream)
            try:
                self.verify_stage(upstream)
            except ManifestIntegrityError as exc:
                raise StageOrderError(stage, upstream) from exc

    def write_stage(self, stage: str, records: Iterable[dict]) -> Path:
        path = self.stage_path(stage)
        lines = [dumps_record(r) for r in records]
        payload = ("\n".join(lines) + "\n" if lines else "").encode("utf-8")
        _atomic_write(path, payload)
        self.manifest["stages"][stage] = {
            "file": path.name,
            "sha256": hashlib.sha256(payload).hexdigest(),
            "count": len(lines),
        }
        self._write_manifest()
        return path

    def append_records(self, stage: str, records: Iterable[dict]) -> Path:
        """Append rows (used by stages that grow over time), re-fingerprinting."""
        path = self.stage_path(stage)
        existing = path.read_bytes() if path.exists() else b""
        addition = "".join(dumps_record(r) + "\n" for r in records).encode("utf-8")
        _atomic_write(path, existing + addition)
        count = self.manifest["stages"].get(stage, {}).get("count", 0)
        if stage not in self.manifest["stages"] and existing:
            count = existing.count(b"\n")
        self.manifest["stages"][stage] = {
            "file": path.name,
            "sha256": _sha256_file(path),
            "count": count + len(addition.splitlines()),
        }
        self._write_manifest()
        return path

    def verify_stage(self, stage: str) -> None:
        entry = self.manifest["stages"].get(stage)
        if entry is None:
            raise ManifestIntegrityError(stage, "not recorded in manifest")
        path = self.stage_path(stage)
        if not path.exists():
            raise ManifestIntegrityError(stage, f"file {path.name} is missing")
        actual = _sha256_file(path)
        if actual != entry["sha256"]:
            raise ManifestIntegrityError(
                stage, f"content hash {actual[:12]}... does not match manifest"
            )

    def verify_all(self) -> None:
        for stage in self.manifest["stages"]:
            self.verify_stage(stage)

    def read_stage(self, stage: str) -> list[dict]:
        """Rows as dicts, after an integrity check; errors carry line numbers."""
        self.verify_stage(stage)
        rows: list[dict] = []
        with self.stage_path(stage).open("r", encoding="utf-8") as handle:
            for i, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"invalid JSON: {exc.msg}", line_number=i) from exc
                if not isinstance(row, dict):
                    raise SchemaError("row is not a JSON object", line_number=i)
                rows.append(row)
        return rows

    def read_typed(self, stage: str, factory: Callable[[dict], Any]) -> list[Any]:
        out = []
        for i, row in enumerate(self.read_stage(stage), start=1):
            try:
                out.append(factory(row))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"bad {stage} record: {exc}", line_number=i) from exc
        return out

    # -- report ------------------------------------------------------------

    def write_report(self, report_json: dict, markdown: str | None = None) -> Path:
        path = self.root / "report.json"
        data = json.dumps(report_json, indent=2, sort_keys=True) + "\n"
        _atomic_write(path, data.encode("utf-8"))
        if markdown is not None:
            _atomic_write(self.root / "report.md", markdown.encode("utf-8"))
        return path


# ---------------------------------------------------------------------------
# LaTeX export


@dataclass(frozen=True)
class StructureProblem:
    offset: int
    message: str


def check_latex_structure(text: str) -> list[StructureProblem]:
    """Structural validity: balanced braces and properly nested environments."""
    problems: list[StructureProblem] = []
    depth = 0
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            i += 2
            continue
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth < 0:
                problems.append(StructureProblem(i, "unmatched closing brace"))
                depth = 0
        i += 1
    if depth > 0:
        problems.append(StructureProblem(len(text), f"{depth} unclosed brace(s)"))

    stack: list[tuple[str, int]] = []
    for m in re.finditer(r"\\(begin|end)\{([\w*]+)\}", text):
        kind, name = m.group(1), m.group(2)
        if kind == "begin":
            stack.append((name, m.start()))
        elif not stack:
            problems.append(StructureProblem(m.start(), f"\\end{{{name}}} without begin"))
        else:
            open_name, open_at = stack.pop()
            if open_name != name:
                problems.append(
                    StructureProblem(
                        m.start(), f"\\end{{{name}}} closes \\begin{{{open_name}}}"
                    )
                )
    for name, at in stack:
        problems.append(StructureProblem(at, f"\\begin{{{name}}} never closed"))
    return problems


_LATEX_PREAMBLE = """\\documentclass{article}
\\usepackage{amsmath}
\\usepackage{amssymb}
\\usepackage{amsthm}
\\newtheorem{lemma}{Lemma}
\\begin{document}
"""


def export_latex(snapshot: Snapshot, out_path: str | Path | None = None) -> Path:
    """Render member bundles as a standalone LaTeX document.

    The output must pass the structural check; a bundle that breaks it is a
    pipeline bug, not an export-time surprise, so this raises.
    """
    from .extraction import BenchmarkBundle  # local to avoid a module cycle

    bundles = snapshot.read_typed("bundles", BenchmarkBundle.from_json_dict)
    members = [b for b in bundles if b.is_member]
    parts = [_LATEX_PREAMBLE, f"\\section*{{Snapshot {snapshot.snapshot_id}}}\n"]
    for b in members:
        parts.append(f"\\subsection*{{{b.arxiv_id} / {b.lemma_id}}}\n")
        block = b.assumption_block()
        if block:
            parts.append("\\paragraph{Assumptions}\n" + block + "\n")
        title = f"[{b.title}]" if b.title else ""
        parts.append(f"\\begin{{lemma}}{title}\n{b.statement}\n\\end{{lemma}}\n")
    parts.append("\\end{document}\n")
    text = "\n".join(parts)
    problems = check_latex_structure(text)
    if problems:
        first = problems[0]
        raise ValueError(
            f"export is structurally invalid at offset {first.offset}: {first.message}"
        )
    path = Path(out_path) if out_path else snapshot.root / "benchmark.tex"
    _atomic_write(path, text.encode("utf-8"))
    return path
