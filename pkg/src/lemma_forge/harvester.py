"""Fetch preprint listings and LaTeX source archives for a snapshot week.

The listing endpoint is any Atom/XML feed; source archives are gzip tarballs
or bare TeX payloads. Both are fetched over ``http(s)://`` or ``file://`` so
fixture feeds can stand in for the live archive during tests and offline runs.
"""

from __future__ import annotations

import concurrent.futures
import datetime as dt
import gzip
import hashlib
import io
import logging
import random
import re
import tarfile
import time
import urllib.error
import urllib.parse
import urllib.request
import xml.etree.ElementTree as ET
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .errors import ArchiveFormatError, ListingParseError, NetworkError, NoMainTexError

log = logging.getLogger(__name__)

# Category tags are either "<archive>.<SUBJECT>" (math.AP, cs.IT) or a bare
# hyphenated archive name (math-ph).
_DOMAIN_CODE_RE = re.compile(r"^[a-z]+(?:-[a-z]+)*(?:\.[A-Za-z]{2,})?$")

FETCH_RETRIES = 3
FETCH_BACKOFF_S = 1.0
DEFAULT_PARALLELISM = 4


@dataclass(frozen=True)
class PaperMeta:
    arxiv_id: str
    title: str
    domain_code: str
    submitted_at: dt.date
    source_url: str

    def __post_init__(self):
        if not self.arxiv_id:
            raise ValueError("arxiv_id must be non-empty")
        if not _DOMAIN_CODE_RE.match(self.domain_code):
            raise ValueError(f"malformed domain code {self.domain_code!r}")

    def to_json_dict(self) -> dict:
        return {
            "arxiv_id": self.arxiv_id,
            "title": self.title,
            "domain_code": self.domain_code,
            "submitted_at": self.submitted_at.isoformat(),
            "source_url": self.source_url,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PaperMeta":
        return cls(
            arxiv_id=d["arxiv_id"],
            title=d["title"],
            domain_code=d["domain_code"],
            submitted_at=dt.date.fromisoformat(d["submitted_at"]),
            source_url=d["source_url"],
        )


@dataclass(frozen=True)
class SnapshotConfig:
    week_start: dt.date
    week_end: dt.date
    domains: tuple[str, ...]
    per_domain_count: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.week_end < self.week_start:
            raise ValueError("week_end precedes week_start")
        if (self.week_end - self.week_start).days > 7:
            raise ValueError("snapshot window longer than 7 days")
        if self.per_domain_count not in (1, 2):
            raise ValueError("per_domain_count must be 1 or 2")
        object.__setattr__(self, "domains", tuple(self.domains))

    def to_json_dict(self) -> dict:
        return {
            "week_start": self.week_start.isoformat(),
            "week_end": self.week_end.isoformat(),
            "domains": list(self.domains),
            "per_domain_count": self.per_domain_count,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SnapshotConfig":
        return cls(
            week_start=dt.date.fromisoformat(d["week_start"]),
            week_end=dt.date.fromisoformat(d["week_end"]),
            domains=tuple(d["domains"]),
            per_domain_count=d["per_domain_count"],
            rng_seed=d["rng_seed"],
        )


def _is_safe_relative(path: str) -> bool:
    if path.startswith(("/", "\\")) or re.match(r"^[A-Za-z]:", path):
        return False
    return ".." not in Path(path).parts


@dataclass(frozen=True)
class SourceArchive:
    arxiv_id: str
    files: dict[str, bytes] = field(default_factory=dict)
    main_tex: str = ""

    def __post_init__(self):
        for path in self.files:
            if not _is_safe_relative(path):
                raise ValueError(f"unsafe archive path {path!r}")
        if self.main_tex not in self.files:
            raise ValueError(f"main_tex {self.main_tex!r} not present in archive")
        if b"\\begin{document}" not in self.files[self.main_tex]:
            raise ValueError(f"main_tex {self.main_tex!r} has no document body")


# ---------------------------------------------------------------------------
# Transport


def default_fetcher(url: str, timeout: float = 60.0) -> bytes:
    """GET a URL; supports http(s) and file schemes."""
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.read()
    except urllib.error.HTTPError as exc:
        raise NetworkError(f"HTTP {exc.code} fetching {url}") from exc
    except (urllib.error.URLError, OSError) as exc:
        raise NetworkError(f"failed to fetch {url}: {exc}") from exc


def _fetch_with_retries(
    url: str,
    fetcher: Callable[[str], bytes],
    sleep: Callable[[float], None] = time.sleep,
) -> bytes:
    last: Exception | None = None
    for attempt in range(FETCH_RETRIES):
        try:
            return fetcher(url)
        except NetworkError as exc:
            last = exc
            if attempt < FETCH_RETRIES - 1:
                sleep(FETCH_BACKOFF_S * (2**attempt))
    assert last is not None
    raise last


# ---------------------------------------------------------------------------
# Listing


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_entry(entry: ET.Element, base_url: str) -> PaperMeta:
    entry_id = title = published = None
    primary = first_category = None
    source_href = None
    for child in entry:
        name = _localname(child.tag)
        if name == "id":
            entry_id = (child.text or "").strip()
        elif name == "title":
            title = " ".join((child.text or "").split())
        elif name == "published":
            published = (child.text or "").strip()
        elif name == "primary_category":
            primary = child.get("term")
        elif name == "category" and first_category is None:
            first_category = child.get("term")
        elif name == "link":
            if child.get("title") == "source" or child.get("rel") == "enclosure":
                source_href = child.get("href")
    if not entry_id or published is None:
        raise ListingParseError("entry missing id or published date")
    arxiv_id = re.sub(r"v\d+$", "", entry_id.rstrip("/").rsplit("/", 1)[-1])
    domain = primary or first_category
    if domain is None:
        raise ListingParseError(f"entry {arxiv_id} carries no category")
    try:
        submitted = dt.datetime.fromisoformat(published.replace("Z", "+00:00")).date()
    except ValueError as exc:
        raise ListingParseError(f"entry {arxiv_id}: bad date {published!r}") from exc
    if source_href is None:
        if "/abs/" in entry_id:
            source_href = entry_id.replace("/abs/", "/src/")
        else:
            raise ListingParseError(f"entry {arxiv_id} carries no source link")
    return PaperMeta(
        arxiv_id=arxiv_id,
        title=title or arxiv_id,
        domain_code=domain,
        submitted_at=submitted,
        source_url=urllib.parse.urljoin(base_url, source_href),
    )


def fetch_listing(
    config: SnapshotConfig,
    endpoint: str,
    *,
    fetcher: Callable[[str], bytes] = default_fetcher,
    sleep: Callable[[float], None] = time.sleep,
) -> list[PaperMeta]:
    """All in-window papers whose primary category is configured, ordered by
    (domain_code, arxiv_id)."""
    payload = _fetch_with_retries(endpoint, fetcher, sleep)
    try:
        root = ET.fromstring(payload)
    except ET.ParseError as exc:
        excerpt = payload[:200].decode("utf-8", "replace")
        raise ListingParseError(f"malformed feed: {exc}", payload_excerpt=excerpt) from exc

    wanted = set(config.domains)
    seen: set[str] = set()
    papers: list[PaperMeta] = []
    for entry in root.iter():
        if _localname(entry.tag) != "entry":
            continue
        try:
            meta = _parse_entry(entry, endpoint)
        except ListingParseError as exc:
            raise ListingParseError(
                str(exc), payload_excerpt=payload[:200].decode("utf-8", "replace")
            ) from exc
        if meta.arxiv_id in seen:
            log.warning("duplicate listing entry %s ignored", meta.arxiv_id)
            continue
        seen.add(meta.arxiv_id)
        if meta.domain_code not in wanted:
            continue
        if not (config.week_start <= meta.submitted_at <= config.week_end):
            continue
        papers.append(meta)
    papers.sort(key=lambda p: (p.domain_code, p.arxiv_id))
    return papers


def select_papers(listing: list[PaperMeta], config: SnapshotConfig) -> list[PaperMeta]:
    """Seeded per-domain sampling without replacement, capped by availability.

    Pure in (listing, config): each domain draws from its own derived seed, so
    adding a domain to the config never disturbs another domain's picks.
    """
    by_domain: dict[str, list[PaperMeta]] = {}
    for meta in listing:
        by_domain.setdefault(meta.domain_code, []).append(meta)
    selected: list[PaperMeta] = []
    for domain in sorted(set(config.domains)):
        group = sorted(by_domain.get(domain, []), key=lambda p: p.arxiv_id)
        if not group:
            log.info("domain %s: no papers in window, zero selections", domain)
            continue
        take = min(config.per_domain_count, len(group))
        seed_material = f"{config.rng_seed}:{domain}".encode("utf-8")
        seed = int.from_bytes(hashlib.sha256(seed_material).digest()[:8], "big")
        picks = random.Random(seed).sample(group, take)
        selected.extend(sorted(picks, key=lambda p: p.arxiv_id))
    return selected


# ---------------------------------------------------------------------------
# Source download


def _looks_like_tex(data: bytes) -> bool:
    return b"\\documentclass" in data or b"\\begin{document}" in data


def _members_from_tar(data: bytes) -> dict[str, bytes] | None:
    try:
        with tarfile.open(fileobj=io.BytesIO(data), mode="r:*") as tar:
            files: dict[str, bytes] = {}
            for member in tar.getmembers():
                if not member.isfile():
                    continue
                name = member.name
                while name.startswith("./"):
                    name = name[2:]
                if not name or not _is_safe_relative(name):
                    log.warning("skipping unsafe archive member %r", member.name)
                    continue
                handle = tar.extractfile(member)
                if handle is not None:
                    files[name] = handle.read()
            return files
    except (tarfile.TarError, EOFError, zlib.error):
        # Truncated or bit-rotted payloads surface as EOFError/zlib.error
        # from the decompressor rather than TarError.
        return None


def _detect_main_tex(files: dict[str, bytes]) -> str:
    with_class = [p for p, b in files.items() if b"\\documentclass" in b]
    if len(with_class) == 1:
        candidate = with_class[0]
    else:
        with_body = [p for p, b in files.items() if b"\\begin{document}" in b]
        if len(with_body) == 1:
            candidate = with_body[0]
        elif len(files) == 1:
            candidate = next(iter(files))
        else:
            raise NoMainTexError(
                f"no unique root file among {sorted(files)[:8]}"
            )
    if b"\\begin{document}" not in files[candidate]:
        raise NoMainTexError(f"candidate root {candidate!r} has no document body")
    return candidate


def download_source(
    meta: PaperMeta,
    *,
    fetcher: Callable[[str], bytes] = default_fetcher,
    sleep: Callable[[float], None] = time.sleep,
) -> SourceArchive:
    """Unpack a source payload (tarball, gzipped single file, or bare TeX)."""
    data = _fetch_with_retries(meta.source_url, fetcher, sleep)
    if data.startswith(b"%PDF"):
        raise ArchiveFormatError(f"{meta.arxiv_id}: PDF-only source is unsupported")

    files = _members_from_tar(data)
    if files is None:
        if data[:2] == b"\x1f\x8b":
            try:
                data = gzip.decompress(data)
            except (OSError, EOFError, zlib.error) as exc:
                raise ArchiveFormatError(f"{meta.arxiv_id}: corrupt gzip payload") from exc
            files = _members_from_tar(data)
    if files is None:
        if _looks_like_tex(data):
            files = {"main.tex": data}
        else:
            raise ArchiveFormatError(
                f"{meta.arxiv_id}: source is neither gzip/tar nor bare TeX"
            )
    if not files:
        raise NoMainTexError(f"{meta.arxiv_id}: archive contains no usable files")
    main = _detect_main_tex(files)
    return SourceArchive(arxiv_id=meta.arxiv_id, files=files, main_tex=main)


def download_sources(
    metas: Iterable[PaperMeta],
    *,
    parallelism: int = DEFAULT_PARALLELISM,
    fetcher: Callable[[str], bytes] = default_fetcher,
    sleep: Callable[[float], None] = time.sleep,
) -> list[tuple[PaperMeta, SourceArchive | None]]:
    """Concurrent downloads with per-paper failure isolation."""
    metas = list(metas)
    results: list[tuple[PaperMeta, SourceArchive | None]] = [(m, None) for m in metas]
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        futures = {
            pool.submit(download_source, meta, fetcher=fetcher, sleep=sleep): i
            for i, meta in enumerate(metas)
        }
        for fut in concurrent.futures.as_completed(futures):
            i = futures[fut]
            try:
                results[i] = (metas[i], fut.result())
            except Exception as exc:  # noqa: BLE001 - isolation is the contract
                log.error("download failed for %s: %s", metas[i].arxiv_id, exc)
                results[i] = (metas[i], None)
    return results


def materialize_source(archive: SourceArchive, snapshot_dir: str | Path) -> Path:
    """Write archive files under ``snapshot/src/<arxiv_id>/``."""
    root = Path(snapshot_dir) / "src" / archive.arxiv_id
    for rel, content in archive.files.items():
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(content)
    return root


def load_source(snapshot_dir: str | Path, arxiv_id: str) -> SourceArchive:
    """Rebuild a SourceArchive from ``snapshot/src/<arxiv_id>/``."""
    root = Path(snapshot_dir) / "src" / arxiv_id
    files = {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }
    if not files:
        raise NoMainTexError(f"{arxiv_id}: no materialized source under {root}")
    return SourceArchive(arxiv_id=arxiv_id, files=files, main_tex=_detect_main_tex(files))
