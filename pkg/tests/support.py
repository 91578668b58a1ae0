"""Corpus-host construction and pipeline argv helpers shared by the suite.

Running ``python -m tests.support`` re-records the committed model-call
fixtures under ``fixtures/llm`` by driving the full pipeline (both retrieval
modes) against the bundled synthetic corpus with scripted models.
"""

from __future__ import annotations

import gzip
import io
import tarfile
from dataclasses import dataclass
from pathlib import Path

FIXTURES = Path(__file__).resolve().parent / "fixtures"
REPO_ROOT = Path(__file__).resolve().parents[1]
LLM_FIXTURES = REPO_ROOT / "fixtures" / "llm"

WEEK_START = "2026-08-10"
WEEK_END = "2026-08-16"
DOMAINS = "math.CO,math.FA,math.PR"

PAPER_A = "2608.04431"  # math.FA — multi-file tarball (main.tex + body.tex)
PAPER_B = "2608.04442"  # math.CO — single-file tarball
PAPER_C = "2608.04453"  # math.PR — bare gzipped TeX, no tar wrapper
OFF_DOMAIN = "2608.04464"  # cs.LG  — right week, unconfigured category
OFF_WINDOW = "2608.03301"  # math.FA — configured category, week before

CORPUS_IDS = (PAPER_A, PAPER_B, PAPER_C)

# One-week snapshot shape mirrored by the wide listing: 19 domain codes with
# this many articles each (37 in total).
WIDE_ARTICLES = {
    "cs.IT": 3,
    "math-ph": 2,
    "math.AP": 3,
    "math.CO": 5,
    "math.CT": 1,
    "math.DG": 1,
    "math.DS": 2,
    "math.FA": 1,
    "math.GR": 1,
    "math.GT": 1,
    "math.MG": 1,
    "math.NA": 2,
    "math.NT": 2,
    "math.OC": 4,
    "math.PR": 3,
    "math.QA": 1,
    "math.RT": 1,
    "math.SG": 1,
    "math.ST": 2,
}


@dataclass(frozen=True)
class ArchiveHost:
    root: Path
    endpoint: str
    wide_endpoint: str

    def archive_url(self, name: str) -> str:
        return (self.root / "archives" / name).as_uri()


def tar_gz_bytes(files: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w:gz") as tar:
        for name, data in sorted(files.items()):
            info = tarfile.TarInfo(name)
            info.size = len(data)
            info.mtime = 0
            tar.addfile(info, io.BytesIO(data))
    return buf.getvalue()


def _entry(aid: str, title: str, category: str, published: str, href: str) -> str:
    return (
        "  <entry>\n"
        f"    <id>http://arxiv.org/abs/{aid}v1</id>\n"
        f"    <title>{title}</title>\n"
        f"    <published>{published}T09:30:00Z</published>\n"
        f'    <arxiv:primary_category term="{category}"/>\n'
        f'    <category term="{category}"/>\n'
        f'    <link title="source" href="{href}"/>\n'
        "  </entry>\n"
    )


def _feed(entries: list[str]) -> str:
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        '<feed xmlns="http://www.w3.org/2005/Atom" '
        'xmlns:arxiv="http://arxiv.org/schemas/atom">\n'
        "  <title>weekly listing</title>\n" + "".join(entries) + "</feed>\n"
    )


def _paper_bytes(name: str) -> bytes:
    return (FIXTURES / "papers" / name).read_bytes()


def build_archive_host(root: Path) -> ArchiveHost:
    """Materialize listing feeds plus source archives under ``root``."""
    archives = root / "archives"
    archives.mkdir(parents=True, exist_ok=True)

    (archives / f"{PAPER_A}.tar.gz").write_bytes(
        tar_gz_bytes(
            {
                "main.tex": _paper_bytes("paperA/main.tex"),
                "body.tex": _paper_bytes("paperA/body.tex"),
            }
        )
    )
    (archives / f"{PAPER_B}.tar.gz").write_bytes(
        tar_gz_bytes({"main.tex": _paper_bytes("paperB/main.tex")})
    )
    (archives / f"{PAPER_C}.gz").write_bytes(gzip.compress(_paper_bytes("paperC/main.tex")))

    filler = (
        b"\\documentclass{article}\n\\begin{document}\nNothing here.\n\\end{document}\n"
    )
    for aid in (OFF_DOMAIN, OFF_WINDOW):
        (archives / f"{aid}.tar.gz").write_bytes(tar_gz_bytes({"main.tex": filler}))

    entries = [
        _entry(PAPER_A, "Bounded smoothing transforms on weighted half-line spaces",
               "math.FA", "2026-08-11", f"archives/{PAPER_A}.tar.gz"),
        _entry(PAPER_B, "Height and profile statistics of rooted trees",
               "math.CO", "2026-08-12", f"archives/{PAPER_B}.tar.gz"),
        _entry(PAPER_C, "Elementary remarks on finite-state chains",
               "math.PR", "2026-08-13", f"archives/{PAPER_C}.gz"),
        _entry(OFF_DOMAIN, "Gradient tricks for wide networks",
               "cs.LG", "2026-08-12", f"archives/{OFF_DOMAIN}.tar.gz"),
        _entry(OFF_WINDOW, "An older note on averaging",
               "math.FA", "2026-08-03", f"archives/{OFF_WINDOW}.tar.gz"),
    ]
    listing = root / "listing.xml"
    listing.write_text(_feed(entries), "utf-8")

    wide_entries = []
    serial = 0
    for code, count in sorted(WIDE_ARTICLES.items()):
        for _ in range(count):
            serial += 1
            aid = f"2608.1{serial:04d}"
            wide_entries.append(
                _entry(aid, f"Synthetic {code} article {serial}", code,
                       "2026-08-11", f"archives/{aid}.tar.gz")
            )
    wide = root / "wide_listing.xml"
    wide.write_text(_feed(wide_entries), "utf-8")

    return ArchiveHost(root=root, endpoint=listing.as_uri(), wide_endpoint=wide.as_uri())


def run_argv(
    snapshot: Path | str,
    endpoint: str,
    *,
    mode: str = "vector",
    replay: bool = False,
    record: bool = False,
    fixtures: Path | str = LLM_FIXTURES,
    extra: tuple[str, ...] = (),
) -> list[str]:
    argv = [
        "run",
        "--snapshot", str(snapshot),
        "--week-start", WEEK_START,
        "--week-end", WEEK_END,
        "--domains", DOMAINS,
        "--per-domain", "1",
        "--endpoint", endpoint,
        "--mode", mode,
        "--fixtures", str(fixtures),
    ]
    if replay:
        argv.append("--replay")
    if record:
        argv.append("--record")
    return argv + list(extra)


def record_fixtures() -> None:
    import tempfile

    from lemma_forge.cli import main

    LLM_FIXTURES.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as td:
        host = build_archive_host(Path(td) / "host")
        for mode in ("vector", "full"):
            code = main(run_argv(Path(td) / f"rec-{mode}", host.endpoint,
                                 mode=mode, record=True))
            if code != 0:
                raise SystemExit(code)
    count = len(list(LLM_FIXTURES.glob("*.json")))
    print(f"recorded fixtures: {count} files in {LLM_FIXTURES}")


if __name__ == "__main__":
    record_fixtures()
