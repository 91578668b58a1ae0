"""Command-line pipeline driver.

Each subcommand materializes one snapshot stage and refuses to run before
its upstream stages exist and verify; completed stages are skipped unless
``--force``. ``run`` chains every stage with a single model gateway.
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from pathlib import Path

from . import __version__
from .dataset_store import Snapshot, export_latex
from .errors import LemmaForgeError, StageOrderError
from .extraction import BenchmarkBundle, build_bundle
from .harvester import (
    SnapshotConfig,
    download_sources,
    fetch_listing,
    load_source,
    materialize_source,
    select_papers,
)
from .latex_corpus import LemmaRecord, extract_lemmas, normalize
from .llm_gateway import (
    Gateway,
    LlmHandle,
    load_call_records,
    load_models_config,
    token_ledger,
)
from .metrics import HumanReview, build_report
from .proving import ProofJudgment, run_matrix
from .retrieval import (
    DEFAULT_K,
    DEFAULT_TAU,
    FULL_CONTEXT,
    VECTOR_RETRIEVAL,
    ContextBundle,
    assemble_context,
)

log = logging.getLogger(__name__)

MODE_BY_FLAG = {"full": FULL_CONTEXT, "vector": VECTOR_RETRIEVAL}


def default_handles() -> dict[str, LlmHandle]:
    return {
        "enumerator": LlmHandle("scripted-enumerator"),
        "extractor": LlmHandle("scripted-extractor"),
        "sc-judge": LlmHandle("scripted-sc-judge"),
        "sc-judge-alt": LlmHandle("scripted-sc-judge-alt"),
        "prover": LlmHandle("scripted-prover"),
        "prover-alt": LlmHandle("scripted-prover-alt"),
        "proof-judge": LlmHandle("scripted-proof-judge"),
        "embedder": LlmHandle("scripted-embedder"),
    }


def build_gateway(args, snapshot_dir: Path) -> Gateway:
    handles = default_handles()
    options: dict = {}
    if getattr(args, "models", None):
        loaded, options = load_models_config(args.models)
        handles.update(loaded)
    mode = "live"
    if args.replay:
        mode = "replay"
    elif args.record:
        mode = "record"
    fixture_dir = Path(args.fixtures) if args.fixtures else None
    if mode in ("replay", "record") and fixture_dir is None:
        raise LemmaForgeError(f"--{mode} requires --fixtures DIR")
    return Gateway(
        handles,
        mode=mode,
        fixture_dir=fixture_dir,
        ledger_path=snapshot_dir / "llm_calls.jsonl",
        max_in_flight=options.get("max_in_flight", 8),
    )


def _open_snapshot(args) -> Snapshot:
    try:
        return Snapshot.open(args.snapshot)
    except FileNotFoundError:
        raise StageOrderError("requested", "meta") from None


def _csv(raw: str) -> list[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


def _skip_if_current(snap: Snapshot, stage: str, force: bool) -> bool:
    if force or not snap.has_stage(stage):
        return False
    snap.verify_stage(stage)
    log.warning("stage %s is current (hash verified); skipping. Use --force to redo.", stage)
    return True


# ---------------------------------------------------------------------------
# Stage implementations


def _stage_harvest(args) -> Snapshot:
    week_start = dt.date.fromisoformat(args.week_start)
    week_end = (
        dt.date.fromisoformat(args.week_end)
        if args.week_end
        else week_start + dt.timedelta(days=6)
    )
    config = SnapshotConfig(
        week_start=week_start,
        week_end=week_end,
        domains=tuple(_csv(args.domains)),
        per_domain_count=args.per_domain,
        rng_seed=args.seed,
    )
    snap = Snapshot.create(args.snapshot, config)
    if _skip_if_current(snap, "lemmas", args.force) and snap.has_stage("meta"):
        return snap
    listing = fetch_listing(config, args.endpoint)
    selected = select_papers(listing, config)
    results = download_sources(selected, parallelism=args.parallelism)
    kept = [(meta, archive) for meta, archive in results if archive is not None]
    failed = len(results) - len(kept)
    if failed:
        log.warning("%d of %d downloads failed and were skipped", failed, len(results))
    lemma_rows: list[dict] = []
    meta_rows: list[dict] = []
    for meta, archive in kept:
        materialize_source(archive, snap.root)
        meta_rows.append(meta.to_json_dict())
        try:
            doc = normalize(archive)
        except LemmaForgeError as exc:
            log.error("%s: normalization failed (%s); no lemmas taken", meta.arxiv_id, exc)
            continue
        lemma_rows.extend(rec.to_json_dict() for rec in extract_lemmas(doc))
    snap.write_stage("meta", meta_rows)
    snap.write_stage("lemmas", lemma_rows)
    dropped = sum(1 for row in lemma_rows if row["bears_reference"])
    print(
        f"harvested {len(meta_rows)} papers, {len(lemma_rows)} lemmas "
        f"({dropped} bear references and will be dropped downstream)"
    )
    return snap


def _stage_retrieve(args, snap: Snapshot, gateway: Gateway) -> None:
    if _skip_if_current(snap, "contexts", args.force):
        return
    snap.require_upstream("contexts")
    mode = MODE_BY_FLAG[args.mode]
    lemmas = snap.read_typed("lemmas", LemmaRecord.from_json_dict)
    if not args.include_referencing:
        lemmas = [l for l in lemmas if not l.bears_reference]
    docs: dict[str, object] = {}
    rows: list[dict] = []
    for lemma in lemmas:
        if lemma.arxiv_id not in docs:
            docs[lemma.arxiv_id] = normalize(load_source(snap.root, lemma.arxiv_id))
        bundle = assemble_context(
            gateway,
            chat_model=args.enumerator,
            embedder=args.embedder,
            doc=docs[lemma.arxiv_id],
            lemma=lemma,
            mode=mode,
            k=args.k,
            tau=args.tau,
        )
        rows.append(bundle.to_json_dict())
    snap.write_stage("contexts", rows)
    print(f"retrieved context for {len(rows)} lemmas (mode={mode})")


def _stage_extract(args, snap: Snapshot, gateway: Gateway) -> None:
    if _skip_if_current(snap, "bundles", args.force):
        return
    snap.require_upstream("bundles")
    judges = _csv(args.sc_judge)
    lemmas = {
        l.lemma_id: l for l in snap.read_typed("lemmas", LemmaRecord.from_json_dict)
    }
    contexts = snap.read_typed("contexts", ContextBundle.from_json_dict)
    rows: list[dict] = []
    members = 0
    for context in contexts:
        lemma = lemmas.get(context.lemma_id)
        if lemma is None:
            log.error("context %s has no matching lemma; skipped", context.lemma_id)
            continue
        bundle = build_bundle(
            gateway, lemma, context, extractor_model=args.extractor, judge_models=judges
        )
        members += int(bundle.is_member)
        rows.append(bundle.to_json_dict())
    snap.write_stage("bundles", rows)
    print(f"judged {len(rows)} bundles; {members} qualify for the benchmark")


def _stage_prove(args, snap: Snapshot, gateway: Gateway) -> None:
    if _skip_if_current(snap, "judgments", args.force) and snap.has_stage("attempts"):
        return
    snap.require_upstream("attempts")
    bundles = snap.read_typed("bundles", BenchmarkBundle.from_json_dict)
    attempts, judgments = run_matrix(
        gateway,
        _csv(args.provers),
        _csv(args.judges),
        bundles,
        pass_at=args.pass_at,
    )
    snap.write_stage("attempts", [a.to_json_dict() for a in attempts])
    snap.write_stage("judgments", [j.to_json_dict() for j in judgments])
    accepted = sum(j.overall for j in judgments)
    print(
        f"proved {len(attempts)} attempts across "
        f"{len(_csv(args.provers))} prover(s); {accepted}/{len(judgments)} judgments accept"
    )


def _stage_report(args, snap: Snapshot):
    snap.require_upstream("attempts")  # report needs at least bundles; attempts optional
    from .harvester import PaperMeta

    metas = snap.read_typed("meta", PaperMeta.from_json_dict)
    lemmas = snap.read_typed("lemmas", LemmaRecord.from_json_dict)
    bundles = snap.read_typed("bundles", BenchmarkBundle.from_json_dict)
    judgments = (
        snap.read_typed("judgments", ProofJudgment.from_json_dict)
        if snap.has_stage("judgments")
        else []
    )
    reviews = (
        snap.read_typed("human_reviews", HumanReview.from_json_dict)
        if snap.has_stage("human_reviews")
        else []
    )
    ledger_path = snap.root / "llm_calls.jsonl"
    tokens = (
        token_ledger(load_call_records(ledger_path)) if ledger_path.exists() else None
    )
    report = build_report(
        snapshot_id=snap.snapshot_id,
        metas=metas,
        lemmas_all=lemmas,
        bundles=bundles,
        judgments=judgments,
        reviews=reviews,
        tokens=tokens,
    )
    snap.write_report(report.to_json_dict(), report.render_markdown())
    return report


# ---------------------------------------------------------------------------
# Command handlers


def cmd_harvest(args) -> int:
    _stage_harvest(args)
    return 0


def cmd_retrieve(args) -> int:
    snap = _open_snapshot(args)
    _stage_retrieve(args, snap, build_gateway(args, snap.root))
    return 0


def cmd_extract(args) -> int:
    snap = _open_snapshot(args)
    _stage_extract(args, snap, build_gateway(args, snap.root))
    return 0


def cmd_prove(args) -> int:
    snap = _open_snapshot(args)
    _stage_prove(args, snap, build_gateway(args, snap.root))
    return 0


def cmd_report(args) -> int:
    snap = _open_snapshot(args)
    report = _stage_report(args, snap)
    if args.format == "md":
        print(report.render_markdown())
    else:
        import json as _json

        print(_json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    return 0


def cmd_export_latex(args) -> int:
    snap = _open_snapshot(args)
    path = export_latex(snap, args.out)
    print(f"wrote {path}")
    return 0


def cmd_review_serve(args) -> int:
    import uvicorn

    from .review_service import create_app

    host, _, port = args.bind.rpartition(":")
    ui_dir = Path(args.ui) if args.ui else Path("frontend/dist")
    app = create_app(
        args.snapshot,
        kind=args.kind,
        sample=args.sample,
        seed=args.seed,
        ui_dir=ui_dir if ui_dir.is_dir() else None,
    )
    print(f"review service on http://{host or '127.0.0.1'}:{port} (snapshot {args.snapshot})")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    return 0


def cmd_run(args) -> int:
    snap = _stage_harvest(args)
    gateway = build_gateway(args, snap.root)
    _stage_retrieve(args, snap, gateway)
    _stage_extract(args, snap, gateway)
    _stage_prove(args, snap, gateway)
    report = _stage_report(args, snap)
    stage = report.stage
    print(
        f"snapshot {report.snapshot_id}: {stage.harvested} harvested -> "
        f"{stage.kept} kept -> {stage.judged} judged -> {stage.members} members; "
        f"report at {snap.root / 'report.json'}"
    )
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_harvest_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--week-start", required=True, help="snapshot week start (YYYY-MM-DD)")
    p.add_argument("--week-end", default=None, help="inclusive end, default start+6 days")
    p.add_argument("--domains", required=True, help="comma-separated category codes")
    p.add_argument("--per-domain", type=int, default=2, choices=(1, 2),
                   help="papers to sample per category")
    p.add_argument("--endpoint", required=True, help="listing feed URL (http/https/file)")
    p.add_argument("--parallelism", type=int, default=4, help="concurrent downloads")


def _add_retrieve_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("full", "vector"), default="vector",
                   help="context mode: whole prefix or retrieved paragraphs")
    p.add_argument("--k", type=int, default=DEFAULT_K, help="top-k paragraphs per object")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU,
                   help="cosine threshold (strictly above)")
    p.add_argument("--enumerator", default="enumerator", help="object-enumeration model")
    p.add_argument("--embedder", default="embedder", help="embedding model")
    p.add_argument("--include-referencing", action="store_true",
                   help="also build contexts for lemmas whose statement cites other work")


def _add_extract_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--extractor", default="extractor", help="assumption-extraction model")
    p.add_argument("--sc-judge", default="sc-judge",
                   help="comma-separated judge models; the first decides membership")


def _add_prove_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provers", default="prover", help="comma-separated prover models")
    p.add_argument("--judges", default="proof-judge", help="comma-separated judge models")
    p.add_argument("--pass-at", type=int, default=1, help="attempts per lemma per prover")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--snapshot", required=True, help="snapshot directory")
    group = common.add_mutually_exclusive_group()
    group.add_argument("--replay", action="store_true",
                       help="serve all model calls from recorded fixtures")
    group.add_argument("--record", action="store_true",
                       help="store every model call as a fixture")
    common.add_argument("--fixtures", default="fixtures/llm",
                        help="fixture directory for --record/--replay")
    common.add_argument("--models", default=None, help="models TOML config")
    common.add_argument("--seed", type=int, default=0, help="sampling seed")
    common.add_argument("--force", action="store_true", help="recompute current stages")
    common.add_argument("-v", "--verbose", action="store_true", help="info-level logging")

    parser = argparse.ArgumentParser(
        prog="lemma-forge",
        description="Build and evaluate a weekly lemma-proving benchmark from preprint sources.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("harvest", parents=[common],
                       help="fetch the weekly listing, download sources, extract lemmas")
    _add_harvest_args(p)
    p.set_defaults(func=cmd_harvest)

    p = sub.add_parser("retrieve", parents=[common],
                       help="build per-lemma context bundles")
    _add_retrieve_args(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("extract", parents=[common],
                       help="extract assumptions, filter, and judge self-containedness")
    _add_extract_args(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("prove", parents=[common],
                       help="run provers over member lemmas and judge the proofs")
    _add_prove_args(p)
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("report", parents=[common], help="compute metrics and write the report")
    p.add_argument("--format", choices=("md", "json"), default="md",
                   help="what to print (both files are always written)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-latex", parents=[common],
                       help="render member lemmas as a standalone LaTeX document")
    p.add_argument("--out", default=None, help="output path (default: snapshot/benchmark.tex)")
    p.set_defaults(func=cmd_export_latex)

    p = sub.add_parser("review-serve", parents=[common],
                       help="serve the human review queue and UI")
    p.add_argument("--kind", choices=("sc", "proof", "both"), default="both",
                   help="which verdicts to queue")
    p.add_argument("--sample", type=int, default=15, help="tasks per kind")
    p.add_argument("--bind", default="127.0.0.1:8731", help="host:port to listen on")
    p.add_argument("--ui", default=None, help="static UI directory (default: frontend/dist)")
    p.set_defaults(func=cmd_review_serve)

    p = sub.add_parser("run", parents=[common], help="run every stage end to end")
    _add_harvest_args(p)
    _add_retrieve_args(p)
    _add_extract_args(p)
    _add_prove_args(p)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except StageOrderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LemmaForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
