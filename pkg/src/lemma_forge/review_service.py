"""HTTP service for human review of machine verdicts.

Serves a seeded, stratified queue of review tasks drawn from a snapshot.
Tasks are blind by default: the model's verdict is withheld unless the
client asks for it explicitly, so a reviewer's judgment is formed first.
Verdicts append to the snapshot's human-review stage, one row per
(task, reviewer), duplicates rejected.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import logging
import random
import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .dataset_store import Snapshot
from .extraction import BenchmarkBundle
from .metrics import HumanReview
from .proving import ProofAttempt, ProofJudgment, render_steps

log = logging.getLogger(__name__)

DEFAULT_SAMPLE = 15

KIND_SC = "sc"
KIND_PROOF = "proof"
KINDS = (KIND_SC, KIND_PROOF)


def _task_id(kind: str, key: str) -> str:
    return f"{kind}-{hashlib.sha256(key.encode('utf-8')).hexdigest()[:12]}"


def _utc_now_iso() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


class ReviewTask:
    def __init__(self, task_id: str, kind: str, lemma_id: str, attempt_id: str,
                 payload: dict, model_verdict: bool):
        self.task_id = task_id
        self.kind = kind
        self.lemma_id = lemma_id
        self.attempt_id = attempt_id
        self.payload = payload
        self.model_verdict = model_verdict

    def public(self, reveal: bool) -> dict:
        body = {
            "task_id": self.task_id,
            "kind": self.kind,
            "lemma_id": self.lemma_id,
            "attempt_id": self.attempt_id,
            **self.payload,
        }
        if reveal:
            body["model_verdict"] = self.model_verdict
        return body


def _sample(items: list, count: int, seed_material: str) -> list:
    if count >= len(items):
        return list(items)
    seed = int.from_bytes(hashlib.sha256(seed_material.encode()).digest()[:8], "big")
    return random.Random(seed).sample(items, count)


def build_queue(
    snapshot: Snapshot, kind: str = "both", sample: int = DEFAULT_SAMPLE, seed: int = 0
) -> list[ReviewTask]:
    """Deterministic task queue.

    ``sc`` tasks sample judged bundles uniformly; ``proof`` tasks are
    stratified per prover so no prover's output dominates the queue.
    ``sample`` is the per-kind budget.
    """
    if kind not in (*KINDS, "both"):
        raise ValueError(f"unknown review kind {kind!r}")
    tasks: list[ReviewTask] = []

    if kind in (KIND_SC, "both"):
        bundles = snapshot.read_typed("bundles", BenchmarkBundle.from_json_dict)
        judged = sorted(
            (b for b in bundles if b.filter_passed and b.judgments),
            key=lambda b: b.lemma_id,
        )
        for b in _sample(judged, sample, f"{seed}:sc"):
            tasks.append(
                ReviewTask(
                    task_id=_task_id(KIND_SC, b.lemma_id),
                    kind=KIND_SC,
                    lemma_id=b.lemma_id,
                    attempt_id="",
                    payload={
                        "statement": b.statement,
                        "definitions": list(b.definitions),
                        "hypotheses": list(b.hypotheses),
                    },
                    model_verdict=b.judgments[0].verdict,
                )
            )

    if kind in (KIND_PROOF, "both") and snapshot.has_stage("judgments"):
        bundles = snapshot.read_typed("bundles", BenchmarkBundle.from_json_dict)
        by_lemma = {b.lemma_id: b for b in bundles}
        attempts = snapshot.read_typed("attempts", ProofAttempt.from_json_dict)
        by_attempt = {a.attempt_id: a for a in attempts}
        judgments = snapshot.read_typed("judgments", ProofJudgment.from_json_dict)
        primary: dict[str, ProofJudgment] = {}
        for j in sorted(judgments, key=lambda j: (j.attempt_id, j.judge_model)):
            primary.setdefault(j.attempt_id, j)
        provers = sorted({j.prover_model for j in primary.values()})
        if provers:
            base, extra = divmod(sample, len(provers))
            for i, prover in enumerate(provers):
                quota = base + (1 if i < extra else 0)
                mine = sorted(
                    (j for j in primary.values() if j.prover_model == prover),
                    key=lambda j: j.attempt_id,
                )
                for j in _sample(mine, quota, f"{seed}:proof:{prover}"):
                    attempt = by_attempt.get(j.attempt_id)
                    bundle = by_lemma.get(j.lemma_id)
                    if attempt is None or bundle is None:
                        continue
                    tasks.append(
                        ReviewTask(
                            task_id=_task_id(KIND_PROOF, f"{j.attempt_id}:{j.judge_model}"),
                            kind=KIND_PROOF,
                            lemma_id=j.lemma_id,
                            attempt_id=j.attempt_id,
                            payload={
                                "statement": bundle.statement,
                                "definitions": list(bundle.definitions),
                                "hypotheses": list(bundle.hypotheses),
                                "prover_model": j.prover_model,
                                "judge_model": j.judge_model,
                                "steps": render_steps(attempt.steps),
                            },
                            model_verdict=j.overall,
                        )
                    )
    return tasks


def create_app(
    snapshot_dir: str | Path,
    *,
    kind: str = "both",
    sample: int = DEFAULT_SAMPLE,
    seed: int = 0,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    snapshot = Snapshot.open(snapshot_dir)
    queue = build_queue(snapshot, kind=kind, sample=sample, seed=seed)
    tasks = {t.task_id: t for t in queue}
    order = [t.task_id for t in queue]
    lock = threading.Lock()

    reviews: dict[tuple[str, str], HumanReview] = {}
    if snapshot.has_stage("human_reviews"):
        for row in snapshot.read_typed("human_reviews", HumanReview.from_json_dict):
            reviews[(row.task_id, row.reviewer)] = row

    app = FastAPI(title="lemma review", docs_url=None, redoc_url=None)

    @app.get("/tasks")
    def list_tasks(reviewer: str = "", kind: str = ""):
        rows = []
        for task_id in order:
            task = tasks[task_id]
            if kind and task.kind != kind:
                continue
            done = (
                (task_id, reviewer) in reviews
                if reviewer
                else any(key[0] == task_id for key in reviews)
            )
            rows.append({"task_id": task_id, "kind": task.kind, "done": done})
        return {"tasks": rows}

    @app.get("/task/{task_id}")
    def get_task(task_id: str, reveal: int = 0):
        task = tasks.get(task_id)
        if task is None:
            return JSONResponse({"error": "unknown task"}, status_code=404)
        return task.public(reveal=bool(reveal))

    @app.post("/task/{task_id}/verdict")
    async def post_verdict(task_id: str, request: Request):
        task = tasks.get(task_id)
        if task is None:
            return JSONResponse({"error": "unknown task"}, status_code=404)
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body is not JSON"}, status_code=400)
        reviewer = body.get("reviewer")
        verdict = body.get("verdict")
        comment = body.get("comment", "")
        if not isinstance(reviewer, str) or not reviewer.strip():
            return JSONResponse({"error": "reviewer is required"}, status_code=400)
        if not isinstance(verdict, bool):
            return JSONResponse({"error": "verdict must be true or false"}, status_code=400)
        if not isinstance(comment, str):
            return JSONResponse({"error": "comment must be a string"}, status_code=400)
        reviewer = reviewer.strip()
        with lock:
            if (task_id, reviewer) in reviews:
                return JSONResponse(
                    {"error": "this reviewer already ruled on this task"}, status_code=409
                )
            review = HumanReview(
                review_id=_task_id("rev", f"{task_id}:{reviewer}"),
                task_id=task_id,
                kind=task.kind,
                lemma_id=task.lemma_id,
                attempt_id=task.attempt_id,
                reviewer=reviewer,
                verdict=verdict,
                model_verdict=task.model_verdict,
                comment=comment,
                submitted_at=_utc_now_iso(),
            )
            reviews[(task_id, reviewer)] = review
            snapshot.append_records("human_reviews", [review.to_json_dict()])
        return {"ok": True, "review_id": review.review_id, "agrees": verdict == task.model_verdict}

    @app.get("/progress")
    def progress():
        done_ids = {key[0] for key in reviews}
        by_kind: dict[str, dict[str, int]] = {}
        for task_id in order:
            task = tasks[task_id]
            slot = by_kind.setdefault(task.kind, {"total": 0, "done": 0})
            slot["total"] += 1
            slot["done"] += int(task_id in done_ids)
        return {
            "total": len(order),
            "done": len(done_ids & set(order)),
            "reviews": len(reviews),
            "by_kind": by_kind,
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
