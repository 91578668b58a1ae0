"""Review queue construction and the HTTP verdict-collection service."""

from __future__ import annotations

import datetime as dt
import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from lemma_forge.dataset_store import Snapshot
from lemma_forge.extraction import BenchmarkBundle, Judgment
from lemma_forge.harvester import SnapshotConfig
from lemma_forge.metrics import HumanReview, judge_ppv
from lemma_forge.proving import ProofAttempt, ProofJudgment, ProofStep
from lemma_forge.review_service import build_queue, create_app


def snapshot_config() -> SnapshotConfig:
    return SnapshotConfig(
        week_start=dt.date(2026, 8, 10),
        week_end=dt.date(2026, 8, 16),
        domains=("math.FA",),
        per_domain_count=1,
        rng_seed=0,
    )


def member_bundle(lemma_id: str) -> BenchmarkBundle:
    return BenchmarkBundle(
        lemma_id=lemma_id,
        arxiv_id="2608.00001",
        mode="full_context",
        statement=f"Statement of {lemma_id}.",
        title="",
        definitions=(f"Define $T_{{{lemma_id}}} x := x$.",),
        hypotheses=("The space is complete.",),
        extraction_ok=True,
        filter_passed=True,
        filter_violations=(),
        judgments=(Judgment("judge-sc", True, "reply", "hash"),),
        judge_model="judge-sc",
        is_member=True,
    )


def attempt_for(lemma_id: str, prover: str) -> ProofAttempt:
    return ProofAttempt(
        attempt_id=f"{lemma_id}:{prover}:0",
        lemma_id=lemma_id,
        prover_model=prover,
        attempt_index=0,
        steps=(
            ProofStep(1, "Set up the estimate.", (), (), "By definition."),
            ProofStep(2, "Conclude.", ("1",), (), "Combine the bounds."),
        ),
        reply="raw reply",
        prompt_hash="deadbeef",
        parse_ok=True,
    )


def judgment_for(lemma_id: str, prover: str, overall: bool = True) -> ProofJudgment:
    return ProofJudgment(
        attempt_id=f"{lemma_id}:{prover}:0",
        lemma_id=lemma_id,
        prover_model=prover,
        judge_model="judge-proof",
        step_verdicts=(True, overall),
        overall=overall,
        reply="",
        prompt_hash="",
        parse_ok=True,
    )


def make_snapshot(
    root: Path, n_lemmas: int = 16, provers: tuple[str, ...] = ("prover-x",)
) -> Path:
    snap = Snapshot.create(root, snapshot_config())
    lemma_ids = [f"lem{i:02d}" for i in range(n_lemmas)]
    bundles = [member_bundle(lid) for lid in lemma_ids]
    snap.write_stage("meta", [])
    snap.write_stage("lemmas", [])
    snap.write_stage("contexts", [])
    snap.write_stage("bundles", [b.to_json_dict() for b in bundles])
    attempts = [attempt_for(lid, p) for lid in lemma_ids for p in provers]
    judgments = [judgment_for(lid, p) for lid in lemma_ids for p in provers]
    snap.write_stage("attempts", [a.to_json_dict() for a in attempts])
    snap.write_stage("judgments", [j.to_json_dict() for j in judgments])
    return root


@pytest.fixture()
def proof_snapshot(tmp_path) -> Path:
    return make_snapshot(tmp_path / "snap")


@pytest.fixture()
def client(proof_snapshot) -> TestClient:
    return TestClient(create_app(proof_snapshot, kind="proof"))


# ---------------------------------------------------------------------------
# Queue construction


def test_proof_queue_samples_down_to_the_budget(proof_snapshot):
    snap = Snapshot.open(proof_snapshot)
    queue = build_queue(snap, kind="proof", sample=15)
    assert len(queue) == 15
    assert all(t.kind == "proof" for t in queue)
    assert len({t.task_id for t in queue}) == 15
    assert all(t.attempt_id.endswith(":prover-x:0") for t in queue)


def test_queue_is_deterministic_per_seed(proof_snapshot):
    snap = Snapshot.open(proof_snapshot)
    first = [t.task_id for t in build_queue(snap, kind="proof", sample=15, seed=3)]
    second = [t.task_id for t in build_queue(snap, kind="proof", sample=15, seed=3)]
    other = [t.task_id for t in build_queue(snap, kind="proof", sample=15, seed=4)]
    assert first == second
    assert set(first) != set(other)  # 15 of 16: seeds pick different leave-outs


def test_proof_quota_is_stratified_across_provers(tmp_path):
    root = make_snapshot(tmp_path / "snap", n_lemmas=8, provers=("prover-a", "prover-b"))
    queue = build_queue(Snapshot.open(root), kind="proof", sample=5)
    by_prover: dict[str, int] = {}
    for task in queue:
        by_prover[task.payload["prover_model"]] = by_prover.get(task.payload["prover_model"], 0) + 1
    assert by_prover == {"prover-a": 3, "prover-b": 2}  # divmod(5, 2) quotas


def test_small_pools_are_taken_whole(tmp_path):
    root = make_snapshot(tmp_path / "snap", n_lemmas=4)
    queue = build_queue(Snapshot.open(root), kind="proof", sample=15)
    assert len(queue) == 4


def test_unknown_kind_is_rejected(proof_snapshot):
    with pytest.raises(ValueError, match="unknown review kind"):
        build_queue(Snapshot.open(proof_snapshot), kind="vibes")


def test_sc_queue_from_the_replayed_corpus(corpus_snapshot):
    snap = Snapshot.open(corpus_snapshot)
    queue = build_queue(snap, kind="sc")
    assert len(queue) == 10  # every judged bundle fits the default budget
    assert all(t.kind == "sc" and t.attempt_id == "" for t in queue)
    members = sum(t.model_verdict for t in queue)
    assert members == 8


def test_proof_tasks_carry_the_rendered_attempt(proof_snapshot):
    queue = build_queue(Snapshot.open(proof_snapshot), kind="proof", sample=1)
    payload = queue[0].payload
    assert payload["steps"].startswith("STEP 1:\nSUBGOAL: Set up the estimate.")
    assert payload["judge_model"] == "judge-proof"
    assert payload["statement"].startswith("Statement of ")


# ---------------------------------------------------------------------------
# HTTP surface


def test_task_listing_has_fifteen_pending_tasks(client):
    body = client.get("/tasks").json()
    assert len(body["tasks"]) == 15
    assert all(row["done"] is False for row in body["tasks"])
    assert all(row["kind"] == "proof" for row in body["tasks"])


def test_task_body_is_blind_unless_reveal_is_requested(client):
    task_id = client.get("/tasks").json()["tasks"][0]["task_id"]
    blind = client.get(f"/task/{task_id}").json()
    assert "model_verdict" not in blind
    assert {"task_id", "kind", "lemma_id", "attempt_id", "statement"} <= set(blind)
    revealed = client.get(f"/task/{task_id}", params={"reveal": 1}).json()
    assert revealed["model_verdict"] is True


def test_unknown_task_is_404(client):
    assert client.get("/task/proof-000000000000").status_code == 404
    resp = client.post("/task/proof-000000000000/verdict", json={"reviewer": "r", "verdict": True})
    assert resp.status_code == 404


@pytest.mark.parametrize(
    "body",
    [
        {"verdict": True},  # no reviewer
        {"reviewer": "  ", "verdict": True},  # blank reviewer
        {"reviewer": "r1", "verdict": "yes"},  # non-boolean verdict
        {"reviewer": "r1"},  # no verdict
        {"reviewer": "r1", "verdict": True, "comment": 7},  # non-string comment
    ],
)
def test_malformed_verdicts_are_400(client, body):
    task_id = client.get("/tasks").json()["tasks"][0]["task_id"]
    assert client.post(f"/task/{task_id}/verdict", json=body).status_code == 400


def test_non_json_body_is_400(client):
    task_id = client.get("/tasks").json()["tasks"][0]["task_id"]
    resp = client.post(
        f"/task/{task_id}/verdict",
        content=b"not json",
        headers={"content-type": "application/json"},
    )
    assert resp.status_code == 400


def test_duplicate_verdict_is_409_but_other_reviewers_may_rule(client):
    task_id = client.get("/tasks").json()["tasks"][0]["task_id"]
    first = client.post(f"/task/{task_id}/verdict", json={"reviewer": "r1", "verdict": True})
    assert first.status_code == 200
    assert first.json()["agrees"] is True
    dup = client.post(f"/task/{task_id}/verdict", json={"reviewer": "r1", "verdict": False})
    assert dup.status_code == 409
    second = client.post(f"/task/{task_id}/verdict", json={"reviewer": "r2", "verdict": False})
    assert second.status_code == 200
    assert second.json()["agrees"] is False


def test_done_flags_are_per_reviewer_when_requested(client):
    task_id = client.get("/tasks").json()["tasks"][0]["task_id"]
    client.post(f"/task/{task_id}/verdict", json={"reviewer": "r1", "verdict": True})
    anyone = client.get("/tasks").json()["tasks"]
    assert next(r for r in anyone if r["task_id"] == task_id)["done"] is True
    r2_view = client.get("/tasks", params={"reviewer": "r2"}).json()["tasks"]
    assert next(r for r in r2_view if r["task_id"] == task_id)["done"] is False


def test_review_round_appends_rows_and_yields_the_published_ppv(proof_snapshot):
    client = TestClient(create_app(proof_snapshot, kind="proof"))
    task_ids = [row["task_id"] for row in client.get("/tasks").json()["tasks"]]
    assert len(task_ids) == 15
    for i, task_id in enumerate(task_ids):
        verdict = i < 12  # reviewer accepts 12 of the 15 model-accepted proofs
        resp = client.post(
            f"/task/{task_id}/verdict", json={"reviewer": "r1", "verdict": verdict}
        )
        assert resp.status_code == 200

    lines = (proof_snapshot / "human_reviews.jsonl").read_text("utf-8").splitlines()
    assert len(lines) == 15
    rows = [json.loads(line) for line in lines]
    assert all(row["model_verdict"] is True for row in rows)

    reviews = [HumanReview.from_json_dict(row) for row in rows]
    ppv = judge_ppv(reviews, "proof")
    assert (ppv.numerator, ppv.denominator) == (12, 15)
    assert ppv.percent() == "80.0"

    progress = client.get("/progress").json()
    assert progress == {
        "total": 15,
        "done": 15,
        "reviews": 15,
        "by_kind": {"proof": {"total": 15, "done": 15}},
    }


def test_reviews_survive_app_recreation(proof_snapshot):
    client = TestClient(create_app(proof_snapshot, kind="proof"))
    task_id = client.get("/tasks").json()["tasks"][0]["task_id"]
    client.post(f"/task/{task_id}/verdict", json={"reviewer": "r1", "verdict": True})

    fresh = TestClient(create_app(proof_snapshot, kind="proof"))
    rows = fresh.get("/tasks", params={"reviewer": "r1"}).json()["tasks"]
    assert next(r for r in rows if r["task_id"] == task_id)["done"] is True
    dup = fresh.post(f"/task/{task_id}/verdict", json={"reviewer": "r1", "verdict": False})
    assert dup.status_code == 409
    assert fresh.get("/progress").json()["reviews"] == 1


def test_mixed_queue_serves_both_kinds_with_a_kind_filter(corpus_snapshot):
    client = TestClient(create_app(corpus_snapshot, kind="both", sample=4))
    rows = client.get("/tasks").json()["tasks"]
    kinds = {row["kind"] for row in rows}
    assert kinds == {"sc", "proof"}
    sc_only = client.get("/tasks", params={"kind": "sc"}).json()["tasks"]
    assert len(sc_only) == 4  # per-kind budget
    assert all(row["kind"] == "sc" for row in sc_only)


def test_verdict_rows_carry_utc_timestamps(client, proof_snapshot):
    task_id = client.get("/tasks").json()["tasks"][0]["task_id"]
    client.post(f"/task/{task_id}/verdict", json={"reviewer": "r1", "verdict": True, "comment": "ok"})
    row = json.loads((proof_snapshot / "human_reviews.jsonl").read_text("utf-8"))
    assert row["comment"] == "ok"
    assert row["submitted_at"].endswith("+00:00")
    parsed = dt.datetime.fromisoformat(row["submitted_at"])
    assert parsed.tzinfo is not None
