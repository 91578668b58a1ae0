"""Benchmark accounting: rates, stratification, agreement, and the report.

All percentages are rendered from integer count pairs with ``decimal``
half-up rounding, so a report never shows a figure that cannot be
reproduced from the underlying counts. The report is a pure function of
the snapshot's records: no clocks, no environment.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .extraction import BenchmarkBundle
from .harvester import PaperMeta
from .latex_corpus import LemmaRecord
from .proving import ProofJudgment


def percent_str(numerator: int, denominator: int, decimals: int = 1) -> str:
    """Half-up decimal percentage, e.g. (405, 677) -> '59.8'."""
    if denominator == 0:
        return "n/a"
    quantum = Decimal(1).scaleb(-decimals) if decimals else Decimal(1)
    value = (Decimal(numerator) * 100 / Decimal(denominator)).quantize(
        quantum, rounding=ROUND_HALF_UP
    )
    return str(value)


@dataclass(frozen=True)
class RatioMetric:
    numerator: int
    denominator: int

    def value(self) -> float | None:
        return None if self.denominator == 0 else self.numerator / self.denominator

    def percent(self, decimals: int = 1) -> str:
        return percent_str(self.numerator, self.denominator, decimals)

    def to_json_dict(self) -> dict:
        return {
            "numerator": self.numerator,
            "denominator": self.denominator,
            "percent": self.percent(),
        }


@dataclass(frozen=True)
class StageCounts:
    """Lemma survival through the funnel; each stage can only shrink."""

    harvested: int
    kept: int
    judged: int
    members: int

    def __post_init__(self):
        if not (self.harvested >= self.kept >= self.judged >= self.members >= 0):
            raise ValueError(
                f"stage counts must be non-increasing: {self.harvested} >= "
                f"{self.kept} >= {self.judged} >= {self.members}"
            )

    def to_json_dict(self) -> dict:
        return {
            "harvested": self.harvested,
            "kept": self.kept,
            "judged": self.judged,
            "members": self.members,
        }


@dataclass(frozen=True)
class DomainRow:
    domain: str
    papers: int
    lemmas: int


@dataclass(frozen=True)
class HumanReview:
    review_id: str
    task_id: str
    kind: str  # "sc" | "proof"
    lemma_id: str
    attempt_id: str
    reviewer: str
    verdict: bool
    model_verdict: bool
    comment: str
    submitted_at: str

    def to_json_dict(self) -> dict:
        return {
            "review_id": self.review_id,
            "task_id": self.task_id,
            "kind": self.kind,
            "lemma_id": self.lemma_id,
            "attempt_id": self.attempt_id,
            "reviewer": self.reviewer,
            "verdict": self.verdict,
            "model_verdict": self.model_verdict,
            "comment": self.comment,
            "submitted_at": self.submitted_at,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "HumanReview":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


# ---------------------------------------------------------------------------
# Rates


def stage_counts(lemmas_all: list[LemmaRecord], bundles: list[BenchmarkBundle]) -> StageCounts:
    kept_ids = {l.lemma_id for l in lemmas_all if not l.bears_reference}
    judged = [b for b in bundles if b.lemma_id in kept_ids and b.filter_passed and b.judgments]
    members = [b for b in judged if b.is_member]
    return StageCounts(
        harvested=len(lemmas_all),
        kept=len(kept_ids),
        judged=len(judged),
        members=len(members),
    )


def sc_pass_rate(bundles: list[BenchmarkBundle]) -> RatioMetric:
    """Judge-accepted share among bundles that reached the judge."""
    judged = [b for b in bundles if b.filter_passed and b.judgments]
    passed = [b for b in judged if b.judgments[0].verdict]
    return RatioMetric(len(passed), len(judged))


def proof_acceptance(
    judgments: list[ProofJudgment], prover: str, judge: str
) -> RatioMetric:
    mine = [j for j in judgments if j.prover_model == prover and j.judge_model == judge]
    return RatioMetric(sum(j.overall for j in mine), len(mine))


def acceptance_by_lemma(
    judgments: list[ProofJudgment], prover: str, judge: str
) -> RatioMetric:
    """pass@k view: a lemma counts once, accepted when any attempt passes."""
    by_lemma: dict[str, bool] = {}
    for j in judgments:
        if j.prover_model == prover and j.judge_model == judge:
            by_lemma[j.lemma_id] = by_lemma.get(j.lemma_id, False) or j.overall
    return RatioMetric(sum(by_lemma.values()), len(by_lemma))


# ---------------------------------------------------------------------------
# Stratification


def stratify(metas: list[PaperMeta], lemmas: list[LemmaRecord]) -> list[DomainRow]:
    """Per-domain paper and lemma counts, alphabetical, for papers that
    contributed at least one record."""
    domain_of = {m.arxiv_id: m.domain_code for m in metas}
    papers: dict[str, set[str]] = {}
    counts: dict[str, int] = {}
    for meta in metas:
        papers.setdefault(meta.domain_code, set()).add(meta.arxiv_id)
    for lemma in lemmas:
        domain = domain_of.get(lemma.arxiv_id)
        if domain is None:
            continue
        counts[domain] = counts.get(domain, 0) + 1
    return [
        DomainRow(domain, len(papers[domain]), counts.get(domain, 0))
        for domain in sorted(papers)
    ]


# ---------------------------------------------------------------------------
# Agreement


def sc_verdicts_by_model(bundles: list[BenchmarkBundle]) -> dict[str, dict[str, bool]]:
    out: dict[str, dict[str, bool]] = {}
    for b in bundles:
        for j in b.judgments:
            out.setdefault(j.model_id, {})[b.lemma_id] = j.verdict
    return out


def confusion_counts(a: dict[str, bool], b: dict[str, bool]) -> dict[str, int]:
    """2x2 agreement over the keys both sides ruled on."""
    shared = a.keys() & b.keys()
    cells = {"both_true": 0, "a_only": 0, "b_only": 0, "both_false": 0}
    for key in shared:
        if a[key] and b[key]:
            cells["both_true"] += 1
        elif a[key]:
            cells["a_only"] += 1
        elif b[key]:
            cells["b_only"] += 1
        else:
            cells["both_false"] += 1
    return cells


def judge_ppv(reviews: list[HumanReview], kind: str) -> RatioMetric:
    """Of model-accepted items humans sampled, how many did humans confirm."""
    accepted = [r for r in reviews if r.kind == kind and r.model_verdict]
    return RatioMetric(sum(r.verdict for r in accepted), len(accepted))


def human_agreement(reviews: list[HumanReview], kind: str | None = None) -> RatioMetric:
    mine = [r for r in reviews if kind is None or r.kind == kind]
    return RatioMetric(sum(r.verdict == r.model_verdict for r in mine), len(mine))


# ---------------------------------------------------------------------------
# Report


@dataclass(frozen=True)
class BenchmarkReport:
    snapshot_id: str
    stage: StageCounts
    domains: list[DomainRow]
    sc_rates: dict[str, RatioMetric]  # retrieval mode -> rate
    proof_rows: list[tuple[str, str, RatioMetric]]  # (prover, judge, rate)
    sc_confusion: dict[str, dict[str, int]]  # "modelA|modelB" -> cells
    human_sc_ppv: RatioMetric
    human_proof_agreement: RatioMetric
    review_count: int
    tokens: dict

    def to_json_dict(self) -> dict:
        return {
            "snapshot_id": self.snapshot_id,
            "stage_counts": self.stage.to_json_dict(),
            "domains": [
                {"domain": d.domain, "papers": d.papers, "lemmas": d.lemmas}
                for d in self.domains
            ],
            "sc_rates": {m: r.to_json_dict() for m, r in sorted(self.sc_rates.items())},
            "proof_acceptance": [
                {
                    "prover": p,
                    "judge": j,
                    **r.to_json_dict(),
                }
                for p, j, r in self.proof_rows
            ],
            "sc_confusion": {k: dict(v) for k, v in sorted(self.sc_confusion.items())},
            "human": {
                "review_count": self.review_count,
                "sc_ppv": self.human_sc_ppv.to_json_dict(),
                "proof_agreement": self.human_proof_agreement.to_json_dict(),
            },
            "tokens": self.tokens,
        }

    def render_markdown(self) -> str:
        lines = [f"# Benchmark report: {self.snapshot_id}", ""]
        lines += ["## Funnel", ""]
        lines += ["| stage | count |", "| --- | ---: |"]
        for name, count in self.stage.to_json_dict().items():
            lines.append(f"| {name} | {count} |")
        lines += ["", "## Domains", ""]
        lines += ["| domain | papers | lemmas |", "| --- | ---: | ---: |"]
        for d in self.domains:
            lines.append(f"| {d.domain} | {d.papers} | {d.lemmas} |")
        lines.append(
            f"| total | {sum(d.papers for d in self.domains)} "
            f"| {sum(d.lemmas for d in self.domains)} |"
        )
        lines += ["", "## Self-containedness", ""]
        lines += ["| mode | passed | judged | rate |", "| --- | ---: | ---: | ---: |"]
        for mode, rate in sorted(self.sc_rates.items()):
            lines.append(
                f"| {mode} | {rate.numerator} | {rate.denominator} | {rate.percent()}% |"
            )
        lines += ["", "## Proof acceptance", ""]
        lines += ["| prover | judge | accepted | total | rate |",
                  "| --- | --- | ---: | ---: | ---: |"]
        for prover, judge, rate in self.proof_rows:
            lines.append(
                f"| {prover} | {judge} | {rate.numerator} | {rate.denominator} "
                f"| {rate.percent()}% |"
            )
        if self.sc_confusion:
            lines += ["", "## Judge agreement (self-containedness)", ""]
            lines += ["| pair | both true | first only | second only | both false |",
                      "| --- | ---: | ---: | ---: | ---: |"]
            for pair, cells in sorted(self.sc_confusion.items()):
                lines.append(
                    f"| {pair} | {cells['both_true']} | {cells['a_only']} "
                    f"| {cells['b_only']} | {cells['both_false']} |"
                )
        lines += ["", "## Human review", ""]
        lines.append(f"- reviews recorded: {self.review_count}")
        lines.append(
            f"- SC judge PPV vs humans: {self.human_sc_ppv.percent()}% "
            f"({self.human_sc_ppv.numerator}/{self.human_sc_ppv.denominator})"
        )
        lines.append(
            f"- proof judge agreement: {self.human_proof_agreement.percent()}% "
            f"({self.human_proof_agreement.numerator}/{self.human_proof_agreement.denominator})"
        )
        lines += ["", "## Token spend", ""]
        lines.append(f"- total: {self.tokens.get('total', 0)}")
        for group in ("by_stage", "by_mode"):
            for key, val in sorted(self.tokens.get(group, {}).items()):
                lines.append(f"- {group.removeprefix('by_')} {key}: {val}")
        return "\n".join(lines) + "\n"


def build_report(
    *,
    snapshot_id: str,
    metas: list[PaperMeta],
    lemmas_all: list[LemmaRecord],
    bundles: list[BenchmarkBundle],
    judgments: list[ProofJudgment],
    reviews: list[HumanReview],
    tokens: dict | None = None,
) -> BenchmarkReport:
    by_mode: dict[str, list[BenchmarkBundle]] = {}
    for b in bundles:
        by_mode.setdefault(b.mode, []).append(b)
    sc_rates = {mode: sc_pass_rate(group) for mode, group in by_mode.items()}

    pairs = sorted({(j.prover_model, j.judge_model) for j in judgments})
    proof_rows = [(p, j, proof_acceptance(judgments, p, j)) for p, j in pairs]

    verdicts = sc_verdicts_by_model(bundles)
    confusion: dict[str, dict[str, int]] = {}
    models = sorted(verdicts)
    for i, a in enumerate(models):
        for b in models[i + 1 :]:
            confusion[f"{a}|{b}"] = confusion_counts(verdicts[a], verdicts[b])

    kept = [l for l in lemmas_all if not l.bears_reference]
    return BenchmarkReport(
        snapshot_id=snapshot_id,
        stage=stage_counts(lemmas_all, bundles),
        domains=stratify(metas, kept),
        sc_rates=sc_rates,
        proof_rows=proof_rows,
        sc_confusion=confusion,
        human_sc_ppv=judge_ppv(reviews, "sc"),
        human_proof_agreement=human_agreement(reviews, "proof"),
        review_count=len(reviews),
        tokens=tokens or {"total": 0, "by_stage": {}, "by_mode": {}},
    )
