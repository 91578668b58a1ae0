import { beforeEach, describe, expect, it } from "vitest";

import { ReviewClient } from "../src/api";
import { createApp } from "../src/app";
import { VerdictQueue } from "../src/queue";
import type { FetchLike } from "../src/api";
import type { StorageLike } from "../src/queue";

class MemoryStorage implements StorageLike {
  private readonly items = new Map<string, string>();

  public getItem(key: string): string | null {
    return this.items.get(key) ?? null;
  }

  public setItem(key: string, value: string): void {
    this.items.set(key, value);
  }

  public removeItem(key: string): void {
    this.items.delete(key);
  }
}

type FixtureTask = {
  task_id: string;
  kind: "sc" | "proof";
  lemma_id: string;
  attempt_id: string;
  statement: string;
  definitions: string[];
  hypotheses: string[];
  prover_model?: string;
  judge_model?: string;
  steps?: string;
  model_verdict: boolean;
};

function json(status: number, body: unknown): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  } as unknown as Response;
}

/**
 * In-memory double of the review service, faithful to its contract:
 * per-reviewer done flags, blind payloads unless ?reveal=1, one review
 * per (task, reviewer) with 409 on duplicates, and progress counts.
 */
class FakeService {
  public offline = false;
  public verdictPosts = 0;
  public reviews = new Map<string, { verdict: boolean; comment: string }>();
  public requests: string[] = [];

  public constructor(private readonly tasks: FixtureTask[]) {}

  public fetch: FetchLike = async (input, init) => {
    if (this.offline) {
      throw new TypeError("fetch failed");
    }
    this.requests.push(input);
    const url = new URL(input, "http://reviews.local");
    const path = url.pathname;

    if (path === "/tasks") {
      const reviewer = url.searchParams.get("reviewer") ?? "";
      const kind = url.searchParams.get("kind") ?? "";
      const rows = this.tasks
        .filter((task) => !kind || task.kind === kind)
        .map((task) => ({
          task_id: task.task_id,
          kind: task.kind,
          done: reviewer
            ? this.reviews.has(`${task.task_id}:${reviewer}`)
            : [...this.reviews.keys()].some((key) => key.startsWith(`${task.task_id}:`)),
        }));
      return json(200, { tasks: rows });
    }

    const verdictMatch = /^\/task\/([^/]+)\/verdict$/.exec(path);
    if (verdictMatch !== null && init?.method === "POST") {
      const task = this.tasks.find(
        (candidate) => candidate.task_id === decodeURIComponent(verdictMatch[1]!),
      );
      if (task === undefined) {
        return json(404, { error: "unknown task" });
      }
      const body = JSON.parse(init.body as string) as {
        reviewer?: unknown;
        verdict?: unknown;
        comment?: unknown;
      };
      if (typeof body.reviewer !== "string" || !body.reviewer.trim()) {
        return json(400, { error: "reviewer is required" });
      }
      if (typeof body.verdict !== "boolean") {
        return json(400, { error: "verdict must be true or false" });
      }
      const key = `${task.task_id}:${body.reviewer.trim()}`;
      if (this.reviews.has(key)) {
        return json(409, { error: "this reviewer already ruled on this task" });
      }
      this.verdictPosts++;
      this.reviews.set(key, {
        verdict: body.verdict,
        comment: typeof body.comment === "string" ? body.comment : "",
      });
      return json(200, {
        ok: true,
        review_id: `rev-${key}`,
        agrees: body.verdict === task.model_verdict,
      });
    }

    const taskMatch = /^\/task\/([^/]+)$/.exec(path);
    if (taskMatch !== null) {
      const task = this.tasks.find(
        (candidate) => candidate.task_id === decodeURIComponent(taskMatch[1]!),
      );
      if (task === undefined) {
        return json(404, { error: "unknown task" });
      }
      const { model_verdict, ...payload } = task;
      if (url.searchParams.get("reveal") === "1") {
        return json(200, { ...payload, model_verdict });
      }
      return json(200, payload);
    }

    if (path === "/progress") {
      const doneIds = new Set(
        [...this.reviews.keys()].map((key) => key.slice(0, key.indexOf(":"))),
      );
      const byKind: Record<string, { total: number; done: number }> = {};
      for (const task of this.tasks) {
        const slot = (byKind[task.kind] ??= { total: 0, done: 0 });
        slot.total++;
        slot.done += doneIds.has(task.task_id) ? 1 : 0;
      }
      return json(200, {
        total: this.tasks.length,
        done: this.tasks.filter((task) => doneIds.has(task.task_id)).length,
        reviews: this.reviews.size,
        by_kind: byKind,
      });
    }
    return json(404, { error: "unknown path" });
  };
}

const SIX_STEPS = [
  "STEP 1:",
  "SUBGOAL: Bound the first term $t_1$.",
  "CITES: def:norm",
  "THEOREMS: triangle inequality",
  "PROOF: Estimate $t_1 \\le 2^{-1}$ directly.",
  ...[2, 3, 4, 5, 6].flatMap((n) => [
    `STEP ${n}:`,
    `SUBGOAL: Bound the term $t_{${n}}$.`,
    `PROOF: Estimate $t_{${n}} \\le 2^{-${n}}$.`,
  ]),
].join("\n");

function fixtureTasks(): FixtureTask[] {
  return [
    {
      task_id: "sc-aaa",
      kind: "sc",
      lemma_id: "2608.00001#L1",
      attempt_id: "",
      statement: "Let $G$ be a group of order $p^2$.",
      definitions: ["A $p$-group has order a power of $p$."],
      hypotheses: ["$p$ is prime."],
      model_verdict: true,
    },
    {
      task_id: "sc-bbb",
      kind: "sc",
      lemma_id: "2608.00001#L2",
      attempt_id: "",
      statement: "Every finite integral domain is a field.",
      definitions: [],
      hypotheses: [],
      model_verdict: false,
    },
    {
      task_id: "sc-ccc",
      kind: "sc",
      lemma_id: "2608.00002#L1",
      attempt_id: "",
      statement: "Consider $\\badmacro{x}$ in what follows.",
      definitions: ["The series $\\sum_n a_n$ converges absolutely."],
      hypotheses: [],
      model_verdict: true,
    },
    {
      task_id: "proof-ddd",
      kind: "proof",
      lemma_id: "2608.00002#L2",
      attempt_id: "att-1",
      statement: "The series telescopes to a finite bound.",
      definitions: [],
      hypotheses: ["All $t_n$ are nonnegative."],
      prover_model: "prover-x",
      judge_model: "judge-p",
      steps: SIX_STEPS,
      model_verdict: true,
    },
  ];
}

function settle(): Promise<void> {
  return new Promise((resolve) => setTimeout(() => setTimeout(resolve, 0), 0));
}

function setup(options: { reviewer?: string; tasks?: FixtureTask[] } = {}) {
  const service = new FakeService(options.tasks ?? fixtureTasks());
  const storage = new MemoryStorage();
  if (options.reviewer !== "") {
    storage.setItem("lemma-review.reviewer", options.reviewer ?? "expert-1");
  }
  const queue = new VerdictQueue(storage);
  const root = document.createElement("div");
  document.body.appendChild(root);
  const app = createApp({
    root,
    client: new ReviewClient("", service.fetch),
    queue,
    storage,
  });
  return { service, storage, queue, root, app };
}

function detailTaskId(root: HTMLElement): string | undefined {
  return root.querySelector<HTMLElement>(".task-detail")?.dataset.taskId;
}

function key(root: HTMLElement, value: string): void {
  root.dispatchEvent(new KeyboardEvent("keydown", { key: value, bubbles: true }));
}

beforeEach(() => {
  document.body.textContent = "";
});

describe("App", () => {
  it("lists every task and opens the first task without a verdict", async () => {
    const { root, app } = setup();
    await app.start();
    expect(root.querySelectorAll(".task-row")).toHaveLength(4);
    expect(detailTaskId(root)).toBe("sc-aaa");
    expect(root.querySelectorAll(".block.statement .katex").length).toBeGreaterThan(0);
    const buttons = [...root.querySelectorAll<HTMLButtonElement>("button.verdict")];
    expect(buttons).toHaveLength(2);
    expect(buttons.every((button) => !button.disabled)).toBe(true);
  });

  it("gates on a reviewer name and starts once one is given", async () => {
    const { root, app, storage, service } = setup({ reviewer: "" });
    await app.start();
    const input = root.querySelector<HTMLInputElement>("#reviewer-input");
    expect(input).not.toBeNull();
    input!.value = "expert-9";
    root.querySelector<HTMLButtonElement>("button.primary")!.click();
    await settle();
    expect(storage.getItem("lemma-review.reviewer")).toBe("expert-9");
    expect(root.querySelectorAll(".task-row").length).toBeGreaterThan(0);
    expect(service.requests.some((url) => url.startsWith("/tasks?reviewer=expert-9"))).toBe(true);
  });

  it("renders only the statement block when definitions and hypotheses are empty", async () => {
    const { root, app } = setup();
    await app.start();
    await app.selectTask("sc-bbb");
    expect(root.querySelector(".block.statement")).not.toBeNull();
    expect(root.querySelector(".block.definitions")).toBeNull();
    expect(root.querySelector(".block.hypotheses")).toBeNull();
  });

  it("renders a proof task as ordered collapsible step cards", async () => {
    const { root, app } = setup();
    await app.start();
    await app.selectTask("proof-ddd");
    const cards = [...root.querySelectorAll<HTMLDetailsElement>("details.step-card")];
    expect(cards).toHaveLength(6);
    expect(cards.every((card) => card.open)).toBe(true);
    expect(
      [...root.querySelectorAll(".step-number")].map((node) => node.textContent),
    ).toEqual(["Step 1", "Step 2", "Step 3", "Step 4", "Step 5", "Step 6"]);
    expect(root.querySelector(".cite-name")!.textContent).toBe("def:norm");
    expect(root.querySelector(".theorem-name")!.textContent).toBe("triangle inequality");
    expect(root.querySelector(".models")!.textContent).toBe("prover-x judged by judge-p");
  });

  it("typesets around a malformed fragment and shows a warning", async () => {
    const { root, app } = setup();
    await app.start();
    await app.selectTask("sc-ccc");
    expect(root.querySelectorAll(".block.statement code.math-fallback")).toHaveLength(1);
    expect(root.querySelectorAll(".block.definitions .katex").length).toBeGreaterThan(0);
    const warning = root.querySelector(".render-warning")!;
    expect(warning.classList.contains("hidden")).toBe(false);
    expect(warning.textContent).toContain("1 math fragment");
  });

  it("stays blind until the reviewer asks, then hides again", async () => {
    const { root, app } = setup();
    await app.start();
    expect(root.querySelector(".model-verdict")).toBeNull();
    expect(root.textContent).not.toContain("model says");
    await app.revealModelVerdict();
    const chip = root.querySelector(".model-verdict");
    expect(chip).not.toBeNull();
    expect(chip!.textContent).toBe("model says: accept");
    await app.revealModelVerdict();
    expect(root.querySelector(".model-verdict")).toBeNull();
  });

  it("keeps verdict controls disabled if typesetting never completes", async () => {
    const service = new FakeService(fixtureTasks());
    const storage = new MemoryStorage();
    storage.setItem("lemma-review.reviewer", "expert-1");
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = createApp({
      root,
      client: new ReviewClient("", service.fetch),
      queue: new VerdictQueue(storage),
      storage,
      typeset: () => {
        throw new Error("renderer exploded");
      },
    });
    await expect(app.start()).rejects.toThrow("renderer exploded");
    const buttons = [...root.querySelectorAll<HTMLButtonElement>("button.verdict")];
    expect(buttons).toHaveLength(2);
    expect(buttons.every((button) => button.disabled)).toBe(true);
    await app.submitVerdict(true);
    expect(service.verdictPosts).toBe(0);
  });

  it("records a verdict, marks the row, reports agreement, and advances", async () => {
    const { root, app, service } = setup();
    await app.start();
    root.querySelector<HTMLTextAreaElement>(".comment-input")!.value = "clean statement";
    await app.submitVerdict(true);
    expect(service.reviews.get("sc-aaa:expert-1")).toEqual({
      verdict: true,
      comment: "clean statement",
    });
    expect(root.querySelector('[data-task-id="sc-aaa"].task-row.done')).not.toBeNull();
    expect(detailTaskId(root)).toBe("sc-bbb");
    expect(root.querySelector(".status-info")!.textContent).toContain("You agree");
    expect(root.querySelector(".progress-box")!.textContent).toContain("1/4 tasks reviewed");
  });

  it("reports disagreement when the reviewer contradicts the model", async () => {
    const { root, app } = setup();
    await app.start();
    await app.submitVerdict(false);
    expect(root.querySelector(".status-info")!.textContent).toContain("You disagree");
  });

  it("shows the already-reviewed state on 409 without recording twice", async () => {
    const { root, app, service, queue } = setup();
    service.reviews.set("sc-aaa:expert-1", { verdict: true, comment: "" });
    await app.start();
    expect(detailTaskId(root)).toBe("sc-bbb");
    await app.selectTask("sc-aaa");
    await app.submitVerdict(false);
    expect(root.querySelector(".status-warn")!.textContent).toContain("already ruled");
    expect(service.reviews.size).toBe(1);
    expect(service.reviews.get("sc-aaa:expert-1")!.verdict).toBe(true);
    expect(queue.size()).toBe(0);
    expect(detailTaskId(root)).toBe("sc-bbb");
  });

  it("queues a verdict offline and flushes it exactly once on the next action", async () => {
    const { root, app, service, queue } = setup();
    await app.start();

    service.offline = true;
    await app.submitVerdict(true);
    expect(queue.size()).toBe(1);
    expect(service.reviews.size).toBe(0);
    expect(root.querySelector(".status-warn")!.textContent).toContain("saved locally");
    expect(detailTaskId(root)).toBe("sc-aaa");

    service.offline = false;
    await app.nextOpenTask();
    expect(detailTaskId(root)).toBe("sc-bbb");
    await app.submitVerdict(false);
    expect(queue.size()).toBe(0);
    expect(service.verdictPosts).toBe(2);
    expect(service.reviews.get("sc-aaa:expert-1")).toEqual({ verdict: true, comment: "" });
    expect(service.reviews.get("sc-bbb:expert-1")).toEqual({ verdict: false, comment: "" });
  });

  it("delivers queued verdicts through the retry control once back online", async () => {
    const { root, app, service, queue } = setup();
    await app.start();

    service.offline = true;
    await app.submitVerdict(true);
    expect(queue.size()).toBe(1);

    service.offline = false;
    const retry = [...root.querySelectorAll<HTMLButtonElement>(".status-bar button")].find(
      (button) => button.textContent === "retry now",
    )!;
    retry.click();
    await settle();
    expect(queue.size()).toBe(0);
    expect(service.verdictPosts).toBe(1);
    expect(service.reviews.get("sc-aaa:expert-1")).toEqual({ verdict: true, comment: "" });
    expect(root.querySelector('[data-task-id="sc-aaa"].task-row.done')).not.toBeNull();
    expect(detailTaskId(root)).toBe("sc-bbb");
  });

  it("drives the review from the keyboard and ignores keys while typing", async () => {
    const { root, app, service } = setup();
    await app.start();
    expect(detailTaskId(root)).toBe("sc-aaa");

    key(root, "n");
    await settle();
    expect(detailTaskId(root)).toBe("sc-bbb");

    key(root, "p");
    await settle();
    expect(detailTaskId(root)).toBe("sc-aaa");

    const comment = root.querySelector<HTMLTextAreaElement>(".comment-input")!;
    comment.dispatchEvent(new KeyboardEvent("keydown", { key: "a", bubbles: true }));
    await settle();
    expect(service.verdictPosts).toBe(0);

    key(root, "r");
    await settle();
    expect(root.querySelector(".model-verdict")).not.toBeNull();

    key(root, "a");
    await settle();
    expect(service.reviews.has("sc-aaa:expert-1")).toBe(true);
    expect(service.reviews.get("sc-aaa:expert-1")!.verdict).toBe(true);
  });

  it("narrows the list with the kind filter", async () => {
    const { root, app, service } = setup();
    await app.start();
    const proofFilter = [...root.querySelectorAll<HTMLButtonElement>("button.filter")].find(
      (button) => button.textContent === "proof",
    )!;
    proofFilter.click();
    await settle();
    const rows = [...root.querySelectorAll<HTMLElement>(".task-row")];
    expect(rows).toHaveLength(1);
    expect(rows[0]!.dataset.taskId).toBe("proof-ddd");
    expect(service.requests.some((url) => url.includes("kind=proof"))).toBe(true);
  });

  it("clears the stored name when switching reviewer", async () => {
    const { root, app, storage } = setup();
    await app.start();
    const switchBtn = [...root.querySelectorAll<HTMLButtonElement>("button.link-button")].find(
      (button) => button.textContent === "switch reviewer",
    )!;
    switchBtn.click();
    await settle();
    expect(storage.getItem("lemma-review.reviewer")).toBeNull();
    expect(root.querySelector("#reviewer-input")).not.toBeNull();
  });
});
