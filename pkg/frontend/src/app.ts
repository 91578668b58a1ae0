import { ApiError, ReviewClient } from "./api";
import { renderMathInto, RenderOutcome } from "./latex";
import { VerdictQueue } from "./queue";
import { parseSteps } from "./steps";
import type { StorageLike } from "./queue";
import type { Task, TaskKind, TaskSummary } from "./types";

const REVIEWER_KEY = "lemma-review.reviewer";

export type Typeset = (target: HTMLElement, source: string) => RenderOutcome;

export type AppOptions = {
  root: HTMLElement;
  client: ReviewClient;
  queue: VerdictQueue;
  storage: StorageLike;
  typeset?: Typeset;
};

type StatusTone = "info" | "warn" | "error";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function isTypingTarget(target: EventTarget | null): boolean {
  return (
    target instanceof HTMLInputElement ||
    target instanceof HTMLTextAreaElement ||
    (target instanceof HTMLElement && target.isContentEditable)
  );
}

/**
 * Single-page review surface over the review service.
 *
 * All truth lives on the server: the task list, payloads, and progress
 * are fetched fresh, verdicts are POSTed, and nothing is defaulted
 * client-side. Tasks render blind; the model's verdict appears only
 * after an explicit reveal. Verdicts that cannot reach the service are
 * parked in a durable queue and retried on the next action.
 */
export class App {
  private readonly root: HTMLElement;
  private readonly client: ReviewClient;
  private readonly queue: VerdictQueue;
  private readonly storage: StorageLike;
  private readonly typeset: Typeset;

  private reviewer = "";
  private tasks: TaskSummary[] = [];
  private kindFilter: "" | TaskKind = "";
  private currentTask: Task | null = null;
  private revealed = false;
  private verdictReady = false;
  private submitting = false;

  private listBox!: HTMLElement;
  private panel!: HTMLElement;
  private progressBox!: HTMLElement;
  private statusBox!: HTMLElement;
  private keysAttached = false;

  public constructor(options: AppOptions) {
    this.root = options.root;
    this.client = options.client;
    this.queue = options.queue;
    this.storage = options.storage;
    this.typeset = options.typeset ?? renderMathInto;
  }

  public async start(): Promise<void> {
    this.reviewer = this.storage.getItem(REVIEWER_KEY) ?? "";
    this.buildShell();
    if (!this.reviewer) {
      this.renderReviewerGate();
      return;
    }
    await this.flushQueue();
    await this.refresh();
  }

  // ----------------------------------------------------------------- shell

  private buildShell(): void {
    this.root.textContent = "";
    const header = el("header", "app-header");
    header.appendChild(el("h1", "", "Lemma review"));
    this.progressBox = el("div", "progress-box");
    header.appendChild(this.progressBox);
    const who = el("div", "reviewer-box");
    if (this.reviewer) {
      who.appendChild(el("span", "reviewer-name", this.reviewer));
      const switchBtn = el("button", "link-button", "switch reviewer");
      switchBtn.addEventListener("click", () => {
        this.storage.removeItem(REVIEWER_KEY);
        this.reviewer = "";
        this.buildShell();
        this.renderReviewerGate();
      });
      who.appendChild(switchBtn);
    }
    header.appendChild(who);
    this.root.appendChild(header);

    const split = el("div", "split");
    this.listBox = el("aside", "task-list");
    this.panel = el("main", "task-panel");
    split.appendChild(this.listBox);
    split.appendChild(this.panel);
    this.root.appendChild(split);

    this.statusBox = el("footer", "status-bar");
    this.root.appendChild(this.statusBox);
    this.setStatus("info", "a accept · x reject · n next · p previous · r reveal");

    // buildShell runs again on reviewer changes; the root listener
    // must not stack or one keystroke would submit twice.
    if (!this.keysAttached) {
      this.root.addEventListener("keydown", (event) => this.onKeydown(event as KeyboardEvent));
      this.keysAttached = true;
    }
  }

  private renderReviewerGate(): void {
    this.panel.textContent = "";
    const gate = el("div", "reviewer-gate");
    gate.appendChild(el("h2", "", "Who is reviewing?"));
    gate.appendChild(
      el("p", "muted", "Verdicts are recorded under this name, one per task per reviewer."),
    );
    const input = el("input");
    input.type = "text";
    input.placeholder = "e.g. expert-1";
    input.id = "reviewer-input";
    const button = el("button", "primary", "Start reviewing");
    const begin = () => {
      const name = input.value.trim();
      if (!name) return;
      this.storage.setItem(REVIEWER_KEY, name);
      this.reviewer = name;
      this.buildShell();
      void this.flushQueue().then(() => this.refresh());
    };
    button.addEventListener("click", begin);
    input.addEventListener("keydown", (event) => {
      if (event.key === "Enter") begin();
    });
    gate.appendChild(input);
    gate.appendChild(button);
    this.panel.appendChild(gate);
    input.focus();
  }

  private setStatus(tone: StatusTone, text: string, action?: { label: string; run: () => void }): void {
    this.statusBox.textContent = "";
    const note = el("span", `status status-${tone}`, text);
    this.statusBox.appendChild(note);
    if (action) {
      const button = el("button", "link-button", action.label);
      button.addEventListener("click", action.run);
      this.statusBox.appendChild(button);
    }
  }

  // ------------------------------------------------------------- task list

  private async refresh(): Promise<void> {
    this.tasks = await this.client.listTasks(this.reviewer, this.kindFilter);
    this.renderList();
    await this.renderProgress();
    if (this.currentTask === null) {
      const next = this.tasks.find((task) => !task.done);
      if (next) {
        await this.selectTask(next.task_id);
      } else {
        this.renderEmptyPanel();
      }
    }
  }

  private renderList(): void {
    this.listBox.textContent = "";

    const filters = el("div", "filters");
    for (const [label, value] of [
      ["all", ""],
      ["sc", "sc"],
      ["proof", "proof"],
    ] as const) {
      const button = el(
        "button",
        value === this.kindFilter ? "filter active" : "filter",
        label,
      );
      button.addEventListener("click", () => {
        this.kindFilter = value;
        void this.refresh();
      });
      filters.appendChild(button);
    }
    this.listBox.appendChild(filters);

    const list = el("ul", "task-rows");
    for (const task of this.tasks) {
      const row = el("li", task.done ? "task-row done" : "task-row");
      row.dataset.taskId = task.task_id;
      if (this.currentTask?.task_id === task.task_id) {
        row.classList.add("selected");
      }
      row.appendChild(el("span", `kind-tag kind-${task.kind}`, task.kind));
      row.appendChild(el("span", "task-id", task.task_id.slice(task.kind.length + 1)));
      row.appendChild(el("span", "done-mark", task.done ? "✓" : ""));
      row.addEventListener("click", () => void this.selectTask(task.task_id));
      list.appendChild(row);
    }
    this.listBox.appendChild(list);
  }

  private async renderProgress(): Promise<void> {
    const progress = await this.client.fetchProgress();
    this.progressBox.textContent = "";
    this.progressBox.appendChild(
      el("span", "", `${progress.done}/${progress.total} tasks reviewed`),
    );
    const parts = Object.entries(progress.by_kind)
      .sort(([a], [b]) => a.localeCompare(b))
      .map(([kind, slot]) => `${kind} ${slot.done}/${slot.total}`);
    if (parts.length > 0) {
      this.progressBox.appendChild(el("span", "muted", parts.join(" · ")));
    }
  }

  private renderEmptyPanel(): void {
    this.panel.textContent = "";
    this.panel.appendChild(el("p", "muted empty", "No open tasks. Every task in this queue has your verdict."));
  }

  // ------------------------------------------------------------ task panel

  public async selectTask(taskId: string, reveal = false): Promise<void> {
    const task = await this.client.fetchTask(taskId, reveal);
    this.currentTask = task;
    this.revealed = reveal;
    this.renderTask(task);
    this.renderList();
  }

  private renderTask(task: Task): void {
    this.panel.textContent = "";
    this.verdictReady = false;
    const detail = el("div", "task-detail");
    detail.dataset.taskId = task.task_id;

    const heading = el("div", "task-heading");
    heading.appendChild(el("h2", "", `${task.kind} task`));
    heading.appendChild(el("span", "lemma-id", task.lemma_id));
    if (task.kind === "proof") {
      heading.appendChild(
        el("span", "models muted", `${task.prover_model} judged by ${task.judge_model}`),
      );
    }
    detail.appendChild(heading);

    const warning = el("div", "render-warning hidden");
    detail.appendChild(warning);

    const blocks: Array<() => RenderOutcome> = [];

    const statement = el("section", "block statement");
    statement.appendChild(el("h3", "", "Statement"));
    const statementBody = el("div", "math-block");
    statement.appendChild(statementBody);
    detail.appendChild(statement);
    blocks.push(() => this.typeset(statementBody, task.statement));

    for (const [title, items, className] of [
      ["Definitions", task.definitions, "definitions"],
      ["Hypotheses", task.hypotheses, "hypotheses"],
    ] as const) {
      if (items.length === 0) {
        continue;
      }
      const section = el("section", `block ${className}`);
      section.appendChild(el("h3", "", title));
      for (const item of items) {
        const body = el("div", "math-block");
        section.appendChild(body);
        blocks.push(() => this.typeset(body, item));
      }
      detail.appendChild(section);
    }

    if (task.kind === "proof") {
      const section = el("section", "block steps");
      section.appendChild(el("h3", "", "Proof steps"));
      for (const step of parseSteps(task.steps)) {
        const card = document.createElement("details");
        card.className = "step-card";
        card.open = true;
        const summary = document.createElement("summary");
        summary.appendChild(el("span", "step-number", `Step ${step.number}`));
        const subgoal = el("span", "step-subgoal");
        summary.appendChild(subgoal);
        card.appendChild(summary);
        blocks.push(() => this.typeset(subgoal, step.subgoal));

        if (step.cites.length > 0) {
          const cites = el("div", "step-cites");
          cites.appendChild(el("span", "field-name", "cites"));
          for (const name of step.cites) {
            cites.appendChild(el("code", "cite-name", name));
          }
          card.appendChild(cites);
        }
        if (step.theorems.length > 0) {
          const theorems = el("div", "step-theorems");
          theorems.appendChild(el("span", "field-name", "theorems"));
          for (const name of step.theorems) {
            theorems.appendChild(el("code", "theorem-name", name));
          }
          card.appendChild(theorems);
        }
        const proof = el("div", "step-proof math-block");
        card.appendChild(proof);
        blocks.push(() => this.typeset(proof, step.proof));
        section.appendChild(card);
      }
      detail.appendChild(section);
    }

    detail.appendChild(this.buildVerdictControls(task));
    this.panel.appendChild(detail);

    // Typeset every block, then arm the controls. Verdicts stay
    // disabled unless the whole pass completes; a block that falls
    // back to raw source still counts as finished.
    let failures = 0;
    for (const render of blocks) {
      failures += render().failures;
    }
    if (failures > 0) {
      warning.classList.remove("hidden");
      warning.textContent = `${failures} math fragment(s) could not be typeset; raw source is shown in place.`;
    }
    this.enableVerdictControls();
  }

  private buildVerdictControls(task: Task): HTMLElement {
    const controls = el("section", "verdict-controls");

    const revealRow = el("div", "reveal-row");
    if (this.revealed && task.model_verdict !== undefined) {
      const chip = el(
        "span",
        task.model_verdict ? "model-verdict accept" : "model-verdict reject",
        `model says: ${task.model_verdict ? "accept" : "reject"}`,
      );
      revealRow.appendChild(chip);
      const hide = el("button", "link-button", "hide");
      hide.addEventListener("click", () => void this.selectTask(task.task_id, false));
      revealRow.appendChild(hide);
    } else {
      const reveal = el("button", "link-button reveal-button", "reveal model verdict");
      reveal.addEventListener("click", () => void this.selectTask(task.task_id, true));
      revealRow.appendChild(reveal);
    }
    controls.appendChild(revealRow);

    const comment = el("textarea", "comment-input");
    comment.placeholder = "Notes (optional)";
    comment.rows = 2;
    controls.appendChild(comment);

    const buttons = el("div", "verdict-buttons");
    const accept = el("button", "verdict accept", "Accept (a)");
    const reject = el("button", "verdict reject", "Reject (x)");
    accept.disabled = true;
    reject.disabled = true;
    accept.addEventListener("click", () => void this.submitVerdict(true));
    reject.addEventListener("click", () => void this.submitVerdict(false));
    buttons.appendChild(accept);
    buttons.appendChild(reject);
    controls.appendChild(buttons);
    return controls;
  }

  private enableVerdictControls(): void {
    this.verdictReady = true;
    for (const button of this.panel.querySelectorAll<HTMLButtonElement>("button.verdict")) {
      button.disabled = false;
    }
  }

  private commentText(): string {
    const box = this.panel.querySelector<HTMLTextAreaElement>(".comment-input");
    return box ? box.value.trim() : "";
  }

  // -------------------------------------------------------------- verdicts

  public async submitVerdict(verdict: boolean): Promise<void> {
    const task = this.currentTask;
    if (task === null || !this.verdictReady || this.submitting) {
      return;
    }
    this.submitting = true;
    try {
      await this.flushQueue();
      const response = await this.client.submitVerdict(task.task_id, {
        reviewer: this.reviewer,
        verdict,
        comment: this.commentText(),
      });
      this.markDone(task.task_id);
      this.setStatus(
        "info",
        response.agrees
          ? "Recorded. You agree with the model."
          : "Recorded. You disagree with the model.",
      );
      await this.renderProgress();
      await this.advance(task.task_id);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.markDone(task.task_id);
        this.setStatus("warn", "You already ruled on this task; nothing was recorded twice.");
        await this.advance(task.task_id);
      } else if (error instanceof ApiError) {
        this.setStatus("error", `The service rejected the verdict: ${error.message}`);
      } else {
        // The service is unreachable; advancing would need a fetch
        // too. Park the verdict and stay put until the next action.
        this.queue.enqueue({
          task_id: task.task_id,
          reviewer: this.reviewer,
          verdict,
          comment: this.commentText(),
          queued_at: new Date().toISOString(),
        });
        this.setStatus(
          "warn",
          `Network failure. Verdict saved locally (${this.queue.size()} pending); it will retry on your next action.`,
          { label: "retry now", run: () => void this.retryQueued() },
        );
      }
    } finally {
      this.submitting = false;
    }
  }

  private markDone(taskId: string): void {
    const summary = this.tasks.find((task) => task.task_id === taskId);
    if (summary) {
      summary.done = true;
    }
    this.renderList();
  }

  private async advance(fromTaskId: string): Promise<void> {
    const start = this.tasks.findIndex((task) => task.task_id === fromTaskId);
    for (let offset = 1; offset <= this.tasks.length; offset++) {
      const candidate = this.tasks[(start + offset) % this.tasks.length];
      if (candidate && !candidate.done) {
        await this.selectTask(candidate.task_id);
        return;
      }
    }
    this.currentTask = null;
    this.renderEmptyPanel();
    this.renderList();
  }

  public async nextOpenTask(): Promise<void> {
    await this.advance(this.currentTask?.task_id ?? "");
  }

  public async previousOpenTask(): Promise<void> {
    const current = this.currentTask?.task_id ?? "";
    const start = this.tasks.findIndex((task) => task.task_id === current);
    const base = start === -1 ? 0 : start;
    for (let offset = 1; offset <= this.tasks.length; offset++) {
      const index = (base - offset + this.tasks.length * offset) % this.tasks.length;
      const candidate = this.tasks[index];
      if (candidate && !candidate.done) {
        await this.selectTask(candidate.task_id);
        return;
      }
    }
  }

  public async revealModelVerdict(): Promise<void> {
    if (this.currentTask !== null) {
      await this.selectTask(this.currentTask.task_id, !this.revealed);
    }
  }

  private async retryQueued(): Promise<void> {
    const result = await this.flushQueue();
    if (result.kept > 0) {
      this.setStatus("warn", `Still offline; ${result.kept} verdict(s) remain queued.`, {
        label: "retry now",
        run: () => void this.retryQueued(),
      });
    } else {
      // Everything landed; re-sync done flags and move to open work.
      this.currentTask = null;
      await this.refresh();
    }
  }

  private async flushQueue(): Promise<{ delivered: number; duplicates: number; kept: number }> {
    const result = await this.queue.flush(this.client);
    if (result.delivered > 0 || result.duplicates > 0) {
      this.setStatus(
        "info",
        `Delivered ${result.delivered + result.duplicates} queued verdict(s).`,
      );
    }
    return result;
  }

  // -------------------------------------------------------------- keyboard

  private onKeydown(event: KeyboardEvent): void {
    if (isTypingTarget(event.target) || event.ctrlKey || event.metaKey || event.altKey) {
      return;
    }
    switch (event.key) {
      case "a":
        void this.submitVerdict(true);
        break;
      case "x":
        void this.submitVerdict(false);
        break;
      case "n":
        void this.nextOpenTask();
        break;
      case "p":
        void this.previousOpenTask();
        break;
      case "r":
        void this.revealModelVerdict();
        break;
      default:
        return;
    }
    event.preventDefault();
  }
}

export function createApp(options: AppOptions): App {
  return new App(options);
}
