import { ApiError, ReviewClient } from "./api";

export type QueuedVerdict = {
  task_id: string;
  reviewer: string;
  verdict: boolean;
  comment: string;
  queued_at: string;
};

export type StorageLike = {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
};

export type FlushResult = {
  /** Entries the service accepted on this flush. */
  delivered: number;
  /** Entries the service had already recorded (409); dropped as done. */
  duplicates: number;
  /** Entries the service rejected outright (other 4xx); dropped as lost causes. */
  rejected: number;
  /** Entries kept for a later flush because the network failed. */
  kept: number;
};

const DEFAULT_KEY = "lemma-review.pending-verdicts";

/**
 * Durable queue for verdicts that could not reach the service.
 *
 * Entries persist in storage, so a closed tab loses nothing. Flushing
 * delivers in FIFO order and leans on the service's (task, reviewer)
 * uniqueness for exactly-once effect: a retry of a verdict that
 * actually landed comes back 409 and is dropped instead of doubling.
 */
export class VerdictQueue {
  private flushing = false;

  public constructor(
    private readonly storage: StorageLike,
    private readonly key: string = DEFAULT_KEY,
  ) {}

  public entries(): QueuedVerdict[] {
    const raw = this.storage.getItem(this.key);
    if (raw === null) {
      return [];
    }
    try {
      const parsed: unknown = JSON.parse(raw);
      return Array.isArray(parsed) ? (parsed as QueuedVerdict[]) : [];
    } catch {
      return [];
    }
  }

  public size(): number {
    return this.entries().length;
  }

  private save(entries: QueuedVerdict[]): void {
    if (entries.length === 0) {
      this.storage.removeItem(this.key);
    } else {
      this.storage.setItem(this.key, JSON.stringify(entries));
    }
  }

  /** Add a verdict, replacing any staler one for the same (task, reviewer). */
  public enqueue(verdict: QueuedVerdict): void {
    const entries = this.entries().filter(
      (entry) => entry.task_id !== verdict.task_id || entry.reviewer !== verdict.reviewer,
    );
    entries.push(verdict);
    this.save(entries);
  }

  /**
   * Try to deliver every queued verdict.
   *
   * Stops at the first network failure (connectivity is down; order is
   * preserved for the next attempt). Re-entrant calls while a flush is
   * in flight return immediately so no entry is ever sent twice by
   * overlapping flushes.
   */
  public async flush(client: ReviewClient): Promise<FlushResult> {
    const result: FlushResult = { delivered: 0, duplicates: 0, rejected: 0, kept: 0 };
    if (this.flushing) {
      result.kept = this.size();
      return result;
    }
    this.flushing = true;
    try {
      let entries = this.entries();
      while (entries.length > 0) {
        const entry = entries[0]!;
        try {
          await client.submitVerdict(entry.task_id, {
            reviewer: entry.reviewer,
            verdict: entry.verdict,
            comment: entry.comment,
          });
          result.delivered++;
        } catch (error) {
          if (error instanceof ApiError && error.status === 409) {
            result.duplicates++;
          } else if (error instanceof ApiError) {
            result.rejected++;
          } else {
            result.kept = entries.length;
            break;
          }
        }
        entries = entries.slice(1);
        this.save(entries);
      }
    } finally {
      this.flushing = false;
    }
    return result;
  }
}
