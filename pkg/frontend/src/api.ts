import type { Progress, Task, TaskSummary, VerdictRequest, VerdictResponse } from "./types";

/** Error raised when the service answers with a non-2xx status. */
export class ApiError extends Error {
  public constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorMessage(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { error?: unknown };
    if (typeof body.error === "string" && body.error) {
      return body.error;
    }
  } catch {
    // Non-JSON error bodies fall through to the status line.
  }
  return `request failed with status ${response.status}`;
}

/**
 * Typed client for the review service.
 *
 * Every method either resolves with the parsed JSON body or throws:
 * ApiError for a non-2xx response, the underlying TypeError for a
 * network failure. Callers distinguish the two to decide whether a
 * verdict should be queued for retry (network) or dropped (rejected).
 */
export class ReviewClient {
  private readonly fetchImpl: FetchLike;

  public constructor(
    private readonly baseUrl: string = "",
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path);
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    return (await response.json()) as T;
  }

  public async listTasks(reviewer = "", kind = ""): Promise<TaskSummary[]> {
    const params = new URLSearchParams();
    if (reviewer) params.set("reviewer", reviewer);
    if (kind) params.set("kind", kind);
    const query = params.toString();
    const body = await this.getJson<{ tasks: TaskSummary[] }>(
      query ? `/tasks?${query}` : "/tasks",
    );
    return body.tasks;
  }

  public async fetchTask(taskId: string, reveal = false): Promise<Task> {
    const suffix = reveal ? "?reveal=1" : "";
    return this.getJson<Task>(`/task/${encodeURIComponent(taskId)}${suffix}`);
  }

  public async submitVerdict(taskId: string, request: VerdictRequest): Promise<VerdictResponse> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/task/${encodeURIComponent(taskId)}/verdict`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
      },
    );
    if (!response.ok) {
      throw new ApiError(response.status, await errorMessage(response));
    }
    return (await response.json()) as VerdictResponse;
  }

  public async fetchProgress(): Promise<Progress> {
    return this.getJson<Progress>("/progress");
  }
}
