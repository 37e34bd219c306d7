import type {
  CohortSummary,
  EventsPage,
  TaskDetail,
  TaskQuery,
  TasksPage,
} from "./types.js";

/**
 * Everything the UI can do. The browser build talks HTTP; tests substitute
 * an in-memory fixture with the same contract.
 */
export interface ApiClient {
  listTasks(query?: TaskQuery): Promise<TasksPage>;
  getTask(taskId: string): Promise<TaskDetail>;
  resolveTask(taskId: string, decision: string, reviewerNote: string): Promise<TaskDetail>;
  cohort(): Promise<CohortSummary>;
  events(afterSeq?: number): Promise<EventsPage>;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }

  /** Status 0 means the request never reached the service. */
  get unreachable(): boolean {
    return this.status === 0;
  }
}

function toSearch(query: TaskQuery): string {
  const params = new URLSearchParams();
  for (const [key, value] of Object.entries(query)) {
    if (value !== undefined && value !== null && value !== "") {
      params.set(key, String(value));
    }
  }
  return params.toString();
}

/**
 * fetch-backed client. Task ids contain slashes; the service routes declare
 * path-typed parameters, so they pass through unencoded.
 */
export function httpApiClient(baseUrl = "", token?: string): ApiClient {
  async function request<T>(path: string, init?: RequestInit): Promise<T> {
    const headers: Record<string, string> = {
      ...((init?.headers as Record<string, string>) ?? {}),
    };
    if (token) headers["Authorization"] = `Bearer ${token}`;
    let response: Response;
    try {
      response = await fetch(baseUrl + path, { ...init, headers });
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = `${response.status} ${response.statusText}`;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (body.detail !== undefined) {
          detail =
            typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
        }
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  return {
    listTasks(query: TaskQuery = {}) {
      const search = toSearch(query);
      return request<TasksPage>(search ? `/tasks?${search}` : "/tasks");
    },
    getTask(taskId: string) {
      return request<TaskDetail>(`/tasks/${taskId}`);
    },
    resolveTask(taskId: string, decision: string, reviewerNote: string) {
      return request<TaskDetail>(`/tasks/${taskId}/resolution`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ decision, reviewer_note: reviewerNote }),
      });
    },
    cohort() {
      return request<CohortSummary>("/cohort");
    },
    events(afterSeq = 0) {
      return request<EventsPage>(`/events?after_seq=${afterSeq}`);
    },
  };
}
