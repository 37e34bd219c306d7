import { ApiError } from "./api.js";
import type { ApiClient } from "./api.js";
import type { CohortSummary, TaskDetail, TaskQuery, TasksPage } from "./types.js";

export type Screen = "queue" | "task" | "dashboard";

export interface QueueFilters {
  field?: string;
  config_label?: string;
  record_id?: string;
}

export interface QueueState {
  tasks: TasksPage["tasks"];
  page: number;
  pageSize: number;
  total: number;
  nPending: number;
  filters: QueueFilters;
}

export interface TaskPane {
  detail: TaskDetail;
  /** Index into detail.candidates; null until the reviewer picks one. */
  selected: number | null;
  note: string;
  submitting: boolean;
}

export interface AppState {
  screen: Screen;
  queue: QueueState | null;
  task: TaskPane | null;
  dashboard: CohortSummary | null;
  /** One-line status or error shown above the active screen. */
  banner: string | null;
}

const PAGE_SIZE = 50;

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.unreachable ? `Service unreachable. ${err.message}` : err.message;
  }
  return String(err);
}

/**
 * App controller. Holds only view state; every fact about tasks, decisions,
 * and the cohort is fetched from the service, so closing the browser loses
 * nothing.
 */
export function createApp(client: ApiClient) {
  let state: AppState = {
    screen: "queue",
    queue: null,
    task: null,
    dashboard: null,
    banner: null,
  };
  const listeners: Array<(s: AppState) => void> = [];

  function setState(patch: Partial<AppState>): void {
    state = { ...state, ...patch };
    for (const listener of listeners) listener(state);
  }

  async function loadQueue(
    filters: QueueFilters = state.queue?.filters ?? {},
    page = 1,
  ): Promise<void> {
    const query: TaskQuery = {
      status: "pending",
      ...filters,
      page,
      page_size: PAGE_SIZE,
    };
    try {
      const data = await client.listTasks(query);
      setState({
        screen: "queue",
        task: null,
        banner: null,
        queue: {
          tasks: data.tasks,
          page: data.page,
          pageSize: data.page_size,
          total: data.total,
          nPending: data.n_pending,
          filters,
        },
      });
    } catch (err) {
      setState({ banner: describe(err) });
    }
  }

  async function openTask(taskId: string): Promise<void> {
    try {
      const detail = await client.getTask(taskId);
      setState({
        screen: "task",
        banner: null,
        task: { detail, selected: null, note: "", submitting: false },
      });
    } catch (err) {
      setState({ banner: describe(err) });
    }
  }

  function selectCandidate(index: number): void {
    const pane = state.task;
    if (!pane || pane.submitting) return;
    if (index < 0 || index >= pane.detail.candidates.length) return;
    setState({ task: { ...pane, selected: index } });
  }

  function setNote(note: string): void {
    const pane = state.task;
    if (!pane) return;
    // No listener notification: the textarea already shows the typed text,
    // and re-rendering mid-keystroke would steal its focus.
    state = { ...state, task: { ...pane, note } };
  }

  async function submit(): Promise<void> {
    const pane = state.task;
    if (!pane || pane.submitting) return;
    if (pane.selected === null) {
      setState({ banner: "Choose a category before submitting." });
      return;
    }
    const candidate = pane.detail.candidates[pane.selected];
    if (!candidate) return;
    setState({ task: { ...pane, submitting: true }, banner: null });
    try {
      await client.resolveTask(pane.detail.task_id, candidate.decision, pane.note);
    } catch (err) {
      // Keep the selection and note exactly as they were so a retry
      // resubmits the same decision.
      setState({
        task: { ...pane, submitting: false },
        banner: `Submit failed, choice kept for retry. ${describe(err)}`,
      });
      return;
    }
    await advance();
  }

  /** After an acknowledged decision: next pending task, or back to the queue. */
  async function advance(): Promise<void> {
    await loadQueue(state.queue?.filters ?? {}, 1);
    const next = state.queue?.tasks.find((t) => t.status === "pending");
    if (next) await openTask(next.task_id);
  }

  async function loadDashboard(): Promise<void> {
    try {
      const dashboard = await client.cohort();
      setState({ screen: "dashboard", task: null, banner: null, dashboard });
    } catch (err) {
      setState({ banner: describe(err) });
    }
  }

  /** Keyboard shortcuts: digits pick a candidate, Enter submits. */
  function handleKey(key: string): Promise<void> | void {
    if (state.screen !== "task" || !state.task) return;
    if (key >= "1" && key <= "9") {
      selectCandidate(Number(key) - 1);
      return;
    }
    if (key === "Enter") return submit();
  }

  return {
    getState: (): AppState => state,
    subscribe(listener: (s: AppState) => void): void {
      listeners.push(listener);
    },
    loadQueue,
    openTask,
    selectCandidate,
    setNote,
    submit,
    loadDashboard,
    handleKey,
  };
}

export type App = ReturnType<typeof createApp>;
