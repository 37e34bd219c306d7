/**
 * Wire types for the adjudication service. Field names are snake_case to
 * match the JSON payloads exactly; nothing here is reshaped client-side.
 */

export type TaskKind = "flag_review" | "eligibility_review";
export type TaskStatus = "pending" | "resolved";

export interface TaskSummary {
  task_id: string;
  kind: TaskKind;
  record_id: string;
  extracted: string;
  field: string | null;
  item_index: number | null;
  config_label: string | null;
  status: TaskStatus;
  decision: string | null;
  reviewer_note: string | null;
}

/** Fuzzy locus of the extracted string inside the context, server-computed. */
export interface Highlight {
  start: number;
  end: number;
}

export interface Candidate {
  decision: string;
  definition: string;
  /** Present on flag-review candidates only. */
  outcome_group?: string;
}

export interface TaskDetail extends TaskSummary {
  context: string;
  highlight: Highlight | null;
  candidates: Candidate[];
}

export interface TaskQuery {
  status?: TaskStatus;
  kind?: TaskKind;
  field?: string;
  config_label?: string;
  record_id?: string;
  page?: number;
  page_size?: number;
}

export interface TasksPage {
  tasks: TaskSummary[];
  page: number;
  page_size: number;
  total: number;
  n_pending: number;
}

export interface CohortSummary {
  pending: {
    total: number;
    flag_review: number;
    eligibility_review: number;
  };
  finals: {
    confirmed: number;
    excluded: number;
    by_record: Record<string, string>;
  };
  audit: {
    n_audits: number;
    n_flagged: number;
    n_reviewed: number;
    group_counts: Record<string, number>;
    group_percentages: Record<string, number>;
  };
  finalize_ready: boolean;
}

export interface StoreEvent {
  v: number;
  seq: number;
  ts: number;
  event: string;
  [key: string]: unknown;
}

export interface EventsPage {
  events: StoreEvent[];
  last_seq: number;
}
