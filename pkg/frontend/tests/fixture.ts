/**
 * In-memory stand-in for the adjudication service, mirroring its endpoint
 * semantics: an append-only event log, last-write-wins resolutions, and the
 * same task/cohort payload shapes. Tests drive the real controller and
 * renderer against this.
 */
import { ApiError } from "../src/api.js";
import type { ApiClient } from "../src/api.js";
import type {
  Candidate,
  CohortSummary,
  StoreEvent,
  TaskDetail,
  TaskKind,
  TaskQuery,
  TasksPage,
  TaskStatus,
} from "../src/types.js";

export interface SeedTask {
  task_id: string;
  kind: TaskKind;
  record_id: string;
  extracted: string;
  field?: string;
  item_index?: number;
  config_label?: string;
  context?: string;
}

interface FixtureTask extends SeedTask {
  status: TaskStatus;
  decision: string | null;
  reviewer_note: string | null;
}

const REVIEW_CANDIDATES: Candidate[] = [
  {
    decision: "ParaphraseAccurate",
    definition: "Faithful restatement of something the note says.",
    outcome_group: "NoHallucinationVariant",
  },
  {
    decision: "TypoInOriginal",
    definition: "The note itself contains the misspelling.",
    outcome_group: "NoHallucinationVariant",
  },
  {
    decision: "TypoInGenerated",
    definition: "The output misspells text that is correct in the note.",
    outcome_group: "NoHallucinationVariant",
  },
  {
    decision: "UnsupportedAddition",
    definition: "A qualifier with no basis in the note.",
    outcome_group: "HallucinationVariant",
  },
  {
    decision: "Hallucination",
    definition: "Clinical content absent from the note.",
    outcome_group: "HallucinationVariant",
  },
  {
    decision: "PartialHallucination",
    definition: "Part supported, the remainder invented.",
    outcome_group: "HallucinationVariant",
  },
];

const FINAL_CANDIDATES: Candidate[] = [
  { decision: "ConfirmedEligible", definition: "Evidence supports eligibility." },
  { decision: "Excluded", definition: "Evidence exclusionary or insufficient." },
];

export interface FixtureService extends ApiClient {
  /** Make the next n resolve calls fail as network errors. */
  failNextSubmits(n: number): void;
  /** Make every endpoint fail until cleared, as an unreachable service would. */
  setUnreachable(down: boolean): void;
  /** Record per-patient final statuses, as the pipeline's finalize step does. */
  finalize(finals: Record<string, "ConfirmedEligible" | "Excluded">): void;
  /** Last query listTasks received, for filter assertions. */
  lastQuery(): TaskQuery | null;
}

export function fixtureService(seed: SeedTask[]): FixtureService {
  const tasks = new Map<string, FixtureTask>();
  const log: StoreEvent[] = [];
  const finals: Record<string, string> = {};
  let seq = 0;
  let failSubmits = 0;
  let down = false;
  let lastQuery: TaskQuery | null = null;

  function append(event: string, extra: Record<string, unknown>): void {
    seq += 1;
    log.push({ v: 1, seq, ts: 0, event, ...extra });
  }

  for (const entry of seed) {
    tasks.set(entry.task_id, {
      ...entry,
      status: "pending",
      decision: null,
      reviewer_note: null,
    });
    append("task_created", { task_id: entry.task_id, kind: entry.kind });
  }

  function checkUp(): void {
    if (down) throw new ApiError(0, "service unreachable: connection refused");
  }

  function candidatesFor(task: FixtureTask): Candidate[] {
    return task.kind === "flag_review" ? REVIEW_CANDIDATES : FINAL_CANDIDATES;
  }

  function detail(task: FixtureTask): TaskDetail {
    const context = task.context ?? "";
    const locus = context.toLowerCase().indexOf(task.extracted.toLowerCase());
    return {
      task_id: task.task_id,
      kind: task.kind,
      record_id: task.record_id,
      extracted: task.extracted,
      field: task.field ?? null,
      item_index: task.item_index ?? null,
      config_label: task.config_label ?? null,
      status: task.status,
      decision: task.decision,
      reviewer_note: task.reviewer_note,
      context,
      highlight:
        locus >= 0 ? { start: locus, end: locus + task.extracted.length } : null,
      candidates: candidatesFor(task),
    };
  }

  function sorted(): FixtureTask[] {
    return [...tasks.values()].sort((a, b) => a.task_id.localeCompare(b.task_id));
  }

  function pendingCount(): number {
    return sorted().filter((t) => t.status === "pending").length;
  }

  return {
    async listTasks(query: TaskQuery = {}): Promise<TasksPage> {
      checkUp();
      lastQuery = query;
      const page = query.page ?? 1;
      const pageSize = query.page_size ?? 50;
      const matching = sorted().filter(
        (t) =>
          (!query.status || t.status === query.status) &&
          (!query.kind || t.kind === query.kind) &&
          (!query.field || t.field === query.field) &&
          (!query.config_label || t.config_label === query.config_label) &&
          (!query.record_id || t.record_id === query.record_id),
      );
      const start = (page - 1) * pageSize;
      return {
        tasks: matching.slice(start, start + pageSize).map((t) => {
          const { context: _context, ...summary } = t;
          return {
            ...summary,
            field: t.field ?? null,
            item_index: t.item_index ?? null,
            config_label: t.config_label ?? null,
          };
        }),
        page,
        page_size: pageSize,
        total: matching.length,
        n_pending: pendingCount(),
      };
    },

    async getTask(taskId: string): Promise<TaskDetail> {
      checkUp();
      const task = tasks.get(taskId);
      if (!task) throw new ApiError(404, `unknown task '${taskId}'`);
      return detail(task);
    },

    async resolveTask(
      taskId: string,
      decision: string,
      reviewerNote: string,
    ): Promise<TaskDetail> {
      checkUp();
      if (failSubmits > 0) {
        failSubmits -= 1;
        throw new ApiError(0, "service unreachable: socket hang up");
      }
      const task = tasks.get(taskId);
      if (!task) throw new ApiError(404, `unknown task '${taskId}'`);
      if (!candidatesFor(task).some((c) => c.decision === decision)) {
        throw new ApiError(422, `invalid decision '${decision}' for a ${task.kind} task`);
      }
      task.status = "resolved";
      task.decision = decision;
      task.reviewer_note = reviewerNote;
      append("task_resolved", { task_id: taskId, decision, reviewer_note: reviewerNote });
      return detail(task);
    },

    async cohort(): Promise<CohortSummary> {
      checkUp();
      const pending = sorted().filter((t) => t.status === "pending");
      const flagTasks = sorted().filter((t) => t.kind === "flag_review");
      const groupCounts: Record<string, number> = {
        VerbatimMatch: 0,
        NoHallucinationVariant: 0,
        HallucinationVariant: 0,
      };
      for (const task of flagTasks) {
        if (task.status !== "resolved") continue;
        const group = REVIEW_CANDIDATES.find(
          (c) => c.decision === task.decision,
        )?.outcome_group;
        if (group) groupCounts[group] = (groupCounts[group] ?? 0) + 1;
      }
      const nAudits = flagTasks.length;
      const confirmed = Object.values(finals).filter(
        (status) => status === "ConfirmedEligible",
      ).length;
      return {
        pending: {
          total: pending.length,
          flag_review: pending.filter((t) => t.kind === "flag_review").length,
          eligibility_review: pending.filter((t) => t.kind === "eligibility_review")
            .length,
        },
        finals: {
          confirmed,
          excluded: Object.keys(finals).length - confirmed,
          by_record: { ...finals },
        },
        audit: {
          n_audits: nAudits,
          n_flagged: nAudits,
          n_reviewed: flagTasks.filter((t) => t.status === "resolved").length,
          group_counts: groupCounts,
          group_percentages: Object.fromEntries(
            Object.entries(groupCounts).map(([group, n]) => [
              group,
              nAudits ? (100 * n) / nAudits : 0,
            ]),
          ),
        },
        finalize_ready: pending.length === 0,
      };
    },

    async events(afterSeq = 0) {
      checkUp();
      const out = log.filter((e) => e.seq > afterSeq);
      return { events: out, last_seq: out.length ? out[out.length - 1]!.seq : afterSeq };
    },

    failNextSubmits(n: number): void {
      failSubmits = n;
    },
    setUnreachable(flag: boolean): void {
      down = flag;
    },
    finalize(statuses: Record<string, "ConfirmedEligible" | "Excluded">): void {
      for (const [recordId, status] of Object.entries(statuses)) {
        finals[recordId] = status;
        append("record_adjudication", { record_id: recordId, final_status: status });
      }
    },
    lastQuery(): TaskQuery | null {
      return lastQuery;
    },
  };
}

/** Three flagged extractions across two patients, the standard fixture. */
export function threeFlags(): SeedTask[] {
  return [
    {
      task_id: "flag/echo:short/r1/contraindications/0",
      kind: "flag_review",
      record_id: "r1",
      extracted: "History of placenta previa noted.",
      field: "contraindications",
      item_index: 0,
      config_label: "echo:short",
      context:
        "HISTORY:\nHx of placenta previa noted. Prior low transverse cesarean documented.",
    },
    {
      task_id: "flag/echo:short/r1/incision_types/0",
      kind: "flag_review",
      record_id: "r1",
      extracted: "incision type not specified",
      field: "incision_types",
      item_index: 0,
      config_label: "echo:short",
      context: "HISTORY:\nPrior cesarean delivery. No operative report available.",
    },
    {
      task_id: "flag/echo:long/r2/incision_types/1",
      kind: "flag_review",
      record_id: "r2",
      extracted: "Classical incision per operative report.",
      field: "incision_types",
      item_index: 1,
      config_label: "echo:long",
      context: "HISTORY:\nClasical incision per operative report from 2019.",
    },
  ];
}
