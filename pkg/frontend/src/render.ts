import type { AppState, QueueState, TaskPane } from "./state.js";
import type { CohortSummary, Highlight, TaskSummary } from "./types.js";

const ESCAPES: Record<string, string> = {
  "&": "&amp;",
  "<": "&lt;",
  ">": "&gt;",
  '"': "&quot;",
  "'": "&#39;",
};

export function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (ch) => ESCAPES[ch] ?? ch);
}

/**
 * Context with the server's match locus wrapped in <mark>. The offsets come
 * from the service verbatim; the client never recomputes the match.
 */
export function renderContext(context: string, highlight: Highlight | null): string {
  if (!highlight) return escapeHtml(context);
  return (
    escapeHtml(context.slice(0, highlight.start)) +
    "<mark>" +
    escapeHtml(context.slice(highlight.start, highlight.end)) +
    "</mark>" +
    escapeHtml(context.slice(highlight.end))
  );
}

function taskRow(task: TaskSummary): string {
  return `<tr class="task-row" data-action="open" data-task-id="${escapeHtml(task.task_id)}">
    <td class="mono">${escapeHtml(task.record_id)}</td>
    <td>${escapeHtml(task.field ?? "")}</td>
    <td class="mono">${escapeHtml(task.config_label ?? "")}</td>
    <td class="extracted">${escapeHtml(task.extracted)}</td>
    <td><span class="pill ${task.status}">${task.status}</span></td>
  </tr>`;
}

function filterInput(name: string, label: string, value: string): string {
  return `<label>${label}
    <input data-filter="${name}" name="${name}" value="${escapeHtml(value)}" placeholder="any">
  </label>`;
}

export function renderQueue(queue: QueueState | null): string {
  if (!queue) return `<section class="queue"><p class="muted">Loading queue...</p></section>`;
  const rows = queue.tasks.map(taskRow).join("\n");
  const pages = Math.max(1, Math.ceil(queue.total / queue.pageSize));
  const body = queue.tasks.length
    ? `<table class="tasks">
        <thead><tr><th>patient</th><th>field</th><th>model/prompt</th><th>extracted</th><th>status</th></tr></thead>
        <tbody>${rows}</tbody>
      </table>`
    : `<p class="empty">Queue is clear.</p>`;
  return `<section class="queue">
    <div class="queue-header">
      <h2>${queue.nPending} pending</h2>
      <form class="filters" data-action="filter">
        ${filterInput("field", "field", queue.filters.field ?? "")}
        ${filterInput("config_label", "model/prompt", queue.filters.config_label ?? "")}
        ${filterInput("record_id", "patient", queue.filters.record_id ?? "")}
        <button type="submit">apply</button>
      </form>
    </div>
    ${body}
    <div class="pager">
      <button data-action="page" data-page="${queue.page - 1}" ${queue.page <= 1 ? "disabled" : ""}>prev</button>
      <span>page ${queue.page} of ${pages}</span>
      <button data-action="page" data-page="${queue.page + 1}" ${queue.page >= pages ? "disabled" : ""}>next</button>
    </div>
  </section>`;
}

function candidateItem(pane: TaskPane, index: number): string {
  const candidate = pane.detail.candidates[index];
  if (!candidate) return "";
  const selected = pane.selected === index ? " selected" : "";
  const group = candidate.outcome_group
    ? `<span class="group">${escapeHtml(candidate.outcome_group)}</span>`
    : "";
  return `<li class="candidate${selected}" data-action="select" data-index="${index}">
    <kbd>${index + 1}</kbd>
    <span class="decision">${escapeHtml(candidate.decision)}</span>
    ${group}
    <p class="definition">${escapeHtml(candidate.definition)}</p>
  </li>`;
}

export function renderTaskPane(pane: TaskPane): string {
  const detail = pane.detail;
  const candidates = detail.candidates
    .map((_, i) => candidateItem(pane, i))
    .join("\n");
  const disabled = pane.selected === null || pane.submitting ? "disabled" : "";
  return `<section class="task">
    <div class="task-meta">
      <button data-action="back">back to queue</button>
      <h2 class="mono">${escapeHtml(detail.task_id)}</h2>
      <span class="pill ${detail.status}">${detail.status}</span>
    </div>
    <div class="task-body">
      <div class="evidence">
        <h3>extracted</h3>
        <blockquote class="extracted">${escapeHtml(detail.extracted)}</blockquote>
        <h3>note context</h3>
        <blockquote class="context">${renderContext(detail.context, detail.highlight)}</blockquote>
      </div>
      <div class="decision-panel">
        <h3>decision</h3>
        <ol class="candidates">${candidates}</ol>
        <label>reviewer note
          <textarea data-action="note" rows="2">${escapeHtml(pane.note)}</textarea>
        </label>
        <button class="submit" data-action="submit" ${disabled}>
          ${pane.submitting ? "submitting..." : "submit (Enter)"}
        </button>
      </div>
    </div>
  </section>`;
}

function tallyCard(label: string, value: string | number): string {
  return `<div class="tally"><div class="tally-value">${value}</div><div class="tally-label">${label}</div></div>`;
}

export function renderDashboard(cohort: CohortSummary | null): string {
  if (!cohort) return `<section class="dashboard"><p class="muted">Loading cohort...</p></section>`;
  const readiness = cohort.finalize_ready
    ? `<p class="ready">All reviews resolved: ready to finalize.</p>`
    : `<p class="blocked">${cohort.pending.total} review task(s) still pending.</p>`;
  const groups = Object.entries(cohort.audit.group_percentages)
    .map(
      ([group, pct]) =>
        `<tr><td>${escapeHtml(group)}</td><td>${cohort.audit.group_counts[group] ?? 0}</td><td>${pct.toFixed(1)}%</td></tr>`,
    )
    .join("\n");
  const finals = Object.entries(cohort.finals.by_record)
    .map(
      ([recordId, status]) =>
        `<tr><td class="mono">${escapeHtml(recordId)}</td><td>${escapeHtml(status)}</td></tr>`,
    )
    .join("\n");
  return `<section class="dashboard">
    ${readiness}
    <div class="tallies">
      ${tallyCard("pending", cohort.pending.total)}
      ${tallyCard("flag reviews", cohort.pending.flag_review)}
      ${tallyCard("eligibility reviews", cohort.pending.eligibility_review)}
      ${tallyCard("confirmed", cohort.finals.confirmed)}
      ${tallyCard("excluded", cohort.finals.excluded)}
    </div>
    <h3>audit outcome groups</h3>
    <table class="groups">
      <thead><tr><th>group</th><th>n</th><th>% of audited</th></tr></thead>
      <tbody>${groups}</tbody>
    </table>
    <h3>adjudicated records</h3>
    <table class="finals">
      <thead><tr><th>patient</th><th>final status</th></tr></thead>
      <tbody>${finals}</tbody>
    </table>
  </section>`;
}

export function renderApp(state: AppState): string {
  const banner = state.banner
    ? `<div class="banner">${escapeHtml(state.banner)}</div>`
    : "";
  let body: string;
  if (state.screen === "task" && state.task) {
    body = renderTaskPane(state.task);
  } else if (state.screen === "dashboard") {
    body = renderDashboard(state.dashboard);
  } else {
    body = renderQueue(state.queue);
  }
  return `<header class="top">
    <h1>counselframe review</h1>
    <nav>
      <button data-action="nav-queue">queue</button>
      <button data-action="nav-dashboard">cohort</button>
    </nav>
  </header>
  ${banner}
  <main>${body}</main>`;
}
