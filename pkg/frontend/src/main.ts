import { httpApiClient } from "./api.js";
import { renderApp } from "./render.js";
import { createApp } from "./state.js";
import type { QueueFilters } from "./state.js";

// Optional static bearer token, matching review-serve's --token-env switch.
const token = window.localStorage.getItem("counselframeToken") ?? undefined;
const app = createApp(httpApiClient("", token));

const root = document.getElementById("root");
if (!root) throw new Error("missing #root element");

app.subscribe((state) => {
  root.innerHTML = renderApp(state);
});

function readFilters(form: HTMLFormElement): QueueFilters {
  const data = new FormData(form);
  const value = (name: string) => {
    const raw = data.get(name);
    return typeof raw === "string" && raw.trim() ? raw.trim() : undefined;
  };
  return {
    field: value("field"),
    config_label: value("config_label"),
    record_id: value("record_id"),
  };
}

root.addEventListener("click", (event) => {
  const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (!target) return;
  switch (target.dataset.action) {
    case "open":
      if (target.dataset.taskId) void app.openTask(target.dataset.taskId);
      break;
    case "back":
    case "nav-queue":
      void app.loadQueue();
      break;
    case "nav-dashboard":
      void app.loadDashboard();
      break;
    case "select":
      app.selectCandidate(Number(target.dataset.index));
      break;
    case "submit":
      void app.submit();
      break;
    case "page": {
      const page = Number(target.dataset.page);
      const filters = app.getState().queue?.filters ?? {};
      if (page >= 1) void app.loadQueue(filters, page);
      break;
    }
  }
});

root.addEventListener("submit", (event) => {
  const form = event.target as HTMLFormElement;
  if (form.dataset.action !== "filter") return;
  event.preventDefault();
  void app.loadQueue(readFilters(form), 1);
});

root.addEventListener("input", (event) => {
  const target = event.target as HTMLElement;
  if (target.dataset.action === "note") {
    app.setNote((target as HTMLTextAreaElement).value);
  }
});

document.addEventListener("keydown", (event) => {
  // Let typing in the note field through untouched.
  if (event.target instanceof HTMLTextAreaElement) return;
  if (event.target instanceof HTMLInputElement) return;
  const handled = app.handleKey(event.key);
  if (handled !== undefined || (event.key >= "1" && event.key <= "9")) {
    event.preventDefault();
  }
});

void app.loadQueue();
