import { describe, expect, it } from "vitest";

import { renderApp } from "../src/render.js";
import { createApp } from "../src/state.js";
import { fixtureService, threeFlags } from "./fixture.js";

describe("cohort dashboard", () => {
  it("reports outstanding reviews while tasks are pending", async () => {
    const service = fixtureService(threeFlags());
    const app = createApp(service);
    await app.loadDashboard();
    const html = renderApp(app.getState());
    expect(html).toContain("3 review task(s) still pending");
    expect(html).not.toContain("ready to finalize");
  });

  it("matches the queue's pending count", async () => {
    const service = fixtureService(threeFlags());
    await service.resolveTask("flag/echo:long/r2/incision_types/1", "Hallucination", "");
    const app = createApp(service);
    await app.loadQueue();
    const queueTotal = app.getState().queue?.total;
    await app.loadDashboard();
    expect(app.getState().dashboard?.pending.total).toBe(queueTotal);
  });

  it("shows the finalize-ready indicator once every task is resolved", async () => {
    const service = fixtureService(threeFlags());
    for (const task of threeFlags()) {
      await service.resolveTask(task.task_id, "ParaphraseAccurate", "");
    }
    const app = createApp(service);
    await app.loadDashboard();
    expect(renderApp(app.getState())).toContain("ready to finalize");
  });

  it("tallies confirmed and excluded records from the server state", async () => {
    const service = fixtureService([]);
    service.finalize({
      rcs0005: "ConfirmedEligible",
      rcs0006: "ConfirmedEligible",
      rcs0007: "Excluded",
    });
    const app = createApp(service);
    await app.loadDashboard();
    const state = app.getState();
    expect(state.dashboard?.finals.confirmed).toBe(2);
    expect(state.dashboard?.finals.excluded).toBe(1);
    const html = renderApp(state);
    expect(html).toContain("rcs0007");
    expect(html).toContain("Excluded");
  });

  it("shows a banner when the service is unreachable", async () => {
    const service = fixtureService([]);
    service.setUnreachable(true);
    const app = createApp(service);
    await app.loadDashboard();
    expect(renderApp(app.getState())).toContain("Service unreachable.");
  });
});
