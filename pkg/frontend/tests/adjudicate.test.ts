import { describe, expect, it } from "vitest";

import { renderApp } from "../src/render.js";
import { createApp } from "../src/state.js";
import { fixtureService, threeFlags } from "./fixture.js";

const FIRST = "flag/echo:long/r2/incision_types/1";

async function openFirst(service = fixtureService(threeFlags())) {
  const app = createApp(service);
  await app.loadQueue();
  await app.openTask(FIRST);
  return { app, service };
}

describe("adjudication screen", () => {
  it("offers the six review categories with definitions", async () => {
    const { app } = await openFirst();
    const html = renderApp(app.getState());
    for (const decision of [
      "ParaphraseAccurate",
      "TypoInOriginal",
      "TypoInGenerated",
      "UnsupportedAddition",
      "Hallucination",
      "PartialHallucination",
    ]) {
      expect(html).toContain(decision);
    }
    expect((html.match(/data-action="select"/g) ?? []).length).toBe(6);
    expect(html).toContain("Faithful restatement");
    expect(html).toContain("<kbd>6</kbd>");
  });

  it("blocks submission until a category is chosen", async () => {
    const { app, service } = await openFirst();
    expect(renderApp(app.getState())).toContain('data-action="submit" disabled');

    await app.submit();
    expect(app.getState().banner).toContain("Choose a category");
    const events = await service.events();
    expect(events.events.filter((e) => e.event === "task_resolved")).toHaveLength(0);
  });

  it("keeps exactly one category selected", async () => {
    const { app } = await openFirst();
    app.handleKey("1");
    app.handleKey("3");
    expect(app.getState().task?.selected).toBe(2);
    expect((renderApp(app.getState()).match(/candidate selected/g) ?? []).length).toBe(1);
    expect(renderApp(app.getState())).not.toContain('data-action="submit" disabled');
  });

  it("ignores digits beyond the candidate list", async () => {
    const { app } = await openFirst();
    app.handleKey("9");
    expect(app.getState().task?.selected).toBeNull();
  });

  it("records ParaphraseAccurate under the no-hallucination group", async () => {
    const { app, service } = await openFirst();
    app.handleKey("1");
    await app.handleKey("Enter");

    const resolved = await service.getTask(FIRST);
    expect(resolved.status).toBe("resolved");
    expect(resolved.decision).toBe("ParaphraseAccurate");
    const cohort = await service.cohort();
    expect(cohort.audit.group_counts["NoHallucinationVariant"]).toBe(1);
    expect(cohort.audit.group_counts["HallucinationVariant"]).toBe(0);
  });

  it("advances to the next pending task after acknowledgment", async () => {
    const { app } = await openFirst();
    app.handleKey("1");
    await app.handleKey("Enter");
    const state = app.getState();
    expect(state.screen).toBe("task");
    expect(state.task?.detail.task_id).toBe("flag/echo:short/r1/contraindications/0");
    expect(state.task?.selected).toBeNull();
  });

  it("keeps the choice and note for retry when the submit fails", async () => {
    const { app, service } = await openFirst();
    app.handleKey("4");
    app.setNote("scanner noise, not clinical");
    service.failNextSubmits(1);

    await app.submit();
    const after = app.getState();
    expect(after.banner).toContain("choice kept for retry");
    expect(after.task?.detail.task_id).toBe(FIRST);
    expect(after.task?.selected).toBe(3);
    expect(after.task?.note).toBe("scanner noise, not clinical");
    expect((await service.getTask(FIRST)).status).toBe("pending");

    await app.submit();
    const resolved = await service.getTask(FIRST);
    expect(resolved.status).toBe("resolved");
    expect(resolved.decision).toBe("UnsupportedAddition");
    expect(resolved.reviewer_note).toBe("scanner noise, not clinical");
  });

  it("returns to an empty queue after the last pending task", async () => {
    const seed = threeFlags().slice(0, 1);
    const service = fixtureService(seed);
    const app = createApp(service);
    await app.loadQueue();
    await app.openTask(seed[0]!.task_id);
    app.handleKey("5");
    await app.handleKey("Enter");

    const state = app.getState();
    expect(state.screen).toBe("queue");
    expect(state.queue?.nPending).toBe(0);
    expect(renderApp(state)).toContain("0 pending");
  });
});
