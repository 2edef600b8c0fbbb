// @vitest-environment jsdom
import { describe, expect, it } from "vitest";

import { RatingApi } from "../src/api.js";
import { Player } from "../src/player.js";
import { SessionFlow } from "../src/session.js";
import { SessionView } from "../src/ui.js";

// the fixture condition vocabulary the UI must never leak
const CONDITION_NAMES = ["original", "model_adv", "model_rec", "logmmse", "clean"];

class SilentPlayer implements Player {
  async play(): Promise<void> {}
  stop(): void {}
}

class StubApi {
  async createSession() {
    return { session_id: "s", total: 2, position: 0 };
  }
  async getSession() {
    return this.createSession();
  }
  async getEntry(_sid: string, index: number) {
    return {
      token: `aba1f00d${index}`,
      position: index,
      total: 2,
      rated: false,
    };
  }
  audioUrl(token: string) {
    return `/api/audio/${token}`;
  }
  async submitRating() {
    return { ok: true, position: 1 };
  }
}

describe("SessionView", () => {
  it("renders slider, play and submit without leaking conditions", async () => {
    const flow = new SessionFlow(
      new StubApi() as unknown as RatingApi,
      new SilentPlayer(),
      "study",
      "rater",
    );
    await flow.start();
    const container = document.createElement("div");
    document.body.appendChild(container);
    new SessionView(container, flow).render();

    const slider = container.querySelector("input[type=range]") as HTMLInputElement;
    expect(slider.value).toBe("50");
    expect(slider.step).toBe("1");
    const submit = container.querySelector("button.submit") as HTMLButtonElement;
    expect(submit.disabled).toBe(true); // not played yet
    expect(container.textContent).toContain("Clip 1 of 2");

    const html = document.documentElement.outerHTML;
    for (const name of CONDITION_NAMES) {
      expect(html).not.toContain(name);
    }
    expect(html).not.toContain(".wav");
  });

  it("enables submit only after playback and advances on submit", async () => {
    const flow = new SessionFlow(
      new StubApi() as unknown as RatingApi,
      new SilentPlayer(),
      "study",
      "rater",
    );
    await flow.start();
    const container = document.createElement("div");
    document.body.appendChild(container);
    const view = new SessionView(container, flow);
    view.render();

    (container.querySelector("button.play") as HTMLButtonElement).click();
    await new Promise((r) => setTimeout(r, 0));
    const submit = container.querySelector("button.submit") as HTMLButtonElement;
    expect(submit.disabled).toBe(false);
    submit.click();
    expect(submit.disabled).toBe(true); // immediate double-click guard
    await new Promise((r) => setTimeout(r, 0));
    expect(container.textContent).toContain("Clip 2 of 2");
  });
});
