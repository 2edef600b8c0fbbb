/** Entry point: ask for a rater id, then run the session. */

import { RatingApi } from "./api.js";
import { HtmlAudioPlayer } from "./player.js";
import { SessionFlow } from "./session.js";
import { SessionView } from "./ui.js";

function studyIdFromQuery(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("study") ?? "default";
}

export async function boot(container: HTMLElement): Promise<void> {
  const form = document.createElement("form");
  const label = document.createElement("label");
  label.textContent = "Rater id: ";
  const input = document.createElement("input");
  input.name = "rater";
  input.required = true;
  const go = document.createElement("button");
  go.type = "submit";
  go.textContent = "Start session";
  label.appendChild(input);
  form.append(label, go);
  container.appendChild(form);

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const raterId = input.value.trim();
    if (!raterId) {
      return;
    }
    const api = new RatingApi("");
    const flow = new SessionFlow(api, new HtmlAudioPlayer(), studyIdFromQuery(), raterId);
    flow
      .start()
      .then(() => {
        const view = new SessionView(container, flow);
        view.render();
      })
      .catch((err) => {
        const p = document.createElement("p");
        p.className = "error";
        p.textContent = `Could not start the session: ${err.message}`;
        container.appendChild(p);
      });
  });
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot(document.getElementById("app")!);
}
