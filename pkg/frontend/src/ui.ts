/** DOM layer: one blinded clip at a time with a 0-100 slider.
 *
 * Nothing rater-visible ever includes condition names or file paths; the
 * page shows only progress, playback controls and the slider. Past scores
 * are not displayed (no anchoring).
 */

import { SessionFlow, DEFAULT_SCORE } from "./session.js";

export class SessionView {
  private root: HTMLElement;

  constructor(container: HTMLElement, private readonly flow: SessionFlow) {
    this.root = container;
  }

  render(): void {
    this.root.innerHTML = "";
    if (this.flow.isComplete()) {
      const done = document.createElement("p");
      done.className = "done";
      done.textContent = "All clips rated. Thank you!";
      this.root.appendChild(done);
      return;
    }
    const { position, total } = this.flow.progress();

    const progress = document.createElement("p");
    progress.className = "progress";
    progress.textContent = `Clip ${position + 1} of ${total}`;

    const play = document.createElement("button");
    play.className = "play";
    play.textContent = "Play clip";

    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "100";
    slider.step = "1";
    slider.value = String(DEFAULT_SCORE);
    slider.className = "score";

    const value = document.createElement("span");
    value.className = "score-value";
    value.textContent = slider.value;

    const submit = document.createElement("button");
    submit.className = "submit";
    submit.textContent = "Submit rating";
    submit.disabled = true; // until the clip has been played once

    const status = document.createElement("p");
    status.className = "status";

    play.addEventListener("click", () => {
      status.textContent = "Playing…";
      this.flow
        .play()
        .then(() => {
          status.textContent = "";
          submit.disabled = !this.flow.canSubmit();
        })
        .catch(() => {
          status.textContent = "Playback failed; try again.";
        });
    });

    slider.addEventListener("input", () => {
      this.flow.setScore(Number(slider.value));
      value.textContent = slider.value;
    });

    submit.addEventListener("click", () => {
      if (!this.flow.canSubmit()) {
        return;
      }
      submit.disabled = true; // double clicks cannot double-submit
      this.flow
        .submit()
        .then(() => this.render())
        .catch(() => {
          status.textContent = "Submission failed; check the connection and retry.";
          submit.disabled = !this.flow.canSubmit();
        });
    });

    this.root.append(progress, play, slider, value, submit, status);
  }
}
