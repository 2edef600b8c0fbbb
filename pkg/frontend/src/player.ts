/** Audio playback abstraction: the browser uses an HTMLAudioElement, tests
 * inject a fake that fetches the bytes without decoding. */

export interface Player {
  play(url: string): Promise<void>;
  stop(): void;
}

export class HtmlAudioPlayer implements Player {
  private element: HTMLAudioElement | null = null;

  play(url: string): Promise<void> {
    this.stop();
    const audio = new Audio(url);
    this.element = audio;
    return new Promise((resolve, reject) => {
      audio.addEventListener("ended", () => resolve(), { once: true });
      audio.addEventListener(
        "error",
        () => reject(new Error("audio playback failed")),
        { once: true },
      );
      void audio.play().catch(reject);
    });
  }

  stop(): void {
    if (this.element) {
      this.element.pause();
      this.element = null;
    }
  }
}
