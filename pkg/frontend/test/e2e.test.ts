/** End-to-end: the browser flow against the real rating service.
 *
 * A fixture study (2 raters x 2 items x 4 conditions) is driven through
 * SessionFlow; the 16 recorded ratings are exported and pushed through the
 * score-differences analysis. Every rater-visible payload is scanned for
 * condition leaks along the way.
 */
import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

const HERE = dirname(fileURLToPath(import.meta.url));

import { RatingApi } from "../src/api.js";
import { Player } from "../src/player.js";
import { SessionFlow } from "../src/session.js";

const CONDITIONS = ["original", "model_adv", "model_rec", "logmmse"];
const SHIFTS: Record<string, number> = {
  original: 0,
  model_adv: 30,
  model_rec: 35,
  logmmse: 10,
};
const ADMIN_TOKEN = "e2e-admin-token";

let server: ChildProcess | null = null;
let base = "";
let fixtureDir = "";
let study: {
  items: Array<{ item_id: string; audio: Record<string, string> }>;
};
const visiblePayloads: string[] = [];

/** "Plays" a clip by downloading its bytes, like a browser would. */
class FetchingPlayer implements Player {
  lastBytes: Buffer | null = null;

  async play(url: string): Promise<void> {
    const resp = await fetch(url);
    if (!resp.ok) {
      throw new Error(`audio fetch failed: ${resp.status}`);
    }
    visiblePayloads.push(JSON.stringify([...resp.headers.entries()]));
    this.lastBytes = Buffer.from(await resp.arrayBuffer());
  }

  stop(): void {}
}

beforeAll(async () => {
  fixtureDir = mkdtempSync(join(tmpdir(), "rating-e2e-"));
  execFileSync("python3", [join(HERE, "make_fixture.py"), fixtureDir]);
  study = JSON.parse(readFileSync(join(fixtureDir, "study.json"), "utf-8"));

  server = spawn(
    "python3",
    [
      "-m",
      "decrackle.rating_server",
      "--study",
      join(fixtureDir, "study.json"),
      "--data-dir",
      join(fixtureDir, "data"),
      "--port",
      "0",
    ],
    { env: { ...process.env, DECRACKLE_ADMIN_TOKEN: ADMIN_TOKEN } },
  );
  base = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("server start timeout")), 20000);
    server!.stdout!.on("data", (chunk: Buffer) => {
      const match = chunk.toString().match(/on (http:\/\/[\d.]+:\d+)\//);
      if (match) {
        clearTimeout(timer);
        resolve(match[1]);
      }
    });
    server!.stderr!.on("data", (chunk: Buffer) => {
      process.stderr.write(chunk);
    });
  });
}, 30000);

afterAll(() => {
  server?.kill();
});

function conditionOfBytes(bytes: Buffer): string {
  for (const item of study.items) {
    for (const [cond, path] of Object.entries(item.audio)) {
      if (readFileSync(path).equals(bytes)) {
        return cond;
      }
    }
  }
  throw new Error("served audio matches no fixture file");
}

async function runRater(raterId: string, jitterSeed: number): Promise<number> {
  const api = new RatingApi(base);
  const player = new FetchingPlayer();
  const flow = new SessionFlow(api, player, "e2e", raterId);
  await flow.start();
  let submitted = 0;
  while (!flow.isComplete()) {
    visiblePayloads.push(JSON.stringify(flow.current().token));
    await flow.play();
    const cond = conditionOfBytes(player.lastBytes!);
    const jitter = ((jitterSeed + submitted * 7) % 5) - 2;
    flow.setScore(40 + SHIFTS[cond] + jitter);
    await flow.submit();
    submitted += 1;
  }
  return submitted;
}

describe("end-to-end listening study", () => {
  it("records 16 blinded ratings and feeds the score analysis", async () => {
    const counts = [await runRater("rater_one", 1), await runRater("rater_two", 3)];
    expect(counts).toEqual([8, 8]);

    // blinding: nothing the rater saw contains condition names or paths
    const visible = visiblePayloads.join("\n");
    for (const cond of CONDITIONS) {
      expect(visible).not.toContain(cond);
    }
    expect(visible).not.toContain(".wav");

    const exportResp = await fetch(`${base}/api/export`, {
      headers: { "X-Admin-Token": ADMIN_TOKEN },
    });
    expect(exportResp.status).toBe(200);
    expect(exportResp.headers.get("x-missing-triples")).toBe("0");
    const body = await exportResp.text();
    const records = body.trim().split("\n").map((line) => JSON.parse(line));
    expect(records).toHaveLength(16);

    const exportPath = join(fixtureDir, "ratings.jsonl");
    writeFileSync(exportPath, body);
    const analysis = JSON.parse(
      execFileSync(
        "python3",
        [
          "-c",
          [
            "import json, sys",
            "from decrackle.evaluate import load_rating_records, score_differences",
            "records = load_rating_records(sys.argv[1])",
            "print(json.dumps(score_differences(records, 'original')))",
          ].join("\n"),
          exportPath,
        ],
        { encoding: "utf-8" },
      ),
    );
    expect(analysis.original.mean).toBe(0);
    expect(analysis.model_rec.mean).toBeGreaterThan(analysis.logmmse.mean);
    expect(analysis.logmmse.mean).toBeGreaterThan(0);
    expect(analysis.model_rec.n).toBe(4); // 2 raters x 2 items
  }, 60000);

  it("a refreshed session resumes at the first unrated entry", async () => {
    const api = new RatingApi(base);
    const player = new FetchingPlayer();
    const flow = new SessionFlow(api, player, "e2e", "rater_three");
    await flow.start();
    await flow.play();
    flow.setScore(61);
    await flow.submit();
    const before = flow.current().index;

    // simulate a refresh: brand-new flow for the same rater
    const resumed = new SessionFlow(api, new FetchingPlayer(), "e2e", "rater_three");
    await resumed.start();
    expect(resumed.current().index).toBe(before);
  }, 30000);
});
