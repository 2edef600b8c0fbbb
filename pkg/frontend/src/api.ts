/** Typed client for the rating service HTTP API.
 *
 * All responses are blinded: the server only ever hands out opaque clip
 * tokens, never condition names or file paths.
 */

export interface SessionInfo {
  session_id: string;
  total: number;
  position: number;
}

export interface EntryInfo {
  token: string;
  position: number;
  total: number;
  rated: boolean;
}

export interface RatingAck {
  ok: boolean;
  position: number;
}

export class ConflictError extends Error {}
export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (resp.status === 409) {
    const body = await resp.json().catch(() => ({ error: "conflict" }));
    throw new ConflictError(body.error ?? "conflict");
  }
  if (!resp.ok) {
    const body = await resp.json().catch(() => ({ error: resp.statusText }));
    throw new ApiError(body.error ?? resp.statusText, resp.status);
  }
  return resp.json() as Promise<T>;
}

export class RatingApi {
  constructor(private readonly baseUrl: string) {}

  async createSession(studyId: string, raterId: string): Promise<SessionInfo> {
    const resp = await fetch(`${this.baseUrl}/api/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ study_id: studyId, rater_id: raterId }),
    });
    return asJson<SessionInfo>(resp);
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    const resp = await fetch(`${this.baseUrl}/api/sessions/${sessionId}`);
    return asJson<SessionInfo>(resp);
  }

  async getEntry(sessionId: string, index: number): Promise<EntryInfo> {
    const resp = await fetch(
      `${this.baseUrl}/api/sessions/${sessionId}/entries/${index}`,
    );
    return asJson<EntryInfo>(resp);
  }

  audioUrl(token: string): string {
    return `${this.baseUrl}/api/audio/${token}`;
  }

  async submitRating(
    sessionId: string,
    token: string,
    score: number,
  ): Promise<RatingAck> {
    const resp = await fetch(`${this.baseUrl}/api/ratings`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, token, score }),
    });
    return asJson<RatingAck>(resp);
  }
}
