// Thin fetch client for the annotation service; every displayed value in
// the UI originates from one of these responses.

import {
  ApiError,
  FinishPayload,
  MetaPayload,
  OverlayPayload,
  SessionPayload,
} from "./types.js";

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, init);
  const body = await resp.json();
  if (!resp.ok) {
    throw new ApiError(body.error ?? resp.statusText, resp.status);
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  meta(): Promise<MetaPayload> {
    return request(`${this.base}/api/meta`);
  }

  checkpoints(): Promise<{ checkpoints: string[] }> {
    return request(`${this.base}/api/checkpoints`);
  }

  createSession(task: string, split: string, seed: number): Promise<SessionPayload> {
    return request(`${this.base}/api/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ task, split, seed }),
    });
  }

  observation(sessionId: string): Promise<SessionPayload> {
    return request(`${this.base}/api/sessions/${sessionId}/observation`);
  }

  submitPick(sessionId: string, u: number, v: number, rot: number): Promise<SessionPayload> {
    return request(`${this.base}/api/sessions/${sessionId}/pick`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ u, v, rot }),
    });
  }

  submitPlace(sessionId: string, u: number, v: number, rot: number): Promise<SessionPayload> {
    return request(`${this.base}/api/sessions/${sessionId}/place`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ u, v, rot }),
    });
  }

  finish(sessionId: string): Promise<FinishPayload> {
    return request(`${this.base}/api/sessions/${sessionId}/finish`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({}),
    });
  }

  overlay(
    sessionId: string,
    checkpoint: string,
    head: "pick" | "place",
    pick?: { u: number; v: number },
    slice?: number,
  ): Promise<OverlayPayload> {
    const params = new URLSearchParams({ checkpoint, head });
    if (pick) {
      params.set("u", String(pick.u));
      params.set("v", String(pick.v));
    }
    if (slice !== undefined) {
      params.set("slice", String(slice));
    }
    return request(`${this.base}/api/sessions/${sessionId}/overlay?${params}`);
  }
}
