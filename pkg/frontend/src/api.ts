import type { Box, FramePayload, SequenceInfo } from "./types.js";

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

/** Error carrying the service's {"error": msg} payload and HTTP status. */
export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function unwrap<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let message = `HTTP ${response.status}`;
    try {
      const body = await response.json();
      if (body && typeof body.error === "string") message = body.error;
    } catch {
      /* non-JSON error body; keep the status text */
    }
    throw new ApiError(response.status, message);
  }
  return (await response.json()) as T;
}

/** Typed client for the annotation service; all mutations go through here. */
export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchFn = (url, init) => fetch(url, init),
  ) {}

  sequence(): Promise<SequenceInfo> {
    return this.get<SequenceInfo>("/api/sequence");
  }

  frame(index: number): Promise<FramePayload> {
    return this.get<FramePayload>(`/api/frames/${index}`);
  }

  imageUrl(index: number): string {
    return `${this.base}/api/frames/${index}/image`;
  }

  preassign(index: number): Promise<FramePayload> {
    return this.send<FramePayload>("POST", `/api/frames/${index}/preassign`);
  }

  putFrame(index: number, boxes: Box[]): Promise<FramePayload> {
    return this.send<FramePayload>("PUT", `/api/frames/${index}`, { boxes });
  }

  setBoxId(index: number, id: number, newId: number): Promise<unknown> {
    return this.send("PATCH", `/api/frames/${index}/boxes/${id}`, { new_id: newId });
  }

  deleteBox(index: number, id: number): Promise<unknown> {
    return this.send("DELETE", `/api/frames/${index}/boxes/${id}`);
  }

  save(): Promise<unknown> {
    return this.send("POST", "/api/save");
  }

  private async get<T>(path: string): Promise<T> {
    return unwrap<T>(await this.fetchFn(this.base + path));
  }

  private async send<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    return unwrap<T>(await this.fetchFn(this.base + path, init));
  }
}
