/** HTTP client for the matting service: JSON control, PNG rasters. */

export type ClickSign = "positive" | "negative";

export interface UiClick {
  x: number;
  y: number;
  sign: ClickSign;
}

export interface SessionInfo {
  id: string;
  width: number;
  height: number;
}

/** Abstraction over the service endpoints so tests can inject a fake. */
export interface MatteApi {
  createSession(image: Blob): Promise<SessionInfo>;
  /** Returns the recomputed matte PNG for the click history including this click. */
  addClick(id: string, click: UiClick): Promise<Blob>;
  /** Returns the recomputed matte, or null when no clicks remain. */
  undoClick(id: string): Promise<Blob | null>;
  getMatte(id: string): Promise<Blob>;
}

async function expectOk(resp: Response): Promise<Response> {
  if (!resp.ok) {
    let detail = `${resp.status}`;
    try {
      const body = await resp.json();
      if (body && body.detail) detail = `${resp.status}: ${body.detail}`;
    } catch {
      /* non-JSON error body */
    }
    throw new Error(detail);
  }
  return resp;
}

export class HttpMatteApi implements MatteApi {
  constructor(private baseUrl: string = "") {}

  async createSession(image: Blob): Promise<SessionInfo> {
    const resp = await expectOk(
      await fetch(`${this.baseUrl}/sessions`, {
        method: "POST",
        headers: { "content-type": "image/png" },
        body: image,
      }),
    );
    return (await resp.json()) as SessionInfo;
  }

  async addClick(id: string, click: UiClick): Promise<Blob> {
    const resp = await expectOk(
      await fetch(`${this.baseUrl}/sessions/${id}/clicks`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(click),
      }),
    );
    return resp.blob();
  }

  async undoClick(id: string): Promise<Blob | null> {
    const resp = await expectOk(
      await fetch(`${this.baseUrl}/sessions/${id}/clicks/last`, { method: "DELETE" }),
    );
    if (resp.status === 204) return null;
    return resp.blob();
  }

  async getMatte(id: string): Promise<Blob> {
    const resp = await expectOk(await fetch(`${this.baseUrl}/sessions/${id}/matte`));
    return resp.blob();
  }
}
