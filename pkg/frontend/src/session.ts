/** Client-side session state machine.
 *
 * Invariants enforced here:
 *  - at most one request in flight per session (busy flag; extra clicks are
 *    rejected, not queued)
 *  - the click history mirrors the server after every acknowledged response
 *  - the displayed matte is always the server's response for the current
 *    history; undo-to-empty clears it, so no stale overlay can survive
 */

import type { MatteApi, UiClick, ClickSign } from "./api.js";

export type SessionEvents = {
  matte: Blob | null;
  markers: readonly UiClick[];
  busy: boolean;
  error: string;
};

type Listener<K extends keyof SessionEvents> = (payload: SessionEvents[K]) => void;

export interface PlaceResult {
  accepted: boolean;
  reason?: "busy" | "no-image" | "server-error";
}

export class UiSession {
  private id: string | null = null;
  private clicks: UiClick[] = [];
  private matte: Blob | null = null;
  private _busy = false;
  overlayOpacity = 0.7;
  private listeners: { [K in keyof SessionEvents]: Listener<K>[] } = {
    matte: [],
    markers: [],
    busy: [],
    error: [],
  };

  constructor(private api: MatteApi) {}

  on<K extends keyof SessionEvents>(event: K, fn: Listener<K>): void {
    this.listeners[event].push(fn);
  }

  private emit<K extends keyof SessionEvents>(event: K, payload: SessionEvents[K]): void {
    for (const fn of this.listeners[event]) fn(payload);
  }

  get busy(): boolean {
    return this._busy;
  }

  get sessionId(): string | null {
    return this.id;
  }

  get clickHistory(): readonly UiClick[] {
    return this.clicks;
  }

  get canExport(): boolean {
    return this.matte !== null;
  }

  get currentMatte(): Blob | null {
    return this.matte;
  }

  private setBusy(value: boolean): void {
    this._busy = value;
    this.emit("busy", value);
  }

  async loadImage(image: Blob): Promise<void> {
    this.setBusy(true);
    try {
      const info = await this.api.createSession(image);
      this.id = info.id;
      this.clicks = [];
      this.matte = null;
      this.emit("markers", this.clicks);
      this.emit("matte", null);
    } catch (err) {
      this.emit("error", `upload failed (${(err as Error).message})`);
      throw err;
    } finally {
      this.setBusy(false);
    }
  }

  async placeClick(x: number, y: number, sign: ClickSign): Promise<PlaceResult> {
    if (this.id === null) {
      this.emit("error", "load an image first");
      return { accepted: false, reason: "no-image" };
    }
    if (this._busy) {
      // dropped, not queued: the visual cue is the busy indicator itself
      return { accepted: false, reason: "busy" };
    }
    this.setBusy(true);
    const click: UiClick = { x, y, sign };
    try {
      const matte = await this.api.addClick(this.id, click);
      this.clicks.push(click);
      this.matte = matte;
      this.emit("markers", this.clicks);
      this.emit("matte", matte);
      return { accepted: true };
    } catch (err) {
      this.emit("error", `click rejected (${(err as Error).message})`);
      return { accepted: false, reason: "server-error" };
    } finally {
      this.setBusy(false);
    }
  }

  async undo(): Promise<boolean> {
    if (this.id === null || this.clicks.length === 0) return false;
    if (this._busy) return false;
    this.setBusy(true);
    try {
      const matte = await this.api.undoClick(this.id);
      this.clicks.pop();
      this.matte = matte;
      this.emit("markers", this.clicks);
      this.emit("matte", matte);
      return true;
    } catch (err) {
      this.emit("error", `undo failed (${(err as Error).message})`);
      return false;
    } finally {
      this.setBusy(false);
    }
  }

  /** Latest server matte, byte-identical to GET .../matte; null disables export. */
  exportMatte(): Blob | null {
    return this.matte;
  }
}
