/**
 * Line-delimited JSON protocol client for a vbpsim debug server.
 *
 * Requests carry an integer id, a cmd string and an args object; the
 * server answers with {id, ok, data|error} and interleaves unsolicited
 * {event} frames.  Every request line the client sends is recorded in
 * `transcript` in canonical form (sorted keys, no whitespace) so tests
 * can compare UI-generated traffic with the reference CLI client
 * command for command.
 */

import * as net from "node:net";

export interface EventRecord {
  kind: string;
  vaddr: number;
  access: string | null;
  flags: number;
  cycle: number;
  hook_id: string | null;
}

export interface Reply {
  id: number;
  ok: boolean;
  data?: Record<string, unknown>;
  error?: string;
}

export class ProtocolError extends Error {
  constructor(readonly code: string) {
    super(code);
  }
}

/** Canonical JSON: recursively sorted keys, no whitespace (matches the
 * Python reference client's json.dumps(sort_keys=True, separators)). */
export function canonical(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonical).join(",") + "]";
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([k, v]) => JSON.stringify(k) + ":" + canonical(v));
  return "{" + entries.join(",") + "}";
}

const FLAG_BITS: Record<string, number> = { r: 1, w: 2, x: 4, f: 8, h: 16, t: 32 };

export function parseFlags(flags: string | number): number {
  if (typeof flags === "number") return flags;
  const text = flags.trim().toLowerCase();
  if (text === "" || text === "-") return 0;
  if (/^(0x)?[0-9a-f]+$/.test(text) && /[0-9]/.test(text[0])) {
    return parseInt(text, text.startsWith("0x") ? 16 : 10);
  }
  let value = 0;
  for (const ch of text) {
    const bit = FLAG_BITS[ch];
    if (bit === undefined) throw new Error(`unknown flag letter '${ch}'`);
    value |= bit;
  }
  return value;
}

export function flagLetters(flags: number): string {
  let out = "";
  for (const [letter, bit] of Object.entries(FLAG_BITS)) {
    if (flags & bit) out += letter;
  }
  return out || "-";
}

export interface Action {
  do: string;
  addr?: number;
  len?: number;
  count?: number;
  flags?: string | number;
  mode?: string;
  hook_id?: string;
}

/** Deterministic action -> request mapping, mirrored from the CLI client. */
export function actionToRequest(action: Action, id: number): Record<string, unknown> {
  switch (action.do) {
    case "set_bp":
      return {
        id, cmd: "set_bp",
        args: { addr: action.addr!, flags: parseFlags(action.flags ?? "x") },
      };
    case "clear_bp":
      return { id, cmd: "clear_bp", args: { addr: action.addr! } };
    case "read_bp":
      return { id, cmd: "read_bp", args: { addr: action.addr!, len: action.len ?? 1 } };
    case "read_mem":
      return { id, cmd: "read_mem", args: { addr: action.addr!, len: action.len ?? 16 } };
    case "disasm":
      return { id, cmd: "disasm", args: { addr: action.addr!, count: action.count ?? 8 } };
    case "mode":
      return { id, cmd: "mode", args: { mode: action.mode! } };
    case "state":
    case "continue":
    case "step":
    case "pt":
    case "tlb":
    case "counters":
    case "stats":
    case "shutdown":
      return { id, cmd: action.do, args: {} };
    default:
      throw new Error(`unknown action '${action.do}'`);
  }
}

interface PendingRequest {
  resolve: (data: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

export class ProtocolClient {
  readonly transcript: string[] = [];
  private buffer = "";
  private nextId = 1;
  private pending = new Map<number, PendingRequest>();
  private eventHandlers: Array<(ev: EventRecord) => void> = [];
  private closeHandlers: Array<() => void> = [];
  closed = false;

  private constructor(private socket: net.Socket) {
    socket.on("data", (chunk) => this.feed(chunk.toString("utf8")));
    socket.on("close", () => {
      this.closed = true;
      for (const fn of this.closeHandlers) fn();
      for (const p of this.pending.values()) {
        p.reject(new ProtocolError("ConnectionClosed"));
      }
      this.pending.clear();
    });
    socket.on("error", () => undefined); // surfaced via close
  }

  static connect(host: string, port: number): Promise<ProtocolClient> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port }, () =>
        resolve(new ProtocolClient(socket)));
      socket.once("error", reject);
    });
  }

  onEvent(fn: (ev: EventRecord) => void): void {
    this.eventHandlers.push(fn);
  }

  onClose(fn: () => void): void {
    this.closeHandlers.push(fn);
  }

  private feed(text: string): void {
    this.buffer += text;
    for (;;) {
      const nl = this.buffer.indexOf("\n");
      if (nl < 0) break;
      const line = this.buffer.slice(0, nl).trim();
      this.buffer = this.buffer.slice(nl + 1);
      if (!line) continue;
      const msg = JSON.parse(line);
      if (msg.event !== undefined) {
        for (const fn of this.eventHandlers) fn(msg.event as EventRecord);
        continue;
      }
      const reply = msg as Reply;
      const pending = this.pending.get(reply.id);
      if (!pending) continue;
      this.pending.delete(reply.id);
      if (reply.ok) {
        pending.resolve(reply.data ?? {});
      } else {
        pending.reject(new ProtocolError(reply.error ?? "UnknownError"));
      }
    }
  }

  request(cmd: string, args: Record<string, unknown>): Promise<Record<string, unknown>> {
    const id = this.nextId++;
    return this.send({ id, cmd, args }, id);
  }

  /** Send a scripted action through the shared deterministic mapping. */
  perform(action: Action): Promise<Record<string, unknown>> {
    const id = this.nextId++;
    return this.send(actionToRequest(action, id), id);
  }

  private send(request: Record<string, unknown>, id: number):
      Promise<Record<string, unknown>> {
    const line = canonical(request);
    this.transcript.push(line);
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.socket.write(line + "\n");
    });
  }

  close(): void {
    this.socket.end();
  }
}
