/**
 * Mirrored session state for the inspector panels.
 *
 * The model computes nothing architectural itself: machine state, page
 * tables, TLB entries, memory bytes, flag bytes, and counters all come
 * straight from protocol responses; the event feed is appended from
 * server event frames in arrival order.
 */

import {
  Action, EventRecord, ProtocolClient, ProtocolError,
} from "./protocol.js";

export interface MachineState {
  pc: number;
  regs: number[];
  zf: boolean;
  tf: boolean;
  cycle: number;
  halted: boolean;
  mode: string;
  stopped: EventRecord | null;
}

export interface PageEntry {
  vaddr: number;
  frame: number;
  writable: boolean;
  executable: boolean;
  breakpoint: boolean;
}

export interface DisasmLine {
  addr: number;
  bytes: string;
  text: string;
}

export interface MemoryWindow {
  addr: number;
  bytes: number[];
  /** One flag byte per data byte; null when the page has no buddy frame. */
  flags: Array<number | null>;
}

export class UiSessionModel {
  state: MachineState | null = null;
  ptEntries: PageEntry[] = [];
  tlbEntries: PageEntry[] = [];
  counters: Record<string, number> = {};
  memory: MemoryWindow | null = null;
  disasm: DisasmLine[] = [];
  feed: EventRecord[] = [];
  connected = true;
  lastError: string | null = null;

  constructor(private client: ProtocolClient) {
    client.onEvent((ev) => this.feed.push(ev));
    client.onClose(() => {
      this.connected = false;
    });
  }

  get transcript(): string[] {
    return this.client.transcript;
  }

  private async call(cmd: string, args: Record<string, unknown>):
      Promise<Record<string, unknown>> {
    try {
      const data = await this.client.request(cmd, args);
      this.lastError = null;
      return data;
    } catch (err) {
      if (err instanceof ProtocolError) {
        this.lastError = err.code;
      }
      throw err;
    }
  }

  async refreshState(): Promise<MachineState> {
    this.state = (await this.call("state", {})) as unknown as MachineState;
    return this.state;
  }

  async refreshPageTable(): Promise<void> {
    const data = await this.call("pt", {});
    this.ptEntries = data.entries as PageEntry[];
  }

  async refreshTlb(): Promise<void> {
    const data = await this.call("tlb", {});
    this.tlbEntries = data.entries as PageEntry[];
  }

  async refreshCounters(): Promise<void> {
    this.counters = (await this.call("counters", {})) as Record<string, number>;
    const stats = (await this.call("stats", {})) as Record<string, number>;
    for (const [key, value] of Object.entries(stats)) {
      this.counters[key] = value;
    }
  }

  async refreshMemory(addr: number, len: number): Promise<MemoryWindow> {
    const data = await this.call("read_mem", { addr, len });
    const hex = data.bytes as string;
    const bytes: number[] = [];
    for (let i = 0; i < hex.length; i += 2) {
      bytes.push(parseInt(hex.slice(i, i + 2), 16));
    }
    let flags: Array<number | null>;
    try {
      const bp = await this.call("read_bp", { addr, len });
      flags = bp.flags as number[];
    } catch (err) {
      if (!(err instanceof ProtocolError)) throw err;
      flags = bytes.map(() => null); // page has no buddy frame
    }
    this.memory = { addr, bytes, flags };
    return this.memory;
  }

  async refreshDisasm(addr: number, count: number): Promise<void> {
    const data = await this.call("disasm", { addr, count });
    this.disasm = data.lines as DisasmLine[];
  }

  async setBreakpoint(addr: number, flags: string | number): Promise<void> {
    await this.call("set_bp", { addr, flags });
  }

  async clearBreakpoint(addr: number): Promise<void> {
    await this.call("clear_bp", { addr });
  }

  async step(): Promise<MachineState> {
    this.state = (await this.call("step", {})) as unknown as MachineState;
    return this.state;
  }

  async continueRun(): Promise<MachineState> {
    this.state = (await this.call("continue", {})) as unknown as MachineState;
    return this.state;
  }

  async setMode(mode: string): Promise<void> {
    await this.call("mode", { mode });
  }

  /** Scripted path used by the conformance fixtures. */
  async perform(action: Action): Promise<Record<string, unknown>> {
    return this.client.perform(action);
  }

  close(): void {
    this.client.close();
  }
}
