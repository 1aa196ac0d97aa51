/**
 * HTML panel rendering.  Pure functions over the mirrored model so they
 * are testable without a browser; the bridge serves the same markup to
 * the live page.
 */

import { UiSessionModel } from "./model.js";
import { EventRecord, flagLetters } from "./protocol.js";

const esc = (s: string): string =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

const hex = (value: number, width = 8): string =>
  "0x" + value.toString(16).padStart(width, "0");

/** Hex dump with a per-byte breakpoint overlay.  Data bytes are shown
 * exactly as the guest sees them; flag letters ride along as badges. */
export function renderMemoryPanel(model: UiSessionModel): string {
  const mem = model.memory;
  if (!mem) {
    return `<div class="panel memory empty">no memory window</div>`;
  }
  const rows: string[] = [];
  for (let off = 0; off < mem.bytes.length; off += 16) {
    const cells: string[] = [];
    for (let i = off; i < Math.min(off + 16, mem.bytes.length); i++) {
      const addr = mem.addr + i;
      const flags = mem.flags[i];
      const badge = flags ? ` data-flags="${flags}"` : "";
      const letters = flags ? flagLetters(flags) : "";
      const cls = flags ? "byte flagged" : "byte";
      const overlay = letters && letters !== "-"
        ? `<sup class="bp-badge">${letters}</sup>` : "";
      cells.push(
        `<span class="${cls}" data-addr="${addr}"${badge}>` +
        `${mem.bytes[i].toString(16).padStart(2, "0")}${overlay}</span>`);
    }
    rows.push(
      `<div class="mem-row"><span class="addr">${hex(mem.addr + off)}</span> ` +
      cells.join(" ") + `</div>`);
  }
  return `<div class="panel memory">\n${rows.join("\n")}\n</div>`;
}

export function renderFlagEditor(addr: number, flags: number): string {
  const boxes = [
    ["r", 1, "R"], ["w", 2, "W"], ["x", 4, "X"],
    ["f", 8, "FETCH"], ["h", 16, "HOOK"], ["t", 32, "TAINT"],
  ] as const;
  const inputs = boxes.map(([letter, bit, label]) =>
    `<label><input type="checkbox" name="${letter}"` +
    `${(flags & bit) ? " checked" : ""}/>${label}</label>`).join(" ");
  return `<form class="flag-editor" data-addr="${addr}">${inputs}` +
    `<button type="submit">apply</button></form>`;
}

export function renderControlPanel(model: UiSessionModel): string {
  const s = model.state;
  const status = !model.connected ? "disconnected"
    : s === null ? "unknown"
    : s.halted ? "halted"
    : s.stopped ? `stopped: ${s.stopped.kind}` : "ready";
  const buttons =
    `<button data-action="step">step</button>` +
    `<button data-action="continue">continue</button>`;
  const regs = s
    ? s.regs.map((v, i) => `<td class="reg">R${i}=${hex(v, 1)}</td>`).join("")
    : "";
  const head = s
    ? `<div class="pcline">pc=${hex(s.pc)} cycle=${s.cycle} mode=${esc(s.mode)} ` +
      `zf=${s.zf ? 1 : 0} tf=${s.tf ? 1 : 0}</div>`
    : "";
  const counters = Object.entries(model.counters)
    .map(([k, v]) => `<tr><td>${esc(k)}</td><td>${v}</td></tr>`).join("");
  const cls = model.connected ? "panel control" : "panel control disconnected";
  return `<div class="${cls}"><div class="status">${esc(status)}</div>` +
    `${buttons}${head}<table class="regs"><tr>${regs}</tr></table>` +
    `<table class="counters">${counters}</table></div>`;
}

export function renderEventFeed(events: EventRecord[]): string {
  const items = events.map((ev) => {
    const access = ev.access ? ` ${esc(ev.access)}` : "";
    const hook = ev.hook_id ? ` hook=${esc(ev.hook_id)}` : "";
    const flags = ev.flags ? ` flags=${flagLetters(ev.flags)}` : "";
    return `<li class="event ${esc(ev.kind)}">` +
      `<span class="cycle">${ev.cycle}</span> ${esc(ev.kind)} @ ` +
      `${hex(ev.vaddr)}${access}${flags}${hook}</li>`;
  });
  return `<ul class="panel feed">\n${items.join("\n")}\n</ul>`;
}

export function renderDisasm(model: UiSessionModel): string {
  const pc = model.state?.pc;
  const rows = model.disasm.map((line) => {
    const cls = line.addr === pc ? "dis current" : "dis";
    return `<div class="${cls}"><span class="addr">${hex(line.addr)}</span> ` +
      `<code>${esc(line.bytes)}</code> ${esc(line.text)}</div>`;
  });
  return `<div class="panel disasm">\n${rows.join("\n")}\n</div>`;
}

export function renderPageTable(model: UiSessionModel): string {
  const rows = model.ptEntries.map((e) =>
    `<tr><td>${hex(e.vaddr)}</td><td>${e.frame}</td>` +
    `<td>r${e.writable ? "w" : "-"}${e.executable ? "x" : "-"}</td>` +
    `<td>${e.breakpoint ? "bp" : ""}</td></tr>`).join("\n");
  return `<table class="panel pagetable">${rows}</table>`;
}

export function renderTlb(model: UiSessionModel): string {
  const rows = model.tlbEntries.map((e) =>
    `<tr><td>${hex(e.vaddr)}</td><td>${e.frame}</td>` +
    `<td>${e.breakpoint ? "bp" : ""}</td></tr>`).join("\n");
  return `<table class="panel tlb">${rows}</table>`;
}
