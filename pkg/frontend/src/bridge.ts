/**
 * Browser bridge: a dependency-free HTTP server that renders the panels
 * server-side and relays UI actions to the debug session.
 *
 * The page polls /api/panels and posts /api/action; actions are queued
 * and executed strictly in arrival order (commands sent while a continue
 * is in flight simply wait their turn).  Guest memory and page tables are
 * read-only from the browser; the only mutating actions are breakpoint
 * flags and execution control.
 */

import * as http from "node:http";

import { UiSessionModel } from "./model.js";
import {
  renderControlPanel, renderDisasm, renderEventFeed, renderMemoryPanel,
  renderPageTable, renderTlb,
} from "./render.js";

const PAGE = `<!doctype html>
<html>
<head>
<meta charset="utf-8"/>
<title>vbpsim inspector</title>
<style>
 body { font-family: ui-monospace, monospace; background: #111; color: #ddd; margin: 1rem; }
 .panel { border: 1px solid #333; padding: .5rem; margin: .5rem 0; }
 .panel.disconnected { opacity: .35; }
 .byte { cursor: pointer; }
 .byte.flagged { color: #f90; }
 .bp-badge { color: #f33; font-size: .6em; }
 .event.VbpHit { color: #f90; }
 .event.Eviction { color: #f33; }
 .dis.current { background: #224; }
 button { margin-right: .5rem; }
 #editor { position: fixed; top: 1rem; right: 1rem; background: #222; padding: 1rem; }
 .hidden { display: none; }
</style>
</head>
<body>
<h1>vbpsim inspector</h1>
<div>
 window <input id="addr" value="0x1000" size="10"/>
 len <input id="len" value="128" size="5"/>
 <button id="load">load</button>
 <span id="conn"></span>
</div>
<div id="control"></div>
<div id="disasm"></div>
<div id="memory"></div>
<div id="feed"></div>
<div id="pt"></div>
<div id="editor" class="hidden"></div>
<script>
const FLAG_BITS = { r: 1, w: 2, x: 4, f: 8, h: 16, t: 32 };
let windowAddr = 0x1000, windowLen = 128;

async function act(action) {
  await fetch("/api/action", { method: "POST", body: JSON.stringify(action) });
  await poll();
}

async function poll() {
  let data;
  try {
    const res = await fetch("/api/panels?addr=" + windowAddr + "&len=" + windowLen);
    data = await res.json();
    document.getElementById("conn").textContent = data.connected ? "connected" : "DISCONNECTED";
  } catch (e) {
    document.getElementById("conn").textContent = "DISCONNECTED";
    return;
  }
  for (const id of ["control", "disasm", "memory", "feed", "pt"]) {
    const el = document.getElementById(id);
    el.innerHTML = data[id];
    if (!data.connected) el.firstElementChild?.classList.add("disconnected");
  }
}

document.getElementById("load").onclick = () => {
  windowAddr = parseInt(document.getElementById("addr").value, 16);
  windowLen = parseInt(document.getElementById("len").value, 10);
  poll();
};

document.body.addEventListener("click", (e) => {
  const target = e.target.closest("[data-action]");
  if (target) { act({ do: target.dataset.action }); return; }
  const byte = e.target.closest(".byte");
  if (byte) openEditor(parseInt(byte.dataset.addr), parseInt(byte.dataset.flags || "0"));
});

function openEditor(addr, flags) {
  const editor = document.getElementById("editor");
  const boxes = Object.entries(FLAG_BITS).map(([letter, bit]) =>
    '<label><input type="checkbox" data-letter="' + letter + '"' +
    ((flags & bit) ? " checked" : "") + "/>" + letter.toUpperCase() + "</label>"
  ).join(" ");
  editor.innerHTML = "<div>flags @ 0x" + addr.toString(16) + "</div>" + boxes +
    '<button id="apply">apply</button> <button id="close">close</button>';
  editor.classList.remove("hidden");
  editor.querySelector("#close").onclick = () => editor.classList.add("hidden");
  editor.querySelector("#apply").onclick = async () => {
    let letters = "";
    for (const box of editor.querySelectorAll("input[data-letter]")) {
      if (box.checked) letters += box.dataset.letter;
    }
    await act(letters ? { do: "set_bp", addr, flags: letters }
                      : { do: "clear_bp", addr });
    editor.classList.add("hidden");
  };
}

poll();
setInterval(poll, 750);
</script>
</body>
</html>
`;

export class InspectorBridge {
  private queue: Promise<unknown> = Promise.resolve();
  readonly server: http.Server;

  constructor(private model: UiSessionModel) {
    this.server = http.createServer((req, res) => {
      this.handle(req, res).catch((err) => {
        res.statusCode = 500;
        res.end(String(err));
      });
    });
  }

  /** Serialize all session traffic: one command at a time, arrival order. */
  private enqueue<T>(fn: () => Promise<T>): Promise<T> {
    const next = this.queue.then(fn, fn);
    this.queue = next.catch(() => undefined);
    return next;
  }

  private async handle(req: http.IncomingMessage, res: http.ServerResponse) {
    const url = new URL(req.url ?? "/", "http://localhost");
    if (req.method === "GET" && url.pathname === "/") {
      res.setHeader("content-type", "text/html; charset=utf-8");
      res.end(PAGE);
      return;
    }
    if (req.method === "GET" && url.pathname === "/api/panels") {
      const addr = Number(url.searchParams.get("addr") ?? 0x1000);
      const len = Math.min(Number(url.searchParams.get("len") ?? 128), 4096);
      const body = await this.enqueue(() => this.renderPanels(addr, len));
      res.setHeader("content-type", "application/json");
      res.end(JSON.stringify(body));
      return;
    }
    if (req.method === "POST" && url.pathname === "/api/action") {
      const raw = await readBody(req);
      const action = JSON.parse(raw);
      const body = await this.enqueue(() => this.runAction(action));
      res.setHeader("content-type", "application/json");
      res.end(JSON.stringify(body));
      return;
    }
    res.statusCode = 404;
    res.end("not found");
  }

  private async renderPanels(addr: number, len: number) {
    const model = this.model;
    if (model.connected) {
      try {
        await model.refreshState();
        await model.refreshCounters();
        await model.refreshMemory(addr, len);
        await model.refreshDisasm(model.state!.pc, 8);
        await model.refreshPageTable();
      } catch {
        // connection loss is reflected below; stale panels stay rendered
      }
    }
    return {
      connected: model.connected,
      control: renderControlPanel(model),
      memory: renderMemoryPanel(model),
      feed: renderEventFeed(model.feed),
      disasm: renderDisasm(model),
      pt: renderPageTable(model) + renderTlb(model),
    };
  }

  private async runAction(action: { do: string; addr?: number;
      flags?: string; mode?: string }) {
    const model = this.model;
    try {
      switch (action.do) {
        case "step":
          await model.step();
          break;
        case "continue":
          await model.continueRun();
          break;
        case "set_bp":
          await model.setBreakpoint(action.addr!, action.flags ?? "x");
          break;
        case "clear_bp":
          await model.clearBreakpoint(action.addr!);
          break;
        case "mode":
          await model.setMode(action.mode!);
          break;
        default:
          return { ok: false, error: "unknown action" };
      }
      return { ok: true };
    } catch (err) {
      return { ok: false, error: String(err) };
    }
  }

  listen(port: number): Promise<number> {
    return new Promise((resolve) => {
      this.server.listen(port, "127.0.0.1", () => {
        const address = this.server.address();
        resolve(typeof address === "object" && address ? address.port : port);
      });
    });
  }

  close(): void {
    this.server.close();
  }
}

function readBody(req: http.IncomingMessage): Promise<string> {
  return new Promise((resolve, reject) => {
    let body = "";
    req.on("data", (chunk) => (body += chunk));
    req.on("end", () => resolve(body));
    req.on("error", reject);
  });
}
