/** Pure rendering: overlays, badges, editor state, feed entries. */

import { expect, test } from "vitest";

import { UiSessionModel } from "../src/model.js";
import { EventRecord, canonical, parseFlags } from "../src/protocol.js";
import {
  renderControlPanel, renderEventFeed, renderFlagEditor, renderMemoryPanel,
} from "../src/render.js";

function modelWith(partial: Partial<UiSessionModel>): UiSessionModel {
  const model = Object.create(UiSessionModel.prototype) as UiSessionModel;
  Object.assign(model, {
    state: null, ptEntries: [], tlbEntries: [], counters: {},
    memory: null, disasm: [], feed: [], connected: true, lastError: null,
  }, partial);
  return model;
}

test("memory panel keeps data bytes and overlays flag letters", () => {
  const model = modelWith({
    memory: { addr: 0x1000, bytes: [0x10, 0x01, 0xcc], flags: [4, 0, null] },
  });
  const html = renderMemoryPanel(model);
  expect(html).toContain(">10<sup class=\"bp-badge\">x</sup>");
  expect(html).toContain("data-addr=\"4096\"");
  expect(html).toContain(">01</span>");      // unflagged byte, no badge
  expect(html).toContain(">cc</span>");      // value rendered untouched
});

test("flag editor pre-checks the set bits", () => {
  const html = renderFlagEditor(0x1000, parseFlags("xw"));
  expect(html).toContain('name="x" checked');
  expect(html).toContain('name="w" checked');
  expect(html).toContain('name="r"/>');
});

test("control panel reflects halted and disconnected states", () => {
  const state = { pc: 0x1001, regs: [0, 0, 0, 0, 0, 0, 0, 0], zf: false,
                  tf: false, cycle: 7, halted: true, mode: "vbp", stopped: null };
  const html = renderControlPanel(modelWith({ state }));
  expect(html).toContain("halted");
  expect(html).toContain("cycle=7");
  const dead = renderControlPanel(modelWith({ state, connected: false }));
  expect(dead).toContain("disconnected");
});

test("feed lists events in arrival order with cycle stamps", () => {
  const feed: EventRecord[] = [
    { kind: "HookPoint", vaddr: 0x1002, access: "Execute", flags: 16,
      cycle: 3, hook_id: "h0" },
    { kind: "VbpHit", vaddr: 0x1002, access: "Execute", flags: 4,
      cycle: 3, hook_id: null },
  ];
  const html = renderEventFeed(feed);
  const hook = html.indexOf("HookPoint");
  const hit = html.indexOf("VbpHit");
  expect(hook).toBeGreaterThan(-1);
  expect(hit).toBeGreaterThan(hook);
  expect(html).toContain("hook=h0");
  expect(html).toContain('<span class="cycle">3</span>');
});

test("canonical stringify matches the wire reference byte for byte", () => {
  const line = canonical({ id: 2, cmd: "set_bp", args: { flags: 4, addr: 4096 } });
  expect(line).toBe('{"args":{"addr":4096,"flags":4},"cmd":"set_bp","id":2}');
});
