/** Test helpers: build a guest image and spawn a vbpsim debug server. */

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

const here = path.dirname(fileURLToPath(import.meta.url));

export const FIXTURES = path.join(here, "fixtures");

export function buildGuestImage(): string {
  const dir = mkdtempSync(path.join(tmpdir(), "vbpsim-ui-"));
  const image = path.join(dir, "guest.bin");
  execFileSync("python3", ["-m", "vbpsim.cli", "asm",
    path.join(FIXTURES, "guest.asm"), image]);
  return image;
}

export interface ServerHandle {
  port: number;
  proc: ChildProcess;
}

export function startServer(image: string): Promise<ServerHandle> {
  return new Promise((resolve, reject) => {
    const proc = spawn("python3",
      ["-m", "vbpsim.cli", "serve", image, "--port", "0"],
      { stdio: ["ignore", "pipe", "pipe"] });
    let banner = "";
    const onData = (chunk: Buffer) => {
      banner += chunk.toString("utf8");
      const match = banner.match(/LISTENING (\d+)/);
      if (match) {
        proc.stdout!.off("data", onData);
        resolve({ port: Number(match[1]), proc });
      }
    };
    proc.stdout!.on("data", onData);
    proc.on("error", reject);
    proc.on("exit", (code) => {
      if (!banner.includes("LISTENING")) {
        reject(new Error(`server exited early (code ${code})`));
      }
    });
    setTimeout(() => reject(new Error("server start timeout")), 15000);
  });
}

export function stopServer(handle: ServerHandle): void {
  if (handle.proc.exitCode === null) {
    handle.proc.kill();
  }
}
