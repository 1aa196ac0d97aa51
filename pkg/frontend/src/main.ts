/**
 * Entry point: connect to a running `vbpsim serve` session and expose the
 * browser inspector.
 *
 *   vbpsim serve guest.bin --port 4600 &
 *   node dist/main.js --connect 127.0.0.1:4600 --http 8080
 */

import { InspectorBridge } from "./bridge.js";
import { UiSessionModel } from "./model.js";
import { ProtocolClient } from "./protocol.js";

function arg(name: string, fallback: string): string {
  const index = process.argv.indexOf(name);
  return index >= 0 && process.argv[index + 1] ? process.argv[index + 1] : fallback;
}

async function main(): Promise<void> {
  const [host, portText] = arg("--connect", "127.0.0.1:4600").split(":");
  const httpPort = Number(arg("--http", "8080"));
  const client = await ProtocolClient.connect(host, Number(portText));
  const model = new UiSessionModel(client);
  await model.refreshState();
  const bridge = new InspectorBridge(model);
  const bound = await bridge.listen(httpPort);
  console.log(`inspector at http://127.0.0.1:${bound}/ (session ${host}:${portText})`);
}

main().catch((err) => {
  console.error(err instanceof Error ? err.message : String(err));
  process.exit(1);
});
