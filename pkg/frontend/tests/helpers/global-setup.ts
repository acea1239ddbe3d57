// Spawns the Python gateway over a seeded synthetic session so the
// integration tests exercise the real API, not a mock.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdirSync, rmSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));
export const SERVER_INFO_PATH = join(here, ".server.json");

let child: ChildProcess | null = null;

export default async function setup(): Promise<() => void> {
  const script = join(here, "serve_fixture.py");
  child = spawn("python3", [script], { stdio: ["ignore", "pipe", "inherit"] });

  const info = await new Promise<{ base: string; session_id: string }>(
    (resolve, reject) => {
      let buffer = "";
      const timer = setTimeout(
        () => reject(new Error("fixture server did not announce itself")),
        30_000,
      );
      child!.stdout!.on("data", (chunk: Buffer) => {
        buffer += chunk.toString();
        const line = buffer.split("\n")[0];
        if (line && line.trim()) {
          clearTimeout(timer);
          resolve(JSON.parse(line));
        }
      });
      child!.on("exit", (code) => {
        clearTimeout(timer);
        reject(new Error(`fixture server exited early (code ${code})`));
      });
    },
  );

  // wait until the HTTP endpoint actually answers
  for (let attempt = 0; ; attempt++) {
    try {
      const resp = await fetch(`${info.base}/sessions`);
      if (resp.ok) break;
    } catch {
      /* not up yet */
    }
    if (attempt > 100) throw new Error("fixture server never became ready");
    await new Promise((r) => setTimeout(r, 100));
  }

  mkdirSync(dirname(SERVER_INFO_PATH), { recursive: true });
  writeFileSync(SERVER_INFO_PATH, JSON.stringify(info));

  return () => {
    child?.kill("SIGTERM");
    rmSync(SERVER_INFO_PATH, { force: true });
  };
}
