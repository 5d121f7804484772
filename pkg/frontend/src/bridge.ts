/** Process management and request/response plumbing for the core bridge. */

import { spawn, type ChildProcessByStdio } from "node:child_process";
import { createInterface } from "node:readline";
import { fileURLToPath } from "node:url";
import type { Readable, Writable } from "node:stream";

import { BindingsLoadError, BridgeError, CoreError } from "./protocol.js";

/** core major.minor these bindings were written against */
export const EXPECTED_CORE = "0.1";

const BRIDGE_SCRIPT = fileURLToPath(
  new URL("../bridge/rtbridge.py", import.meta.url));

export interface BridgeOptions {
  pythonBin?: string;
  /** override the version gate, mainly for testing the gate itself */
  expectCoreVersion?: string;
}

interface Pending {
  resolve: (value: unknown) => void;
  reject: (error: Error) => void;
}

export class CoreBridge {
  private proc: ChildProcessByStdio<Writable, Readable, Readable>;
  private pending = new Map<number, Pending>();
  private nextId = 1;
  private closed = false;
  private stderrTail: string[] = [];
  coreVersion = "";

  private constructor(pythonBin: string) {
    this.proc = spawn(pythonBin, [BRIDGE_SCRIPT],
                      { stdio: ["pipe", "pipe", "pipe"] });
    const lines = createInterface({ input: this.proc.stdout });
    lines.on("line", (line) => this.dispatch(line));
    const errLines = createInterface({ input: this.proc.stderr });
    errLines.on("line", (line) => {
      this.stderrTail.push(line);
      if (this.stderrTail.length > 20) this.stderrTail.shift();
    });
    this.proc.on("exit", () => this.failAll("bridge process exited"));
    this.proc.on("error", (err) => this.failAll(`spawn failed: ${err.message}`));
  }

  /** Spawn the bridge and check the core version before handing it out. */
  static async connect(options: BridgeOptions = {}): Promise<CoreBridge> {
    const bridge = new CoreBridge(options.pythonBin ?? "python3");
    const hello = await bridge.request("hello", {}) as { version: string };
    const expected = options.expectCoreVersion ?? EXPECTED_CORE;
    if (hello.version !== expected &&
        !hello.version.startsWith(expected + ".")) {
      bridge.close();
      throw new BindingsLoadError(
        `core reports version ${hello.version}, bindings expect ` +
        `${expected}.x`);
    }
    bridge.coreVersion = hello.version;
    return bridge;
  }

  request(op: string, args: object): Promise<unknown> {
    if (this.closed) {
      return Promise.reject(new BridgeError("bridge is closed"));
    }
    const id = this.nextId++;
    const line = JSON.stringify({ id, op, args }) + "\n";
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.proc.stdin.write(line, (err) => {
        if (err && this.pending.delete(id)) reject(new BridgeError(err.message));
      });
    });
  }

  close(): void {
    if (this.closed) return;
    this.closed = true;
    this.proc.stdin.end();
    this.failAll("bridge closed with calls outstanding");
  }

  private dispatch(line: string): void {
    let reply: { id: number | null; ok: boolean; result?: unknown;
                 error?: { type: string; message: string } };
    try {
      reply = JSON.parse(line);
    } catch {
      this.failAll(`unparseable reply: ${line.slice(0, 200)}`);
      return;
    }
    const pending = reply.id === null ? undefined : this.pending.get(reply.id);
    if (pending === undefined) return;
    this.pending.delete(reply.id as number);
    if (reply.ok) {
      pending.resolve(reply.result);
    } else {
      pending.reject(new CoreError(reply.error!.type, reply.error!.message));
    }
  }

  private failAll(reason: string): void {
    const tail = this.stderrTail.length
      ? `\n${this.stderrTail.join("\n")}` : "";
    for (const pending of this.pending.values()) {
      pending.reject(new BridgeError(reason + tail));
    }
    this.pending.clear();
  }
}
