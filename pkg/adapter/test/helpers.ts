/**
 * Shared test kit: deterministic fake model services on ephemeral ports and
 * a wrapper around the installed scenefuse CLI, which the contract tests
 * treat as the authority on bundle and map validity.
 */

import { spawnSync } from 'node:child_process';
import type { AddressInfo } from 'node:net';
import express from 'express';
import type { Express } from 'express';
import type { Server } from 'node:http';

export interface RunningServer {
  url: string;
  server: Server;
  close: () => Promise<void>;
}

export async function serve(app: Express): Promise<RunningServer> {
  const server = await new Promise<Server>((resolve) => {
    const s = app.listen(0, '127.0.0.1', () => resolve(s));
  });
  const { port } = server.address() as AddressInfo;
  return {
    url: `http://127.0.0.1:${port}`,
    server,
    close: () => new Promise((resolve) => server.close(() => resolve())),
  };
}

export function jsonApp(): Express {
  const app = express();
  app.use(express.json({ limit: '50mb' }));
  return app;
}

/** Deterministic unit-free pseudo-embedding of a string; dim values in (-1, 1). */
export function fakeEmbedding(text: string, dim: number): number[] {
  let h = 2166136261;
  for (let i = 0; i < text.length; i++) {
    h = Math.imul(h ^ text.charCodeAt(i), 16777619) >>> 0;
  }
  const out = new Array<number>(dim);
  for (let i = 0; i < dim; i++) {
    h = (Math.imul(h, 1664525) + 1013904223) >>> 0;
    out[i] = (h / 0xffffffff) * 1.9 - 0.95 + 0.001;
  }
  return out;
}

export function runScenefuse(args: string[]): { status: number; stdout: string; stderr: string } {
  const result = spawnSync('scenefuse', args, { encoding: 'utf8' });
  if (result.error) {
    throw new Error(
      'could not run the scenefuse CLI; install the mapping package first ' +
        `(pip install -e ..): ${result.error.message}`,
    );
  }
  return { status: result.status ?? -1, stdout: result.stdout, stderr: result.stderr };
}
