/**
 * Text side of retrieval: encode a query or label to a unit-norm vector and
 * store it as little-endian float32, the format the mapping CLI consumes.
 */

import fs from 'node:fs';
import { f32leBytes } from './bundle.js';
import type { ModelClients } from './clients.js';
import type { AdapterConfig } from './config.js';

export function applyTemplate(template: string, text: string): string {
  return template.replaceAll('{object}', text);
}

export async function encodeText(
  text: string,
  useTemplate: boolean,
  config: AdapterConfig,
  clients: ModelClients,
): Promise<number[]> {
  const query = useTemplate ? applyTemplate(config.captionTemplate, text) : text;
  const [vector] = await clients.embedText([query]);
  let norm = 0;
  for (const x of vector) norm += x * x;
  norm = Math.sqrt(norm);
  if (norm === 0) throw new Error('embedding service returned a zero vector');
  return vector.map((x) => x / norm);
}

export async function encodeTextToFile(
  text: string,
  useTemplate: boolean,
  outPath: string,
  config: AdapterConfig,
  clients: ModelClients,
): Promise<number[]> {
  const vector = await encodeText(text, useTemplate, config, clients);
  fs.writeFileSync(outPath, f32leBytes(vector));
  return vector;
}
