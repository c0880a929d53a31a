/**
 * LLM-backed post passes over a built map: consolidate the per-view
 * detector names of each instance into one refined name, and forward
 * serialized scene prompts for spatial question answering.
 *
 * The map document is rewritten only after every model call has succeeded,
 * so an API failure leaves the file exactly as it was.
 */

import fs from 'node:fs';
import type { ModelClients } from './clients.js';
import type { AdapterConfig } from './config.js';
import { stableJson } from './bundle.js';

interface MapDoc {
  format?: string;
  instances?: Array<{
    global_id?: number;
    refined_name?: string | null;
    observations?: Array<[number, number, number, string]>;
    [key: string]: unknown;
  }>;
  [key: string]: unknown;
}

export interface RefineSummary {
  instances: number;
  refined: number;
  skipped: number;
}

function uniqueNames(observations: Array<[number, number, number, string]>): string[] {
  const seen = new Set<string>();
  const names: string[] = [];
  for (const obs of observations) {
    const name = obs[3];
    if (!seen.has(name)) {
      seen.add(name);
      names.push(name);
    }
  }
  return names;
}

export async function consolidateName(
  names: string[],
  config: AdapterConfig,
  clients: ModelClients,
): Promise<string> {
  if (names.length === 1) return names[0];
  const reply = await clients.chat(config.chatModel, [
    {
      role: 'user',
      content:
        'An object was detected in several views under these names: ' +
        JSON.stringify(names) +
        '. Answer with the single name that best describes the object and nothing else.',
    },
  ]);
  const name = reply.trim().replace(/^["']|["']$/g, '');
  if (name === '') throw new Error('name consolidation returned an empty answer');
  return name;
}

export async function refineLabels(
  mapPath: string,
  config: AdapterConfig,
  clients: ModelClients,
  warn: (msg: string) => void = (msg) => console.warn(msg),
): Promise<RefineSummary> {
  const doc: MapDoc = JSON.parse(fs.readFileSync(mapPath, 'utf8'));
  if (doc.format !== 'scenefuse-map' || !Array.isArray(doc.instances)) {
    throw new Error(`${mapPath} is not a scenefuse map document`);
  }
  const summary: RefineSummary = { instances: doc.instances.length, refined: 0, skipped: 0 };
  const refinements: Array<{ slot: number; name: string }> = [];
  for (let slot = 0; slot < doc.instances.length; slot++) {
    const inst = doc.instances[slot];
    const observations = inst.observations ?? [];
    if (observations.length === 0) {
      warn(`instance ${inst.global_id ?? slot}: no observations, skipping`);
      summary.skipped++;
      continue;
    }
    const name = await consolidateName(uniqueNames(observations), config, clients);
    refinements.push({ slot, name });
  }
  for (const { slot, name } of refinements) {
    doc.instances[slot].refined_name = name;
    summary.refined++;
  }
  fs.writeFileSync(mapPath, stableJson(doc));
  return summary;
}

export async function askSpatial(
  promptPath: string,
  config: AdapterConfig,
  clients: ModelClients,
): Promise<string> {
  const prompt = fs.readFileSync(promptPath, 'utf8');
  return clients.chat(config.chatModel, [{ role: 'user', content: prompt }]);
}
