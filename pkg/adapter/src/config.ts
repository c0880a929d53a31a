/**
 * Adapter configuration: which models to call, where, and with which
 * detector thresholds and crop schedule. Endpoints come from a JSON file
 * or env vars; API keys are only ever named here and read from the
 * environment at request time.
 */

import fs from 'node:fs';
import { z } from 'zod';

const fraction = z.number().min(0).max(1);

export const AdapterConfigSchema = z
  .object({
    segmentationModel: z.string().default('grounded-sam'),
    embeddingModel: z.string().default('clip-vit-l14'),
    captioningModel: z.string().default('gpt-4v'),
    chatModel: z.string().default('gpt-4'),

    // Endpoints; empty string disables the service (captioning and chat are
    // optional, extract then falls back to templated captions).
    segmentationUrl: z.string().default(''),
    embeddingUrl: z.string().default(''),
    chatUrl: z.string().default(''),

    // Env var NAMES holding bearer tokens, not the tokens themselves.
    segmentationKeyEnv: z.string().default('ADAPTER_API_KEY'),
    embeddingKeyEnv: z.string().default('ADAPTER_API_KEY'),
    chatKeyEnv: z.string().default('ADAPTER_API_KEY'),

    cropLevels: z.number().int().min(1).default(3),
    cropRatios: z.array(z.number().positive()).default([0.8, 1.0, 1.2]),
    scheme: z.union([z.literal(1), z.literal(2), z.literal(3), z.literal(4)]).default(4),

    iouThreshold: fraction.default(0.4),
    boxThreshold: fraction.default(0.25),
    textThreshold: fraction.default(0.25),

    captionTemplate: z.string().default('an {object} in a scene'),
    captionPrompt: z
      .string()
      .default(
        'Describe the object inside the pixel box {box} of this image in one short phrase.',
      ),

    maxConcurrentFrames: z.number().int().min(1).default(2),
    minRequestIntervalMs: z.number().int().min(0).default(0),
    maxRetries: z.number().int().min(0).default(3),
    requestTimeoutMs: z.number().int().min(1).default(60000),
  })
  .refine((c) => c.cropRatios.length === c.cropLevels, {
    message: 'cropRatios length must equal cropLevels',
  });

export type AdapterConfig = z.infer<typeof AdapterConfigSchema>;

const ENV_OVERRIDES: Array<[keyof AdapterConfig & string, string]> = [
  ['segmentationUrl', 'ADAPTER_SEG_URL'],
  ['embeddingUrl', 'ADAPTER_EMBED_URL'],
  ['chatUrl', 'ADAPTER_CHAT_URL'],
];

export function loadConfig(
  path?: string,
  env: NodeJS.ProcessEnv = process.env,
): AdapterConfig {
  let raw: Record<string, unknown> = {};
  if (path) {
    raw = JSON.parse(fs.readFileSync(path, 'utf8'));
  }
  for (const [field, envName] of ENV_OVERRIDES) {
    const value = env[envName];
    if (value !== undefined) raw[field] = value;
  }
  return AdapterConfigSchema.parse(raw);
}

export function apiKeyFor(envName: string, env: NodeJS.ProcessEnv = process.env): string {
  return env[envName] ?? '';
}
