/**
 * Thin typed clients for the three model services. All speak JSON over
 * POST with bearer auth; the chat service follows the usual
 * /chat/completions shape so any OpenAI-compatible server works.
 */

import { z } from 'zod';
import type { AdapterConfig } from './config.js';
import { apiKeyFor } from './config.js';
import { HttpOptions, RateLimiter, postJson } from './http.js';
import type { Box } from './crops.js';

const DetectionSchema = z.object({
  label: z.string(),
  score: z.number(),
  box: z.tuple([z.number(), z.number(), z.number(), z.number()]),
  mask: z.string(), // base64 of height*width uint8, nonzero = inside
});
export type Detection = z.infer<typeof DetectionSchema>;

const SegmentReplySchema = z.object({ detections: z.array(DetectionSchema) });
const EmbedReplySchema = z.object({ embeddings: z.array(z.array(z.number())) });
const ChatReplySchema = z.object({
  choices: z
    .array(z.object({ message: z.object({ content: z.string() }) }))
    .min(1),
});

function joinUrl(base: string, path: string): string {
  return base.replace(/\/$/, '') + path;
}

export class ModelClients {
  private readonly limiter: RateLimiter;

  constructor(private readonly config: AdapterConfig, private readonly env = process.env) {
    this.limiter = new RateLimiter(config.minRequestIntervalMs);
  }

  private options(keyEnv: string): HttpOptions {
    return {
      maxRetries: this.config.maxRetries,
      timeoutMs: this.config.requestTimeoutMs,
      limiter: this.limiter,
      apiKey: apiKeyFor(keyEnv, this.env),
    };
  }

  get hasChat(): boolean {
    return this.config.chatUrl !== '';
  }

  async segment(imageB64: string, width: number, height: number): Promise<Detection[]> {
    const reply = await postJson(
      joinUrl(this.config.segmentationUrl, '/segment'),
      {
        model: this.config.segmentationModel,
        image: imageB64,
        width,
        height,
        box_threshold: this.config.boxThreshold,
        text_threshold: this.config.textThreshold,
        iou_threshold: this.config.iouThreshold,
      },
      this.options(this.config.segmentationKeyEnv),
    );
    return SegmentReplySchema.parse(reply).detections;
  }

  /** Embeds one region list against a single image; null means the whole image. */
  async embedImage(imageB64: string, regions: Array<Box | null>): Promise<number[][]> {
    const reply = await postJson(
      joinUrl(this.config.embeddingUrl, '/embed_image'),
      { model: this.config.embeddingModel, image: imageB64, regions },
      this.options(this.config.embeddingKeyEnv),
    );
    const embeddings = EmbedReplySchema.parse(reply).embeddings;
    if (embeddings.length !== regions.length) {
      throw new Error(
        `embedding service returned ${embeddings.length} vectors for ${regions.length} regions`,
      );
    }
    return embeddings;
  }

  async embedText(texts: string[]): Promise<number[][]> {
    const reply = await postJson(
      joinUrl(this.config.embeddingUrl, '/embed_text'),
      { model: this.config.embeddingModel, texts },
      this.options(this.config.embeddingKeyEnv),
    );
    const embeddings = EmbedReplySchema.parse(reply).embeddings;
    if (embeddings.length !== texts.length) {
      throw new Error(
        `embedding service returned ${embeddings.length} vectors for ${texts.length} texts`,
      );
    }
    return embeddings;
  }

  /** Temperature is pinned to 0 everywhere; answers should be reproducible. */
  async chat(model: string, messages: unknown[]): Promise<string> {
    const reply = await postJson(
      joinUrl(this.config.chatUrl, '/chat/completions'),
      { model, temperature: 0, messages },
      this.options(this.config.chatKeyEnv),
    );
    return ChatReplySchema.parse(reply).choices[0].message.content;
  }
}
