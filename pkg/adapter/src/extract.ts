/**
 * Turns a raw RGB-D capture into frame bundle directories: detector masks,
 * per-instance multi-scale crop embeddings fused into one vector, a global
 * image embedding, and captions (model-written or templated).
 *
 * Failures are contained per frame: a dead endpoint mid-capture costs those
 * frames, not the run. Nothing is written for a failed frame.
 */

import fs from 'node:fs';
import path from 'node:path';
import { writeFrameBundle, stableJson, type FrameData, type BundleInstance } from './bundle.js';
import { readCapture, readFrameInputs, type CaptureFrame } from './capture.js';
import { Detection, ModelClients } from './clients.js';
import type { AdapterConfig } from './config.js';
import { cropRects, type Box } from './crops.js';
import { fuseMultiscaleForScheme } from './fusion.js';
import { mapPool } from './http.js';

export interface ExtractReport {
  frames: number;
  written: number[];
  failed: Array<{ frame: number; error: string }>;
}

const clampBox = (b: Box, w: number, h: number): Box => [
  Math.min(w, Math.max(0, b[0])),
  Math.min(h, Math.max(0, b[1])),
  Math.min(w, Math.max(0, b[2])),
  Math.min(h, Math.max(0, b[3])),
];

interface Placed {
  detection: Detection;
  box: Box;
  localId: number;
  pixels: number;
}

/**
 * Paints per-detection masks into one id grid, highest score first; a pixel
 * belongs to the first detection that claims it. Detections left with no
 * pixels are dropped, then ids are renumbered 1..n in painting order.
 */
export function composeMask(
  detections: Detection[],
  width: number,
  height: number,
): { maskIds: Uint16Array; placed: Placed[] } {
  const order = detections
    .map((d, i) => ({ d, i }))
    .sort((a, b) => b.d.score - a.d.score || a.i - b.i);
  const grid = new Uint16Array(width * height);
  const provisional: Placed[] = [];
  for (let slot = 0; slot < order.length; slot++) {
    const det = order[slot].d;
    const bits = Buffer.from(det.mask, 'base64');
    if (bits.length !== width * height) {
      throw new Error(
        `detection mask holds ${bits.length} bytes, expected ${width * height}`,
      );
    }
    const id = slot + 1;
    let pixels = 0;
    for (let p = 0; p < grid.length; p++) {
      if (bits[p] !== 0 && grid[p] === 0) {
        grid[p] = id;
        pixels++;
      }
    }
    provisional.push({
      detection: det,
      box: clampBox(det.box, width, height),
      localId: id,
      pixels,
    });
  }
  const survivors = provisional.filter((p) => p.pixels > 0);
  const remap = new Uint16Array(provisional.length + 1);
  survivors.forEach((p, i) => {
    remap[p.localId] = i + 1;
    p.localId = i + 1;
  });
  for (let p = 0; p < grid.length; p++) grid[p] = remap[grid[p]];
  return { maskIds: grid, placed: survivors };
}

export function fallbackCaption(template: string, label: string): string {
  return template.replaceAll('{object}', label);
}

async function captionFor(
  clients: ModelClients,
  config: AdapterConfig,
  rgbB64: string,
  label: string,
  box: Box,
): Promise<string> {
  if (!clients.hasChat) return fallbackCaption(config.captionTemplate, label);
  const rounded = box.map((v) => Math.round(v));
  try {
    const text = await clients.chat(config.captioningModel, [
      {
        role: 'user',
        content: [
          { type: 'text', text: config.captionPrompt.replaceAll('{box}', JSON.stringify(rounded)) },
          { type: 'image_url', image_url: { url: `data:image/png;base64,${rgbB64}` } },
        ],
      },
    ]);
    const caption = text.trim();
    return caption !== '' ? caption : fallbackCaption(config.captionTemplate, label);
  } catch {
    // Captions are decoration; a flaky captioner must not sink the frame.
    return fallbackCaption(config.captionTemplate, label);
  }
}

async function extractOne(
  frame: CaptureFrame,
  outDir: string,
  config: AdapterConfig,
  clients: ModelClients,
  intrinsics: FrameData['intrinsics'],
): Promise<void> {
  const inputs = readFrameInputs(frame, intrinsics);
  const { width, height } = intrinsics;

  const raw = await clients.segment(inputs.rgbB64, width, height);
  for (const det of raw) {
    if (!(det.score >= 0 && det.score <= 1)) {
      throw new Error(`detector returned score ${det.score} outside [0, 1]`);
    }
  }
  // The thresholds ride along in the request; re-apply the box threshold
  // here so a service that ignores them cannot smuggle weak boxes through.
  const kept = raw.filter((det) => {
    if (det.score < config.boxThreshold) return false;
    const b = clampBox(det.box, width, height);
    return b[2] > b[0] && b[3] > b[1];
  });

  const { maskIds, placed } = composeMask(kept, width, height);

  const rects: Array<Box | null> = [null];
  for (const p of placed) {
    rects.push(...cropRects(p.box, config.cropRatios, width, height).rects);
  }
  const embeddings = await clients.embedImage(inputs.rgbB64, rects);
  const globalEmbedding = embeddings[0];

  const instances: BundleInstance[] = [];
  for (let i = 0; i < placed.length; i++) {
    const p = placed[i];
    const crops = embeddings.slice(1 + i * config.cropLevels, 1 + (i + 1) * config.cropLevels);
    instances.push({
      localId: p.localId,
      name: p.detection.label,
      caption: await captionFor(clients, config, inputs.rgbB64, p.detection.label, p.box),
      predScore: p.detection.score,
      bbox: p.box,
      embedding: fuseMultiscaleForScheme(config.scheme, crops),
    });
  }

  writeFrameBundle(outDir, {
    frameIndex: frame.index,
    intrinsics,
    pose: inputs.pose,
    depthU16: inputs.depthU16,
    maskIds,
    instances,
    globalEmbedding,
  });
}

export async function extractFrames(
  captureDir: string,
  outDir: string,
  config: AdapterConfig,
  clients: ModelClients = new ModelClients(config),
): Promise<ExtractReport> {
  const capture = readCapture(captureDir);
  const report: ExtractReport = { frames: capture.frames.length, written: [], failed: [] };
  await mapPool(capture.frames, config.maxConcurrentFrames, async (frame) => {
    try {
      await extractOne(frame, outDir, config, clients, capture.intrinsics);
      report.written.push(frame.index);
    } catch (err) {
      report.failed.push({ frame: frame.index, error: String(err) });
    }
  });
  report.written.sort((a, b) => a - b);
  report.failed.sort((a, b) => a.frame - b.frame);
  fs.mkdirSync(outDir, { recursive: true });
  fs.writeFileSync(path.join(outDir, 'extract_report.json'), stableJson(report));
  return report;
}
