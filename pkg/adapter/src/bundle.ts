/**
 * Writes frame bundle directories in the exact on-disk layout the scenefuse
 * package reads: <root>/frames/<index>/ holding manifest.json plus
 * depth.u16 (millimeters), mask.u16 and emb.f32, every binary file
 * little-endian regardless of host. Instance embeddings are laid out in
 * slot order followed by the global image embedding.
 */

import fs from 'node:fs';
import path from 'node:path';
import type { Box } from './crops.js';

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface BundleInstance {
  localId: number;
  name: string;
  caption: string;
  predScore: number;
  bbox: Box;
  embedding: number[];
}

export interface FrameData {
  frameIndex: number;
  intrinsics: Intrinsics;
  pose: number[]; // 16 row-major camera-to-world entries
  depthU16: Buffer; // raw little-endian u16 millimeters, height*width
  maskIds: Uint16Array; // per-pixel local ids, 0 = unlabeled
  instances: BundleInstance[];
  globalEmbedding: number[];
}

/** JSON with recursively sorted keys and two-space indent, trailing newline. */
export function stableJson(value: unknown): string {
  const sorted = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(sorted);
    if (v !== null && typeof v === 'object') {
      const out: Record<string, unknown> = {};
      for (const key of Object.keys(v as object).sort()) {
        out[key] = sorted((v as Record<string, unknown>)[key]);
      }
      return out;
    }
    return v;
  };
  return JSON.stringify(sorted(value), null, 2) + '\n';
}

export function f32leBytes(values: number[]): Buffer {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) buf.writeFloatLE(values[i], i * 4);
  return buf;
}

export function u16leBytes(values: Uint16Array | number[]): Buffer {
  const buf = Buffer.alloc(values.length * 2);
  for (let i = 0; i < values.length; i++) buf.writeUInt16LE(values[i], i * 2);
  return buf;
}

export function readF32le(buf: Buffer): number[] {
  if (buf.length % 4 !== 0) throw new Error('f32 payload length not a multiple of 4');
  const out = new Array<number>(buf.length / 4);
  for (let i = 0; i < out.length; i++) out[i] = buf.readFloatLE(i * 4);
  return out;
}

function writeFileAtomic(file: string, data: Buffer | string): void {
  const tmp = file + '.tmp';
  fs.writeFileSync(tmp, data);
  fs.renameSync(tmp, file);
}

export function frameDir(root: string, frameIndex: number): string {
  return path.join(root, 'frames', String(frameIndex));
}

export function writeFrameBundle(root: string, frame: FrameData): string {
  const { intrinsics } = frame;
  const pixels = intrinsics.width * intrinsics.height;
  if (frame.depthU16.length !== pixels * 2) {
    throw new Error(
      `depth payload is ${frame.depthU16.length} bytes, expected ${pixels * 2}`,
    );
  }
  if (frame.maskIds.length !== pixels) {
    throw new Error(`mask has ${frame.maskIds.length} entries, expected ${pixels}`);
  }
  if (frame.pose.length !== 16) throw new Error('pose must have 16 entries');

  const dim = frame.globalEmbedding.length;
  if (dim === 0) throw new Error('global embedding must be non-empty');
  for (const inst of frame.instances) {
    if (inst.embedding.length !== dim) {
      throw new Error(`embedding dimension mismatch for local_id ${inst.localId}`);
    }
  }

  const dir = frameDir(root, frame.frameIndex);
  fs.mkdirSync(dir, { recursive: true });

  const flat: number[] = [];
  for (const inst of frame.instances) flat.push(...inst.embedding);
  flat.push(...frame.globalEmbedding);

  const manifest = {
    frame_index: frame.frameIndex,
    intrinsics: { ...intrinsics },
    pose: frame.pose,
    depth_file: 'depth.u16',
    mask_file: 'mask.u16',
    embeddings_file: 'emb.f32',
    embedding_dim: dim,
    global_embedding_offset: frame.instances.length * dim,
    instances: frame.instances.map((inst, slot) => ({
      local_id: inst.localId,
      name: inst.name,
      caption: inst.caption,
      pred_score: inst.predScore,
      bbox: [...inst.bbox],
      embedding_offset: slot * dim,
    })),
  };

  writeFileAtomic(path.join(dir, 'depth.u16'), frame.depthU16);
  writeFileAtomic(path.join(dir, 'mask.u16'), u16leBytes(frame.maskIds));
  writeFileAtomic(path.join(dir, 'emb.f32'), f32leBytes(flat));
  writeFileAtomic(path.join(dir, 'manifest.json'), stableJson(manifest));
  return dir;
}
