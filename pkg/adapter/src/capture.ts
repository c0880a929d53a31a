/**
 * RGB-D capture directories, the adapter's raw input:
 *
 *   capture/
 *     intrinsics.json        fx fy cx cy width height, shared by all frames
 *     frames/<i>/rgb.png     image bytes, passed to services opaquely
 *     frames/<i>/depth.u16   little-endian u16 millimeters, height*width
 *     frames/<i>/pose.json   16 row-major camera-to-world floats
 *
 * The adapter never decodes image pixels itself; rgb.* goes to the model
 * services as base64 and depth bytes are copied through to the bundle.
 */

import fs from 'node:fs';
import path from 'node:path';
import { z } from 'zod';
import type { Intrinsics } from './bundle.js';

const IntrinsicsSchema = z.object({
  fx: z.number().positive(),
  fy: z.number().positive(),
  cx: z.number(),
  cy: z.number(),
  width: z.number().int().positive(),
  height: z.number().int().positive(),
});

const RGB_NAMES = ['rgb.png', 'rgb.jpg', 'rgb.jpeg'];

export interface CaptureFrame {
  index: number;
  dir: string;
}

export interface Capture {
  root: string;
  intrinsics: Intrinsics;
  frames: CaptureFrame[];
}

export function readCapture(root: string): Capture {
  const intrinsics = IntrinsicsSchema.parse(
    JSON.parse(fs.readFileSync(path.join(root, 'intrinsics.json'), 'utf8')),
  );
  const framesRoot = path.join(root, 'frames');
  const frames: CaptureFrame[] = [];
  if (fs.existsSync(framesRoot)) {
    for (const entry of fs.readdirSync(framesRoot)) {
      const dir = path.join(framesRoot, entry);
      if (/^\d+$/.test(entry) && fs.statSync(dir).isDirectory()) {
        frames.push({ index: Number(entry), dir });
      }
    }
  }
  frames.sort((a, b) => a.index - b.index);
  return { root, intrinsics, frames };
}

export interface FrameInputs {
  rgbB64: string;
  depthU16: Buffer;
  pose: number[];
}

export function readFrameInputs(frame: CaptureFrame, intrinsics: Intrinsics): FrameInputs {
  const rgbName = RGB_NAMES.find((n) => fs.existsSync(path.join(frame.dir, n)));
  if (!rgbName) {
    throw new Error(`frame ${frame.index}: no rgb image (expected one of ${RGB_NAMES.join(', ')})`);
  }
  const depthU16 = fs.readFileSync(path.join(frame.dir, 'depth.u16'));
  const expected = intrinsics.width * intrinsics.height * 2;
  if (depthU16.length !== expected) {
    throw new Error(
      `frame ${frame.index}: depth.u16 holds ${depthU16.length} bytes, expected ${expected}`,
    );
  }
  const pose = z
    .array(z.number())
    .length(16)
    .parse(JSON.parse(fs.readFileSync(path.join(frame.dir, 'pose.json'), 'utf8')));
  return {
    rgbB64: fs.readFileSync(path.join(frame.dir, rgbName)).toString('base64'),
    depthU16,
    pose,
  };
}
