import fs from 'node:fs';
import os from 'node:os';
import path from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';
import { ModelClients } from '../src/clients.js';
import { AdapterConfigSchema, type AdapterConfig } from '../src/config.js';
import { cropRects, type Box } from '../src/crops.js';
import { extractFrames } from '../src/extract.js';
import { fuseMultiscaleWeighted } from '../src/fusion.js';
import { fakeEmbedding, jsonApp, runScenefuse, serve, type RunningServer } from './helpers.js';

const DIM = 8;
const W = 6;
const H = 4;
const IDENTITY = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), 'adapter-extract-'));
let seg: RunningServer;
let embed: RunningServer;

const maskFrom = (pixels: number[]): string => {
  const bits = Buffer.alloc(W * H);
  for (const p of pixels) bits[p] = 1;
  return bits.toString('base64');
};

const MUG_PIXELS = [7, 8, 13, 14]; // rows 1..2, cols 1..2
const BOOK_PIXELS = Array.from({ length: H * 3 }, (_, i) => {
  const row = Math.floor(i / 3);
  return row * W + 3 + (i % 3); // cols 3..5, every row
});
const MUG_BOX: Box = [1, 1, 3, 3];
const BOOK_BOX: Box = [3, 0, 6, 4];

const regionKey = (region: number[] | null): string =>
  region === null ? 'G' : region.map((v) => v.toFixed(3)).join(',');

const embeddingFor = (image: string, region: number[] | null): number[] =>
  fakeEmbedding(`${image}|${regionKey(region)}`, DIM);

function writeCapture(dir: string, frameIndices: number[]): void {
  fs.mkdirSync(dir, { recursive: true });
  fs.writeFileSync(
    path.join(dir, 'intrinsics.json'),
    JSON.stringify({ fx: 10, fy: 10, cx: 3, cy: 2, width: W, height: H }),
  );
  for (const i of frameIndices) {
    const frameDir = path.join(dir, 'frames', String(i));
    fs.mkdirSync(frameDir, { recursive: true });
    fs.writeFileSync(path.join(frameDir, 'rgb.png'), Buffer.from(`frame-${i}`));
    const depth = Buffer.alloc(W * H * 2);
    for (let p = 0; p < W * H; p++) depth.writeUInt16LE(1000 + ((i * 31 + p * 7) % 50), p * 2);
    fs.writeFileSync(path.join(frameDir, 'depth.u16'), depth);
    fs.writeFileSync(path.join(frameDir, 'pose.json'), JSON.stringify(IDENTITY));
  }
}

beforeAll(async () => {
  const segApp = jsonApp();
  segApp.post('/segment', (req, res) => {
    const image = Buffer.from(req.body.image, 'base64').toString();
    if (image === 'frame-2') {
      res.status(500).send('segmenter crashed');
      return;
    }
    if (image === 'frame-1') {
      res.json({ detections: [] });
      return;
    }
    res.json({
      detections: [
        { label: 'book', score: 0.8, box: BOOK_BOX, mask: maskFrom(BOOK_PIXELS) },
        { label: 'mug', score: 0.9, box: MUG_BOX, mask: maskFrom(MUG_PIXELS) },
        // same pixels as the mug but weaker: claims nothing, must be dropped
        { label: 'ghost', score: 0.5, box: MUG_BOX, mask: maskFrom(MUG_PIXELS) },
        // below the box threshold: filtered before painting
        { label: 'noise', score: 0.1, box: [0, 0, 1, 1], mask: maskFrom([0]) },
      ],
    });
  });
  seg = await serve(segApp);

  const embedApp = jsonApp();
  embedApp.post('/embed_image', (req, res) => {
    const image = Buffer.from(req.body.image, 'base64').toString();
    const regions: Array<number[] | null> = req.body.regions;
    res.json({ embeddings: regions.map((r) => embeddingFor(image, r)) });
  });
  embed = await serve(embedApp);
});

afterAll(async () => {
  await seg.close();
  await embed.close();
  fs.rmSync(tmp, { recursive: true, force: true });
});

function config(overrides: Record<string, unknown> = {}): AdapterConfig {
  return AdapterConfigSchema.parse({
    segmentationUrl: seg.url,
    embeddingUrl: embed.url,
    maxRetries: 0,
    ...overrides,
  });
}

describe('extractFrames', () => {
  it('writes bundles the mapping package validates and builds', async () => {
    const capture = path.join(tmp, 'capture');
    const out = path.join(tmp, 'dataset');
    writeCapture(capture, [0, 1, 2]);

    const cfg = config();
    const report = await extractFrames(capture, out, cfg, new ModelClients(cfg));
    expect(report.frames).toBe(3);
    expect(report.written).toEqual([0, 1]);
    expect(report.failed).toHaveLength(1);
    expect(report.failed[0].frame).toBe(2);
    expect(fs.existsSync(path.join(out, 'frames', '2'))).toBe(false);

    const manifest = JSON.parse(
      fs.readFileSync(path.join(out, 'frames', '0', 'manifest.json'), 'utf8'),
    );
    // mug painted first (highest score), ghost starved out, noise thresholded
    expect(manifest.instances.map((r: { name: string }) => r.name)).toEqual(['mug', 'book']);
    expect(manifest.instances.map((r: { local_id: number }) => r.local_id)).toEqual([1, 2]);
    expect(manifest.instances[0].caption).toBe('an mug in a scene');
    expect(manifest.instances[0].pred_score).toBe(0.9);
    expect(manifest.instances[0].bbox).toEqual(MUG_BOX);
    expect(manifest.embedding_dim).toBe(DIM);
    expect(manifest.pose).toEqual(IDENTITY);

    // depth bytes pass through untouched
    expect(fs.readFileSync(path.join(out, 'frames', '0', 'depth.u16'))).toEqual(
      fs.readFileSync(path.join(capture, 'frames', '0', 'depth.u16')),
    );

    // mask grid: mug block is id 1, book columns id 2, everything else 0
    const maskBytes = fs.readFileSync(path.join(out, 'frames', '0', 'mask.u16'));
    const expected = new Uint16Array(W * H);
    for (const p of MUG_PIXELS) expected[p] = 1;
    for (const p of BOOK_PIXELS) expected[p] = 2;
    for (let p = 0; p < W * H; p++) {
      expect(maskBytes.readUInt16LE(p * 2)).toBe(expected[p]);
    }

    // fused embedding matches scheme 4 multi-scale fusion of the crop vectors
    const embBytes = fs.readFileSync(path.join(out, 'frames', '0', 'emb.f32'));
    const rects = cropRects(MUG_BOX, cfg.cropRatios, W, H).rects;
    const mugFused = fuseMultiscaleWeighted(rects.map((r) => embeddingFor('frame-0', r)));
    for (let i = 0; i < DIM; i++) {
      expect(Math.abs(embBytes.readFloatLE(i * 4) - mugFused[i])).toBeLessThan(1e-6);
    }
    const globalExpected = embeddingFor('frame-0', null);
    const globalOffset = manifest.global_embedding_offset;
    for (let i = 0; i < DIM; i++) {
      expect(Math.abs(embBytes.readFloatLE((globalOffset + i) * 4) - globalExpected[i])).toBeLessThan(
        1e-6,
      );
    }

    // the contract: every written bundle passes the reference validator
    const check = runScenefuse(['validate', '--frames', out]);
    expect(check.status).toBe(0);
    expect(JSON.parse(check.stdout)).toMatchObject({ frames: 2, invalid: 0 });

    // and the reference pipeline can integrate them into a two-instance map
    const mapPath = path.join(tmp, 'map.json');
    const build = runScenefuse([
      'build', '--frames', out, '--out', mapPath,
      '--stride', '1', '--px', '0', '--dbscan-eps', '0.5', '--dbscan-min', '1',
    ]);
    expect(build.status).toBe(0);
    const stats = runScenefuse(['stats', '--map', mapPath]);
    expect(stats.status).toBe(0);
    expect(JSON.parse(stats.stdout).instances).toBe(2);
  }, 30000);

  it('asks the captioning model when a chat endpoint is configured', async () => {
    const chatApp = jsonApp();
    const prompts: string[] = [];
    chatApp.post('/chat/completions', (req, res) => {
      expect(req.body.temperature).toBe(0);
      prompts.push(req.body.messages[0].content[0].text);
      res.json({ choices: [{ message: { content: '  a dog-eared paperback  ' } }] });
    });
    const chat = await serve(chatApp);
    try {
      const capture = path.join(tmp, 'capture-cap');
      const out = path.join(tmp, 'dataset-cap');
      writeCapture(capture, [0]);
      const cfg = config({ chatUrl: chat.url });
      const report = await extractFrames(capture, out, cfg, new ModelClients(cfg));
      expect(report.written).toEqual([0]);
      const manifest = JSON.parse(
        fs.readFileSync(path.join(out, 'frames', '0', 'manifest.json'), 'utf8'),
      );
      expect(manifest.instances[0].caption).toBe('a dog-eared paperback');
      expect(prompts[0]).toContain('[1,1,3,3]');
    } finally {
      await chat.close();
    }
  });

  it('falls back to templated captions when the captioner fails', async () => {
    const chatApp = jsonApp();
    chatApp.post('/chat/completions', (_req, res) => res.status(500).send('down'));
    const chat = await serve(chatApp);
    try {
      const capture = path.join(tmp, 'capture-fb');
      const out = path.join(tmp, 'dataset-fb');
      writeCapture(capture, [0]);
      const cfg = config({ chatUrl: chat.url });
      const report = await extractFrames(capture, out, cfg, new ModelClients(cfg));
      expect(report.written).toEqual([0]);
      const manifest = JSON.parse(
        fs.readFileSync(path.join(out, 'frames', '0', 'manifest.json'), 'utf8'),
      );
      expect(manifest.instances.map((r: { caption: string }) => r.caption)).toEqual([
        'an mug in a scene',
        'an book in a scene',
      ]);
    } finally {
      await chat.close();
    }
  });

  it('survives a dead embedding service by failing only those frames', async () => {
    const deadApp = jsonApp();
    deadApp.post('/embed_image', (_req, res) => res.status(503).send('down'));
    const dead = await serve(deadApp);
    try {
      const capture = path.join(tmp, 'capture-dead');
      const out = path.join(tmp, 'dataset-dead');
      writeCapture(capture, [0, 1]);
      const cfg = config({ embeddingUrl: dead.url });
      const report = await extractFrames(capture, out, cfg, new ModelClients(cfg));
      expect(report.written).toEqual([]);
      expect(report.failed.map((f) => f.frame)).toEqual([0, 1]);
      expect(fs.existsSync(path.join(out, 'frames'))).toBe(false);
      expect(fs.existsSync(path.join(out, 'extract_report.json'))).toBe(true);
    } finally {
      await dead.close();
    }
  });
});
