#!/usr/bin/env node
/**
 * adapter extract --rgbd capture/ --out dataset/   model calls -> bundles
 * adapter encode --text "mug" --template --out q.f32
 * adapter refine --map map.json
 * adapter ask --prompt scene_prompt.txt --out answer.txt
 *
 * Service endpoints and API key env names come from --config JSON and the
 * ADAPTER_SEG_URL / ADAPTER_EMBED_URL / ADAPTER_CHAT_URL overrides.
 */

import fs from 'node:fs';
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';
import { ModelClients } from './clients.js';
import { loadConfig, type AdapterConfig } from './config.js';
import { encodeTextToFile } from './encode.js';
import { extractFrames } from './extract.js';
import { askSpatial, refineLabels } from './refine.js';

const configOption = {
  config: {
    type: 'string' as const,
    describe: 'adapter config JSON (defaults apply when omitted)',
  },
};

function needService(config: AdapterConfig, field: 'segmentationUrl' | 'embeddingUrl' | 'chatUrl') {
  if (config[field] === '') {
    throw new Error(`this command needs ${field} configured (config file or env override)`);
  }
}

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .scriptName('adapter')
    .command(
      'extract',
      'run models over an RGB-D capture and write frame bundles',
      { ...configOption,
        rgbd: { type: 'string', demandOption: true, describe: 'capture directory' },
        out: { type: 'string', demandOption: true, describe: 'bundle dataset root' },
      },
      async (args) => {
        const config = loadConfig(args.config);
        needService(config, 'segmentationUrl');
        needService(config, 'embeddingUrl');
        const report = await extractFrames(args.rgbd, args.out, config);
        console.log(JSON.stringify(report, null, 2));
        if (report.written.length === 0) process.exitCode = 1;
      },
    )
    .command(
      'encode',
      'embed a text query as a little-endian f32 vector file',
      { ...configOption,
        text: { type: 'string', demandOption: true },
        out: { type: 'string', demandOption: true },
        template: {
          type: 'boolean',
          default: false,
          describe: 'wrap the text in the retrieval prompt template',
        },
      },
      async (args) => {
        const config = loadConfig(args.config);
        needService(config, 'embeddingUrl');
        const vector = await encodeTextToFile(
          args.text, args.template, args.out, config, new ModelClients(config),
        );
        console.log(JSON.stringify({ out: args.out, dim: vector.length }));
      },
    )
    .command(
      'refine',
      'consolidate per-view instance names in a map document',
      { ...configOption, map: { type: 'string', demandOption: true } },
      async (args) => {
        const config = loadConfig(args.config);
        needService(config, 'chatUrl');
        const summary = await refineLabels(args.map, config, new ModelClients(config));
        console.log(JSON.stringify(summary));
      },
    )
    .command(
      'ask',
      'send a serialized scene prompt to the chat model',
      { ...configOption,
        prompt: { type: 'string', demandOption: true, describe: 'prompt text file' },
        out: { type: 'string', describe: 'write the answer here instead of stdout' },
      },
      async (args) => {
        const config = loadConfig(args.config);
        needService(config, 'chatUrl');
        const answer = await askSpatial(args.prompt, config, new ModelClients(config));
        if (args.out) {
          fs.writeFileSync(args.out, answer);
        } else {
          console.log(answer);
        }
      },
    )
    .demandCommand(1)
    .strict()
    .parseAsync();
}

main().catch((err) => {
  console.error('error:', err instanceof Error ? err.message : String(err));
  process.exitCode = 1;
});
