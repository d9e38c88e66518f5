#!/usr/bin/env node
/** Command line front end for the exporter. */

import { DEFAULTS, ExporterConfig, Pooling, exportEmbeddings } from './exporter.js'

const USAGE = `Usage: eds-export --manifest <path> --out <path> --encoder <id> [options]

Options:
  --manifest <path>          eds-manifest/1 file (required)
  --out <path>               EDSE output file (required)
  --encoder <id>             grid:<g> or module:<path> (required)
  --bottom-fraction <f>      ROI rows kept from the bottom (default ${DEFAULTS.bottomFraction})
  --pooling <mode>           none | global-average (default ${DEFAULTS.pooling})
  --batch-size <n>           images per encoder batch (default ${DEFAULTS.batchSize})
  --skip-unreadable          log and skip unreadable images instead of aborting
  --help                     show this message
`

export function parseArgs(argv: string[]): ExporterConfig {
  const config: Partial<ExporterConfig> = {
    bottomFraction: DEFAULTS.bottomFraction,
    pooling: DEFAULTS.pooling,
    batchSize: DEFAULTS.batchSize,
    skipUnreadable: DEFAULTS.skipUnreadable,
  }
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i]
    const next = () => {
      if (i + 1 >= argv.length) throw new Error(`${flag} needs a value`)
      return argv[++i]
    }
    switch (flag) {
      case '--manifest':
        config.manifestPath = next()
        break
      case '--out':
        config.outputPath = next()
        break
      case '--encoder':
        config.encoder = next()
        break
      case '--bottom-fraction':
        config.bottomFraction = Number(next())
        break
      case '--pooling': {
        const value = next()
        if (value !== 'none' && value !== 'global-average') {
          throw new Error(`--pooling must be none or global-average, got ${value}`)
        }
        config.pooling = value as Pooling
        break
      }
      case '--batch-size':
        config.batchSize = Number(next())
        break
      case '--skip-unreadable':
        config.skipUnreadable = true
        break
      case '--help':
        process.stdout.write(USAGE)
        process.exit(0)
        break
      default:
        throw new Error(`unknown flag ${flag}`)
    }
  }
  for (const key of ['manifestPath', 'outputPath', 'encoder'] as const) {
    if (!config[key]) throw new Error(`missing required flag (see --help): ${key}`)
  }
  return config as ExporterConfig
}

async function main() {
  let config: ExporterConfig
  try {
    config = parseArgs(process.argv.slice(2))
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`)
    process.exit(2)
  }
  try {
    const result = await exportEmbeddings(config)
    console.log(
      `wrote ${result.count} embeddings of dimension ${result.dim} to ${config.outputPath}` +
      (result.skipped.length ? ` (skipped ${result.skipped.length})` : ''),
    )
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`)
    process.exit(1)
  }
}

const invokedDirectly =
  process.argv[1] != null && import.meta.url.endsWith(process.argv[1].split('/').pop()!)
if (invokedDirectly) {
  void main()
}
