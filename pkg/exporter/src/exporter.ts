/** Batched export: manifest in, EDSE embeddings out, strictly manifest-ordered. */

import { EmbeddingSet, writeEdse } from './edse.js'
import { Encoder, FeatureMap, loadEncoder } from './encoder.js'
import { extractRoi, resizeBilinear } from './image-ops.js'
import { loadManifest, resolvePath } from './manifest.js'
import { readPpm, RgbImage } from './ppm.js'

export type Pooling = 'none' | 'global-average'

export interface ExporterConfig {
  manifestPath: string
  outputPath: string
  encoder: string
  bottomFraction: number
  pooling: Pooling
  batchSize: number
  /** log and skip unreadable images instead of aborting */
  skipUnreadable: boolean
}

export const DEFAULTS = {
  bottomFraction: 0.6,
  pooling: 'global-average' as Pooling,
  batchSize: 16,
  skipUnreadable: false,
}

const DIMENSION_WARNING_THRESHOLD = 100_000

export interface ExportResult {
  count: number
  dim: number
  skipped: string[]
  warnings: string[]
}

function pooledDim(map: FeatureMap, pooling: Pooling): number {
  return pooling === 'global-average'
    ? map.channels
    : map.height * map.width * map.channels
}

function flatten(map: FeatureMap, pooling: Pooling): Float64Array {
  if (pooling === 'none') return map.data
  const out = new Float64Array(map.channels)
  const cells = map.height * map.width
  for (let i = 0; i < cells; i++) {
    for (let c = 0; c < map.channels; c++) {
      out[c] += map.data[i * map.channels + c]
    }
  }
  for (let c = 0; c < map.channels; c++) out[c] /= cells
  return out
}

export async function exportEmbeddings(config: ExporterConfig): Promise<ExportResult> {
  if (config.batchSize < 1) throw new Error('batch size must be >= 1')
  const manifest = loadManifest(config.manifestPath)
  const encoder: Encoder = await loadEncoder(config.encoder)

  const ids: string[] = []
  const rows: Float64Array[] = []
  const skipped: string[] = []
  const warnings: string[] = []
  let dim = -1

  for (let start = 0; start < manifest.records.length; start += config.batchSize) {
    const records = manifest.records.slice(start, start + config.batchSize)
    const batch: { id: string; image: RgbImage }[] = []
    for (const record of records) {
      let image: RgbImage
      try {
        image = readPpm(resolvePath(manifest, record.imagePath))
      } catch (err) {
        if (!config.skipUnreadable) throw err
        skipped.push(record.id)
        console.error(`skipping ${record.id}: ${err}`)
        continue
      }
      let roi = extractRoi(image, config.bottomFraction)
      if (encoder.inputSize) {
        roi = resizeBilinear(roi, encoder.inputSize.height, encoder.inputSize.width)
      }
      batch.push({ id: record.id, image: roi })
    }
    if (batch.length === 0) continue
    const maps = await encoder.encode(batch.map(b => b.image))
    if (maps.length !== batch.length) {
      throw new Error(
        `encoder returned ${maps.length} maps for a batch of ${batch.length}`,
      )
    }
    for (let i = 0; i < batch.length; i++) {
      const vector = flatten(maps[i], config.pooling)
      if (dim === -1) {
        dim = vector.length
        if (config.pooling === 'none' && dim > DIMENSION_WARNING_THRESHOLD) {
          const msg =
            `dimension ${dim} without pooling is unwieldy downstream; ` +
            'consider --pooling global-average'
          warnings.push(msg)
          console.error(`warning: ${msg}`)
        }
      } else if (vector.length !== dim) {
        throw new Error(
          `encoder produced dimension ${vector.length} after ${dim}; ` +
          'all records must share one dimension',
        )
      }
      ids.push(batch[i].id)
      rows.push(vector)
    }
  }

  if (dim === -1) throw new Error('no readable images; nothing to export')
  const values = new Float32Array(ids.length * dim)
  rows.forEach((row, r) => {
    for (let c = 0; c < dim; c++) values[r * dim + c] = Math.fround(row[c])
  })
  const set: EmbeddingSet = { ids, dim, values }
  writeEdse(config.outputPath, set)
  return { count: ids.length, dim, skipped, warnings }
}
