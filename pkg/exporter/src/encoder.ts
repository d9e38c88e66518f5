/** Encoder loading: a built-in reference encoder plus user-supplied modules.
 *
 * Identifiers:
 *   grid:<g>        deterministic reference encoder, g x g cells of per-channel
 *                   means (feature map g x g x 3); no weights, always available
 *   module:<path>   dynamic import of a user module; it must export
 *                   `createEncoder(): Encoder` (or an Encoder as default).
 *                   This is the hook for real pretrained backbones (tfjs or
 *                   onnx wrappers live in user land, including which layer of
 *                   the network to tap).
 */

import { pathToFileURL } from 'url'
import { RgbImage } from './ppm.js'

export interface FeatureMap {
  height: number
  width: number
  channels: number
  /** row-major height*width*channels */
  data: Float64Array
}

export interface Encoder {
  readonly name: string
  /** exporter resizes ROI crops to this before encode(); null keeps native size */
  readonly inputSize: { height: number; width: number } | null
  readonly channels: number
  encode(batch: RgbImage[]): FeatureMap[] | Promise<FeatureMap[]>
}

class GridEncoder implements Encoder {
  readonly name: string
  readonly inputSize = null
  readonly channels = 3
  private readonly grid: number

  constructor(grid: number) {
    if (!Number.isInteger(grid) || grid < 1) {
      throw new Error(`grid must be a positive integer, got ${grid}`)
    }
    this.grid = grid
    this.name = `grid:${grid}`
  }

  encode(batch: RgbImage[]): FeatureMap[] {
    return batch.map(image => this.encodeOne(image))
  }

  private encodeOne(image: RgbImage): FeatureMap {
    const g = this.grid
    if (image.height < g || image.width < g) {
      throw new Error(`grid ${g} is finer than image ${image.height}x${image.width}`)
    }
    const out = new Float64Array(g * g * 3)
    for (let gr = 0; gr < g; gr++) {
      const r0 = Math.floor((image.height * gr) / g)
      const r1 = Math.floor((image.height * (gr + 1)) / g)
      for (let gc = 0; gc < g; gc++) {
        const c0 = Math.floor((image.width * gc) / g)
        const c1 = Math.floor((image.width * (gc + 1)) / g)
        const sums = [0, 0, 0]
        for (let y = r0; y < r1; y++) {
          for (let x = c0; x < c1; x++) {
            const base = (y * image.width + x) * 3
            sums[0] += image.data[base]
            sums[1] += image.data[base + 1]
            sums[2] += image.data[base + 2]
          }
        }
        const count = (r1 - r0) * (c1 - c0)
        const base = (gr * g + gc) * 3
        out[base] = sums[0] / count
        out[base + 1] = sums[1] / count
        out[base + 2] = sums[2] / count
      }
    }
    return { height: g, width: g, channels: 3, data: out }
  }
}

export async function loadEncoder(identifier: string): Promise<Encoder> {
  if (identifier.startsWith('grid:')) {
    return new GridEncoder(Number(identifier.slice('grid:'.length)))
  }
  if (identifier.startsWith('module:')) {
    const modulePath = identifier.slice('module:'.length)
    let mod: Record<string, unknown>
    try {
      mod = await import(pathToFileURL(modulePath).href)
    } catch (err) {
      throw new Error(`failed to load encoder module ${modulePath}: ${err}`)
    }
    const factory = mod.createEncoder ?? mod.default
    const encoder =
      typeof factory === 'function' ? (factory as () => Encoder)() : (factory as Encoder)
    if (!encoder || typeof encoder.encode !== 'function') {
      throw new Error(`${modulePath} does not provide an Encoder`)
    }
    return encoder
  }
  throw new Error(
    `unknown encoder identifier ${identifier}; use grid:<g> or module:<path>`,
  )
}
