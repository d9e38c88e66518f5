/** ROI crop and bilinear resize applied before encoding. */

import { RgbImage } from './ppm.js'

/** Keep the bottom rows: rows ceil(H*(1-fraction))..H-1, width untouched. */
export function extractRoi(image: RgbImage, bottomFraction: number): RgbImage {
  if (!(bottomFraction > 0 && bottomFraction <= 1)) {
    throw new Error(`bottom_fraction must be in (0, 1], got ${bottomFraction}`)
  }
  // snap before ceil so binary rounding of the fraction cannot shift an exact boundary
  const raw = image.height * (1 - bottomFraction)
  const start = Math.ceil(Math.round(raw * 1e9) / 1e9)
  if (start >= image.height) {
    throw new Error(`bottom_fraction=${bottomFraction} keeps no rows of H=${image.height}`)
  }
  const rows = image.height - start
  const rowFloats = image.width * 3
  return {
    height: rows,
    width: image.width,
    data: image.data.slice(start * rowFloats, image.height * rowFloats),
  }
}

/** Bilinear resample to the encoder's expected input size. */
export function resizeBilinear(image: RgbImage, outH: number, outW: number): RgbImage {
  if (outH < 1 || outW < 1) throw new Error('resize target must be positive')
  const { height: inH, width: inW, data } = image
  const out = new Float64Array(outH * outW * 3)
  const scaleY = inH / outH
  const scaleX = inW / outW
  for (let y = 0; y < outH; y++) {
    const srcY = Math.min(Math.max((y + 0.5) * scaleY - 0.5, 0), inH - 1)
    const y0 = Math.floor(srcY)
    const y1 = Math.min(y0 + 1, inH - 1)
    const fy = srcY - y0
    for (let x = 0; x < outW; x++) {
      const srcX = Math.min(Math.max((x + 0.5) * scaleX - 0.5, 0), inW - 1)
      const x0 = Math.floor(srcX)
      const x1 = Math.min(x0 + 1, inW - 1)
      const fx = srcX - x0
      for (let c = 0; c < 3; c++) {
        const p00 = data[(y0 * inW + x0) * 3 + c]
        const p01 = data[(y0 * inW + x1) * 3 + c]
        const p10 = data[(y1 * inW + x0) * 3 + c]
        const p11 = data[(y1 * inW + x1) * 3 + c]
        const top = p00 + (p01 - p00) * fx
        const bottom = p10 + (p11 - p10) * fx
        out[(y * outW + x) * 3 + c] = top + (bottom - top) * fy
      }
    }
  }
  return { height: outH, width: outW, data: out }
}
