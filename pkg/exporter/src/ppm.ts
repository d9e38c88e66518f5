/** Binary PPM (P6) raster IO; images carry raw 0..255 channel values as float64. */

import { readFileSync, writeFileSync } from 'fs'

export interface RgbImage {
  height: number
  width: number
  /** row-major H*W*3, raw 0..255 values */
  data: Float64Array
}

export function readPpm(path: string): RgbImage {
  const buf = readFileSync(path)
  if (buf.length < 2 || buf[0] !== 0x50 || buf[1] !== 0x36) {
    throw new Error(`${path}: not a P6 raster`)
  }
  const tokens: number[] = []
  let pos = 2
  while (tokens.length < 3) {
    while (pos < buf.length && isSpace(buf[pos])) pos++
    if (buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++
      continue
    }
    const start = pos
    while (pos < buf.length && !isSpace(buf[pos])) pos++
    if (start === pos) throw new Error(`${path}: truncated header`)
    tokens.push(parseInt(buf.subarray(start, pos).toString('ascii'), 10))
  }
  pos++ // single whitespace byte after maxval
  const [width, height, maxval] = tokens
  if (maxval !== 255) throw new Error(`${path}: unsupported maxval ${maxval}`)
  const expected = width * height * 3
  if (buf.length - pos < expected) {
    throw new Error(`${path}: expected ${expected} pixel bytes`)
  }
  const data = new Float64Array(expected)
  for (let i = 0; i < expected; i++) data[i] = buf[pos + i]
  return { height, width, data }
}

export function writePpm(path: string, image: RgbImage): void {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, 'ascii')
  const payload = Buffer.alloc(image.data.length)
  for (let i = 0; i < image.data.length; i++) {
    payload[i] = Math.max(0, Math.min(255, Math.round(image.data[i])))
  }
  writeFileSync(path, Buffer.concat([header, payload]))
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d
}
