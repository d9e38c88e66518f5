/** EDSE binary embedding files, bit-compatible with the primary toolkit.
 *
 * Layout (little-endian): magic "EDSE", version u32 = 1, count u64, dim u64,
 * count*dim float32 row-major, then count (u32 length, UTF-8 bytes) ids.
 */

import { readFileSync, writeFileSync } from 'fs'

export const EDSE_MAGIC = 'EDSE'
export const EDSE_VERSION = 1

export interface EmbeddingSet {
  ids: string[]
  dim: number
  /** count*dim row-major */
  values: Float32Array
}

export function writeEdse(path: string, set: EmbeddingSet): void {
  const count = set.ids.length
  if (set.values.length !== count * set.dim) {
    throw new Error(
      `value buffer has ${set.values.length} floats, expected ${count * set.dim}`,
    )
  }
  if (set.dim < 1) throw new Error('embedding dimension must be >= 1')
  const idBuffers = set.ids.map(id => Buffer.from(id, 'utf-8'))
  const idTableSize = idBuffers.reduce((acc, b) => acc + 4 + b.length, 0)
  const buf = Buffer.alloc(24 + count * set.dim * 4 + idTableSize)
  buf.write(EDSE_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(EDSE_VERSION, 4)
  buf.writeBigUInt64LE(BigInt(count), 8)
  buf.writeBigUInt64LE(BigInt(set.dim), 16)
  let pos = 24
  for (let i = 0; i < set.values.length; i++) {
    buf.writeFloatLE(set.values[i], pos)
    pos += 4
  }
  for (const idBuf of idBuffers) {
    buf.writeUInt32LE(idBuf.length, pos)
    pos += 4
    idBuf.copy(buf, pos)
    pos += idBuf.length
  }
  writeFileSync(path, buf)
}

export function readEdse(path: string): EmbeddingSet {
  const buf = readFileSync(path)
  if (buf.subarray(0, 4).toString('ascii') !== EDSE_MAGIC) {
    throw new Error(`${path}: bad magic`)
  }
  const version = buf.readUInt32LE(4)
  if (version !== EDSE_VERSION) throw new Error(`${path}: unsupported version ${version}`)
  const count = Number(buf.readBigUInt64LE(8))
  const dim = Number(buf.readBigUInt64LE(16))
  if (dim < 1) throw new Error(`${path}: dimension must be >= 1`)
  let pos = 24
  const values = new Float32Array(count * dim)
  if (buf.length < pos + values.length * 4) throw new Error(`${path}: truncated payload`)
  for (let i = 0; i < values.length; i++) {
    values[i] = buf.readFloatLE(pos)
    pos += 4
  }
  const ids: string[] = []
  for (let i = 0; i < count; i++) {
    if (buf.length < pos + 4) throw new Error(`${path}: truncated id table`)
    const length = buf.readUInt32LE(pos)
    pos += 4
    if (buf.length < pos + length) throw new Error(`${path}: truncated id table`)
    ids.push(buf.subarray(pos, pos + length).toString('utf-8'))
    pos += length
  }
  return { ids, dim, values }
}
