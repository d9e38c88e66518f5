/** Reader for the eds-manifest/1 line format (header object + one record per line). */

import { readFileSync } from 'fs'
import { dirname, isAbsolute, join } from 'path'

export const MANIFEST_FORMAT = 'eds-manifest/1'

export interface ManifestRecord {
  id: string
  imagePath: string
  labelPath: string | null
  weather: string
  time: string
  roadType: string
  split: string
}

export interface Manifest {
  classNames: string[]
  records: ManifestRecord[]
  baseDir: string
}

export function loadManifest(path: string): Manifest {
  const lines = readFileSync(path, 'utf-8')
    .split('\n')
    .filter(line => line.length > 0)
  if (lines.length === 0) {
    throw new Error(`${path}: empty manifest`)
  }
  const header = JSON.parse(lines[0])
  if (header.format !== MANIFEST_FORMAT) {
    throw new Error(
      `${path}: expected header with format ${MANIFEST_FORMAT}, got ${header.format}`,
    )
  }
  if (!Array.isArray(header.classes) || header.classes.length === 0) {
    throw new Error(`${path}: header must carry a non-empty class list`)
  }
  const seen = new Set<string>()
  const records: ManifestRecord[] = []
  for (let i = 1; i < lines.length; i++) {
    const obj = JSON.parse(lines[i])
    if (typeof obj.id !== 'string' || typeof obj.image !== 'string') {
      throw new Error(`${path}:${i + 1}: record needs id and image fields`)
    }
    if (seen.has(obj.id)) {
      throw new Error(`${path}:${i + 1}: duplicate record id ${obj.id}`)
    }
    seen.add(obj.id)
    records.push({
      id: obj.id,
      imagePath: obj.image,
      labelPath: obj.label ?? null,
      weather: obj.weather ?? 'unknown',
      time: obj.time ?? 'unknown',
      roadType: obj.road_type ?? 'unknown',
      split: obj.split,
    })
  }
  return { classNames: header.classes, records, baseDir: dirname(path) }
}

export function resolvePath(manifest: Manifest, recordPath: string): string {
  return isAbsolute(recordPath) ? recordPath : join(manifest.baseDir, recordPath)
}
