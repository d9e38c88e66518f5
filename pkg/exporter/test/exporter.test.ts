import { execFileSync } from 'child_process'
import { mkdtempSync, readFileSync, writeFileSync, mkdirSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { describe, expect, it } from 'vitest'

import { readEdse } from '../src/edse.js'
import { extractRoi, resizeBilinear } from '../src/image-ops.js'
import { parseArgs } from '../src/cli.js'
import { exportEmbeddings } from '../src/exporter.js'
import { loadManifest } from '../src/manifest.js'
import { RgbImage, readPpm, writePpm } from '../src/ppm.js'

const FIXTURE_ENCODER = join(__dirname, 'fixtures', 'test-encoder.mjs')
const WIDE_ENCODER = join(__dirname, 'fixtures', 'wide-encoder.mjs')

function patternImage(height: number, width: number, offset: number): RgbImage {
  const data = new Float64Array(height * width * 3)
  for (let i = 0; i < data.length; i++) {
    data[i] = (i * 7 + offset * 31) % 256
  }
  return { height, width, data }
}

/** Three PPM images plus an eds-manifest/1 file; returns the manifest path. */
function makeFixtureCorpus(root: string): string {
  mkdirSync(join(root, 'images'), { recursive: true })
  const records: string[] = []
  for (let i = 0; i < 3; i++) {
    const id = `img${String(i).padStart(5, '0')}`
    writePpm(join(root, 'images', `${id}.ppm`), patternImage(20, 16, i))
    records.push(
      JSON.stringify({
        id,
        image: `images/${id}.ppm`,
        weather: 'sunny',
        time: 'day',
        road_type: 'urban',
        split: 'unlabeled',
      }),
    )
  }
  const header = JSON.stringify({
    format: 'eds-manifest/1',
    classes: ['background', 'asphalt'],
  })
  const manifestPath = join(root, 'manifest.jsonl')
  writeFileSync(manifestPath, [header, ...records].join('\n') + '\n')
  return manifestPath
}

function tempRoot(): string {
  return mkdtempSync(join(tmpdir(), 'eds-export-'))
}

/** Read an EDSE file with the primary Python package and report its contents. */
function primaryRead(path: string): { count: number; dim: number; ids: string[]; hex: string } {
  const script = [
    'import sys, json',
    'from eds.embed import read_embeddings',
    's = read_embeddings(sys.argv[1])',
    'print(json.dumps({"count": len(s), "dim": s.dim, "ids": list(s.ids),',
    '                  "hex": s.values.astype("<f4").tobytes().hex()}))',
  ].join('\n')
  const out = execFileSync('python3', ['-c', script, path], { encoding: 'utf-8' })
  return JSON.parse(out)
}

describe('manifest and rasters', () => {
  it('loads the fixture manifest in order', () => {
    const root = tempRoot()
    const manifest = loadManifest(makeFixtureCorpus(root))
    expect(manifest.records.map(r => r.id)).toEqual(['img00000', 'img00001', 'img00002'])
    expect(manifest.classNames).toHaveLength(2)
  })

  it('round-trips ppm files', () => {
    const root = tempRoot()
    const img = patternImage(6, 5, 1)
    const path = join(root, 'x.ppm')
    writePpm(path, img)
    const back = readPpm(path)
    expect(back.height).toBe(6)
    expect(back.width).toBe(5)
    expect(Array.from(back.data)).toEqual(Array.from(img.data))
  })

  it('rejects bad manifest headers', () => {
    const root = tempRoot()
    const path = join(root, 'bad.jsonl')
    writeFileSync(path, '{"format":"nope"}\n')
    expect(() => loadManifest(path)).toThrow(/format/)
  })
})

describe('image ops', () => {
  it('keeps the bottom fraction with the ceiling boundary', () => {
    const img = patternImage(5, 2, 0)
    const roi = extractRoi(img, 0.5)
    expect(roi.height).toBe(2) // rows 3..4 of 5
    expect(Array.from(roi.data)).toEqual(Array.from(img.data.slice(3 * 2 * 3)))
  })

  it('keeps 60 of 100 rows at the default fraction', () => {
    const img = patternImage(100, 2, 0)
    expect(extractRoi(img, 0.6).height).toBe(60)
  })

  it('rejects empty crops', () => {
    expect(() => extractRoi(patternImage(5, 2, 0), 0.1)).toThrow(/no rows/)
  })

  it('resize to the same size is identity', () => {
    const img = patternImage(8, 8, 2)
    const out = resizeBilinear(img, 8, 8)
    for (let i = 0; i < img.data.length; i++) {
      expect(out.data[i]).toBeCloseTo(img.data[i], 9)
    }
  })

  it('resize of a constant image stays constant', () => {
    const img: RgbImage = { height: 7, width: 5, data: new Float64Array(7 * 5 * 3).fill(42) }
    const out = resizeBilinear(img, 13, 4)
    for (const v of out.data) expect(v).toBeCloseTo(42, 9)
  })
})

describe('export round-trip through the primary reader', () => {
  it('3-image fixture: count, dim, ids and payload match bit-exactly', async () => {
    const root = tempRoot()
    const manifestPath = makeFixtureCorpus(root)
    const out = join(root, 'fixture.edse')
    const result = await exportEmbeddings({
      manifestPath,
      outputPath: out,
      encoder: 'grid:2',
      bottomFraction: 0.6,
      pooling: 'none',
      batchSize: 2,
      skipUnreadable: false,
    })
    expect(result.count).toBe(3)
    expect(result.dim).toBe(12)

    const local = readEdse(out)
    const primary = primaryRead(out)
    expect(primary.count).toBe(3)
    expect(primary.dim).toBe(12)
    expect(primary.ids).toEqual(local.ids)

    const written = Buffer.from(new Uint8Array(local.values.buffer)).toString('hex')
    expect(primary.hex).toBe(written)
  })

  it('module encoder with global-average pooling gives dim = channels', async () => {
    const root = tempRoot()
    const manifestPath = makeFixtureCorpus(root)
    const out = join(root, 'pooled.edse')
    const result = await exportEmbeddings({
      manifestPath,
      outputPath: out,
      encoder: `module:${FIXTURE_ENCODER}`,
      bottomFraction: 0.6,
      pooling: 'global-average',
      batchSize: 2,
      skipUnreadable: false,
    })
    expect(result.count).toBe(3)
    expect(result.dim).toBe(512)
    const primary = primaryRead(out)
    expect(primary.count).toBe(3)
    expect(primary.dim).toBe(512)
  })

  it('export is deterministic', async () => {
    const root = tempRoot()
    const manifestPath = makeFixtureCorpus(root)
    const config = {
      manifestPath,
      outputPath: join(root, 'a.edse'),
      encoder: 'grid:4',
      bottomFraction: 0.6,
      pooling: 'none' as const,
      batchSize: 2,
      skipUnreadable: false,
    }
    await exportEmbeddings(config)
    await exportEmbeddings({ ...config, outputPath: join(root, 'b.edse') })
    expect(readFileSync(join(root, 'a.edse'))).toEqual(readFileSync(join(root, 'b.edse')))
  })

  it('warns above the tractability threshold without pooling', async () => {
    const root = tempRoot()
    const manifestPath = makeFixtureCorpus(root)
    const result = await exportEmbeddings({
      manifestPath,
      outputPath: join(root, 'wide.edse'),
      encoder: `module:${WIDE_ENCODER}`,
      bottomFraction: 0.6,
      pooling: 'none',
      batchSize: 3,
      skipUnreadable: false,
    })
    expect(result.dim).toBe(16 * 16 * 512)
    expect(result.warnings.length).toBe(1)
    expect(result.warnings[0]).toMatch(/pooling/)
  })

  it('skips unreadable images only when asked', async () => {
    const root = tempRoot()
    const manifestPath = makeFixtureCorpus(root)
    writeFileSync(join(root, 'images', 'img00001.ppm'), 'JUNK')
    const config = {
      manifestPath,
      outputPath: join(root, 'skip.edse'),
      encoder: 'grid:2',
      bottomFraction: 0.6,
      pooling: 'none' as const,
      batchSize: 2,
      skipUnreadable: false,
    }
    await expect(exportEmbeddings(config)).rejects.toThrow(/P6/)
    const result = await exportEmbeddings({ ...config, skipUnreadable: true })
    expect(result.count).toBe(2)
    expect(result.skipped).toEqual(['img00001'])
    expect(readEdse(join(root, 'skip.edse')).ids).toEqual(['img00000', 'img00002'])
  })

  it('rejects unknown encoder identifiers', async () => {
    const root = tempRoot()
    const manifestPath = makeFixtureCorpus(root)
    await expect(
      exportEmbeddings({
        manifestPath,
        outputPath: join(root, 'x.edse'),
        encoder: 'resnet50',
        bottomFraction: 0.6,
        pooling: 'none',
        batchSize: 1,
        skipUnreadable: false,
      }),
    ).rejects.toThrow(/identifier/)
  })
})

describe('cli parsing', () => {
  it('parses required flags and defaults', () => {
    const config = parseArgs([
      '--manifest', 'm.jsonl', '--out', 'o.edse', '--encoder', 'grid:8',
    ])
    expect(config.manifestPath).toBe('m.jsonl')
    expect(config.pooling).toBe('global-average')
    expect(config.batchSize).toBe(16)
  })

  it('rejects missing required flags and unknown pooling', () => {
    expect(() => parseArgs(['--manifest', 'm'])).toThrow(/required/)
    expect(() => parseArgs(['--pooling', 'max'])).toThrow(/pooling/)
    expect(() => parseArgs(['--frobnicate'])).toThrow(/unknown flag/)
  })
})
