import { accessSync, constants, mkdirSync, readFileSync } from 'node:fs'
import { join } from 'node:path'

import { preprocess, readPng, INPUT_SIZE } from './image.js'
import { tensorFilename, writeTensorFile, SCOPES, type Scope } from './ftns.js'
import { runTrunk, DEFAULT_SEED, EXPORT_LAYERS } from './trunk.js'

export interface ListEntry {
  imageId: string
  scope: Scope
  path: string
}

export interface ExportJob {
  entries: ListEntry[]
  layers: number[]
  outDir: string
  seed?: number
}

/** Parse a list file of tab-separated `<image_id>\t<scope>\t<path>` lines. */
export function parseListFile(path: string): ListEntry[] {
  let text: string
  try {
    text = readFileSync(path, 'utf8')
  } catch (err) {
    throw new Error(`cannot read list file ${path}: ${(err as Error).message}`)
  }
  const entries: ListEntry[] = []
  const lines = text.split('\n')
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trimEnd()
    if (!line) continue
    const parts = line.split('\t')
    if (parts.length !== 3) {
      throw new Error(`${path}:${i + 1}: expected <image_id>\\t<scope>\\t<path>, got ${parts.length} field(s)`)
    }
    const [imageId, scope, imgPath] = parts
    if (!imageId || /[/\\]/.test(imageId)) {
      throw new Error(`${path}:${i + 1}: bad image id '${imageId}'`)
    }
    if (!SCOPES.includes(scope as Scope)) {
      throw new Error(`${path}:${i + 1}: scope must be one of ${SCOPES.join(', ')}, got '${scope}'`)
    }
    if (!imgPath) {
      throw new Error(`${path}:${i + 1}: empty image path`)
    }
    entries.push({ imageId, scope: scope as Scope, path: imgPath })
  }
  return entries
}

function validate(job: ExportJob): void {
  if (job.layers.length === 0) throw new Error('no layers requested')
  for (const layer of job.layers) {
    if (!EXPORT_LAYERS.includes(layer)) {
      throw new Error(`layer index invalid: ${layer} (valid: ${EXPORT_LAYERS.join(', ')})`)
    }
  }
  if (job.entries.length === 0) throw new Error('image list is empty')
  // fail before any inference instead of part-way through the batch
  for (const entry of job.entries) {
    try {
      accessSync(entry.path, constants.R_OK)
    } catch {
      throw new Error(`cannot read image ${entry.path}`)
    }
  }
}

/**
 * Run every listed image through the trunk once and write one file per
 * (image, scope, layer). Returns the written paths in write order.
 */
export function exportFeatures(job: ExportJob): string[] {
  validate(job)
  mkdirSync(job.outDir, { recursive: true })
  const layers = [...job.layers].sort((a, b) => a - b)
  const written: string[] = []
  for (const entry of job.entries) {
    const input = preprocess(readPng(entry.path))
    const maps = runTrunk(input, INPUT_SIZE, layers, job.seed ?? DEFAULT_SEED)
    for (const layer of layers) {
      const act = maps.get(layer)!
      const dest = join(job.outDir, tensorFilename(entry.imageId, entry.scope, layer))
      writeTensorFile(dest, act.shape, act.data)
      written.push(dest)
    }
  }
  return written
}
