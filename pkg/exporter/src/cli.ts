#!/usr/bin/env node
import { parseArgs } from 'node:util'

import { exportFeatures, parseListFile } from './export.js'
import { EXPORT_LAYERS } from './trunk.js'

const USAGE = `usage: export-features --images <list-file> --layers 2,4,7,10,13 --out <dir>

list-file lines: <image_id>\\t<scope>\\t<path>   (scope: global or local)`

export function main(argv: string[]): number {
  let values
  try {
    ;({ values } = parseArgs({
      args: argv,
      options: {
        images: { type: 'string' },
        layers: { type: 'string' },
        out: { type: 'string' },
        help: { type: 'boolean', short: 'h' },
      },
    }))
  } catch (err) {
    process.stderr.write(`${(err as Error).message}\n${USAGE}\n`)
    return 2
  }
  if (values.help) {
    process.stdout.write(USAGE + '\n')
    return 0
  }
  if (!values.images || !values.out) {
    process.stderr.write(`--images and --out are required\n${USAGE}\n`)
    return 2
  }
  const layersArg = values.layers ?? EXPORT_LAYERS.join(',')
  const layers = layersArg.split(',').map(s => {
    const n = Number(s.trim())
    if (!Number.isInteger(n)) throw new Error(`layer index invalid: '${s.trim()}'`)
    return n
  })

  const entries = parseListFile(values.images)
  const written = exportFeatures({ entries, layers, outDir: values.out })
  for (const path of written) process.stdout.write(path + '\n')
  process.stdout.write(`exported ${written.length} file(s) -> ${values.out}\n`)
  return 0
}

const entry = process.argv[1] ?? ''
if (entry.endsWith('cli.js') || entry.endsWith('export-features')) {
  try {
    process.exit(main(process.argv.slice(2)))
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`)
    process.exit(1)
  }
}
