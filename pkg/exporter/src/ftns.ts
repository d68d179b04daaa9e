import { randomBytes } from 'node:crypto'
import { renameSync, writeFileSync } from 'node:fs'
import { dirname, join } from 'node:path'

/**
 * Interchange tensor container.
 *
 * Layout: magic "FTNS", u8 version (1), u8 dtype (1 = float32), u8 ndim,
 * u8 pad (0), then ndim little-endian u64 dims, then the row-major
 * float32 payload. Everything little-endian.
 */

const MAGIC = 'FTNS'
const VERSION = 1
const DTYPE_F32 = 1

export const SCOPES = ['global', 'local'] as const
export type Scope = (typeof SCOPES)[number]

export function tensorFilename(imageId: string, scope: string, layer: number): string {
  if (!SCOPES.includes(scope as Scope)) {
    throw new Error(`scope must be one of ${SCOPES.join(', ')}, got '${scope}'`)
  }
  return `${imageId}.${scope}.${layer}.ftns`
}

export function encodeTensor(shape: number[], data: Float32Array): Buffer {
  const count = shape.reduce((a, b) => a * b, 1)
  if (count !== data.length) {
    throw new Error(`shape ${JSON.stringify(shape)} holds ${count} values, got ${data.length}`)
  }
  const header = Buffer.alloc(8 + 8 * shape.length)
  header.write(MAGIC, 0, 'ascii')
  header.writeUInt8(VERSION, 4)
  header.writeUInt8(DTYPE_F32, 5)
  header.writeUInt8(shape.length, 6)
  header.writeUInt8(0, 7)
  shape.forEach((dim, i) => header.writeBigUInt64LE(BigInt(dim), 8 + 8 * i))
  const payload = Buffer.alloc(4 * count)
  for (let i = 0; i < count; i++) payload.writeFloatLE(data[i], 4 * i)
  return Buffer.concat([header, payload])
}

export function decodeTensor(buf: Buffer): { shape: number[]; data: Float32Array } {
  if (buf.length < 8) throw new Error(`header needs 8 bytes, got ${buf.length}`)
  if (buf.toString('ascii', 0, 4) !== MAGIC) throw new Error('bad magic')
  if (buf.readUInt8(4) !== VERSION) throw new Error(`unsupported version ${buf.readUInt8(4)}`)
  if (buf.readUInt8(5) !== DTYPE_F32) throw new Error(`unsupported dtype ${buf.readUInt8(5)}`)
  const ndim = buf.readUInt8(6)
  const shape: number[] = []
  let off = 8
  for (let i = 0; i < ndim; i++, off += 8) {
    if (off + 8 > buf.length) throw new Error('truncated dims')
    shape.push(Number(buf.readBigUInt64LE(off)))
  }
  const count = shape.reduce((a, b) => a * b, 1)
  const need = 4 * count
  if (buf.length - off !== need) {
    throw new Error(`payload for dims (${shape.join(', ')}): expected ${need} bytes, got ${buf.length - off}`)
  }
  const data = new Float32Array(count)
  for (let i = 0; i < count; i++) data[i] = buf.readFloatLE(off + 4 * i)
  return { shape, data }
}

/** Write via a same-directory temp file and rename, so readers never see a partial file. */
export function writeTensorFile(path: string, shape: number[], data: Float32Array): void {
  const tmp = join(dirname(path), `.${randomBytes(6).toString('hex')}.tmp`)
  writeFileSync(tmp, encodeTensor(shape, data))
  renameSync(tmp, path)
}
