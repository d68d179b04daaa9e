import { readFileSync } from 'node:fs'
import { PNG } from 'pngjs'

export const IMAGENET_MEAN = [0.485, 0.456, 0.406]
export const IMAGENET_STD = [0.229, 0.224, 0.225]
export const INPUT_SIZE = 224

export interface RgbImage {
  width: number
  height: number
  // HWC float32 in [0, 1]
  data: Float32Array
}

export function readPng(path: string): RgbImage {
  let png: PNG
  try {
    png = PNG.sync.read(readFileSync(path))
  } catch (err) {
    throw new Error(`cannot read image ${path}: ${(err as Error).message}`)
  }
  const { width, height } = png
  const data = new Float32Array(width * height * 3)
  for (let i = 0, j = 0; i < width * height; i++, j += 4) {
    data[3 * i] = png.data[j] / 255
    data[3 * i + 1] = png.data[j + 1] / 255
    data[3 * i + 2] = png.data[j + 2] / 255
  }
  return { width, height, data }
}

/** Bilinear resample with half-pixel centers; coordinates clamp at the edges. */
export function resizeBilinear(img: RgbImage, outH: number, outW: number): RgbImage {
  const { width: w, height: h, data: src } = img
  if (h === outH && w === outW) {
    return { width: w, height: h, data: src.slice() }
  }
  const out = new Float32Array(outH * outW * 3)
  for (let oy = 0; oy < outH; oy++) {
    const sy = (oy + 0.5) * (h / outH) - 0.5
    const y0 = Math.floor(sy)
    const wy = sy - y0
    const y0c = Math.min(Math.max(y0, 0), h - 1)
    const y1c = Math.min(Math.max(y0 + 1, 0), h - 1)
    for (let ox = 0; ox < outW; ox++) {
      const sx = (ox + 0.5) * (w / outW) - 0.5
      const x0 = Math.floor(sx)
      const wx = sx - x0
      const x0c = Math.min(Math.max(x0, 0), w - 1)
      const x1c = Math.min(Math.max(x0 + 1, 0), w - 1)
      for (let c = 0; c < 3; c++) {
        const tl = src[3 * (y0c * w + x0c) + c]
        const tr = src[3 * (y0c * w + x1c) + c]
        const bl = src[3 * (y1c * w + x0c) + c]
        const br = src[3 * (y1c * w + x1c) + c]
        const top = tl * (1 - wx) + tr * wx
        const bot = bl * (1 - wx) + br * wx
        out[3 * (oy * outW + ox) + c] = Math.fround(top * (1 - wy) + bot * wy)
      }
    }
  }
  return { width: outW, height: outH, data: out }
}

/** Resize to the network input size and standardize per channel. Returns HWC. */
export function preprocess(img: RgbImage): Float32Array {
  const resized = resizeBilinear(img, INPUT_SIZE, INPUT_SIZE)
  const out = resized.data
  for (let i = 0; i < out.length; i += 3) {
    out[i] = (out[i] - IMAGENET_MEAN[0]) / IMAGENET_STD[0]
    out[i + 1] = (out[i + 1] - IMAGENET_MEAN[1]) / IMAGENET_STD[1]
    out[i + 2] = (out[i + 2] - IMAGENET_MEAN[2]) / IMAGENET_STD[2]
  }
  return out
}
