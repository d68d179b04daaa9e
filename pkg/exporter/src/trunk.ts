import * as tf from '@tensorflow/tfjs'

// 13-conv trunk: 3x3 kernels, ReLU after every conv, 2x2/2 max-pool after
// convs 2, 4, 7 and 10. Exportable taps are the post-ReLU activations.
const CONV_CHANNELS = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
const POOL_AFTER = new Set([2, 4, 7, 10])

export const EXPORT_LAYERS = [2, 4, 7, 10, 13]
export const DEFAULT_SEED = 2814

export function layerChannels(layer: number): number {
  if (!Number.isInteger(layer) || layer < 1 || layer > CONV_CHANNELS.length) {
    throw new Error(`layer index invalid: ${layer} (valid: ${EXPORT_LAYERS.join(', ')})`)
  }
  return CONV_CHANNELS[layer - 1]
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

// He-uniform fan-in scaling keeps post-ReLU magnitudes stable through depth.
function kernelData(seed: number, conv: number, cin: number, cout: number): Float32Array {
  const rng = mulberry32((seed ^ Math.imul(conv, 0x9e3779b9)) >>> 0)
  const limit = Math.sqrt(6 / (3 * 3 * cin))
  const data = new Float32Array(3 * 3 * cin * cout)
  for (let i = 0; i < data.length; i++) {
    data[i] = Math.fround((rng() * 2 - 1) * limit)
  }
  return data
}

export interface Activation {
  shape: number[]
  data: Float32Array
}

/**
 * One forward pass over a preprocessed HWC input, tapping the requested
 * conv layers. Returns channel-first maps keyed by layer index.
 */
export function runTrunk(
  input: Float32Array,
  size: number,
  taps: number[],
  seed: number = DEFAULT_SEED,
): Map<number, Activation> {
  for (const layer of taps) layerChannels(layer)
  const maxLayer = Math.max(...taps)
  const want = new Set(taps)
  const out = new Map<number, Activation>()

  let x = tf.tensor4d(input, [1, size, size, 3])
  let cin = 3
  for (let conv = 1; conv <= maxLayer; conv++) {
    const cout = CONV_CHANNELS[conv - 1]
    const w = tf.tensor4d(kernelData(seed, conv, cin, cout), [3, 3, cin, cout])
    const a = tf.tidy(() => tf.relu(tf.conv2d(x as tf.Tensor4D, w as tf.Tensor4D, 1, 'same')))
    w.dispose()
    x.dispose()
    x = a
    cin = cout

    if (want.has(conv)) {
      const chw = tf.tidy(() => tf.transpose(tf.squeeze(x, [0]), [2, 0, 1]))
      out.set(conv, {
        shape: chw.shape.slice(),
        data: (chw.dataSync() as Float32Array).slice(),
      })
      chw.dispose()
    }
    if (POOL_AFTER.has(conv) && conv < maxLayer) {
      const p = tf.tidy(() => tf.maxPool(x as tf.Tensor4D, 2, 2, 'valid'))
      x.dispose()
      x = p
    }
  }
  x.dispose()
  return out
}
