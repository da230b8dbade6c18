/**
 * Deterministic model ops. Everything here is pure arithmetic so the
 * pipeline's integration tests need no ML runtime: embeddings are
 * histogram + moment summaries, features are multi-scale pooled
 * intensity/gradient statistics, translation mirrors the pipeline's
 * analytic reference backend, segmentation thresholds luminance.
 */

import { Tensor, elementCount } from './tmf.js'

/** Channel planes normalized into [0, 1] as f64, from (C,H,W) or (H,W). */
function toPlanes(t: Tensor): { planes: Float64Array[]; h: number; w: number } {
  let dims = t.dims
  if (dims.length === 2) dims = [1, dims[0], dims[1]]
  if (dims.length !== 3) throw new Error(`expected (C,H,W) or (H,W), got [${t.dims}]`)
  const [c, h, w] = dims
  if (elementCount(dims) !== t.data.length) throw new Error('dims/data mismatch')
  const scale = t.dtype === 'u8' ? 1 / 255 : t.dtype === 'u16' ? 1 / 65535 : 1
  const planes: Float64Array[] = []
  for (let ch = 0; ch < c; ch++) {
    const plane = new Float64Array(h * w)
    const base = ch * h * w
    for (let i = 0; i < h * w; i++) plane[i] = t.data[base + i] * scale
    planes.push(plane)
  }
  return { planes, h, w }
}

function grayscale(planes: Float64Array[]): Float64Array {
  if (planes.length === 1) return planes[0]
  const out = new Float64Array(planes[0].length)
  for (let i = 0; i < out.length; i++) {
    let s = 0
    for (const p of planes) s += p[i]
    out[i] = s / planes.length
  }
  return out
}

function meanStd(v: Float64Array): [number, number] {
  let s = 0
  for (const x of v) s += x
  const mean = s / v.length
  let q = 0
  for (const x of v) q += (x - mean) * (x - mean)
  return [mean, Math.sqrt(q / v.length)]
}

function histogram16(v: Float64Array): number[] {
  const bins = new Array(16).fill(0)
  for (const x of v) {
    let b = Math.floor(x * 16)
    if (b > 15) b = 15
    if (b < 0) b = 0
    bins[b] += 1
  }
  return bins.map((b) => b / v.length)
}

/** Average-pool a (h, w) plane down to (size, size). */
function pool(plane: Float64Array, h: number, w: number, size: number): number[] {
  const out: number[] = []
  for (let by = 0; by < size; by++) {
    const y0 = Math.floor((by * h) / size)
    const y1 = Math.max(Math.floor(((by + 1) * h) / size), y0 + 1)
    for (let bx = 0; bx < size; bx++) {
      const x0 = Math.floor((bx * w) / size)
      const x1 = Math.max(Math.floor(((bx + 1) * w) / size), x0 + 1)
      let s = 0
      for (let y = y0; y < Math.min(y1, h); y++) {
        for (let x = x0; x < Math.min(x1, w); x++) s += plane[y * w + x]
      }
      out.push(s / Math.max((Math.min(y1, h) - y0) * (Math.min(x1, w) - x0), 1))
    }
  }
  return out
}

function gradients(plane: Float64Array, h: number, w: number): [Float64Array, Float64Array] {
  const gx = new Float64Array(h * w)
  const gy = new Float64Array(h * w)
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const i = y * w + x
      gx[i] = x + 1 < w ? Math.abs(plane[i + 1] - plane[i]) : 0
      gy[i] = y + 1 < h ? Math.abs(plane[i + w] - plane[i]) : 0
    }
  }
  return [gx, gy]
}

/**
 * embed: per-channel 16-bin histogram plus mean/std, single channels
 * triplicated so the dimension is a fixed 54 + 10 reserved = 64.
 * Norm is always positive (histogram mass sums to 1 per channel).
 */
export function embed(t: Tensor, _params: Record<string, unknown>): Tensor {
  const { planes } = toPlanes(t)
  const chans =
    planes.length >= 3 ? planes.slice(0, 3) : [planes[0], planes[0], planes[0]]
  const out: number[] = []
  for (const p of chans) {
    out.push(...histogram16(p))
    const [m, s] = meanStd(p)
    out.push(m, s)
  }
  while (out.length < 64) out.push(0)
  return { dtype: 'f32', dims: [64], data: Float32Array.from(out) }
}

/**
 * features: multi-scale pooled statistics of the (grayscale) frame.
 * level 1: 4x4 pooled intensities + histogram + global stats (d=36)
 * level 2: + 8x8 pooled intensities (d=100)
 * level 3: + 8x8 pooled |gradient| maps (d=228, default)
 * params.triplicate is accepted for single-channel inputs (a no-op for
 * channel-averaged statistics, kept for interface parity).
 */
export function features(t: Tensor, params: Record<string, unknown>): Tensor {
  const level = Number(params.level ?? 3)
  if (![1, 2, 3].includes(level)) throw new Error(`features: bad level ${params.level}`)
  const { planes, h, w } = toPlanes(t)
  const g = grayscale(planes)
  const out: number[] = []
  out.push(...pool(g, h, w, 4))
  out.push(...histogram16(g))
  const [m, s] = meanStd(g)
  let lo = Infinity
  let hi = -Infinity
  for (const x of g) {
    if (x < lo) lo = x
    if (x > hi) hi = x
  }
  out.push(m, s, lo, hi)
  if (level >= 2) out.push(...pool(g, h, w, 8))
  if (level >= 3) {
    const [gx, gy] = gradients(g, h, w)
    out.push(...pool(gx, h, w, 8))
    out.push(...pool(gy, h, w, 8))
  }
  return { dtype: 'f32', dims: [out.length], data: Float32Array.from(out) }
}

/**
 * translate: the analytic reference mapping over the five-channel input
 * [R, G, B, background, SDF]: pred = bg + sdf*(luma - bg) with BT.601
 * luma, minus bg again in residual mode. Computed in f64 and rounded to
 * f32 exactly like the pipeline's in-process stub, so outputs match it
 * bit for bit.
 */
export function translate(t: Tensor, params: Record<string, unknown>): Tensor {
  const mode = String(params.mode ?? 'residual')
  if (mode !== 'residual' && mode !== 'absolute') throw new Error(`bad mode ${mode}`)
  if (t.dims.length !== 3 || t.dims[0] !== 5 || t.dtype !== 'f32') {
    throw new Error(`translate expects (5,H,W) f32, got [${t.dims}] ${t.dtype}`)
  }
  const [, h, w] = t.dims
  const n = h * w
  const data = t.data as Float32Array
  const out = new Float32Array(n)
  for (let i = 0; i < n; i++) {
    const r = data[i]
    const g = data[n + i]
    const b = data[2 * n + i]
    const bg = data[3 * n + i]
    const s = data[4 * n + i]
    const luma = 0.299 * r + 0.587 * g + 0.114 * b
    let pred = bg + s * (luma - bg)
    if (mode === 'residual') pred = pred - bg
    out[i] = Math.fround(pred)
  }
  return { dtype: 'f32', dims: [h, w], data: out }
}

/** segment: luminance threshold producing a {0,255} u8 mask. */
export function segment(t: Tensor, params: Record<string, unknown>): Tensor {
  const threshold = Number(params.threshold ?? 0.5)
  const { planes, h, w } = toPlanes(t)
  const g =
    planes.length >= 3
      ? (() => {
          const out = new Float64Array(h * w)
          for (let i = 0; i < h * w; i++) {
            out[i] = 0.299 * planes[0][i] + 0.587 * planes[1][i] + 0.114 * planes[2][i]
          }
          return out
        })()
      : planes[0]
  const mask = new Uint8Array(h * w)
  for (let i = 0; i < h * w; i++) mask[i] = g[i] > threshold ? 255 : 0
  return { dtype: 'u8', dims: [h, w], data: mask }
}

export type OpName = 'embed' | 'features' | 'translate' | 'segment'

export const OPS: Record<OpName, (t: Tensor, params: Record<string, unknown>) => Tensor> = {
  embed,
  features,
  translate,
  segment,
}
