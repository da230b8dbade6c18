/**
 * TMF1 tensor files: the cross-process format the pipeline exchanges with
 * its sidecars. Layout: magic "TMF1", dtype byte (1=f32, 2=u8, 3=u16),
 * ndim byte, ndim x u32 little-endian dims, then the little-endian
 * row-major payload (last dim fastest).
 */

import { readFileSync, writeFileSync } from 'fs'

export type Dtype = 'f32' | 'u8' | 'u16'

export interface Tensor {
  dtype: Dtype
  dims: number[]
  data: Float32Array | Uint8Array | Uint16Array
}

const MAGIC = Buffer.from('TMF1', 'ascii')

const DTYPE_CODE: Record<Dtype, number> = { f32: 1, u8: 2, u16: 3 }
const CODE_DTYPE: Record<number, Dtype> = { 1: 'f32', 2: 'u8', 3: 'u16' }
const ITEM_SIZE: Record<Dtype, number> = { f32: 4, u8: 1, u16: 2 }

export function elementCount(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1)
}

export function zeros(dtype: Dtype, dims: number[]): Tensor {
  const n = elementCount(dims)
  const data =
    dtype === 'f32' ? new Float32Array(n) : dtype === 'u8' ? new Uint8Array(n) : new Uint16Array(n)
  return { dtype, dims, data }
}

export function writeTensor(t: Tensor, path: string): void {
  const n = elementCount(t.dims)
  if (t.data.length !== n) {
    throw new Error(`tensor data length ${t.data.length} != product(dims) ${n}`)
  }
  const header = Buffer.alloc(6 + 4 * t.dims.length)
  MAGIC.copy(header, 0)
  header.writeUInt8(DTYPE_CODE[t.dtype], 4)
  header.writeUInt8(t.dims.length, 5)
  t.dims.forEach((d, i) => header.writeUInt32LE(d, 6 + 4 * i))
  const payload = Buffer.alloc(n * ITEM_SIZE[t.dtype])
  if (t.dtype === 'f32') {
    const data = t.data as Float32Array
    for (let i = 0; i < n; i++) payload.writeFloatLE(data[i], i * 4)
  } else if (t.dtype === 'u16') {
    const data = t.data as Uint16Array
    for (let i = 0; i < n; i++) payload.writeUInt16LE(data[i], i * 2)
  } else {
    payload.set(t.data as Uint8Array)
  }
  writeFileSync(path, Buffer.concat([header, payload]))
}

export function readTensor(path: string): Tensor {
  const raw = readFileSync(path)
  if (raw.length < 6 || !raw.subarray(0, 4).equals(MAGIC)) {
    throw new Error(`${path}: bad TMF1 magic`)
  }
  const code = raw.readUInt8(4)
  const dtype = CODE_DTYPE[code]
  if (!dtype) throw new Error(`${path}: unknown dtype code ${code}`)
  const ndim = raw.readUInt8(5)
  const headerEnd = 6 + 4 * ndim
  if (raw.length < headerEnd) throw new Error(`${path}: truncated header`)
  const dims: number[] = []
  for (let i = 0; i < ndim; i++) dims.push(raw.readUInt32LE(6 + 4 * i))
  const n = elementCount(dims)
  const payload = raw.subarray(headerEnd)
  if (payload.length !== n * ITEM_SIZE[dtype]) {
    throw new Error(`${path}: payload ${payload.length} bytes, expected ${n * ITEM_SIZE[dtype]}`)
  }
  const t = zeros(dtype, dims)
  if (dtype === 'f32') {
    const data = t.data as Float32Array
    for (let i = 0; i < n; i++) data[i] = payload.readFloatLE(i * 4)
  } else if (dtype === 'u16') {
    const data = t.data as Uint16Array
    for (let i = 0; i < n; i++) data[i] = payload.readUInt16LE(i * 2)
  } else {
    ;(t.data as Uint8Array).set(payload)
  }
  return t
}
