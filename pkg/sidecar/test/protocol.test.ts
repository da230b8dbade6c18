import { spawn, ChildProcessWithoutNullStreams } from 'child_process'
import { mkdtempSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { createInterface, Interface } from 'readline'
import { afterEach, describe, expect, it } from 'vitest'

import { readTensor, writeTensor, zeros } from '../dist/tmf.js'

const MAIN = join(__dirname, '..', 'dist', 'main.js')

class Harness {
  proc: ChildProcessWithoutNullStreams
  rl: Interface
  lines: string[] = []
  waiters: ((line: string) => void)[] = []

  constructor(args: string[] = []) {
    this.proc = spawn(process.execPath, [MAIN, ...args], {
      stdio: ['pipe', 'pipe', 'inherit'],
    })
    this.rl = createInterface({ input: this.proc.stdout })
    this.rl.on('line', (line) => {
      const w = this.waiters.shift()
      if (w) w(line)
      else this.lines.push(line)
    })
  }

  next(timeoutMs = 5000): Promise<string> {
    const buffered = this.lines.shift()
    if (buffered !== undefined) return Promise.resolve(buffered)
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error('no line within timeout')), timeoutMs)
      this.waiters.push((line) => {
        clearTimeout(timer)
        resolve(line)
      })
    })
  }

  send(msg: unknown): void {
    this.proc.stdin.write((typeof msg === 'string' ? msg : JSON.stringify(msg)) + '\n')
  }

  kill(): void {
    this.proc.kill()
  }
}

let harness: Harness | undefined
afterEach(() => harness?.kill())

describe('protocol', () => {
  it('handshakes with ready + ops', async () => {
    harness = new Harness()
    const hello = JSON.parse(await harness.next())
    expect(hello.ready).toBe(true)
    expect(hello.ops).toEqual(['embed', 'features', 'translate', 'segment'])
  })

  it('answers each request once, ids matching, across many requests', async () => {
    harness = new Harness()
    await harness.next() // handshake
    const dir = mkdtempSync(join(tmpdir(), 'proto-'))
    const t = zeros('u8', [1, 4, 4])
    t.data.set(Array.from({ length: 16 }, (_, i) => i * 15))
    const input = join(dir, 'in.tmf')
    writeTensor(t, input)
    for (let id = 1; id <= 50; id++) {
      harness.send({ id, op: 'embed', input, params: {} })
      const resp = JSON.parse(await harness.next())
      expect(resp.id).toBe(id)
      expect(resp.ok).toBe(true)
      expect(readTensor(resp.output).dims).toEqual([64])
    }
  })

  it('rejects malformed lines with id -1 and keeps serving', async () => {
    harness = new Harness()
    await harness.next()
    harness.send('{ not json')
    const err = JSON.parse(await harness.next())
    expect(err.id).toBe(-1)
    expect(err.ok).toBe(false)
    // still alive afterwards
    const dir = mkdtempSync(join(tmpdir(), 'proto-'))
    const input = join(dir, 'x.tmf')
    writeTensor(zeros('f32', [1, 2, 2]), input)
    harness.send({ id: 9, op: 'features', input, params: { level: 1 } })
    const ok = JSON.parse(await harness.next())
    expect(ok.id).toBe(9)
    expect(ok.ok).toBe(true)
  })

  it('answers unadvertised ops with ok:false', async () => {
    harness = new Harness(['--ops', 'embed'])
    const hello = JSON.parse(await harness.next())
    expect(hello.ops).toEqual(['embed'])
    const dir = mkdtempSync(join(tmpdir(), 'proto-'))
    const input = join(dir, 'x.tmf')
    writeTensor(zeros('f32', [5, 2, 2]), input)
    harness.send({ id: 3, op: 'translate', input, params: {} })
    const resp = JSON.parse(await harness.next())
    expect(resp).toMatchObject({ id: 3, ok: false })
    expect(resp.error).toMatch(/not advertised/)
  })

  it('reports per-request failures without dying', async () => {
    harness = new Harness()
    await harness.next()
    harness.send({ id: 4, op: 'embed', input: '/nonexistent.tmf', params: {} })
    const resp = JSON.parse(await harness.next())
    expect(resp).toMatchObject({ id: 4, ok: false })
    harness.send({ id: 5, op: 'embed', input: '/nonexistent.tmf', params: {} })
    expect(JSON.parse(await harness.next()).id).toBe(5)
  })

  it('writes nothing but JSON to stdout', async () => {
    harness = new Harness()
    const first = await harness.next()
    expect(() => JSON.parse(first)).not.toThrow()
    harness.send('garbage')
    harness.send({ id: 1, op: 'embed', input: '/nope.tmf' })
    for (let i = 0; i < 2; i++) {
      expect(() => JSON.parse(harness!.lines[i] ?? '{}')).not.toThrow()
      await harness.next()
    }
  })
})
