/**
 * Line-JSON request loop over stdin/stdout.
 *
 * The first line out is the handshake {"ready": true, "ops": [...]}.
 * Every request line gets exactly one response line with the same id;
 * malformed lines get an error response with id -1. Nothing but JSON
 * ever goes to stdout (diagnostics go to stderr), and per-request
 * failures answer {"ok": false} instead of killing the process.
 */

import { createInterface } from 'readline'
import { dirname, join } from 'path'
import type { Readable, Writable } from 'stream'

import { OPS, OpName } from './ops.js'
import { readTensor, writeTensor } from './tmf.js'

export interface ServeOptions {
  ops?: OpName[]
}

interface Request {
  id: number
  op: string
  input: string
  params?: Record<string, unknown>
}

export async function serve(
  stdin: Readable,
  stdout: Writable,
  options: ServeOptions = {},
): Promise<void> {
  const advertised = options.ops ?? (Object.keys(OPS) as OpName[])
  const send = (msg: unknown) => stdout.write(JSON.stringify(msg) + '\n')

  send({ ready: true, ops: advertised })

  const rl = createInterface({ input: stdin })
  for await (const line of rl) {
    if (line.trim() === '') continue
    let req: Request
    try {
      req = JSON.parse(line)
      if (typeof req !== 'object' || req === null || typeof req.id !== 'number') {
        throw new Error('request must be an object with a numeric id')
      }
    } catch (e) {
      send({ id: -1, ok: false, error: `malformed request: ${message(e)}` })
      continue
    }
    try {
      if (!advertised.includes(req.op as OpName)) {
        throw new Error(`op ${JSON.stringify(req.op)} not advertised`)
      }
      const input = readTensor(req.input)
      const result = OPS[req.op as OpName](input, req.params ?? {})
      const outPath = join(dirname(req.input), `out_${req.id}.tmf`)
      writeTensor(result, outPath)
      send({ id: req.id, ok: true, output: outPath })
    } catch (e) {
      send({ id: req.id, ok: false, error: message(e) })
    }
  }
}

function message(e: unknown): string {
  return e instanceof Error ? e.message : String(e)
}
