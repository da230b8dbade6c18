#!/usr/bin/env node
/**
 * Sidecar entry point. All ops run in deterministic mock mode (pure
 * arithmetic, no model weights), which is what pipeline integration
 * tests want; --ops narrows the advertised op list.
 */

import { serve } from './protocol.js'
import type { OpName } from './ops.js'

function parseArgs(argv: string[]): { ops?: OpName[] } {
  const out: { ops?: OpName[] } = {}
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i]
    if (a === '--ops') {
      out.ops = argv[++i].split(',') as OpName[]
    } else if (a === '--mode') {
      const mode = argv[++i]
      if (mode !== 'mock') {
        process.stderr.write(`unsupported mode ${mode}; only 'mock' exists\n`)
        process.exit(2)
      }
    } else {
      process.stderr.write(`unknown argument ${a}\n`)
      process.exit(2)
    }
  }
  return out
}

const opts = parseArgs(process.argv.slice(2))
serve(process.stdin, process.stdout, opts).catch((e) => {
  process.stderr.write(`fatal: ${e}\n`)
  process.exit(1)
})
