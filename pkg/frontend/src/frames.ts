/**
 * Newline-delimited JSON frames: one UTF-8 object per LF-terminated line.
 * Requests and responses correlate by id; callbacks carry id 0.
 */

export type FrameKind = 'request' | 'response' | 'callback'

export interface Frame {
    id: number
    kind: FrameKind
    op: string
    payload: Record<string, unknown>
}

export function encodeFrame(frame: Frame): string {
    return JSON.stringify({
        id: frame.id,
        kind: frame.kind,
        op: frame.op,
        payload: frame.payload,
    }) + '\n'
}

export function decodeFrame(line: string): Frame {
    const doc = JSON.parse(line)
    if (typeof doc !== 'object' || doc === null || Array.isArray(doc)) {
        throw new Error('frame must be a JSON object')
    }
    const { id, kind, op } = doc
    if (!Number.isInteger(id) || id < 0) throw new Error(`bad frame id: ${id}`)
    if (kind !== 'request' && kind !== 'response' && kind !== 'callback') {
        throw new Error(`bad frame kind: ${kind}`)
    }
    if (typeof op !== 'string' || !op) throw new Error('bad frame op')
    return { id, kind, op, payload: doc.payload ?? {} }
}

/** Accumulates socket chunks and yields complete lines. */
export class LineSplitter {
    private buffer = ''

    push(chunk: string): string[] {
        this.buffer += chunk
        const lines = this.buffer.split('\n')
        this.buffer = lines.pop() ?? ''
        return lines.filter((l) => l.length > 0)
    }
}
