/**
 * Client session for the co-simulation wire protocol.
 *
 * One TCP connection per simulated component; requests are strictly
 * sequential per session.  In the component role the orchestrator drives us
 * (init/create/step/get_data requests flow in, we answer); in the federate
 * role we drive ourselves (join/update/tar/resign requests flow out, grant
 * and reflect callbacks come back between our requests).
 */

import * as net from 'net'
import { decodeFrame, encodeFrame, Frame, LineSplitter } from './frames'

export const PROTOCOL_VERSION = '1'

export type Role = 'component' | 'federate'

export interface SessionOptions {
    host: string
    port: number
    role: Role
    name: string
    /** component role: per-input sampling points announced in the hello */
    sampling?: Record<string, string>
}

export class ClientSession {
    private socket!: net.Socket
    private splitter = new LineSplitter()
    private queue: Frame[] = []
    private waiters: Array<(f: Frame | null) => void> = []
    private nextId = 1
    readonly role: Role
    readonly name: string

    private constructor(private options: SessionOptions) {
        this.role = options.role
        this.name = options.name
    }

    static async connect(options: SessionOptions): Promise<ClientSession> {
        const session = new ClientSession(options)
        await session.open()
        await session.handshake()
        return session
    }

    private open(): Promise<void> {
        return new Promise((resolve, reject) => {
            this.socket = net.createConnection(
                { host: this.options.host, port: this.options.port }, resolve)
            this.socket.setEncoding('utf-8')
            this.socket.on('error', reject)
            this.socket.on('data', (chunk: string) => {
                for (const line of this.splitter.push(chunk)) {
                    let frame: Frame
                    try {
                        frame = decodeFrame(line)
                    } catch {
                        continue // a malformed server line; nothing to answer
                    }
                    const waiter = this.waiters.shift()
                    if (waiter) waiter(frame)
                    else this.queue.push(frame)
                }
            })
            this.socket.on('close', () => {
                let waiter
                while ((waiter = this.waiters.shift())) waiter(null)
            })
        })
    }

    private async handshake(): Promise<void> {
        const reply = await this.request('hello', {
            version: PROTOCOL_VERSION,
            role: this.options.role,
            name: this.options.name,
            sampling: this.options.sampling ?? {},
        })
        if (reply.op === 'error') {
            throw new Error(`handshake rejected: ${JSON.stringify(reply.payload)}`)
        }
    }

    send(frame: Frame): void {
        this.socket.write(encodeFrame(frame))
    }

    recv(): Promise<Frame | null> {
        const queued = this.queue.shift()
        if (queued !== undefined) return Promise.resolve(queued)
        return new Promise((resolve) => this.waiters.push(resolve))
    }

    /** Send a request and wait for its response, surfacing callbacks. */
    async request(op: string, payload: Record<string, unknown>,
        onCallback?: (f: Frame) => void): Promise<Frame> {
        const id = this.nextId++
        this.send({ id, kind: 'request', op, payload })
        for (;;) {
            const frame = await this.recv()
            if (frame === null) throw new Error(`connection closed awaiting ${op}`)
            if (frame.kind === 'callback') {
                if (onCallback) onCallback(frame)
                continue
            }
            if (frame.kind === 'response' && frame.id === id) return frame
        }
    }

    close(): void {
        this.socket.end()
    }
}

export function unwrap(frame: Frame): Record<string, unknown> {
    if (frame.op === 'error') {
        const payload = frame.payload as { category?: string; message?: string }
        throw new Error(`${payload.category ?? 'error'}: ${payload.message ?? ''}`)
    }
    return frame.payload
}
