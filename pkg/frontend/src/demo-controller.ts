#!/usr/bin/env node
/**
 * Demo storm controller over the wire protocol.
 *
 *   demo-controller --connect host:port --role component|federate [--dt 15ms]
 *
 * component: answers init/create/step/get_data requests against a local
 * controller instance until told to stop.
 * federate: joins the federation, then loops: decide, publish the command,
 * request a time advance, consume reflected speed samples.
 */

import { ClientSession, unwrap } from './client'
import { StormController, DEFAULT_THRESHOLD } from './controller'
import { Frame } from './frames'

interface Args {
    host: string
    port: number
    role: 'component' | 'federate'
    dt?: number
}

function parseArgs(argv: string[]): Args {
    const get = (flag: string): string | undefined => {
        const i = argv.indexOf(flag)
        return i >= 0 ? argv[i + 1] : undefined
    }
    const connect = get('--connect')
    if (!connect) throw new Error('usage: demo-controller --connect host:port --role component|federate [--dt 15ms]')
    const [host, portText] = connect.split(':')
    const role = (get('--role') ?? 'component') as Args['role']
    if (role !== 'component' && role !== 'federate') throw new Error(`unknown role ${role}`)
    const dtText = get('--dt')
    return {
        host,
        port: Number(portText),
        role,
        dt: dtText === undefined ? undefined : parseDuration(dtText),
    }
}

function parseDuration(text: string): number {
    const m = /^([0-9.]+)(ms|s)?$/.exec(text.trim())
    if (!m) throw new Error(`cannot parse duration ${text}`)
    const value = Number(m[1])
    const ticks = m[2] === 'ms' ? value : value * 1000
    if (!Number.isInteger(ticks)) throw new Error(`duration ${text} is not whole milliseconds`)
    return ticks
}

const CONTROLLER_SOM = {
    federate: 'controller',
    objects: [{
        class: 'Turbine',
        attributes: [
            { name: 'omega', data_type: 'float64', units: 'p.u.', resolution: '1e-12' },
            { name: 'beta_set', data_type: 'bool', units: 'flag' },
        ],
    }],
    published: ['beta_set'],
    subscribed: ['omega'],
}

async function runComponent(args: Args): Promise<void> {
    const session = await ClientSession.connect({
        host: args.host, port: args.port, role: 'component', name: 'controller',
        sampling: { omega_in: 'step_end' },
    })
    let controller: StormController | null = null
    let threshold = DEFAULT_THRESHOLD
    for (;;) {
        const frame = await session.recv()
        if (frame === null) return
        if (frame.kind !== 'request') continue
        const payload = frame.payload as Record<string, any>
        const respond = (op: string, body: Record<string, unknown>) =>
            session.send({ id: frame.id, kind: 'response', op, payload: body })
        const fail = (category: string, message: string) =>
            session.send({ id: frame.id, kind: 'response', op: 'error', payload: { category, message } })
        try {
            switch (frame.op) {
                case 'init':
                    controller = new StormController(payload.step_size)
                    respond('init', {
                        meta: {
                            models: [{
                                model_name: 'Controller',
                                params: ['threshold'],
                                attrs: ['omega_in', 'beta_set'],
                            }],
                        },
                    })
                    break
                case 'create': {
                    if (!controller) throw new Error('create before init')
                    if (payload.model !== 'Controller') {
                        fail('UnknownModelError', `unknown model ${payload.model}`)
                        break
                    }
                    threshold = Number(payload.params?.threshold ?? DEFAULT_THRESHOLD)
                    controller = new StormController(controller.stepSize, threshold)
                    respond('create', { entity: { simulator_id: 'controller', entity_index: 0 } })
                    break
                }
                case 'step': {
                    if (!controller) throw new Error('step before init')
                    const omega = payload.inputs?.omega_in
                    const next = controller.step(payload.t, omega === undefined ? undefined : Number(omega))
                    respond('step', { next })
                    break
                }
                case 'get_data': {
                    if (!controller) throw new Error('get_data before init')
                    const data: Record<string, unknown> = {}
                    for (const attr of payload.attrs as string[]) {
                        if (attr === 'beta_set') data[attr] = controller.betaSet
                        else if (attr === 'omega_in') data[attr] = controller.omegaIn
                        else {
                            fail('UnknownAttributeError', `unknown attribute ${attr}`)
                            break
                        }
                    }
                    if (Object.keys(data).length === (payload.attrs as string[]).length) {
                        respond('get_data', { data })
                    }
                    break
                }
                case 'stop':
                    respond('stop', {})
                    session.close()
                    return
                default:
                    fail('protocol', `unknown op ${frame.op}`)
            }
        } catch (e) {
            fail('error', String(e))
        }
    }
}

interface Sample {
    sem: number
    seq: number
    value: number
}

async function runFederate(args: Args): Promise<void> {
    const session = await ClientSession.connect({
        host: args.host, port: args.port, role: 'federate', name: 'controller',
    })
    const samples: Sample[] = []
    let seq = 0
    const onCallback = (frame: Frame) => {
        if (frame.op === 'reflect') {
            const p = frame.payload as { time: number; value: number }
            samples.push({ sem: p.time + peerOffset, seq: seq++, value: Number(p.value) })
        } else if (frame.op === 'grant') {
            grantedTo = Number((frame.payload as { t: number }).t)
        }
    }
    let grantedTo = 0
    let peerOffset = 0

    const joinReply = unwrap(await session.request('join', { som: CONTROLLER_SOM }, onCallback)) as {
        horizon: number
        controller_dt: number
        profile: string
        parallel: boolean
        peer_offset: number
    }
    const dt = Number(joinReply.controller_dt)
    const horizon = Number(joinReply.horizon)
    const profile = joinReply.profile
    const parallel = Boolean(joinReply.parallel)
    peerOffset = Number(joinReply.peer_offset)
    if (args.dt !== undefined && args.dt !== dt) {
        process.stderr.write(`note: federation runs this controller at ${dt}ms, not ${args.dt}ms\n`)
    }

    const sampleAt = (tau: number): number | undefined => {
        let best: Sample | undefined
        for (const s of samples) {
            const ok = parallel ? s.sem < tau : s.sem <= tau
            if (ok && (best === undefined || s.sem > best.sem || (s.sem === best.sem && s.seq > best.seq))) {
                best = s
            }
        }
        return best?.value
    }

    const tarAndWait = async (t: number): Promise<number> => {
        unwrap(await session.request('tar', { t }, onCallback))
        for (;;) {
            if (grantedTo >= t) return grantedTo
            const frame = await session.recv()
            if (frame === null) throw new Error('connection closed awaiting grant')
            if (frame.kind === 'callback') onCallback(frame)
        }
    }

    let latched = false
    let g = 0
    for (;;) {
        if (profile === 'uncompensated') {
            if (g > 0) {
                const value = sampleAt(g)
                if (value !== undefined && value >= DEFAULT_THRESHOLD) latched = true
            }
            unwrap(await session.request('update', { attr: 'beta_set', value: latched, send_time: g }, onCallback))
            if (g + dt <= horizon) {
                g = await tarAndWait(g + dt)
            } else {
                unwrap(await session.request('resign', {}, onCallback))
                session.close()
                return
            }
        } else {
            // zero-lookahead and compensated profiles: decide for g + dt.
            if (g + dt <= horizon) {
                const value = sampleAt(g + dt)
                if (value !== undefined && value >= DEFAULT_THRESHOLD) latched = true
                unwrap(await session.request('update', { attr: 'beta_set', value: latched, send_time: g }, onCallback))
                g = await tarAndWait(g + dt)
            } else {
                unwrap(await session.request('resign', {}, onCallback))
                session.close()
                return
            }
        }
    }
}

async function main(): Promise<void> {
    const args = parseArgs(process.argv.slice(2))
    if (args.role === 'component') await runComponent(args)
    else await runFederate(args)
}

main().catch((e) => {
    process.stderr.write(`demo-controller: ${e}\n`)
    process.exit(1)
})
