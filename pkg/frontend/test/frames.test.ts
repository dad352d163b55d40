import { describe, expect, it } from 'vitest'
import { decodeFrame, encodeFrame, LineSplitter } from '../src/frames'
import { StormController } from '../src/controller'

describe('frames', () => {
    it('round-trips a request', () => {
        const frame = { id: 12, kind: 'request' as const, op: 'step', payload: { t: 2400, inputs: { beta_set_in: true } } }
        expect(decodeFrame(encodeFrame(frame).trimEnd())).toEqual(frame)
    })

    it('rejects malformed lines', () => {
        expect(() => decodeFrame('garbage')).toThrow()
        expect(() => decodeFrame('[1,2]')).toThrow()
        expect(() => decodeFrame('{"id":-1,"kind":"request","op":"x"}')).toThrow()
        expect(() => decodeFrame('{"id":1,"kind":"noise","op":"x"}')).toThrow()
    })

    it('splits partial chunks into lines', () => {
        const splitter = new LineSplitter()
        expect(splitter.push('{"a"')).toEqual([])
        expect(splitter.push(':1}\n{"b":2}\n{"c"')).toEqual(['{"a":1}', '{"b":2}'])
        expect(splitter.push(':3}\n')).toEqual(['{"c":3}'])
    })
})

describe('storm controller', () => {
    it('latches above 110 percent and never resets', () => {
        const c = new StormController(15)
        c.step(0, 1.05)
        expect(c.betaSet).toBe(false)
        c.step(15, 1.11)
        expect(c.betaSet).toBe(true)
        c.step(30, 0.9)
        expect(c.betaSet).toBe(true)
    })

    it('rejects out-of-order steps', () => {
        const c = new StormController(15)
        c.step(0)
        expect(() => c.step(30)).toThrow()
    })
})
