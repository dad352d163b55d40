/**
 * The storm controller: latches its enable output once the rotor speed
 * input reaches 110 % of rated.  Once true it never resets.
 */

export const DEFAULT_THRESHOLD = 1.10

export class StormController {
    betaSet = false
    omegaIn = 0.0
    clock = 0

    constructor(readonly stepSize: number, readonly threshold = DEFAULT_THRESHOLD) {}

    step(t: number, omegaIn?: number): number {
        if (t !== this.clock) {
            throw new Error(`step at t=${t} but clock is ${this.clock}`)
        }
        if (omegaIn !== undefined) this.omegaIn = omegaIn
        if (this.omegaIn >= this.threshold) this.betaSet = true
        this.clock = t + this.stepSize
        return this.clock
    }
}
