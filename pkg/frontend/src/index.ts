export { ClientSession, PROTOCOL_VERSION, unwrap } from './client'
export { decodeFrame, encodeFrame, Frame, FrameKind, LineSplitter } from './frames'
export { StormController, DEFAULT_THRESHOLD } from './controller'
