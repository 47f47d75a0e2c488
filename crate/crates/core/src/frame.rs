//! Bit-exact chunk framing and reassembly.
//!
//! Wire layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     2  magic "SL" (0x53 0x4C)
//!      2     1  version (currently 1)
//!      3     1  msg_type (1=ACTIVATION 2=FEEDBACK 3=ACK 4=OTA_DATA)
//!      4     4  tensor_id
//!      8     2  seq (0-based)
//!     10     2  total
//!     12     2  payload_len
//!     14     4  crc32 over bytes [0..14) ++ payload
//!     18     -  payload
//! ```
//!
//! CRC32 is the IEEE 802.3 polynomial, reflected, init and xorout
//! 0xFFFFFFFF. The 16-bit seq/total caps a transfer at 65535 frames.

use alloc::vec::Vec;
use core::fmt;

use crate::planner::packet_count;

pub const MAGIC: [u8; 2] = *b"SL";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const MAX_FRAMES: u64 = u16::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Activation = 1,
    Feedback = 2,
    Ack = 3,
    OtaData = 4,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Self::Activation),
            2 => Some(Self::Feedback),
            3 => Some(Self::Ack),
            4 => Some(Self::OtaData),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameError {
    Truncated { need: usize, got: usize },
    TrailingBytes { extra: usize },
    BadMagic,
    UnsupportedVersion { version: u8 },
    UnknownMsgType { byte: u8 },
    CrcMismatch,
    SeqOutOfRange { seq: u16, total: u16 },
    PayloadTooLong { len: usize },
    MessageTooLarge { frames: u64 },
    ZeroChunk,
    MixedTransfer,
    ConflictingDuplicate { seq: u16 },
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Truncated { need, got } => write!(f, "buffer truncated: need {need}, got {got}"),
            Self::TrailingBytes { extra } => write!(f, "{extra} trailing bytes after frame"),
            Self::BadMagic => write!(f, "bad magic"),
            Self::UnsupportedVersion { version } => write!(f, "unsupported version {version}"),
            Self::UnknownMsgType { byte } => write!(f, "unknown msg_type {byte}"),
            Self::CrcMismatch => write!(f, "crc mismatch"),
            Self::SeqOutOfRange { seq, total } => write!(f, "seq {seq} not below total {total}"),
            Self::PayloadTooLong { len } => write!(f, "payload of {len} bytes exceeds u16"),
            Self::MessageTooLarge { frames } => {
                write!(f, "message needs {frames} frames, max is {MAX_FRAMES}")
            }
            Self::ZeroChunk => write!(f, "chunk size must be at least 1 byte"),
            Self::MixedTransfer => write!(f, "frames belong to different transfers"),
            Self::ConflictingDuplicate { seq } => {
                write!(f, "conflicting duplicate for seq {seq}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FrameError {}

/// One wire chunk. Magic, version, payload length and CRC are materialized
/// at encode time and checked at decode time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub tensor_id: u32,
    pub seq: u16,
    pub total: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(
        msg_type: MsgType,
        tensor_id: u32,
        seq: u16,
        total: u16,
        payload: Vec<u8>,
    ) -> Result<Self, FrameError> {
        if seq >= total {
            return Err(FrameError::SeqOutOfRange { seq, total });
        }
        if payload.len() > u16::MAX as usize {
            return Err(FrameError::PayloadTooLong { len: payload.len() });
        }
        Ok(Self { msg_type, tensor_id, seq, total, payload })
    }

    /// An acknowledgement for one received frame of a transfer.
    pub fn ack(tensor_id: u32, seq: u16, total: u16) -> Self {
        Self { msg_type: MsgType::Ack, tensor_id, seq, total, payload: Vec::new() }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

/// Serialize a frame to its exact wire bytes.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.wire_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&frame.tensor_id.to_le_bytes());
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.total.to_le_bytes());
    out.extend_from_slice(&(frame.payload.len() as u16).to_le_bytes());
    let mut crc = crc32fast::Hasher::new();
    crc.update(&out);
    crc.update(&frame.payload);
    out.extend_from_slice(&crc.finalize().to_le_bytes());
    out.extend_from_slice(&frame.payload);
    out
}

/// Payload length promised by a raw header, for length-prefixed stream reads.
pub fn header_payload_len(header: &[u8; HEADER_LEN]) -> u16 {
    u16::from_le_bytes([header[12], header[13]])
}

/// Parse one frame from a buffer that contains exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated { need: HEADER_LEN, got: bytes.len() });
    }
    if bytes[0..2] != MAGIC {
        return Err(FrameError::BadMagic);
    }
    if bytes[2] != VERSION {
        return Err(FrameError::UnsupportedVersion { version: bytes[2] });
    }
    let msg_type =
        MsgType::from_byte(bytes[3]).ok_or(FrameError::UnknownMsgType { byte: bytes[3] })?;
    let tensor_id = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    let seq = u16::from_le_bytes([bytes[8], bytes[9]]);
    let total = u16::from_le_bytes([bytes[10], bytes[11]]);
    let payload_len = u16::from_le_bytes([bytes[12], bytes[13]]) as usize;
    let stored_crc = u32::from_le_bytes([bytes[14], bytes[15], bytes[16], bytes[17]]);
    let need = HEADER_LEN + payload_len;
    if bytes.len() < need {
        return Err(FrameError::Truncated { need, got: bytes.len() });
    }
    if bytes.len() > need {
        return Err(FrameError::TrailingBytes { extra: bytes.len() - need });
    }
    let payload = &bytes[HEADER_LEN..];
    let mut crc = crc32fast::Hasher::new();
    crc.update(&bytes[..14]);
    crc.update(payload);
    if crc.finalize() != stored_crc {
        return Err(FrameError::CrcMismatch);
    }
    if seq >= total {
        return Err(FrameError::SeqOutOfRange { seq, total });
    }
    Ok(Frame { msg_type, tensor_id, seq, total, payload: payload.to_vec() })
}

/// Split a message into fixed-size frames. The frame count equals
/// `packet_count(len, chunk_bytes)`; an empty message yields no frames.
pub fn chunk_message(
    msg_type: MsgType,
    tensor_id: u32,
    msg: &[u8],
    chunk_bytes: u32,
) -> Result<Vec<Frame>, FrameError> {
    if chunk_bytes == 0 {
        return Err(FrameError::ZeroChunk);
    }
    let total = packet_count(msg.len() as u64, chunk_bytes).map_err(|_| FrameError::ZeroChunk)?;
    if total > MAX_FRAMES {
        return Err(FrameError::MessageTooLarge { frames: total });
    }
    let frames = msg
        .chunks(chunk_bytes as usize)
        .enumerate()
        .map(|(i, chunk)| Frame {
            msg_type,
            tensor_id,
            seq: i as u16,
            total: total as u16,
            payload: chunk.to_vec(),
        })
        .collect();
    Ok(frames)
}

/// Outcome of reassembling a frame multiset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reassembled {
    Complete(Vec<u8>),
    /// Some sequence numbers never arrived; `missing` is sorted ascending.
    Incomplete { missing: Vec<u16> },
}

/// Incremental reassembly state for one transfer. Duplicates are idempotent;
/// a duplicate with different payload is an integrity error.
#[derive(Debug)]
pub struct Reassembler {
    tensor_id: u32,
    msg_type: MsgType,
    total: u16,
    slots: Vec<Option<Vec<u8>>>,
    received: usize,
}

impl Reassembler {
    pub fn for_frame(frame: &Frame) -> Self {
        Self {
            tensor_id: frame.tensor_id,
            msg_type: frame.msg_type,
            total: frame.total,
            slots: alloc::vec![None; frame.total as usize],
            received: 0,
        }
    }

    pub fn tensor_id(&self) -> u32 {
        self.tensor_id
    }

    pub fn msg_type(&self) -> MsgType {
        self.msg_type
    }

    pub fn total(&self) -> u16 {
        self.total
    }

    pub fn frames_received(&self) -> usize {
        self.received
    }

    /// Accept one frame. Returns true once every slot is filled.
    pub fn push(&mut self, frame: &Frame) -> Result<bool, FrameError> {
        if frame.tensor_id != self.tensor_id
            || frame.total != self.total
            || frame.msg_type != self.msg_type
        {
            return Err(FrameError::MixedTransfer);
        }
        if frame.seq >= self.total {
            return Err(FrameError::SeqOutOfRange { seq: frame.seq, total: self.total });
        }
        match &self.slots[frame.seq as usize] {
            Some(existing) if *existing != frame.payload => {
                return Err(FrameError::ConflictingDuplicate { seq: frame.seq });
            }
            Some(_) => {} // idempotent duplicate
            None => {
                self.slots[frame.seq as usize] = Some(frame.payload.clone());
                self.received += 1;
            }
        }
        Ok(self.is_complete())
    }

    pub fn is_complete(&self) -> bool {
        self.received == self.total as usize
    }

    pub fn missing(&self) -> Vec<u16> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i as u16)
            .collect()
    }

    pub fn finish(self) -> Reassembled {
        if !self.is_complete() {
            return Reassembled::Incomplete { missing: self.missing() };
        }
        let mut out = Vec::new();
        for slot in self.slots {
            out.extend_from_slice(&slot.expect("complete"));
        }
        Reassembled::Complete(out)
    }
}

/// Reassemble an unordered frame multiset into the original message, or
/// report which sequence numbers are missing. An empty set is an empty
/// message.
pub fn reassemble(frames: &[Frame]) -> Result<Reassembled, FrameError> {
    let Some(first) = frames.first() else {
        return Ok(Reassembled::Complete(Vec::new()));
    };
    let mut state = Reassembler::for_frame(first);
    for frame in frames {
        state.push(frame)?;
    }
    Ok(state.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn crc_known_answer() {
        // standard check value for the reflected IEEE polynomial
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn ack_frame_golden_bytes() {
        let f = Frame::ack(0x1122_3344, 1, 4);
        let bytes = encode_frame(&f);
        assert_eq!(
            bytes,
            [
                0x53, 0x4C, 0x01, 0x03, 0x44, 0x33, 0x22, 0x11, 0x01, 0x00, 0x04, 0x00, 0x00,
                0x00, 0xD1, 0x78, 0x88, 0x11
            ]
        );
        assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn activation_frame_golden_bytes() {
        let f = Frame::new(MsgType::Activation, 7, 0, 2, vec![1, 2, 3]).unwrap();
        assert_eq!(
            encode_frame(&f),
            [
                0x53, 0x4C, 0x01, 0x01, 0x07, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02, 0x00, 0x03,
                0x00, 0xB2, 0x7D, 0x7B, 0x7A, 0x01, 0x02, 0x03
            ]
        );
    }

    #[test]
    fn decode_rejects_bad_magic() {
        let mut bytes = encode_frame(&Frame::ack(1, 0, 1));
        bytes[0] = b'X';
        assert_eq!(decode_frame(&bytes), Err(FrameError::BadMagic));
    }

    #[test]
    fn decode_rejects_truncation() {
        let bytes = encode_frame(&Frame::ack(1, 0, 1));
        assert!(matches!(decode_frame(&bytes[..10]), Err(FrameError::Truncated { .. })));
    }

    #[test]
    fn single_payload_bit_flip_fails_crc() {
        let f = Frame::new(MsgType::Activation, 9, 0, 1, vec![0xAA; 32]).unwrap();
        let mut bytes = encode_frame(&f);
        bytes[HEADER_LEN + 5] ^= 0x10;
        assert_eq!(decode_frame(&bytes), Err(FrameError::CrcMismatch));
    }

    #[test]
    fn chunking_5488_at_1460() {
        let msg = vec![7u8; 5488];
        let frames = chunk_message(MsgType::Activation, 1, &msg, 1460).unwrap();
        assert_eq!(frames.len(), 4);
        assert_eq!(frames.iter().map(|f| f.seq).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(frames.iter().all(|f| f.total == 4));
        assert_eq!(frames[3].payload.len(), 1108); // 5488 - 3 * 1460
    }

    #[test]
    fn chunking_matches_packet_count_table() {
        assert_eq!(chunk_message(MsgType::Activation, 1, &vec![0; 2744], 1460).unwrap().len(), 2);
        assert_eq!(chunk_message(MsgType::Activation, 1, &vec![0; 150_528], 250).unwrap().len(), 603);
        let one = chunk_message(MsgType::Activation, 1, &[9], 250).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].payload, vec![9]);
    }

    #[test]
    fn chunking_rejects_message_too_large_for_u16_total() {
        let msg = vec![0u8; 65_536 * 2];
        assert!(matches!(
            chunk_message(MsgType::OtaData, 1, &msg, 1),
            Err(FrameError::MessageTooLarge { .. })
        ));
    }

    #[test]
    fn reassemble_reversed_order() {
        let msg: Vec<u8> = (0..=255u8).cycle().take(5000).collect();
        let mut frames = chunk_message(MsgType::Activation, 3, &msg, 512).unwrap();
        frames.reverse();
        assert_eq!(reassemble(&frames).unwrap(), Reassembled::Complete(msg));
    }

    #[test]
    fn reassemble_reports_gap() {
        let msg = vec![1u8; 4 * 100];
        let mut frames = chunk_message(MsgType::Activation, 3, &msg, 100).unwrap();
        frames.remove(2);
        assert_eq!(reassemble(&frames).unwrap(), Reassembled::Incomplete { missing: vec![2] });
    }

    #[test]
    fn reassemble_rejects_conflicting_duplicate() {
        let msg = vec![1u8; 300];
        let mut frames = chunk_message(MsgType::Activation, 3, &msg, 100).unwrap();
        let mut dup = frames[1].clone();
        dup.payload[0] ^= 0xFF;
        frames.push(dup);
        assert_eq!(reassemble(&frames), Err(FrameError::ConflictingDuplicate { seq: 1 }));
    }

    #[test]
    fn reassemble_rejects_mixed_transfers() {
        let mut frames = chunk_message(MsgType::Activation, 3, &[1, 2, 3], 2).unwrap();
        frames.extend(chunk_message(MsgType::Activation, 4, &[1, 2, 3], 2).unwrap());
        assert_eq!(reassemble(&frames), Err(FrameError::MixedTransfer));
    }

    #[test]
    fn empty_message_yields_no_frames_and_empty_reassembly() {
        assert!(chunk_message(MsgType::Activation, 1, &[], 100).unwrap().is_empty());
        assert_eq!(reassemble(&[]).unwrap(), Reassembled::Complete(Vec::new()));
    }

    #[test]
    fn large_transfer_survives_shuffle_and_duplication() {
        // deterministic pseudo-random payload and permutation
        let mut state = 0x12345678u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as u32
        };
        let msg: Vec<u8> = (0..150_528).map(|_| next() as u8).collect();
        let frames = chunk_message(MsgType::Activation, 42, &msg, 250).unwrap();
        assert_eq!(frames.len(), 603);
        let mut delivery: Vec<Frame> = frames.clone();
        // duplicate every 7th frame
        delivery.extend(frames.iter().step_by(7).cloned());
        // Fisher-Yates shuffle
        for i in (1..delivery.len()).rev() {
            let j = (next() as usize) % (i + 1);
            delivery.swap(i, j);
        }
        assert_eq!(reassemble(&delivery).unwrap(), Reassembled::Complete(msg));
    }

    proptest! {
        #[test]
        fn frame_round_trip(
            tid in any::<u32>(),
            seq in 0u16..8,
            extra in 0u16..8,
            payload in proptest::collection::vec(any::<u8>(), 0..300),
        ) {
            let f = Frame::new(MsgType::OtaData, tid, seq, seq + extra + 1, payload).unwrap();
            prop_assert_eq!(decode_frame(&encode_frame(&f)).unwrap(), f);
        }

        #[test]
        fn chunk_then_reassemble_is_identity(
            msg in proptest::collection::vec(any::<u8>(), 0..4000),
            chunk in 1u32..700,
        ) {
            let frames = chunk_message(MsgType::Activation, 5, &msg, chunk).unwrap();
            let n = packet_count(msg.len() as u64, chunk).unwrap();
            prop_assert_eq!(frames.len() as u64, n);
            prop_assert_eq!(reassemble(&frames).unwrap(), Reassembled::Complete(msg));
        }

        #[test]
        fn any_single_bit_corruption_is_detected(
            payload in proptest::collection::vec(any::<u8>(), 1..64),
            bit in 0usize..64,
        ) {
            let f = Frame::new(MsgType::Feedback, 11, 0, 1, payload).unwrap();
            let mut bytes = encode_frame(&f);
            let pos = bit % (bytes.len() * 8);
            bytes[pos / 8] ^= 1 << (pos % 8);
            prop_assert!(decode_frame(&bytes) != Ok(f));
        }
    }
}
