//! Application messages carried inside frames.
//!
//! An activation message moves one quantized boundary tensor from node 1 to
//! node 2; a feedback message returns the top predicted classes. Both use
//! little-endian fixed-width fields so the payloads are bit-exact across
//! implementations.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::quant::{QuantParams, QuantTensor};

#[derive(Debug, Clone, PartialEq)]
pub enum MessageError {
    Truncated { need: usize, got: usize },
    LengthMismatch { expected: u64, got: u64 },
    InvalidScale,
    ConfidenceOutOfRange { value: f32 },
    RankOverflow { rank: usize },
    EntryCountOverflow { count: usize },
}

impl fmt::Display for MessageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Truncated { need, got } => {
                write!(f, "message truncated: need {need} bytes, got {got}")
            }
            Self::LengthMismatch { expected, got } => {
                write!(f, "shape expects {expected} data bytes, got {got}")
            }
            Self::InvalidScale => write!(f, "scale must be finite and > 0"),
            Self::ConfidenceOutOfRange { value } => {
                write!(f, "confidence {value} outside [0, 1]")
            }
            Self::RankOverflow { rank } => write!(f, "shape rank {rank} exceeds u8"),
            Self::EntryCountOverflow { count } => {
                write!(f, "feedback entry count {count} exceeds u16")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MessageError {}

/// A quantized activation tensor in transit.
///
/// Layout: `tensor_id:u32 | rank:u8 | dims:u32*rank | scale:f32 |
/// zero_point:i8 | data`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMessage {
    pub tensor_id: u32,
    pub shape: Vec<u32>,
    pub params: QuantParams,
    pub data: Vec<u8>,
}

impl ActivationMessage {
    pub fn from_tensor(tensor_id: u32, tensor: &QuantTensor) -> Self {
        Self {
            tensor_id,
            shape: tensor.shape.clone(),
            params: tensor.params,
            data: tensor.data.iter().map(|&q| q as u8).collect(),
        }
    }

    pub fn into_tensor(self) -> Result<QuantTensor, MessageError> {
        let expected: u64 = self.shape.iter().map(|&d| d as u64).product();
        let got = self.data.len() as u64;
        let data: Vec<i8> = self.data.iter().map(|&b| b as i8).collect();
        QuantTensor::new(self.shape, self.params, data)
            .map_err(|_| MessageError::LengthMismatch { expected, got })
    }

    pub fn encode(&self) -> Result<Vec<u8>, MessageError> {
        if self.shape.len() > u8::MAX as usize {
            return Err(MessageError::RankOverflow { rank: self.shape.len() });
        }
        let elements: u64 = self.shape.iter().map(|&d| d as u64).product();
        if elements != self.data.len() as u64 {
            return Err(MessageError::LengthMismatch {
                expected: elements,
                got: self.data.len() as u64,
            });
        }
        let mut out = Vec::with_capacity(4 + 1 + 4 * self.shape.len() + 5 + self.data.len());
        out.extend_from_slice(&self.tensor_id.to_le_bytes());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.scale() as f32).to_le_bytes());
        out.push(self.params.zero_point() as u8);
        out.extend_from_slice(&self.data);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessageError> {
        let need = |n: usize, got: usize| MessageError::Truncated { need: n, got };
        if bytes.len() < 5 {
            return Err(need(5, bytes.len()));
        }
        let tensor_id = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let rank = bytes[4] as usize;
        let head = 5 + 4 * rank + 5;
        if bytes.len() < head {
            return Err(need(head, bytes.len()));
        }
        let mut shape = Vec::with_capacity(rank);
        for i in 0..rank {
            let at = 5 + 4 * i;
            shape.push(u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()));
        }
        let scale = f32::from_le_bytes(bytes[5 + 4 * rank..5 + 4 * rank + 4].try_into().unwrap());
        let zero_point = bytes[5 + 4 * rank + 4] as i8;
        let params =
            QuantParams::new(scale as f64, zero_point).map_err(|_| MessageError::InvalidScale)?;
        let data = bytes[head..].to_vec();
        let elements: u64 = shape.iter().map(|&d| d as u64).product();
        if elements != data.len() as u64 {
            return Err(MessageError::LengthMismatch { expected: elements, got: data.len() as u64 });
        }
        Ok(Self { tensor_id, shape, params, data })
    }
}

/// One predicted class with its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackEntry {
    pub class_id: u16,
    pub confidence: f32,
}

/// Top-k prediction results returned to the sending node.
///
/// Layout: `tensor_id:u32 | count:u16 | (class_id:u16, confidence:f32)*count`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackMessage {
    pub tensor_id: u32,
    pub entries: Vec<FeedbackEntry>,
}

impl FeedbackMessage {
    pub fn new(tensor_id: u32, entries: Vec<FeedbackEntry>) -> Result<Self, MessageError> {
        for e in &entries {
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(MessageError::ConfidenceOutOfRange { value: e.confidence });
            }
        }
        if entries.len() > u16::MAX as usize {
            return Err(MessageError::EntryCountOverflow { count: entries.len() });
        }
        Ok(Self { tensor_id, entries })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 6 * self.entries.len());
        out.extend_from_slice(&self.tensor_id.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u16).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.class_id.to_le_bytes());
            out.extend_from_slice(&e.confidence.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessageError> {
        if bytes.len() < 6 {
            return Err(MessageError::Truncated { need: 6, got: bytes.len() });
        }
        let tensor_id = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let count = u16::from_le_bytes(bytes[4..6].try_into().unwrap()) as usize;
        let need = 6 + 6 * count;
        if bytes.len() < need {
            return Err(MessageError::Truncated { need, got: bytes.len() });
        }
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let at = 6 + 6 * i;
            let class_id = u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap());
            let confidence = f32::from_le_bytes(bytes[at + 2..at + 6].try_into().unwrap());
            if !(0.0..=1.0).contains(&confidence) {
                return Err(MessageError::ConfidenceOutOfRange { value: confidence });
            }
            entries.push(FeedbackEntry { class_id, confidence });
        }
        Ok(Self { tensor_id, entries })
    }

    /// Human-readable response string, one `label=confidence` pair per entry.
    pub fn render(&self, labels: &[String]) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let label = labels.get(e.class_id as usize).map(|l| l.as_str()).unwrap_or("?");
            let _ = write!(s, "{}={:.2}", label, e.confidence);
        }
        s
    }
}
