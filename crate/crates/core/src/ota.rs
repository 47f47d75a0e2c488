//! Firmware image packaging and the device-side update state machine.
//!
//! Update flow: check -> download -> verify -> flash -> reboot ->
//! post-validate, with rollback on a digest mismatch or a failed
//! post-validation. Every transition is appended to an audit log whose
//! replay reconstructs the final state.
//!
//! Image container, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     8  magic "SLOTAIMG"
//!      8     6  version (major, minor, patch as u16 each)
//!     14    32  sha-256 digest of the blob
//!     46     4  blob length
//!     50     -  blob
//! ```

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

pub const CONTAINER_MAGIC: [u8; 8] = *b"SLOTAIMG";
pub const CONTAINER_HEADER_LEN: usize = 50;

/// major.minor.patch, ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Version {
    pub major: u16,
    pub minor: u16,
    pub patch: u16,
}

impl Version {
    pub fn new(major: u16, minor: u16, patch: u16) -> Self {
        Self { major, minor, patch }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut parts = s.split('.');
        let major = parts.next()?.parse().ok()?;
        let minor = parts.next()?.parse().ok()?;
        let patch = parts.next()?.parse().ok()?;
        if parts.next().is_some() {
            return None;
        }
        Some(Self { major, minor, patch })
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

/// Deployment annotations carried in memory alongside an image; the binary
/// container stores only version, digest and blob.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImageMeta {
    pub target_node: Option<u32>,
    pub model_part: Option<u32>,
}

/// A packaged firmware/model image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmwareImage {
    pub version: Version,
    pub blob: Vec<u8>,
    pub digest: [u8; 32],
    pub meta: ImageMeta,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OtaError {
    EmptyBlob,
    BadMagic,
    Truncated { need: usize, got: usize },
    TrailingBytes { extra: usize },
    IllegalTransition { from: State, to: State },
    NotReadyForUpdate { state: State },
    DigestMismatch,
    PostValidationFailed,
    TransportFailed { reason: String },
    BadAuditRecord { line: String },
    ReplayMismatch,
}

impl fmt::Display for OtaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyBlob => write!(f, "image blob must not be empty"),
            Self::BadMagic => write!(f, "bad container magic"),
            Self::Truncated { need, got } => {
                write!(f, "container truncated: need {need} bytes, got {got}")
            }
            Self::TrailingBytes { extra } => write!(f, "{extra} trailing bytes after container"),
            Self::IllegalTransition { from, to } => {
                write!(f, "illegal transition {from:?} -> {to:?}")
            }
            Self::NotReadyForUpdate { state } => {
                write!(f, "device in {state:?} cannot start an update")
            }
            Self::DigestMismatch => write!(f, "image digest does not match blob"),
            Self::PostValidationFailed => write!(f, "post-installation validation failed"),
            Self::TransportFailed { reason } => write!(f, "transport failed: {reason}"),
            Self::BadAuditRecord { line } => write!(f, "unparseable audit record: {line}"),
            Self::ReplayMismatch => write!(f, "audit replay does not reproduce device state"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for OtaError {}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let out = Sha256::digest(bytes);
    out.into()
}

/// Package a blob into an image with its digest computed.
pub fn package(blob: Vec<u8>, version: Version, meta: ImageMeta) -> Result<FirmwareImage, OtaError> {
    if blob.is_empty() {
        return Err(OtaError::EmptyBlob);
    }
    let digest = sha256(&blob);
    Ok(FirmwareImage { version, blob, digest, meta })
}

impl FirmwareImage {
    /// True when the stored digest matches the blob.
    pub fn verify(&self) -> bool {
        sha256(&self.blob) == self.digest
    }

    pub fn encode_container(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CONTAINER_HEADER_LEN + self.blob.len());
        out.extend_from_slice(&CONTAINER_MAGIC);
        out.extend_from_slice(&self.version.major.to_le_bytes());
        out.extend_from_slice(&self.version.minor.to_le_bytes());
        out.extend_from_slice(&self.version.patch.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.blob);
        out
    }

    /// Parse a container. Structural only; digest verification is a
    /// separate state-machine step.
    pub fn decode_container(bytes: &[u8]) -> Result<Self, OtaError> {
        if bytes.len() < CONTAINER_HEADER_LEN {
            return Err(OtaError::Truncated { need: CONTAINER_HEADER_LEN, got: bytes.len() });
        }
        if bytes[0..8] != CONTAINER_MAGIC {
            return Err(OtaError::BadMagic);
        }
        let version = Version {
            major: u16::from_le_bytes([bytes[8], bytes[9]]),
            minor: u16::from_le_bytes([bytes[10], bytes[11]]),
            patch: u16::from_le_bytes([bytes[12], bytes[13]]),
        };
        let mut digest = [0u8; 32];
        digest.copy_from_slice(&bytes[14..46]);
        let blob_len = u32::from_le_bytes([bytes[46], bytes[47], bytes[48], bytes[49]]) as usize;
        let need = CONTAINER_HEADER_LEN + blob_len;
        if bytes.len() < need {
            return Err(OtaError::Truncated { need, got: bytes.len() });
        }
        if bytes.len() > need {
            return Err(OtaError::TrailingBytes { extra: bytes.len() - need });
        }
        if blob_len == 0 {
            return Err(OtaError::EmptyBlob);
        }
        Ok(Self {
            version,
            blob: bytes[CONTAINER_HEADER_LEN..].to_vec(),
            digest,
            meta: ImageMeta::default(),
        })
    }
}

/// A catalog entry the update server advertises.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub version: Version,
    pub container: Vec<u8>,
}

/// Newest advertised image strictly newer than the current version, if any.
pub fn check_for_update(current: Version, catalog: &[CatalogEntry]) -> Option<&CatalogEntry> {
    catalog.iter().filter(|e| e.version > current).max_by_key(|e| e.version)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum State {
    Idle,
    Checking,
    Downloading,
    Verifying,
    Flashing,
    Rebooting,
    PostValidating,
    Active,
    RolledBack,
}

impl State {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Idle" => Self::Idle,
            "Checking" => Self::Checking,
            "Downloading" => Self::Downloading,
            "Verifying" => Self::Verifying,
            "Flashing" => Self::Flashing,
            "Rebooting" => Self::Rebooting,
            "PostValidating" => Self::PostValidating,
            "Active" => Self::Active,
            "RolledBack" => Self::RolledBack,
            _ => return None,
        })
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

fn transition_legal(from: State, to: State) -> bool {
    use State::*;
    matches!(
        (from, to),
        (Idle, Checking)
            | (Active, Checking)
            | (Checking, Downloading)
            | (Checking, Idle)
            | (Downloading, Verifying)
            | (Downloading, Idle)
            | (Verifying, Flashing)
            | (Verifying, RolledBack)
            | (Flashing, Rebooting)
            | (Rebooting, PostValidating)
            | (PostValidating, Active)
            | (PostValidating, RolledBack)
    )
}

/// One audit record. Serialized as a tab-separated line:
/// `seq<TAB>from<TAB>to<TAB>active_version<TAB>note`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub seq: u64,
    pub from: State,
    pub to: State,
    pub active_version: Version,
    pub note: String,
}

impl fmt::Display for AuditRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}\t{}", self.seq, self.from, self.to, self.active_version, self.note)
    }
}

impl AuditRecord {
    pub fn parse(line: &str) -> Result<Self, OtaError> {
        let bad = || OtaError::BadAuditRecord { line: line.to_string() };
        let mut fields = line.splitn(5, '\t');
        let seq = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let from = State::parse(fields.next().ok_or_else(bad)?).ok_or_else(bad)?;
        let to = State::parse(fields.next().ok_or_else(bad)?).ok_or_else(bad)?;
        let active_version = Version::parse(fields.next().ok_or_else(bad)?).ok_or_else(bad)?;
        let note = fields.next().unwrap_or("").to_string();
        Ok(Self { seq, from, to, active_version, note })
    }
}

/// The downloaded bytes, or why the transfer failed. Produced by the
/// transport layer and consumed by the state machine.
#[derive(Debug, Clone)]
pub enum DownloadOutcome {
    Complete(Vec<u8>),
    TransportFailed(String),
}

/// What an update attempt ended as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Activated(Version),
    RolledBack { kept: Version },
}

/// One simulated device: current state, active version, staged image and the
/// audit log of every transition it has made.
#[derive(Debug, Clone)]
pub struct Device {
    state: State,
    active_version: Version,
    staged: Option<FirmwareImage>,
    verified_digest: Option<[u8; 32]>,
    log: Vec<AuditRecord>,
}

impl Device {
    pub fn new(active_version: Version) -> Self {
        Self {
            state: State::Idle,
            active_version,
            staged: None,
            verified_digest: None,
            log: Vec::new(),
        }
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn active_version(&self) -> Version {
        self.active_version
    }

    /// Digest of the image backing the Active state, once one has been
    /// verified and activated.
    pub fn verified_digest(&self) -> Option<[u8; 32]> {
        self.verified_digest
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.log
    }

    fn transition(&mut self, to: State, note: &str) -> Result<(), OtaError> {
        if !transition_legal(self.state, to) {
            return Err(OtaError::IllegalTransition { from: self.state, to });
        }
        self.log.push(AuditRecord {
            seq: self.log.len() as u64,
            from: self.state,
            to,
            active_version: self.active_version,
            note: note.to_string(),
        });
        self.state = to;
        Ok(())
    }

    /// Drive one full update attempt through the state machine.
    ///
    /// On success the device ends Active with the new version. A digest
    /// mismatch or failed post-validation ends RolledBack with the prior
    /// version intact. A transport failure returns the device to Idle so the
    /// update can be retried.
    pub fn apply_update(
        &mut self,
        download: DownloadOutcome,
        post_validate: impl FnOnce(&FirmwareImage) -> bool,
    ) -> Result<UpdateOutcome, OtaError> {
        if !matches!(self.state, State::Idle | State::Active) {
            return Err(OtaError::NotReadyForUpdate { state: self.state });
        }
        let prior = self.active_version;
        self.transition(State::Checking, "update offered")?;
        self.transition(State::Downloading, "transfer started")?;

        let bytes = match download {
            DownloadOutcome::Complete(bytes) => bytes,
            DownloadOutcome::TransportFailed(reason) => {
                self.transition(State::Idle, "transport failed, retryable")?;
                return Err(OtaError::TransportFailed { reason });
            }
        };

        self.transition(State::Verifying, "transfer complete")?;
        let image = match FirmwareImage::decode_container(&bytes) {
            Ok(image) if image.verify() => image,
            _ => {
                self.transition(State::RolledBack, "digest mismatch")?;
                return Ok(UpdateOutcome::RolledBack { kept: prior });
            }
        };

        self.transition(State::Flashing, "image staged")?;
        self.staged = Some(image);
        self.transition(State::Rebooting, "rebooting into staged image")?;
        self.transition(State::PostValidating, "post-installation checks")?;

        let image = self.staged.take().expect("staged during Flashing");
        if post_validate(&image) {
            self.active_version = image.version;
            self.verified_digest = Some(image.digest);
            self.transition(State::Active, "update validated")?;
            Ok(UpdateOutcome::Activated(image.version))
        } else {
            self.transition(State::RolledBack, "post-validation failed")?;
            Ok(UpdateOutcome::RolledBack { kept: prior })
        }
    }
}

/// Replay an audit log from scratch, enforcing transition legality, and
/// return the final state. Event-sourcing check for [`Device`] histories.
pub fn replay_audit(records: &[AuditRecord]) -> Result<State, OtaError> {
    let mut state = State::Idle;
    for r in records {
        if r.from != state {
            return Err(OtaError::ReplayMismatch);
        }
        if !transition_legal(r.from, r.to) {
            return Err(OtaError::IllegalTransition { from: r.from, to: r.to });
        }
        state = r.to;
    }
    Ok(state)
}
