//! Drives the OTA state machine over a real or in-memory link.
//!
//! The update server chunks an image container into OTA_DATA frames and
//! sends them stop-and-wait; the device reassembles, then walks its
//! check/download/verify/flash/reboot/post-validate machine on the result.

use std::time::Duration;

use splitwire_core::frame::MsgType;
use splitwire_core::ota::{
    Device, DownloadOutcome, FirmwareImage, OtaError, UpdateOutcome,
};

use crate::transport::{
    recv_message, send_message, FrameLink, RecvOptions, RecvOutcome, SendOptions,
    TransferResult, TransportError,
};

#[derive(Debug, thiserror::Error)]
pub enum OtaRunError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("state machine: {0}")]
    Machine(#[from] OtaError),
}

/// Transfer id used for OTA image pushes.
pub const OTA_TENSOR_ID: u32 = 0xF1F0;

/// Server side: push one image container over the link.
pub fn serve_image(
    link: &mut impl FrameLink,
    container: &[u8],
    chunk_bytes: u32,
) -> Result<TransferResult, TransportError> {
    send_message(
        link,
        MsgType::OtaData,
        OTA_TENSOR_ID,
        container,
        chunk_bytes,
        SendOptions::reliable(),
    )
}

/// Device side: receive one image push and run the update state machine on
/// it. Transport shortfalls become a retryable `DownloadOutcome` failure so
/// the machine records them and returns to Idle.
pub fn receive_and_apply(
    link: &mut impl FrameLink,
    device: &mut Device,
    timeout: Duration,
    post_validate: impl FnOnce(&FirmwareImage) -> bool,
) -> Result<UpdateOutcome, OtaRunError> {
    let received = recv_message(
        link,
        RecvOptions {
            send_acks: true,
            expect: Some(MsgType::OtaData),
            start_timeout: timeout,
            ..RecvOptions::default()
        },
    );
    let download = match received {
        Ok(RecvOutcome::Complete { bytes, .. }) => DownloadOutcome::Complete(bytes),
        Ok(RecvOutcome::Incomplete { missing, .. }) => {
            DownloadOutcome::TransportFailed(format!("{} frames missing", missing.len()))
        }
        Err(e) => DownloadOutcome::TransportFailed(e.to_string()),
    };
    Ok(device.apply_update(download, post_validate)?)
}
