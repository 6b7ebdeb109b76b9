//! One socket shared by several overlays (path multiplexing), and the subring
//! relay that carries private-overlay frames over the public overlay.

mod demux;
mod path;
mod subring;

pub use demux::{DemuxStats, Inbound, PathDemux};
pub use path::{decode_path_frame, encode_path_frame, validate_path, PUBLIC_PATH};
pub use subring::{subring_address, subring_public_id, SubringFrame, SubringKind, SubringRelay, SubringStats};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("path {0:?} already registered on this socket")]
    DuplicatePath(String),
    #[error("invalid path {0:?}: must start with '/', be 1..=255 printable ASCII bytes")]
    InvalidPath(String),
}
