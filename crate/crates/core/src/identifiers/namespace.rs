use sha1::{Digest, Sha1};

use super::{AddressError, NodeId};

/// SHA-1 of arbitrary bytes, as a ring identifier.
///
/// SHA-1 is the one 160-bit hash used throughout: namespace keys and the
/// service hash embedded in presence resources.
pub fn hash_to_id(bytes: &[u8]) -> NodeId {
    let digest: [u8; 20] = Sha1::digest(bytes).into();
    NodeId::from_bytes(digest)
}

/// Key under which peers of one service version rendezvous: `SHA-1("name:version")`.
pub fn namespace_key(service: &str, version: &str) -> Result<NodeId, AddressError> {
    if service.is_empty() {
        return Err(AddressError::EmptyServiceName);
    }
    Ok(hash_to_id(format!("{service}:{version}").as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Namespace {
    service: String,
    version: String,
    key: NodeId,
}

impl Namespace {
    pub fn new(service: &str, version: &str) -> Result<Self, AddressError> {
        Ok(Namespace {
            key: namespace_key(service, version)?,
            service: service.to_string(),
            version: version.to_string(),
        })
    }

    pub fn service(&self) -> &str {
        &self.service
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn key(&self) -> NodeId {
        self.key
    }

    /// Pathing suffix used by this namespace's private overlay, e.g. `/p-18ab3bc0`.
    pub fn overlay_path(&self) -> String {
        format!("/p-{}", &self.key.to_string()[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_is_deterministic_and_version_sensitive() {
        assert_eq!(namespace_key("svc", "1").unwrap(), namespace_key("svc", "1").unwrap());
        assert_ne!(namespace_key("svc", "1").unwrap(), namespace_key("svc", "2").unwrap());
    }

    #[test]
    fn empty_service_is_rejected() {
        assert!(matches!(namespace_key("", "1"), Err(AddressError::EmptyServiceName)));
    }

    #[test]
    fn known_digest() {
        // hashlib.sha1(b"svc:1").hexdigest()
        assert_eq!(
            namespace_key("svc", "1").unwrap().to_string(),
            "18ab3bc06ea0ea2bf1b68230742b231a207abf6a"
        );
    }
}
