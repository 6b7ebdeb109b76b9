use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use super::{AddressError, NodeId};

/// Longest accepted `user@domain/resource` identifier, in bytes.
pub const MAX_XMPP_ID_LEN: usize = 1023;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Udp,
    Tcp,
    Brunet,
    Subring,
    Xmpp,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Udp => "udp",
            Scheme::Tcp => "tcp",
            Scheme::Brunet => "brunet",
            Scheme::Subring => "subring",
            Scheme::Xmpp => "xmpp",
        }
    }

    /// Relay schemes name a peer rather than an IP endpoint.
    pub fn is_relay(self) -> bool {
        matches!(self, Scheme::Brunet | Scheme::Subring | Scheme::Xmpp)
    }
}

impl FromStr for Scheme {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "udp" => Scheme::Udp,
            "tcp" => Scheme::Tcp,
            "brunet" => Scheme::Brunet,
            "subring" => Scheme::Subring,
            "xmpp" => Scheme::Xmpp,
            other => return Err(AddressError::UnknownScheme(other.to_string())),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Host {
    Ip(Ipv4Addr),
    Node(NodeId),
    Account { user: String, domain: String },
}

/// URI-shaped locator: `scheme://host[:port][/path]`.
///
/// * `udp`/`tcp` need an IPv4 host and a port.
/// * `brunet`/`subring` need a 40-hex-digit node id; the port is optional.
/// * `xmpp` needs `user@domain` and a non-empty resource; the port is optional.
///
/// The path (or resource) is everything after the first `/` following the
/// authority, kept verbatim.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransportAddress {
    pub scheme: Scheme,
    pub host: Host,
    pub port: Option<u16>,
    pub path: Option<String>,
}

impl TransportAddress {
    pub fn udp(ip: Ipv4Addr, port: u16, path: Option<&str>) -> Self {
        TransportAddress {
            scheme: Scheme::Udp,
            host: Host::Ip(ip),
            port: Some(port),
            path: path.map(str::to_string),
        }
    }

    pub fn brunet(id: NodeId) -> Self {
        TransportAddress { scheme: Scheme::Brunet, host: Host::Node(id), port: None, path: None }
    }

    pub fn xmpp(user: &str, domain: &str, resource: &str) -> Result<Self, AddressError> {
        let addr = TransportAddress {
            scheme: Scheme::Xmpp,
            host: Host::Account { user: user.to_string(), domain: domain.to_string() },
            port: None,
            path: Some(resource.to_string()),
        };
        addr.validate()?;
        Ok(addr)
    }

    pub fn ip_port(&self) -> Option<(Ipv4Addr, u16)> {
        match (&self.host, self.port) {
            (Host::Ip(ip), Some(port)) => Some((*ip, port)),
            _ => None,
        }
    }

    pub fn node_id(&self) -> Option<NodeId> {
        match self.host {
            Host::Node(id) => Some(id),
            _ => None,
        }
    }

    /// `user@domain/resource` for xmpp addresses.
    pub fn xmpp_identifier(&self) -> Option<String> {
        match (&self.host, &self.path) {
            (Host::Account { user, domain }, Some(res)) => Some(format!("{user}@{domain}/{res}")),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), AddressError> {
        match self.scheme {
            Scheme::Udp | Scheme::Tcp => match (&self.host, self.port) {
                (Host::Ip(_), Some(p)) if p > 0 => Ok(()),
                (Host::Ip(_), _) => Err(AddressError::MissingPort),
                _ => Err(AddressError::MalformedHost(self.host_text())),
            },
            Scheme::Brunet | Scheme::Subring => match self.host {
                Host::Node(_) => Ok(()),
                _ => Err(AddressError::MalformedHost(self.host_text())),
            },
            Scheme::Xmpp => match (&self.host, &self.path) {
                (Host::Account { .. }, Some(res)) if !res.is_empty() => {
                    let id = self.xmpp_identifier().unwrap_or_default();
                    if id.len() > MAX_XMPP_ID_LEN {
                        Err(AddressError::IdentifierTooLong(id.len()))
                    } else {
                        Ok(())
                    }
                }
                (Host::Account { .. }, _) => Err(AddressError::MissingResource),
                _ => Err(AddressError::MalformedHost(self.host_text())),
            },
        }
    }

    fn host_text(&self) -> String {
        match &self.host {
            Host::Ip(ip) => ip.to_string(),
            Host::Node(id) => id.to_string(),
            Host::Account { user, domain } => format!("{user}@{domain}"),
        }
    }
}

/// Parses a transport address string.
pub fn parse_address(text: &str) -> Result<TransportAddress, AddressError> {
    text.parse()
}

impl FromStr for TransportAddress {
    type Err = AddressError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (scheme, rest) = text
            .split_once("://")
            .ok_or_else(|| AddressError::UnknownScheme(text.to_string()))?;
        let scheme: Scheme = scheme.parse()?;
        let (authority, path) = match rest.split_once('/') {
            Some((a, p)) => (a, Some(p.to_string())),
            None => (rest, None),
        };
        let (host_text, port) = match authority.rsplit_once(':') {
            Some((h, p)) => {
                let port: u16 = p.parse().map_err(|_| AddressError::MalformedPort(p.to_string()))?;
                (h, Some(port))
            }
            None => (authority, None),
        };
        let host = match scheme {
            Scheme::Udp | Scheme::Tcp => Host::Ip(
                host_text
                    .parse()
                    .map_err(|_| AddressError::MalformedHost(host_text.to_string()))?,
            ),
            Scheme::Brunet | Scheme::Subring => Host::Node(host_text.parse()?),
            Scheme::Xmpp => match host_text.split_once('@') {
                Some((user, domain)) if !user.is_empty() && !domain.is_empty() => Host::Account {
                    user: user.to_string(),
                    domain: domain.to_string(),
                },
                _ => return Err(AddressError::MalformedHost(host_text.to_string())),
            },
        };
        let addr = TransportAddress { scheme, host, port, path };
        addr.validate()?;
        Ok(addr)
    }
}

impl fmt::Display for TransportAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}", self.scheme.as_str(), self.host_text())?;
        if let Some(port) = self.port {
            write!(f, ":{port}")?;
        }
        if let Some(path) = &self.path {
            write!(f, "/{path}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn udp_with_path() {
        let a = parse_address("udp://192.168.1.1:15222/path").unwrap();
        assert_eq!(a.scheme, Scheme::Udp);
        assert_eq!(a.host, Host::Ip(Ipv4Addr::new(192, 168, 1, 1)));
        assert_eq!(a.port, Some(15222));
        assert_eq!(a.path.as_deref(), Some("path"));
    }

    #[test]
    fn udp_without_path() {
        let a = parse_address("udp://192.168.1.1:15222").unwrap();
        assert_eq!(a.path, None);
        assert_eq!(a.to_string(), "udp://192.168.1.1:15222");
    }

    #[test]
    fn xmpp_with_port_and_resource() {
        let a = parse_address("xmpp://alice@example.org:5222/abc.01").unwrap();
        assert_eq!(
            a.host,
            Host::Account { user: "alice".into(), domain: "example.org".into() }
        );
        assert_eq!(a.port, Some(5222));
        assert_eq!(a.path.as_deref(), Some("abc.01"));
        assert_eq!(a.xmpp_identifier().unwrap(), "alice@example.org/abc.01");
    }

    #[test]
    fn brunet_forms_with_and_without_port() {
        let id = format!("{:0>40}", "1f");
        let bare = parse_address(&format!("brunet://{id}")).unwrap();
        assert_eq!(bare.port, None);
        assert_eq!(bare.node_id().unwrap(), NodeId::from_u128(0x1f));
        let with_port = parse_address(&format!("brunet://{id}:4000")).unwrap();
        assert_eq!(with_port.port, Some(4000));
    }

    #[test]
    fn path_is_kept_verbatim() {
        let a = parse_address("udp://10.0.0.1:9/a/b%20c").unwrap();
        assert_eq!(a.path.as_deref(), Some("a/b%20c"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_address("ftp://1.2.3.4:5"), Err(AddressError::UnknownScheme(_))));
        assert!(matches!(parse_address("1.2.3.4:5"), Err(AddressError::UnknownScheme(_))));
        assert!(matches!(parse_address("udp://1.2.3:5"), Err(AddressError::MalformedHost(_))));
        assert!(matches!(parse_address("udp://1.2.3.4:x"), Err(AddressError::MalformedPort(_))));
        assert!(matches!(parse_address("udp://1.2.3.4:70000"), Err(AddressError::MalformedPort(_))));
        assert!(matches!(parse_address("udp://1.2.3.4"), Err(AddressError::MissingPort)));
        assert!(matches!(parse_address("udp://1.2.3.4:0"), Err(AddressError::MissingPort)));
        assert!(parse_address("brunet://xyz").is_err());
        assert!(matches!(parse_address("xmpp://alice@example.org"), Err(AddressError::MissingResource)));
        assert!(matches!(parse_address("xmpp://example.org/r"), Err(AddressError::MalformedHost(_))));
    }

    #[test]
    fn xmpp_identifier_length_cap() {
        // "a@b/" is 4 bytes; 1019 resource bytes reaches the cap exactly.
        let ok = format!("xmpp://a@b/{}", "r".repeat(1019));
        assert!(parse_address(&ok).is_ok());
        let long = format!("xmpp://a@b/{}", "r".repeat(1020));
        assert!(matches!(parse_address(&long), Err(AddressError::IdentifierTooLong(1024))));
    }

    fn arb_address() -> impl Strategy<Value = TransportAddress> {
        let path = proptest::option::of("[a-z0-9._/-]{0,12}");
        let udp = (any::<u32>(), 1u16.., path.clone(), any::<bool>()).prop_map(|(ip, port, path, tcp)| {
            TransportAddress {
                scheme: if tcp { Scheme::Tcp } else { Scheme::Udp },
                host: Host::Ip(Ipv4Addr::from(ip)),
                port: Some(port),
                path,
            }
        });
        let ring = (proptest::array::uniform20(any::<u8>()), proptest::option::of(any::<u16>()), any::<bool>())
            .prop_map(|(b, port, sub)| TransportAddress {
                scheme: if sub { Scheme::Subring } else { Scheme::Brunet },
                host: Host::Node(NodeId::from_bytes(b)),
                port,
                path: None,
            });
        let xmpp = ("[a-z]{1,8}", "[a-z]{1,8}\\.[a-z]{2,3}", proptest::option::of(any::<u16>()), "[a-f0-9.]{1,40}")
            .prop_map(|(user, domain, port, res)| TransportAddress {
                scheme: Scheme::Xmpp,
                host: Host::Account { user, domain },
                port,
                path: Some(res),
            });
        prop_oneof![udp, ring, xmpp]
    }

    proptest! {
        #[test]
        fn format_then_parse_round_trips(addr in arb_address()) {
            let text = addr.to_string();
            let back = parse_address(&text).unwrap();
            prop_assert_eq!(&back, &addr);
            prop_assert_eq!(back.to_string(), text);
        }
    }
}
