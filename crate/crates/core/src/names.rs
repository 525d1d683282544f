//! Identifier classes and hierarchical content names.
//!
//! Every identifier has a canonical text form with a scheme prefix:
//!
//! ```text
//! content:/video/v1     id:alice     geo:CN-GD     ip:192.0.2.1
//! ```
//!
//! Content names are stored in their canonical `/c1/c2/.../cN` form together
//! with the byte offset where each component ends, so any prefix is a
//! zero-copy slice of the canonical string. The FIB hashes those slices
//! directly.

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("unknown identifier scheme in {0:?}")]
    UnknownScheme(String),
    #[error("content name has no components")]
    EmptyName,
    #[error("invalid name component {0:?}")]
    InvalidComponent(String),
    #[error("invalid opaque identifier {0:?}")]
    InvalidOpaque(String),
    #[error("malformed IP address {0:?}")]
    BadIp(String),
    #[error("prefix length {k} out of range for a name of {len} components")]
    OutOfRange { k: usize, len: usize },
}

/// Characters that may not appear inside a component or an opaque identifier.
/// `/` separates components; tabs, newlines and commas delimit FIB dump fields.
fn forbidden_in_component(c: char) -> bool {
    c == '/' || c.is_control()
}

/// One component of a content name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NameComponent(String);

impl NameComponent {
    pub fn new(text: impl Into<String>) -> Result<Self, NameError> {
        let text = text.into();
        if text.is_empty() || text.chars().any(forbidden_in_component) {
            return Err(NameError::InvalidComponent(text));
        }
        Ok(NameComponent(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NameComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A hierarchical content name `/c1/c2/.../cN` with N >= 1.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentName {
    text: String,
    // ends[i] is the byte offset one past component i in `text`.
    ends: Vec<u32>,
}

impl ContentName {
    pub fn from_components<I, S>(components: I) -> Result<Self, NameError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut text = String::new();
        let mut ends = Vec::new();
        for c in components {
            let c = c.as_ref();
            if c.is_empty() || c.chars().any(forbidden_in_component) {
                return Err(NameError::InvalidComponent(c.to_string()));
            }
            text.push('/');
            text.push_str(c);
            ends.push(text.len() as u32);
        }
        if ends.is_empty() {
            return Err(NameError::EmptyName);
        }
        Ok(ContentName { text, ends })
    }

    /// Number of components.
    pub fn len(&self) -> usize {
        self.ends.len()
    }

    /// Always false: a content name has at least one component.
    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn component(&self, i: usize) -> Option<&str> {
        let end = *self.ends.get(i)? as usize;
        let start = if i == 0 { 0 } else { self.ends[i - 1] as usize };
        Some(&self.text[start + 1..end])
    }

    pub fn components(&self) -> impl Iterator<Item = &str> + '_ {
        (0..self.len()).map(move |i| self.component(i).unwrap())
    }

    pub fn last_component(&self) -> &str {
        self.component(self.len() - 1).unwrap()
    }

    /// Canonical text of the first `k` components, without allocating.
    ///
    /// Panics if `k` is zero or larger than `len()`.
    pub fn prefix_str(&self, k: usize) -> &str {
        &self.text[..self.ends[k - 1] as usize]
    }

    /// The name made of the first `k` components.
    pub fn prefix(&self, k: usize) -> Result<ContentName, NameError> {
        if k == 0 || k > self.len() {
            return Err(NameError::OutOfRange { k, len: self.len() });
        }
        Ok(ContentName {
            text: self.prefix_str(k).to_string(),
            ends: self.ends[..k].to_vec(),
        })
    }

    /// The name without its last component, or `None` for a one-component name.
    pub fn parent(&self) -> Option<ContentName> {
        (self.len() > 1).then(|| self.prefix(self.len() - 1).unwrap())
    }

    /// Whether `self` is a (not necessarily proper) prefix of `other`.
    pub fn is_prefix_of(&self, other: &ContentName) -> bool {
        self.len() <= other.len() && other.prefix_str(self.len()) == self.text
    }

    pub fn child(&self, component: &NameComponent) -> ContentName {
        let mut out = self.clone();
        out.text.push('/');
        out.text.push_str(component.as_str());
        out.ends.push(out.text.len() as u32);
        out
    }

    /// Appends every component of `suffix`.
    pub fn join(&self, suffix: &ContentName) -> ContentName {
        let mut out = self.clone();
        let base = out.text.len() as u32;
        out.text.push_str(&suffix.text);
        out.ends.extend(suffix.ends.iter().map(|e| e + base));
        out
    }
}

/// Returns the first `k` components of `name`.
pub fn prefix_of(name: &ContentName, k: usize) -> Result<ContentName, NameError> {
    name.prefix(k)
}

impl FromStr for ContentName {
    type Err = NameError;

    /// Parses `/c1/c2/...`. A trailing slash is tolerated; empty inner
    /// components are not.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.strip_prefix('/').unwrap_or(s);
        let body = body.strip_suffix('/').unwrap_or(body);
        if body.is_empty() {
            return Err(NameError::EmptyName);
        }
        ContentName::from_components(body.split('/'))
    }
}

impl fmt::Display for ContentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl fmt::Debug for ContentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentName({})", self.text)
    }
}

/// One of the four identifier classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Identifier {
    Identity(String),
    Content(ContentName),
    Geo(String),
    Ip(IpAddr),
}

impl Identifier {
    pub fn identity(s: &str) -> Result<Self, NameError> {
        Ok(Identifier::Identity(opaque(s)?))
    }

    pub fn geo(s: &str) -> Result<Self, NameError> {
        Ok(Identifier::Geo(opaque(s)?))
    }

    pub fn scheme(&self) -> &'static str {
        match self {
            Identifier::Identity(_) => "id",
            Identifier::Content(_) => "content",
            Identifier::Geo(_) => "geo",
            Identifier::Ip(_) => "ip",
        }
    }

    pub fn as_content(&self) -> Option<&ContentName> {
        match self {
            Identifier::Content(n) => Some(n),
            _ => None,
        }
    }

    /// The identifier value without its scheme.
    pub fn value(&self) -> String {
        match self {
            Identifier::Identity(s) | Identifier::Geo(s) => s.clone(),
            Identifier::Content(n) => n.to_string(),
            Identifier::Ip(a) => a.to_string(),
        }
    }
}

fn opaque(s: &str) -> Result<String, NameError> {
    if s.is_empty() || s.chars().any(|c| c.is_control() || c == ',') {
        return Err(NameError::InvalidOpaque(s.to_string()));
    }
    Ok(s.to_string())
}

/// Parses the canonical `scheme:value` text form.
pub fn parse_identifier(text: &str) -> Result<Identifier, NameError> {
    text.parse()
}

impl FromStr for Identifier {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (scheme, value) = s
            .split_once(':')
            .ok_or_else(|| NameError::UnknownScheme(s.to_string()))?;
        match scheme {
            "content" => Ok(Identifier::Content(value.parse()?)),
            "id" => Identifier::identity(value),
            "geo" => Identifier::geo(value),
            "ip" => value
                .parse()
                .map(Identifier::Ip)
                .map_err(|_| NameError::BadIp(value.to_string())),
            _ => Err(NameError::UnknownScheme(s.to_string())),
        }
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.scheme(), self.value())
    }
}

impl Serialize for Identifier {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Identifier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for ContentName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for ContentName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Outgoing interface for a real FIB entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForwardingInfo {
    pub face_id: u32,
    pub metric: Option<u32>,
}

impl ForwardingInfo {
    pub fn face(face_id: u32) -> Self {
        ForwardingInfo {
            face_id,
            metric: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn name(s: &str) -> ContentName {
        s.parse().unwrap()
    }

    #[test]
    fn parses_each_scheme() {
        let id = parse_identifier("content:/c1/c2/c3").unwrap();
        let n = id.as_content().unwrap();
        assert_eq!(n.components().collect::<Vec<_>>(), ["c1", "c2", "c3"]);

        assert_eq!(
            parse_identifier("ip:192.0.2.1").unwrap(),
            Identifier::Ip("192.0.2.1".parse().unwrap())
        );
        assert_eq!(
            parse_identifier("id:alice").unwrap(),
            Identifier::Identity("alice".into())
        );
        assert_eq!(
            parse_identifier("geo:CN-GD").unwrap(),
            Identifier::Geo("CN-GD".into())
        );
        assert!(matches!(
            parse_identifier("ip:2001:db8::1").unwrap(),
            Identifier::Ip(IpAddr::V6(_))
        ));
    }

    #[test]
    fn rejects_bad_identifiers() {
        assert_eq!(parse_identifier("content:/"), Err(NameError::EmptyName));
        assert!(matches!(
            parse_identifier("mail:bob"),
            Err(NameError::UnknownScheme(_))
        ));
        assert!(matches!(
            parse_identifier("noscheme"),
            Err(NameError::UnknownScheme(_))
        ));
        assert!(matches!(
            parse_identifier("ip:300.1.1.1"),
            Err(NameError::BadIp(_))
        ));
        assert!(matches!(
            parse_identifier("content:/a//b"),
            Err(NameError::InvalidComponent(_))
        ));
        assert!(parse_identifier("id:").is_err());
    }

    #[test]
    fn prefix_examples() {
        let n = name("/c1/c2/c3");
        assert_eq!(prefix_of(&n, 2).unwrap(), name("/c1/c2"));
        assert_eq!(prefix_of(&n, 3).unwrap(), n);
        assert_eq!(
            prefix_of(&name("/c1"), 2),
            Err(NameError::OutOfRange { k: 2, len: 1 })
        );
        assert!(prefix_of(&n, 0).is_err());
    }

    #[test]
    fn slices_and_joins() {
        let n = name("/a/bb/ccc");
        assert_eq!(n.prefix_str(1), "/a");
        assert_eq!(n.prefix_str(2), "/a/bb");
        assert_eq!(n.last_component(), "ccc");
        assert_eq!(n.parent().unwrap(), name("/a/bb"));
        assert!(name("/a").parent().is_none());
        assert!(name("/a/bb").is_prefix_of(&n));
        assert!(!name("/a/b").is_prefix_of(&n));
        let j = name("/a").join(&name("/x/y"));
        assert_eq!(j, name("/a/x/y"));
        assert_eq!(j.component(2), Some("y"));
    }

    fn arb_component() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9._~-]{1,8}"
    }

    fn arb_identifier() -> impl Strategy<Value = Identifier> {
        prop_oneof![
            proptest::collection::vec(arb_component(), 1..6)
                .prop_map(|c| Identifier::Content(ContentName::from_components(c).unwrap())),
            "[a-z0-9@.-]{1,12}".prop_map(Identifier::Identity),
            "[A-Z0-9-]{1,8}".prop_map(Identifier::Geo),
            any::<[u8; 4]>().prop_map(|b| Identifier::Ip(IpAddr::from(b))),
            any::<[u8; 16]>().prop_map(|b| Identifier::Ip(IpAddr::from(b))),
        ]
    }

    proptest! {
        #[test]
        fn identifier_text_round_trips(id in arb_identifier()) {
            let text = id.to_string();
            prop_assert_eq!(parse_identifier(&text).unwrap(), id);
        }

        #[test]
        fn prefix_composition(comps in proptest::collection::vec(arb_component(), 1..10), a in 1usize..10, b in 1usize..10) {
            let n = ContentName::from_components(&comps).unwrap();
            let len = n.len();
            prop_assert_eq!(n.prefix(len).unwrap(), n.clone());
            let (i, j) = (a.min(b).min(len), a.max(b).min(len));
            let nested = n.prefix(j).unwrap().prefix(i).unwrap();
            prop_assert_eq!(nested, n.prefix(i).unwrap());
        }
    }
}
