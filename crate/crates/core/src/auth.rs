//! Digests, canonical encoding and a simulated signature scheme.
//!
//! Signatures are keyed SHA-256 tags over a per-node secret derived from a
//! run seed. Code paths only ever sign as the local node, so a Byzantine
//! replica cannot produce another node's signature.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::ident::Identifier;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn is_zero(&self) -> bool {
        *self == Digest::ZERO
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }

    /// First eight hex digits, for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

/// Length-prefixed field encoder. Every variable-length field carries a
/// big-endian `u32` length so distinct field sequences never collide.
#[derive(Debug, Default, Clone)]
pub struct Canon {
    buf: Vec<u8>,
}

impl Canon {
    pub fn new(domain: &str) -> Self {
        let mut c = Canon { buf: Vec::new() };
        c.bytes(domain.as_bytes());
        c
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(&(b.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn id(&mut self, id: &Identifier) -> &mut Self {
        self.bytes(&id.to_be_bytes())
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(&d.0);
        self
    }

    pub fn flag(&mut self, on: bool) -> &mut Self {
        self.buf.push(on as u8);
        self
    }

    pub fn finish(&self) -> Digest {
        Digest::of(&self.buf)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub signer: Identifier,
    pub tag: Digest,
}

/// Produces and checks signatures.
pub trait Authenticator {
    fn sign(&self, signer: &Identifier, message: &Digest) -> Signature;
    fn verify(&self, signature: &Signature, message: &Digest) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimAuthenticator {
    seed: u64,
}

impl SimAuthenticator {
    pub fn new(seed: u64) -> Self {
        SimAuthenticator { seed }
    }

    fn secret(&self, node: &Identifier) -> Digest {
        Canon::new("node-secret").u64(self.seed).id(node).finish()
    }

    fn tag(&self, node: &Identifier, message: &Digest) -> Digest {
        let secret = self.secret(node);
        Canon::new("sig").digest(&secret).digest(message).finish()
    }
}

impl Authenticator for SimAuthenticator {
    fn sign(&self, signer: &Identifier, message: &Digest) -> Signature {
        Signature {
            signer: *signer,
            tag: self.tag(signer, message),
        }
    }

    fn verify(&self, signature: &Signature, message: &Digest) -> bool {
        self.tag(&signature.signer, message) == signature.tag
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::IdSpace;

    #[test]
    fn sign_verify_roundtrip() {
        let s = IdSpace::default();
        let auth = SimAuthenticator::new(5);
        let m = Digest::of(b"hello");
        let sig = auth.sign(&s.id(1), &m);
        assert!(auth.verify(&sig, &m));
        assert!(!auth.verify(&sig, &Digest::of(b"other")));
        let forged = Signature {
            signer: s.id(2),
            ..sig
        };
        assert!(!auth.verify(&forged, &m));
        assert!(!SimAuthenticator::new(6).verify(&sig, &m));
    }

    #[test]
    fn length_prefix_separates_fields() {
        let a = Canon::new("t").bytes(b"ab").bytes(b"c").finish();
        let b = Canon::new("t").bytes(b"a").bytes(b"bc").finish();
        assert_ne!(a, b);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            Digest::of(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn digest_hex_serde() {
        let d = Digest::of(b"x");
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
    }
}
