//! Lab credentials: one `lab_id:salt_hex:sha256_hex` line per lab, where the
//! hash covers the salt followed by the secret. Secrets are never stored.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::RngCore;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

pub const DEFAULT_CREDENTIALS_FILE: &str = "lab_credentials.txt";

const SALT_LEN: usize = 16;
const SECRET_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CredentialError {
    #[error("cannot access credentials file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("credentials file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("lab id must be 1-64 characters of [A-Za-z0-9_-]")]
    InvalidLabId,
    #[error("lab {0:?} already exists")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StoredSecret {
    salt: Vec<u8>,
    hash: [u8; 32],
}

impl StoredSecret {
    fn derive(salt: Vec<u8>, secret: &str) -> Self {
        let hash = Sha256::new()
            .chain_update(&salt)
            .chain_update(secret.as_bytes())
            .finalize();
        StoredSecret {
            hash: hash.into(),
            salt,
        }
    }

    fn matches(&self, secret: &str) -> bool {
        StoredSecret::derive(self.salt.clone(), secret)
            .hash
            .ct_eq(&self.hash)
            .into()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LabCredentials {
    labs: BTreeMap<String, StoredSecret>,
    // Compared against when the lab id is unknown, so that path does the
    // same work as a wrong secret.
    decoy: Option<StoredSecret>,
}

pub fn valid_lab_id(id: &str) -> bool {
    (1..=64).contains(&id.len())
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub fn generate_secret() -> String {
    let mut bytes = [0u8; SECRET_LEN];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn fresh_salt() -> Vec<u8> {
    let mut salt = vec![0u8; SALT_LEN];
    rand::rng().fill_bytes(&mut salt);
    salt
}

impl LabCredentials {
    pub fn new() -> Self {
        LabCredentials {
            labs: BTreeMap::new(),
            decoy: Some(StoredSecret::derive(fresh_salt(), &generate_secret())),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CredentialError> {
        let mut creds = LabCredentials::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |message: &str| CredentialError::Malformed {
                line: i + 1,
                message: message.to_owned(),
            };
            let parts: Vec<&str> = line.split(':').collect();
            let [lab_id, salt, hash] = parts[..] else {
                return Err(malformed("expected lab_id:salt_hex:hash_hex"));
            };
            if !valid_lab_id(lab_id) {
                return Err(malformed("invalid lab id"));
            }
            let salt = hex::decode(salt).map_err(|_| malformed("salt is not hex"))?;
            let hash: [u8; 32] = hex::decode(hash)
                .ok()
                .and_then(|h| h.try_into().ok())
                .ok_or_else(|| malformed("hash is not 32 hex bytes"))?;
            if creds
                .labs
                .insert(lab_id.to_owned(), StoredSecret { salt, hash })
                .is_some()
            {
                return Err(malformed("duplicate lab id"));
            }
        }
        Ok(creds)
    }

    /// A missing file means no labs are registered yet.
    pub fn load(path: &Path) -> Result<Self, CredentialError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(source) => Err(CredentialError::Io {
                path: path.to_owned(),
                source,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.labs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labs.is_empty()
    }

    pub fn contains(&self, lab_id: &str) -> bool {
        self.labs.contains_key(lab_id)
    }

    /// Registers a lab with a fresh secret and returns the secret.
    pub fn add(&mut self, lab_id: &str) -> Result<String, CredentialError> {
        if !valid_lab_id(lab_id) {
            return Err(CredentialError::InvalidLabId);
        }
        if self.labs.contains_key(lab_id) {
            return Err(CredentialError::Duplicate(lab_id.to_owned()));
        }
        let secret = generate_secret();
        self.labs.insert(
            lab_id.to_owned(),
            StoredSecret::derive(fresh_salt(), &secret),
        );
        Ok(secret)
    }

    pub fn authenticate(&self, lab_id: &str, secret: &str) -> bool {
        match (self.labs.get(lab_id), &self.decoy) {
            (Some(stored), _) => stored.matches(secret),
            (None, Some(decoy)) => {
                let _ = decoy.matches(secret);
                false
            }
            (None, None) => false,
        }
    }

    pub fn render(&self) -> String {
        self.labs
            .iter()
            .map(|(id, s)| format!("{id}:{}:{}\n", hex::encode(&s.salt), hex::encode(s.hash)))
            .collect()
    }

    /// Writes the file atomically, readable only by its owner on Unix.
    pub fn save(&self, path: &Path) -> Result<(), CredentialError> {
        let io = |source| CredentialError::Io {
            path: path.to_owned(),
            source,
        };
        let tmp = path.with_extension("tmp");
        let mut opts = std::fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut file = opts.open(&tmp).map_err(io)?;
        file.write_all(self.render().as_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}
