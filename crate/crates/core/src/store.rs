//! Local document store for profiles, self-annotations and accounts.
//!
//! Layout under the root:
//!
//! ```text
//! profiles/<user>.json      SkillProfile
//! annotations/<user>.json   term -> SelfAnnotation
//! accounts.json             [Account]
//! ```
//!
//! Nothing is created until the first write. Every write replaces a whole
//! document through a temp file and rename; writes to the same document are
//! serialized, reads take no locks.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::fsutil::{path_component, read_json, write_json_atomic};
use crate::profiler::{merge_self, normalize_term, MergedProfile, SelfRating, SkillProfile};

const PBKDF2_ROUNDS: u32 = 60_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no profile for user {0}")]
    NotFound(String),
    #[error("self score {0} is not a multiple of 5 in 0..=100")]
    InvalidScore(i64),
    #[error("term is empty")]
    EmptyTerm,
    #[error("an account with email {0} already exists")]
    DuplicateEmail(String),
}

/// A self-rating on the 0–100 scale in steps of 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct SelfScore(u8);

impl SelfScore {
    pub fn new(score: i64) -> Result<Self, StoreError> {
        if (0..=100).contains(&score) && score % 5 == 0 {
            Ok(SelfScore(score as u8))
        } else {
            Err(StoreError::InvalidScore(score))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for SelfScore {
    type Error = StoreError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        SelfScore::new(v)
    }
}

impl From<SelfScore> for u8 {
    fn from(s: SelfScore) -> u8 {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfAnnotation {
    pub user: String,
    /// Normalized term.
    pub term: String,
    pub self_score: SelfScore,
    pub updated_at: DateTime<Utc>,
}

impl SelfAnnotation {
    pub fn new(user: &str, term: &str, score: i64, updated_at: DateTime<Utc>) -> Result<Self, StoreError> {
        let term = normalize_term(term);
        if term.is_empty() {
            return Err(StoreError::EmptyTerm);
        }
        Ok(Self { user: user.to_string(), term, self_score: SelfScore::new(score)?, updated_at })
    }
}

impl SelfRating for SelfAnnotation {
    fn term(&self) -> &str {
        &self.term
    }
    fn score(&self) -> u8 {
        self.self_score.get()
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasswordDigest {
    pub salt: String,
    pub hash: String,
    pub rounds: u32,
}

impl fmt::Debug for PasswordDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PasswordDigest(..)")
    }
}

impl PasswordDigest {
    pub fn create(password: &str) -> Self {
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        Self::with_salt(password, &salt, PBKDF2_ROUNDS)
    }

    fn with_salt(password: &str, salt: &[u8], rounds: u32) -> Self {
        let mut out = [0u8; 32];
        pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, rounds, &mut out);
        Self { salt: hex::encode(salt), hash: hex::encode(out), rounds }
    }

    /// Constant-time comparison of the derived key.
    pub fn verify(&self, password: &str) -> bool {
        let Ok(salt) = hex::decode(&self.salt) else {
            return false;
        };
        let candidate = Self::with_salt(password, &salt, self.rounds);
        candidate.hash.as_bytes().ct_eq(self.hash.as_bytes()).into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub user_id: String,
    pub email: String,
    pub password: PasswordDigest,
    pub created_by: String,
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub root: PathBuf,
}

/// Handle to a store root. Cheap to clone and share.
#[derive(Debug, Clone)]
pub struct Store {
    root: Arc<PathBuf>,
    locks: Arc<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>>,
}

/// Opens a store without touching the filesystem.
pub fn init_lazy(config: StoreConfig) -> Store {
    Store::open(config.root)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: Arc::new(root.into()), locks: Arc::default() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn profile_path(&self, user: &str) -> PathBuf {
        self.root.join("profiles").join(format!("{}.json", path_component(user)))
    }

    fn annotations_path(&self, user: &str) -> PathBuf {
        self.root.join("annotations").join(format!("{}.json", path_component(user)))
    }

    fn accounts_path(&self) -> PathBuf {
        self.root.join("accounts.json")
    }

    fn lock_for(&self, path: &Path) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(path.to_path_buf()).or_default().clone()
    }

    fn read<T: serde::de::DeserializeOwned>(&self, path: &Path) -> Result<Option<T>, StoreError> {
        read_json(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })
    }

    fn write<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), StoreError> {
        write_json_atomic(path, value).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })
    }

    pub fn put_profile(&self, profile: &SkillProfile<f64>) -> Result<(), StoreError> {
        let path = self.profile_path(&profile.user);
        let lock = self.lock_for(&path);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.write(&path, profile)
    }

    pub fn profile(&self, user: &str) -> Result<Option<SkillProfile<f64>>, StoreError> {
        self.read(&self.profile_path(user))
    }

    /// User ids that have a stored profile, sorted.
    pub fn profile_users(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("profiles");
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(StoreError::Io { path: dir, source }),
        };
        let mut users = Vec::new();
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(p) = self.read::<SkillProfile<f64>>(&path)? {
                    users.push(p.user);
                }
            }
        }
        users.sort();
        Ok(users)
    }

    pub fn annotations(&self, user: &str) -> Result<Vec<SelfAnnotation>, StoreError> {
        let doc: Option<BTreeMap<String, SelfAnnotation>> = self.read(&self.annotations_path(user))?;
        Ok(doc.map(|d| d.into_values().collect()).unwrap_or_default())
    }

    pub fn put_annotation(&self, annotation: &SelfAnnotation) -> Result<(), StoreError> {
        self.put_annotations(&annotation.user, std::slice::from_ref(annotation))
    }

    /// Upserts a batch for one user in a single document write. An existing
    /// annotation with a later `updated_at` wins.
    pub fn put_annotations(&self, user: &str, batch: &[SelfAnnotation]) -> Result<(), StoreError> {
        let path = self.annotations_path(user);
        let lock = self.lock_for(&path);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut doc: BTreeMap<String, SelfAnnotation> = self.read(&path)?.unwrap_or_default();
        for a in batch {
            debug_assert_eq!(a.user, user);
            match doc.get(&a.term) {
                Some(existing) if existing.updated_at > a.updated_at => {}
                _ => {
                    doc.insert(a.term.clone(), a.clone());
                }
            }
        }
        self.write(&path, &doc)
    }

    /// Stored profile joined with stored self-ratings.
    pub fn get_profile(&self, user: &str) -> Result<MergedProfile<f64>, StoreError> {
        let profile = self.profile(user)?.ok_or_else(|| StoreError::NotFound(user.to_string()))?;
        Ok(merge_self(&profile, &self.annotations(user)?))
    }

    pub fn accounts(&self) -> Result<Vec<Account>, StoreError> {
        Ok(self.read(&self.accounts_path())?.unwrap_or_default())
    }

    pub fn account_for_user(&self, user: &str) -> Result<Option<Account>, StoreError> {
        Ok(self.accounts()?.into_iter().find(|a| a.user_id == user))
    }

    /// Adds or replaces the account for `user_id`. Emails are unique,
    /// compared case-insensitively.
    pub fn put_account(
        &self,
        user_id: &str,
        email: &str,
        password: &str,
        created_by: &str,
    ) -> Result<Account, StoreError> {
        let path = self.accounts_path();
        let lock = self.lock_for(&path);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut accounts: Vec<Account> = self.read(&path)?.unwrap_or_default();
        let email = email.trim();
        if accounts.iter().any(|a| a.user_id != user_id && a.email.eq_ignore_ascii_case(email)) {
            return Err(StoreError::DuplicateEmail(email.to_string()));
        }
        let account = Account {
            user_id: user_id.to_string(),
            email: email.to_string(),
            password: PasswordDigest::create(password),
            created_by: created_by.to_string(),
        };
        accounts.retain(|a| a.user_id != user_id);
        accounts.push(account.clone());
        accounts.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        self.write(&path, &accounts)?;
        Ok(account)
    }

    /// The account for valid credentials. Unknown emails cost the same work
    /// as wrong passwords.
    pub fn verify_login(&self, email: &str, password: &str) -> Result<Option<Account>, StoreError> {
        let account = self.accounts()?.into_iter().find(|a| a.email.eq_ignore_ascii_case(email.trim()));
        match account {
            Some(a) if a.password.verify(password) => Ok(Some(a)),
            Some(_) => Ok(None),
            None => {
                let dummy = PasswordDigest::with_salt("", &[0u8; 16], PBKDF2_ROUNDS);
                let _ = dummy.verify(password);
                Ok(None)
            }
        }
    }
}
