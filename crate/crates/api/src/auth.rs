//! Bearer-token sessions and the operator role.

use std::collections::HashMap;
use std::sync::Mutex;

use axum::http::header::AUTHORIZATION;
use axum::http::HeaderMap;
use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use subtle::ConstantTimeEq;

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Caller {
    Operator,
    Member(String),
}

impl Caller {
    pub fn is_operator(&self) -> bool {
        matches!(self, Caller::Operator)
    }

    /// Operators may read anyone; members only themselves.
    pub fn may_read(&self, uid: &str) -> bool {
        match self {
            Caller::Operator => true,
            Caller::Member(user) => user == uid,
        }
    }
}

#[derive(Debug, Clone)]
struct Session {
    user: String,
    expires_at: DateTime<Utc>,
}

#[derive(Debug)]
pub struct Sessions {
    ttl: Duration,
    operator_token: Option<String>,
    live: Mutex<HashMap<String, Session>>,
}

impl Sessions {
    pub fn new(ttl: Duration, operator_token: Option<String>) -> Self {
        Self { ttl, operator_token: operator_token.filter(|t| !t.is_empty()), live: Mutex::default() }
    }

    /// Issues an opaque token for `user`.
    pub fn issue(&self, user: &str) -> (String, DateTime<Utc>) {
        let mut bytes = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut bytes);
        let token = hex::encode(bytes);
        let expires_at = Utc::now() + self.ttl;
        let mut live = self.live.lock().unwrap_or_else(|e| e.into_inner());
        live.retain(|_, s| s.expires_at > Utc::now());
        live.insert(token.clone(), Session { user: user.to_string(), expires_at });
        (token, expires_at)
    }

    pub fn resolve(&self, token: &str) -> Option<Caller> {
        if let Some(op) = &self.operator_token {
            if bool::from(op.as_bytes().ct_eq(token.as_bytes())) {
                return Some(Caller::Operator);
            }
        }
        let live = self.live.lock().unwrap_or_else(|e| e.into_inner());
        live.get(token).filter(|s| s.expires_at > Utc::now()).map(|s| Caller::Member(s.user.clone()))
    }

    pub fn authenticate(&self, headers: &HeaderMap) -> Result<Caller, ApiError> {
        let token = headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or_else(ApiError::unauthenticated)?;
        self.resolve(token).ok_or_else(ApiError::unauthenticated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_resolve_until_expiry() {
        let sessions = Sessions::new(Duration::hours(1), Some("op-secret".into()));
        let (token, _) = sessions.issue("UID1");
        assert_eq!(sessions.resolve(&token), Some(Caller::Member("UID1".into())));
        assert_eq!(sessions.resolve("op-secret"), Some(Caller::Operator));
        assert_eq!(sessions.resolve("nope"), None);

        let expired = Sessions::new(Duration::seconds(-1), None);
        let (token, _) = expired.issue("UID1");
        assert_eq!(expired.resolve(&token), None);
    }

    #[test]
    fn empty_operator_token_is_disabled() {
        let sessions = Sessions::new(Duration::hours(1), Some(String::new()));
        assert_eq!(sessions.resolve(""), None);
    }
}
