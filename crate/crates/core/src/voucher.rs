//! Issuance, capped redemption, and erasure of anonymous vouchers.

use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{self, CodeError, CodePolicy, Namespace, VoucherCode};
use crate::store::{Change, RecordStore, StoreError};

/// Redemptions allowed per voucher unless configured otherwise.
pub const DEFAULT_VOUCHER_CAP: u32 = 6;

pub fn default_voucher_ttl() -> TimeDelta {
    TimeDelta::days(14)
}

/// How long an exhausted voucher keeps answering `Exhausted` before it is
/// erased.
pub fn default_exhausted_grace() -> TimeDelta {
    TimeDelta::hours(48)
}

/// Attempts at drawing a non-colliding code: the first draw plus five
/// regenerations.
const ISSUE_ATTEMPTS: usize = 6;
const COMPENSATION_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VoucherError {
    #[error("voucher limit must be at least 1")]
    InvalidLimit,
    #[error("voucher not found")]
    NotFound,
    #[error("voucher fully used")]
    Exhausted,
    #[error("voucher expired")]
    Expired,
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error("could not draw a unique code")]
    CollisionLimit,
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
}

impl From<StoreError> for VoucherError {
    fn from(e: StoreError) -> Self {
        VoucherError::StorageUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoucherState {
    Active,
    Exhausted,
    /// Never persisted: an erased record is removed from the store.
    Erased,
}

/// The only state kept for a voucher. Carries no identity, contact,
/// location, device, issuer, or parent reference.
///
/// Once a voucher is exhausted `expires_at` is pulled forward to the moment
/// of exhaustion, so the retention sweep treats both cases uniformly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoucherRecord {
    pub code: VoucherCode,
    pub remaining_uses: u32,
    pub initial_limit: u32,
    pub expires_at: DateTime<Utc>,
    pub state: VoucherState,
}

/// Proof of one successful redemption, consumed by booking.
///
/// Not serializable and not clonable: it exists only inside the request
/// that produced it, and handing it to [`VoucherLedger::compensate`] by
/// value makes the compensation apply at most once.
#[derive(Debug)]
pub struct RedemptionToken {
    voucher_code: VoucherCode,
    redeemed_at: DateTime<Utc>,
    expiry_before: DateTime<Utc>,
}

impl RedemptionToken {
    pub fn voucher_code(&self) -> &VoucherCode {
        &self.voucher_code
    }

    pub fn redeemed_at(&self) -> DateTime<Utc> {
        self.redeemed_at
    }
}

pub struct VoucherLedger {
    store: Arc<dyn RecordStore<VoucherRecord>>,
    policy: CodePolicy,
}

impl VoucherLedger {
    pub fn new(store: Arc<dyn RecordStore<VoucherRecord>>, policy: CodePolicy) -> Self {
        VoucherLedger { store, policy }
    }

    pub fn policy(&self) -> &CodePolicy {
        &self.policy
    }

    /// Parses user input as a voucher code.
    pub fn parse(&self, raw: &str) -> Result<VoucherCode, VoucherError> {
        Ok(code::normalize_and_check(
            raw,
            &self.policy,
            Namespace::Voucher,
        )?)
    }

    pub fn get(&self, code: &VoucherCode) -> Option<VoucherRecord> {
        self.store.get(code.as_str())
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn issue_voucher(
        &self,
        limit: u32,
        ttl: TimeDelta,
        now: DateTime<Utc>,
    ) -> Result<VoucherRecord, VoucherError> {
        if limit == 0 {
            return Err(VoucherError::InvalidLimit);
        }
        let mut rng = rand::rng();
        for _ in 0..ISSUE_ATTEMPTS {
            let code = code::generate_code(&self.policy, Namespace::Voucher, &mut rng)?;
            let record = VoucherRecord {
                code: code.clone(),
                remaining_uses: limit,
                initial_limit: limit,
                expires_at: now + ttl,
                state: VoucherState::Active,
            };
            let mut inserted = false;
            self.store.update(code.as_str(), &mut |cur| match cur {
                Some(_) => Change::Keep,
                None => {
                    inserted = true;
                    Change::Put(record.clone())
                }
            })?;
            if inserted {
                return Ok(record);
            }
        }
        Err(VoucherError::CollisionLimit)
    }

    /// Consumes one use. The check and the decrement happen under the
    /// record's lock, so concurrent redemptions of one code never exceed
    /// its limit.
    pub fn redeem(
        &self,
        code: &VoucherCode,
        now: DateTime<Utc>,
    ) -> Result<RedemptionToken, VoucherError> {
        let mut outcome = Err(VoucherError::NotFound);
        self.store.update(code.as_str(), &mut |cur| {
            let Some(rec) = cur else {
                outcome = Err(VoucherError::NotFound);
                return Change::Keep;
            };
            if rec.state != VoucherState::Active || rec.remaining_uses == 0 {
                outcome = Err(VoucherError::Exhausted);
                return Change::Keep;
            }
            if now >= rec.expires_at {
                outcome = Err(VoucherError::Expired);
                return Change::Keep;
            }
            let mut next = rec.clone();
            next.remaining_uses -= 1;
            if next.remaining_uses == 0 {
                next.state = VoucherState::Exhausted;
                next.expires_at = now;
            }
            outcome = Ok(RedemptionToken {
                voucher_code: code.clone(),
                redeemed_at: now,
                expiry_before: rec.expires_at,
            });
            Change::Put(next)
        })?;
        outcome
    }

    /// Gives back the use consumed by `token`. Retries transient storage
    /// failures. A voucher erased in the meantime stays erased.
    pub fn compensate(&self, token: RedemptionToken) -> Result<(), VoucherError> {
        let mut last_err = None;
        for attempt in 0..COMPENSATION_ATTEMPTS {
            let res = self.store.update(token.voucher_code.as_str(), &mut |cur| {
                let Some(rec) = cur else { return Change::Keep };
                if rec.remaining_uses >= rec.initial_limit {
                    return Change::Keep;
                }
                let mut next = rec.clone();
                next.remaining_uses += 1;
                if next.state == VoucherState::Exhausted {
                    next.state = VoucherState::Active;
                    next.expires_at = token.expiry_before;
                }
                Change::Put(next)
            });
            match res {
                Ok(()) => return Ok(()),
                Err(e) => {
                    last_err = Some(e);
                    std::thread::sleep(std::time::Duration::from_millis(1 << attempt.min(6)));
                }
            }
        }
        Err(last_err.map(Into::into).unwrap_or(VoucherError::NotFound))
    }

    pub fn erase_voucher(&self, code: &VoucherCode) -> Result<(), VoucherError> {
        let mut found = false;
        self.store.update(code.as_str(), &mut |cur| {
            found = cur.is_some();
            if found {
                Change::Remove
            } else {
                Change::Keep
            }
        })?;
        if found {
            Ok(())
        } else {
            Err(VoucherError::NotFound)
        }
    }

    /// Erases every record whose `expires_at + grace` has passed. For
    /// exhausted records `expires_at` is the moment of exhaustion.
    pub fn sweep_expired(
        &self,
        now: DateTime<Utc>,
        grace: TimeDelta,
    ) -> Result<usize, VoucherError> {
        let due = |r: &VoucherRecord| r.expires_at + grace <= now;
        let mut erased = 0;
        for key in self.store.keys_where(&due) {
            self.store.update(&key, &mut |cur| match cur {
                Some(r) if due(r) => {
                    erased += 1;
                    Change::Remove
                }
                _ => Change::Keep,
            })?;
        }
        Ok(erased)
    }
}
