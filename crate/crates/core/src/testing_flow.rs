//! Anonymous booking, test lifecycle, result lookup, and chain re-issuance.
//!
//! A citizen trades a [`RedemptionToken`] for a confirmation code bound to
//! an appointment slot. The confirmation record never learns which voucher
//! was redeemed. When the lab posts a positive result, a fresh chain voucher
//! is issued and attached to the confirmation; the voucher itself carries no
//! reference back, so the only link dies with the confirmation record.

use std::io::Read;
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{self, CodeError, CodePolicy, Namespace, VoucherCode};
use crate::store::{Change, RecordStore, StoreError};
use crate::voucher::{RedemptionToken, VoucherError, VoucherLedger};

const CODE_ATTEMPTS: usize = 6;

pub fn default_result_retention() -> TimeDelta {
    TimeDelta::days(7)
}

pub fn default_stale_booking_retention() -> TimeDelta {
    TimeDelta::hours(48)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("unknown location")]
    UnknownLocation,
    #[error("unknown slot")]
    UnknownSlot,
    #[error("slot is full")]
    SlotFull,
    #[error("confirmation not found")]
    NotFound,
    #[error("operation not allowed while {0}")]
    WrongState(ConfirmationStatus),
    #[error("slot window must start before it ends")]
    InvalidWindow,
    #[error("range start must not be after its end")]
    InvalidRange,
    #[error("row {row}: {message}")]
    Import { row: usize, message: String },
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Voucher(#[from] VoucherError),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
}

impl From<StoreError> for FlowError {
    fn from(e: StoreError) -> Self {
        FlowError::StorageUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestingLocation {
    pub location_id: String,
    pub label: String,
    /// Street address of the facility.
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppointmentSlot {
    pub slot_id: String,
    pub location_id: String,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub capacity: u32,
    pub booked: u32,
}

impl AppointmentSlot {
    pub fn available(&self) -> u32 {
        self.capacity.saturating_sub(self.booked)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfirmationStatus {
    Booked,
    Performed,
    ResultReady,
    Erased,
}

impl ConfirmationStatus {
    /// Legal paths: Booked -> Performed -> ResultReady -> Erased, and
    /// Booked -> Erased for stale bookings.
    pub fn can_transition(self, to: ConfirmationStatus) -> bool {
        use ConfirmationStatus::*;
        matches!(
            (self, to),
            (Booked, Performed)
                | (Performed, ResultReady)
                | (ResultReady, Erased)
                | (Booked, Erased)
        )
    }
}

impl std::fmt::Display for ConfirmationStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConfirmationStatus::Booked => "booked",
            ConfirmationStatus::Performed => "performed",
            ConfirmationStatus::ResultReady => "result_ready",
            ConfirmationStatus::Erased => "erased",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestResult {
    Negative,
    Positive,
    Inconclusive,
}

/// A booking receipt. Holds no identity and no reference to the voucher
/// that paid for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfirmationRecord {
    pub confirmation_code: VoucherCode,
    pub slot_id: String,
    pub status: ConfirmationStatus,
    pub result: Option<TestResult>,
    pub chain_voucher: Option<VoucherCode>,
    pub created_at: DateTime<Utc>,
    pub result_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Booking {
    pub confirmation: ConfirmationRecord,
    pub slot: AppointmentSlot,
    pub location: Option<TestingLocation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LookupOutcome {
    Pending,
    Ready {
        result: TestResult,
        chain_voucher: Option<VoucherCode>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotSpec {
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub capacity: u32,
}

/// One row of a slot import file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotRow {
    pub location_id: String,
    pub spec: SlotSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retention {
    /// Kept this long after the result was posted.
    pub result: TimeDelta,
    /// Unattended bookings are kept this long after their slot ends.
    pub stale_booking: TimeDelta,
}

impl Default for Retention {
    fn default() -> Self {
        Retention {
            result: default_result_retention(),
            stale_booking: default_stale_booking_retention(),
        }
    }
}

/// Chain voucher parameters used when a positive result is posted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainPolicy {
    pub limit: u32,
    pub ttl: TimeDelta,
}

pub struct TestingFlow {
    ledger: Arc<VoucherLedger>,
    locations: Arc<dyn RecordStore<TestingLocation>>,
    slots: Arc<dyn RecordStore<AppointmentSlot>>,
    confirmations: Arc<dyn RecordStore<ConfirmationRecord>>,
    policy: CodePolicy,
}

impl TestingFlow {
    pub fn new(
        ledger: Arc<VoucherLedger>,
        locations: Arc<dyn RecordStore<TestingLocation>>,
        slots: Arc<dyn RecordStore<AppointmentSlot>>,
        confirmations: Arc<dyn RecordStore<ConfirmationRecord>>,
    ) -> Self {
        let policy = ledger.policy().clone();
        TestingFlow {
            ledger,
            locations,
            slots,
            confirmations,
            policy,
        }
    }

    pub fn ledger(&self) -> &Arc<VoucherLedger> {
        &self.ledger
    }

    pub fn parse_confirmation(&self, raw: &str) -> Result<VoucherCode, FlowError> {
        Ok(code::normalize_and_check(
            raw,
            &self.policy,
            Namespace::Confirmation,
        )?)
    }

    pub fn location(&self, id: &str) -> Option<TestingLocation> {
        self.locations.get(id)
    }

    pub fn slot(&self, id: &str) -> Option<AppointmentSlot> {
        self.slots.get(id)
    }

    pub fn confirmation(&self, code: &VoucherCode) -> Option<ConfirmationRecord> {
        self.confirmations.get(code.as_str())
    }

    pub fn confirmation_count(&self) -> usize {
        self.confirmations.len()
    }

    pub fn add_location(&self, label: &str, address: &str) -> Result<TestingLocation, FlowError> {
        let loc = TestingLocation {
            location_id: fresh_id("loc"),
            label: label.to_owned(),
            address: address.to_owned(),
        };
        let rec = loc.clone();
        self.locations
            .update(&loc.location_id, &mut |_| Change::Put(rec.clone()))?;
        Ok(loc)
    }

    pub fn add_slots(
        &self,
        location_id: &str,
        specs: &[SlotSpec],
    ) -> Result<Vec<AppointmentSlot>, FlowError> {
        if self.locations.get(location_id).is_none() {
            return Err(FlowError::UnknownLocation);
        }
        if specs.iter().any(|s| s.window_start >= s.window_end) {
            return Err(FlowError::InvalidWindow);
        }
        let mut out = Vec::with_capacity(specs.len());
        for spec in specs {
            let slot = AppointmentSlot {
                slot_id: fresh_id("slot"),
                location_id: location_id.to_owned(),
                window_start: spec.window_start,
                window_end: spec.window_end,
                capacity: spec.capacity,
                booked: 0,
            };
            let rec = slot.clone();
            self.slots
                .update(&slot.slot_id, &mut |_| Change::Put(rec.clone()))?;
            out.push(slot);
        }
        Ok(out)
    }

    /// Adds imported rows, checking every referenced location first so a
    /// bad file adds nothing.
    pub fn add_slot_rows(&self, rows: &[SlotRow]) -> Result<Vec<AppointmentSlot>, FlowError> {
        for (i, row) in rows.iter().enumerate() {
            if self.locations.get(&row.location_id).is_none() {
                return Err(FlowError::Import {
                    row: i + 1,
                    message: format!("unknown location {}", row.location_id),
                });
            }
        }
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            out.extend(self.add_slots(&row.location_id, &[row.spec])?);
        }
        Ok(out)
    }

    /// Slots overlapping `[from, to)` with spare capacity, earliest first.
    pub fn list_available(
        &self,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<AppointmentSlot>, FlowError> {
        if from > to {
            return Err(FlowError::InvalidRange);
        }
        let mut slots = self
            .slots
            .values()
            .into_iter()
            .filter(|s| s.window_start < to && s.window_end > from && s.booked < s.capacity)
            .collect::<Vec<_>>();
        slots.sort_by(|a, b| (a.window_start, &a.slot_id).cmp(&(b.window_start, &b.slot_id)));
        Ok(slots)
    }

    /// Books `slot_id` with the use represented by `token`.
    ///
    /// On any failure the voucher use is handed back before returning.
    pub fn book_appointment(
        &self,
        token: RedemptionToken,
        slot_id: &str,
        now: DateTime<Utc>,
    ) -> Result<Booking, FlowError> {
        match self.reserve_and_confirm(slot_id, now) {
            Ok(booking) => Ok(booking),
            Err(e) => {
                self.ledger.compensate(token)?;
                Err(e)
            }
        }
    }

    fn reserve_and_confirm(&self, slot_id: &str, now: DateTime<Utc>) -> Result<Booking, FlowError> {
        let mut reserved: Result<AppointmentSlot, FlowError> = Err(FlowError::UnknownSlot);
        self.slots.update(slot_id, &mut |cur| match cur {
            None => {
                reserved = Err(FlowError::UnknownSlot);
                Change::Keep
            }
            Some(s) if s.booked >= s.capacity => {
                reserved = Err(FlowError::SlotFull);
                Change::Keep
            }
            Some(s) => {
                let mut next = s.clone();
                next.booked += 1;
                reserved = Ok(next.clone());
                Change::Put(next)
            }
        })?;
        let slot = reserved?;

        match self.create_confirmation(slot_id, now) {
            Ok(confirmation) => Ok(Booking {
                location: self.locations.get(&slot.location_id),
                confirmation,
                slot,
            }),
            Err(e) => {
                // Give the seat back; best effort, the booking is failing anyway.
                let _ = self.slots.update(slot_id, &mut |cur| match cur {
                    Some(s) if s.booked > 0 => {
                        let mut next = s.clone();
                        next.booked -= 1;
                        Change::Put(next)
                    }
                    _ => Change::Keep,
                });
                Err(e)
            }
        }
    }

    fn create_confirmation(
        &self,
        slot_id: &str,
        now: DateTime<Utc>,
    ) -> Result<ConfirmationRecord, FlowError> {
        let mut rng = rand::rng();
        for _ in 0..CODE_ATTEMPTS {
            let code = code::generate_code(&self.policy, Namespace::Confirmation, &mut rng)?;
            let record = ConfirmationRecord {
                confirmation_code: code.clone(),
                slot_id: slot_id.to_owned(),
                status: ConfirmationStatus::Booked,
                result: None,
                chain_voucher: None,
                created_at: now,
                result_at: None,
            };
            let mut inserted = false;
            self.confirmations
                .update(code.as_str(), &mut |cur| match cur {
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
        Err(FlowError::Voucher(VoucherError::CollisionLimit))
    }

    /// Lab action: the person presented the code and was tested.
    pub fn mark_performed(&self, code: &VoucherCode) -> Result<(), FlowError> {
        self.transition(code, |rec| {
            if !rec.status.can_transition(ConfirmationStatus::Performed) {
                return Err(FlowError::WrongState(rec.status));
            }
            let mut next = rec.clone();
            next.status = ConfirmationStatus::Performed;
            Ok(next)
        })
    }

    /// Lab action: record the outcome. A positive result issues a chain
    /// voucher that the citizen collects through [`Self::lookup_result`].
    pub fn post_result(
        &self,
        code: &VoucherCode,
        result: TestResult,
        now: DateTime<Utc>,
        chain: ChainPolicy,
    ) -> Result<(), FlowError> {
        self.transition(code, |rec| {
            if !rec.status.can_transition(ConfirmationStatus::ResultReady) {
                return Err(FlowError::WrongState(rec.status));
            }
            let chain_voucher = match result {
                TestResult::Positive => {
                    Some(self.ledger.issue_voucher(chain.limit, chain.ttl, now)?.code)
                }
                TestResult::Negative | TestResult::Inconclusive => None,
            };
            let mut next = rec.clone();
            next.status = ConfirmationStatus::ResultReady;
            next.result = Some(result);
            next.chain_voucher = chain_voucher;
            next.result_at = Some(now);
            Ok(next)
        })
    }

    fn transition(
        &self,
        code: &VoucherCode,
        mut step: impl FnMut(&ConfirmationRecord) -> Result<ConfirmationRecord, FlowError>,
    ) -> Result<(), FlowError> {
        let mut outcome = Err(FlowError::NotFound);
        self.confirmations.update(code.as_str(), &mut |cur| {
            let Some(rec) = cur else {
                outcome = Err(FlowError::NotFound);
                return Change::Keep;
            };
            match step(rec) {
                Ok(next) => {
                    outcome = Ok(());
                    Change::Put(next)
                }
                Err(e) => {
                    outcome = Err(e);
                    Change::Keep
                }
            }
        })?;
        outcome
    }

    pub fn lookup_result(&self, code: &VoucherCode) -> Result<LookupOutcome, FlowError> {
        let rec = self
            .confirmations
            .get(code.as_str())
            .ok_or(FlowError::NotFound)?;
        Ok(match (rec.status, rec.result) {
            (ConfirmationStatus::ResultReady, Some(result)) => LookupOutcome::Ready {
                result,
                chain_voucher: rec.chain_voucher,
            },
            _ => LookupOutcome::Pending,
        })
    }

    pub fn erase_confirmation(&self, code: &VoucherCode) -> Result<(), FlowError> {
        let mut outcome = Err(FlowError::NotFound);
        self.confirmations
            .update(code.as_str(), &mut |cur| match cur {
                None => {
                    outcome = Err(FlowError::NotFound);
                    Change::Keep
                }
                Some(rec) if !rec.status.can_transition(ConfirmationStatus::Erased) => {
                    outcome = Err(FlowError::WrongState(rec.status));
                    Change::Keep
                }
                Some(_) => {
                    outcome = Ok(());
                    Change::Remove
                }
            })?;
        outcome
    }

    /// Erases results older than `retention.result` and bookings whose slot
    /// ended more than `retention.stale_booking` ago.
    pub fn sweep_confirmations(
        &self,
        now: DateTime<Utc>,
        retention: Retention,
    ) -> Result<usize, FlowError> {
        let due = |rec: &ConfirmationRecord| match rec.status {
            ConfirmationStatus::ResultReady => {
                rec.result_at.is_some_and(|at| at + retention.result <= now)
            }
            ConfirmationStatus::Booked => {
                let ended = self
                    .slots
                    .get(&rec.slot_id)
                    .map_or(rec.created_at, |s| s.window_end);
                ended + retention.stale_booking <= now
            }
            ConfirmationStatus::Performed | ConfirmationStatus::Erased => false,
        };
        let mut erased = 0;
        for key in self.confirmations.keys_where(&due) {
            self.confirmations.update(&key, &mut |cur| match cur {
                Some(rec) if due(rec) => {
                    erased += 1;
                    Change::Remove
                }
                _ => Change::Keep,
            })?;
        }
        Ok(erased)
    }
}

fn fresh_id(prefix: &str) -> String {
    format!("{prefix}-{}", uuid::Uuid::new_v4().simple())
}

#[derive(Deserialize)]
struct RawSlotRow {
    location_id: String,
    window_start: String,
    window_end: String,
    capacity: String,
}

/// Reads slot definitions from CSV with the header
/// `location_id,window_start,window_end,capacity`. Timestamps are RFC 3339.
/// Rows are numbered from 1, not counting the header.
pub fn import_slots(reader: impl Read) -> Result<Vec<SlotRow>, FlowError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, raw) in rdr.deserialize::<RawSlotRow>().enumerate() {
        let row = i + 1;
        let err = |message: String| FlowError::Import { row, message };
        let raw = raw.map_err(|e| err(e.to_string()))?;
        let ts = |field: &str, v: &str| {
            DateTime::parse_from_rfc3339(v)
                .map(|t| t.to_utc())
                .map_err(|e| err(format!("{field} {v:?}: {e}")))
        };
        let window_start = ts("window_start", &raw.window_start)?;
        let window_end = ts("window_end", &raw.window_end)?;
        if window_start >= window_end {
            return Err(err("window_start must precede window_end".into()));
        }
        let capacity = raw
            .capacity
            .parse()
            .map_err(|e| err(format!("capacity {:?}: {e}", raw.capacity)))?;
        rows.push(SlotRow {
            location_id: raw.location_id,
            spec: SlotSpec {
                window_start,
                window_end,
                capacity,
            },
        });
    }
    Ok(rows)
}
