//! Field allowlists for every persisted record type.
//!
//! Audits serialize a record and compare its top-level field names against
//! the list here, so adding a field to a persisted struct without updating
//! this file fails the test suite.

use std::collections::BTreeSet;

use serde::Serialize;

pub const VOUCHER_RECORD_FIELDS: &[&str] = &[
    "code",
    "remaining_uses",
    "initial_limit",
    "expires_at",
    "state",
];

pub const CONFIRMATION_RECORD_FIELDS: &[&str] = &[
    "confirmation_code",
    "slot_id",
    "status",
    "result",
    "chain_voucher",
    "created_at",
    "result_at",
];

pub const APPOINTMENT_SLOT_FIELDS: &[&str] = &[
    "slot_id",
    "location_id",
    "window_start",
    "window_end",
    "capacity",
    "booked",
];

pub const TESTING_LOCATION_FIELDS: &[&str] = &["location_id", "label", "address"];

/// Substrings that must never appear in a persisted field name. `address`
/// is allowed only as the facility address of a testing location.
pub const IDENTITY_MARKERS: &[&str] = &[
    "name", "phone", "email", "person", "citizen", "device", "ip", "contact", "user", "lab",
    "parent", "issuer", "redeemed",
];

/// Top-level field names of `value` once serialized.
pub fn persisted_fields<T: Serialize>(value: &T) -> BTreeSet<String> {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

pub fn allowlist(fields: &[&str]) -> BTreeSet<String> {
    fields.iter().map(|s| (*s).to_owned()).collect()
}

/// Field names containing an identity marker. `chain_voucher` and the
/// voucher's own `code` are the only voucher references allowed.
pub fn identity_like(fields: &BTreeSet<String>) -> Vec<String> {
    fields
        .iter()
        .filter(|f| f.split('_').any(|part| IDENTITY_MARKERS.contains(&part)))
        .cloned()
        .collect()
}
