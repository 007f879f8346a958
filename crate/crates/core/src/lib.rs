//! Anonymous, citizen-driven contact tracing.
//!
//! People who test positive receive a short voucher code they may share with
//! a capped number of people they think they might have infected. A voucher
//! buys an anonymous test booking; the booking's confirmation code is the
//! only key needed to fetch the result, and a positive result carries a fresh
//! voucher so tracing continues one generation further.
//!
//! * [`code`]: code format, checksum, normalization.
//! * [`voucher`]: issuance, capped redemption, erasure.
//! * [`testing_flow`]: slots, bookings, lab actions, result lookup.
//! * [`store`]: record storage, in memory or one file per record.
//! * [`sim`]: branching-process simulator comparing voucher tracing with an
//!   app-adoption baseline.

pub mod code;
pub mod schema;
pub mod sim;
pub mod store;
pub mod testing_flow;
pub mod voucher;

use std::path::Path;
use std::sync::Arc;

pub use code::{CodeError, CodePolicy, Namespace, VoucherCode};
pub use store::{Change, FileStore, MemoryStore, RecordStore, StoreError};
pub use testing_flow::{
    AppointmentSlot, Booking, ChainPolicy, ConfirmationRecord, ConfirmationStatus, FlowError,
    LookupOutcome, Retention, SlotSpec, TestResult, TestingFlow, TestingLocation,
};
pub use voucher::{RedemptionToken, VoucherError, VoucherLedger, VoucherRecord, VoucherState};

/// The voucher ledger and testing flow wired to one backend.
pub struct Deployment {
    pub ledger: Arc<VoucherLedger>,
    pub flow: Arc<TestingFlow>,
}

impl Deployment {
    pub fn in_memory(policy: CodePolicy) -> Self {
        let ledger = Arc::new(VoucherLedger::new(Arc::new(MemoryStore::new()), policy));
        let flow = TestingFlow::new(
            ledger.clone(),
            Arc::new(MemoryStore::new()),
            Arc::new(MemoryStore::new()),
            Arc::new(MemoryStore::new()),
        );
        Deployment {
            ledger,
            flow: Arc::new(flow),
        }
    }

    /// Opens or creates a store directory with one subdirectory per record
    /// type.
    pub fn open(dir: &Path, policy: CodePolicy) -> Result<Self, StoreError> {
        let vouchers: FileStore<VoucherRecord> = FileStore::open(dir.join("vouchers"))?;
        let ledger = Arc::new(VoucherLedger::new(Arc::new(vouchers), policy));
        let locations: FileStore<TestingLocation> = FileStore::open(dir.join("locations"))?;
        let slots: FileStore<AppointmentSlot> = FileStore::open(dir.join("slots"))?;
        let confirmations: FileStore<ConfirmationRecord> =
            FileStore::open(dir.join("confirmations"))?;
        let flow = TestingFlow::new(
            ledger.clone(),
            Arc::new(locations),
            Arc::new(slots),
            Arc::new(confirmations),
        );
        Ok(Deployment {
            ledger,
            flow: Arc::new(flow),
        })
    }
}
