//! Real-vs-fake perceptual study: participants see a real and a colorized
//! image side by side and pick the fake. The server hands out sessions,
//! records choices in append-only logs and reports how often participants
//! were fooled.

mod error;
pub mod eventlog;
pub mod fixture;
pub mod manifest;
pub mod results;
pub mod server;
pub mod session;

pub use error::{Error, Result};
pub use manifest::Manifest;
pub use results::{StudyResults, Summary};
pub use server::{router, serve, SessionDescriptor, Study};
pub use session::{Phase, Session, Side};

pub const PRACTICE_TRIALS: usize = 10;
pub const TEST_TRIALS: usize = 40;
/// 10% of the test trials.
pub const SENTINELS_PER_SESSION: usize = 4;
pub const EXPOSURE_MS: u64 = 1000;
/// A session draws distinct pairs for all practice and regular test trials;
/// the extra pairs leave room for variety between sessions.
pub const MIN_PAIRS: usize = 50;

#[cfg(test)]
mod testing {
    use crate::fixture::write_study_fixture;
    use crate::Manifest;

    pub fn manifest_with(pairs: usize, sentinels: usize) -> (tempfile::TempDir, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        let path = write_study_fixture(dir.path().join("images"), &[("ours", pairs)], sentinels).unwrap();
        (dir, Manifest::load(path).unwrap())
    }
}
