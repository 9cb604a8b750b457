use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const LEASE_FILE: &str = "COMPACTION.lease";
pub const DEFAULT_LEASE_TTL: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct LeaseDoc {
    holder: String,
    acquired_at_ms: u64,
    ttl_ms: u64,
    token: u64,
}

impl LeaseDoc {
    fn expired(&self, now_ms: u64) -> bool {
        now_ms >= self.acquired_at_ms.saturating_add(self.ttl_ms)
    }
}

/// Exclusive compaction-manager lease on a store root, held as
/// `COMPACTION.lease`. An expired lease may be taken over by anyone.
#[derive(Debug)]
pub struct Lease {
    path: PathBuf,
    doc: LeaseDoc,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn read_doc(path: &Path) -> Result<Option<LeaseDoc>> {
    match fs::read_to_string(path) {
        Ok(text) => match serde_json::from_str(&text) {
            Ok(doc) => Ok(Some(doc)),
            // A half-written lease from a crashed acquirer counts as expired.
            Err(_) => Ok(Some(LeaseDoc { holder: "?".into(), acquired_at_ms: 0, ttl_ms: 0, token: 0 })),
        },
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

impl Lease {
    pub fn acquire(root: &Path, holder: &str, ttl: Duration) -> Result<Lease> {
        let path = root.join(LEASE_FILE);
        let token = (u64::from(std::process::id()) << 32)
            ^ SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
        for _ in 0..4 {
            let doc = LeaseDoc {
                holder: holder.to_string(),
                acquired_at_ms: now_ms(),
                ttl_ms: ttl.as_millis() as u64,
                token,
            };
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(serde_json::to_string(&doc).expect("lease serializes").as_bytes())
                        .at(&path)?;
                    f.sync_all().at(&path)?;
                    return Ok(Lease { path, doc });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let Some(current) = read_doc(&path)? else { continue };
                    if !current.expired(now_ms()) {
                        return Err(Error::LeaseBusy(current.holder));
                    }
                    // Move the stale lease aside; only one contender wins the rename.
                    let aside = root.join(format!("{LEASE_FILE}.stale.{token}"));
                    if fs::rename(&path, &aside).is_ok() {
                        let _ = fs::remove_file(&aside);
                    }
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        let holder = read_doc(&path)?.map(|d| d.holder).unwrap_or_default();
        Err(Error::LeaseBusy(holder))
    }

    pub fn holder(&self) -> &str {
        &self.doc.holder
    }

    pub fn ttl(&self) -> Duration {
        Duration::from_millis(self.doc.ttl_ms)
    }

    /// Fails with `LeaseExpired` if the lease timed out or was taken over.
    pub fn check(&self) -> Result<()> {
        match read_doc(&self.path)? {
            Some(doc) if doc.token == self.doc.token && !doc.expired(now_ms()) => Ok(()),
            _ => Err(Error::LeaseExpired),
        }
    }

    /// Extend the lease by a full ttl from now.
    pub fn renew(&mut self) -> Result<()> {
        self.check()?;
        let mut doc = self.doc.clone();
        doc.acquired_at_ms = now_ms();
        let tmp = self.path.with_extension(format!("lease.tmp.{}", std::process::id()));
        fs::write(&tmp, serde_json::to_string(&doc).expect("lease serializes")).at(&tmp)?;
        fs::rename(&tmp, &self.path).at(&self.path)?;
        self.doc = doc;
        Ok(())
    }

    pub fn release(self) -> Result<()> {
        if self.check().is_ok() {
            fs::remove_file(&self.path).at(&self.path)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_holder_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let lease = Lease::acquire(dir.path(), "a", DEFAULT_LEASE_TTL).unwrap();
        assert!(matches!(
            Lease::acquire(dir.path(), "b", DEFAULT_LEASE_TTL),
            Err(Error::LeaseBusy(h)) if h == "a"
        ));
        lease.check().unwrap();
        lease.release().unwrap();
        Lease::acquire(dir.path(), "b", DEFAULT_LEASE_TTL).unwrap();
    }

    #[test]
    fn expired_lease_is_taken_over() {
        let dir = tempfile::tempdir().unwrap();
        let old = Lease::acquire(dir.path(), "a", Duration::from_millis(20)).unwrap();
        std::thread::sleep(Duration::from_millis(40));
        assert!(matches!(old.check(), Err(Error::LeaseExpired)));
        let new = Lease::acquire(dir.path(), "b", DEFAULT_LEASE_TTL).unwrap();
        new.check().unwrap();
        assert!(matches!(old.check(), Err(Error::LeaseExpired)));
    }

    #[test]
    fn renew_extends() {
        let dir = tempfile::tempdir().unwrap();
        let mut lease = Lease::acquire(dir.path(), "a", Duration::from_millis(200)).unwrap();
        std::thread::sleep(Duration::from_millis(120));
        lease.renew().unwrap();
        std::thread::sleep(Duration::from_millis(120));
        lease.check().unwrap();
    }
}
