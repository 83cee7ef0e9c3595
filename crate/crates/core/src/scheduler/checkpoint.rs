use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Named payload files produced by one job.
pub type Outputs = BTreeMap<String, Vec<u8>>;

/// Completion records and payloads of finished jobs.
///
/// On disk, node `id` owns `<dir>/<id>.done`, holding `"<id> sha256:<hex>"`,
/// and the payload files under `<dir>/<id>.out/`. The digest covers the sorted
/// payload names and contents, so a torn or edited payload reads as not done.
#[derive(Debug)]
pub struct Checkpoint {
    store: Store,
}

#[derive(Debug)]
enum Store {
    Dir(PathBuf),
    Memory(Mutex<BTreeMap<String, (String, Outputs)>>),
}

pub(crate) fn digest(outputs: &Outputs) -> String {
    let mut h = Sha256::new();
    for (name, data) in outputs {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((data.len() as u64).to_le_bytes());
        h.update(data);
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl Checkpoint {
    /// Directory-backed checkpoint; the directory is created if missing.
    pub fn in_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Checkpoint { store: Store::Dir(dir) })
    }

    pub fn in_memory() -> Self {
        Checkpoint {
            store: Store::Memory(Mutex::new(BTreeMap::new())),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        match &self.store {
            Store::Dir(d) => Some(d),
            Store::Memory(_) => None,
        }
    }

    fn done_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.done"))
    }

    fn out_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.out"))
    }

    /// Stores `outputs` and then the completion record for `id`.
    pub fn record(&self, id: &str, outputs: &Outputs) -> Result<()> {
        if let Some(bad) = outputs.keys().find(|n| !valid_name(n)) {
            return Err(Error::Graph(format!("invalid payload name '{bad}' from '{id}'")));
        }
        let sum = digest(outputs);
        match &self.store {
            Store::Memory(m) => {
                m.lock()
                    .expect("checkpoint lock")
                    .insert(id.to_string(), (sum, outputs.clone()));
                Ok(())
            }
            Store::Dir(dir) => {
                self.clear(id)?;
                let tmp = dir.join(format!("{id}.out.tmp"));
                if tmp.exists() {
                    fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
                }
                fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
                for (name, data) in outputs {
                    let p = tmp.join(name);
                    fs::write(&p, data).map_err(|e| Error::io(&p, e))?;
                }
                let out = Self::out_path(dir, id);
                fs::rename(&tmp, &out).map_err(|e| Error::io(&out, e))?;
                let done = Self::done_path(dir, id);
                let tmp_done = dir.join(format!("{id}.done.tmp"));
                fs::write(&tmp_done, format!("{id} {sum}\n")).map_err(|e| Error::io(&tmp_done, e))?;
                fs::rename(&tmp_done, &done).map_err(|e| Error::io(&done, e))
            }
        }
    }

    /// Removes the record and payloads of `id`, if any.
    pub fn clear(&self, id: &str) -> Result<()> {
        match &self.store {
            Store::Memory(m) => {
                m.lock().expect("checkpoint lock").remove(id);
                Ok(())
            }
            Store::Dir(dir) => {
                let done = Self::done_path(dir, id);
                if done.exists() {
                    fs::remove_file(&done).map_err(|e| Error::io(&done, e))?;
                }
                let out = Self::out_path(dir, id);
                if out.exists() {
                    fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
                }
                Ok(())
            }
        }
    }

    /// Payloads of `id` if its record exists and the digest verifies.
    pub fn load(&self, id: &str) -> Option<Outputs> {
        match &self.store {
            Store::Memory(m) => {
                let m = m.lock().expect("checkpoint lock");
                let (sum, outputs) = m.get(id)?;
                (digest(outputs) == *sum).then(|| outputs.clone())
            }
            Store::Dir(dir) => {
                let record = fs::read_to_string(Self::done_path(dir, id)).ok()?;
                let (rid, sum) = record.trim().split_once(' ')?;
                if rid != id {
                    return None;
                }
                let mut outputs = Outputs::new();
                for entry in fs::read_dir(Self::out_path(dir, id)).ok()? {
                    let entry = entry.ok()?;
                    let name = entry.file_name().into_string().ok()?;
                    outputs.insert(name, fs::read(entry.path()).ok()?);
                }
                (digest(&outputs) == sum).then_some(outputs)
            }
        }
    }

    /// One payload of a completed node, read without re-verifying the digest.
    pub fn output(&self, id: &str, name: &str) -> Result<Vec<u8>> {
        let missing = || Error::Graph(format!("no output '{name}' recorded for '{id}'"));
        match &self.store {
            Store::Memory(m) => m
                .lock()
                .expect("checkpoint lock")
                .get(id)
                .and_then(|(_, o)| o.get(name).cloned())
                .ok_or_else(missing),
            Store::Dir(dir) => {
                if !valid_name(name) {
                    return Err(missing());
                }
                fs::read(Self::out_path(dir, id).join(name)).map_err(|_| missing())
            }
        }
    }

    /// Ids with a completion record, verified or not.
    pub fn recorded(&self) -> Vec<String> {
        match &self.store {
            Store::Memory(m) => m.lock().expect("checkpoint lock").keys().cloned().collect(),
            Store::Dir(dir) => {
                let mut ids: Vec<String> = fs::read_dir(dir)
                    .into_iter()
                    .flatten()
                    .filter_map(|e| e.ok()?.file_name().into_string().ok())
                    .filter_map(|n| n.strip_suffix(".done").map(str::to_string))
                    .collect();
                ids.sort();
                ids
            }
        }
    }

    /// Drops every record and payload.
    pub fn reset(&self) -> Result<()> {
        for id in self.recorded() {
            self.clear(&id)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outputs() -> Outputs {
        Outputs::from([
            ("model.json".to_string(), b"{\"a\":1}".to_vec()),
            ("valid.idx".to_string(), vec![1, 0, 0, 0]),
        ])
    }

    #[test]
    fn digest_is_order_and_boundary_sensitive() {
        let a = Outputs::from([("ab".to_string(), b"c".to_vec())]);
        let b = Outputs::from([("a".to_string(), b"bc".to_vec())]);
        assert_ne!(digest(&a), digest(&b));
        assert_eq!(digest(&outputs()), digest(&outputs()));
        assert!(digest(&a).starts_with("sha256:"));
        assert_eq!(digest(&a).len(), 7 + 64);
    }

    #[test]
    fn dir_round_trip_and_tamper_detection() {
        let tmp = tempfile::tempdir().unwrap();
        let ck = Checkpoint::in_dir(tmp.path().join("ck")).unwrap();
        assert!(ck.load("n1").is_none());
        ck.record("n1", &outputs()).unwrap();
        assert_eq!(ck.load("n1"), Some(outputs()));
        assert_eq!(ck.output("n1", "valid.idx").unwrap(), vec![1, 0, 0, 0]);
        assert_eq!(ck.recorded(), vec!["n1".to_string()]);
        let record = fs::read_to_string(tmp.path().join("ck/n1.done")).unwrap();
        assert_eq!(record.trim(), format!("n1 {}", digest(&outputs())));

        fs::write(tmp.path().join("ck/n1.out/valid.idx"), [2, 0, 0, 0]).unwrap();
        assert!(ck.load("n1").is_none());
        ck.record("n1", &outputs()).unwrap();
        assert!(ck.load("n1").is_some());
        fs::remove_file(tmp.path().join("ck/n1.out/model.json")).unwrap();
        assert!(ck.load("n1").is_none());

        ck.clear("n1").unwrap();
        assert!(ck.recorded().is_empty());
        assert!(ck.output("n1", "valid.idx").is_err());
    }

    #[test]
    fn memory_store() {
        let ck = Checkpoint::in_memory();
        ck.record("x", &outputs()).unwrap();
        assert_eq!(ck.load("x"), Some(outputs()));
        ck.reset().unwrap();
        assert!(ck.load("x").is_none());
        assert!(ck.dir().is_none());
    }

    #[test]
    fn rejects_unsafe_payload_names() {
        let ck = Checkpoint::in_memory();
        let bad = Outputs::from([("../x".to_string(), vec![])]);
        assert!(ck.record("x", &bad).is_err());
    }
}
