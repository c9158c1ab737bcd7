//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"GRCLMODL"
//! version  u32 (1)
//! n_users  u64
//! n_items  u64
//! dim      u64
//! layers   u64
//! variant  u8   (0 layer average, 1 self-loop last layer)
//! normalize u8  (0 or 1)
//! E^(0)    (n_users + n_items) * dim f64, row-major
//! ids      n_users user ids then n_items item ids, each u32 length + UTF-8
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::IdMap;
use crate::dense::Matrix;
use crate::encoder::{EmbeddingTable, PropagationConfig, Variant};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GRCLMODL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub users: IdMap,
    pub items: IdMap,
    pub e0: EmbeddingTable<f64>,
    pub propagation: PropagationConfig<f64>,
}

impl SavedModel {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n_users() + self.n_items();
        if self.e0.n() != n {
            return Err(Error::Dimension(format!(
                "{} embedding rows for {} users and {} items",
                self.e0.n(),
                self.n_users(),
                self.n_items()
            )));
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [
            self.n_users(),
            self.n_items(),
            self.e0.dim(),
            self.propagation.num_layers,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&[
            self.propagation.variant.tag(),
            u8::from(self.propagation.normalize_output),
        ])?;
        for x in self.e0.matrix.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
        for id in self.users.ids().iter().chain(self.items.ids()) {
            let len = u32::try_from(id.len())
                .map_err(|_| Error::Format(format!("id too long: {}", id.len())))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version}"
            )));
        }
        let n_users = read_len(&mut r)?;
        let n_items = read_len(&mut r)?;
        let dim = read_len(&mut r)?;
        let layers = read_len(&mut r)?;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let variant = Variant::from_tag(flags[0])
            .ok_or_else(|| Error::Format(format!("unknown variant tag {}", flags[0])))?;
        let normalize = match flags[1] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad normalization flag {b}"))),
        };
        let n = n_users
            .checked_add(n_items)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::Format("model dimensions overflow".into()))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let e0 = EmbeddingTable::new(Matrix::from_vec(n_users + n_items, dim, data)?)?;
        let users = IdMap::from_ids(read_ids(&mut r, n_users)?)?;
        let items = IdMap::from_ids(read_ids(&mut r, n_items)?)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        Ok(Self {
            users,
            items,
            e0,
            propagation: PropagationConfig::new(variant, layers, normalize),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Rows of `E^(0)` reordered to another set of user and item ids.
    /// Every requested id must be present in the model.
    pub fn table_for(&self, users: &IdMap, items: &IdMap) -> Result<EmbeddingTable<f64>> {
        let dim = self.e0.dim();
        let mut m = Matrix::zeros(users.len() + items.len(), dim);
        for (row, id) in users.ids().iter().enumerate() {
            let src = self
                .users
                .get(id)
                .ok_or_else(|| Error::Format(format!("user '{id}' is not in the model")))?;
            m.row_mut(row).copy_from_slice(self.e0.matrix.row(src));
        }
        for (k, id) in items.ids().iter().enumerate() {
            let src = self
                .items
                .get(id)
                .ok_or_else(|| Error::Format(format!("item '{id}' is not in the model")))?;
            m.row_mut(users.len() + k)
                .copy_from_slice(self.e0.matrix.row(self.n_users() + src));
        }
        EmbeddingTable::new(m)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    usize::try_from(u64::from_le_bytes(b))
        .map_err(|_| Error::Format("length exceeds address space".into()))
}

fn read_ids<R: Read>(r: &mut R, count: usize) -> Result<Vec<String>> {
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        ids.push(
            String::from_utf8(bytes).map_err(|e| Error::Format(format!("id is not UTF-8: {e}")))?,
        );
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SavedModel {
        let m = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25], vec![-0.125, 3.0]]).unwrap();
        SavedModel {
            users: IdMap::from_ids(vec!["alice".into()]).unwrap(),
            items: IdMap::from_ids(vec!["x".into(), "y".into()]).unwrap(),
            e0: EmbeddingTable::new(m).unwrap(),
            propagation: PropagationConfig::new(Variant::SelfLoopLast, 3, true),
        }
    }

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        model().write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(SavedModel::read_from(buf.as_slice()).unwrap(), model());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut buf = Vec::new();
        model().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            SavedModel::read_from(bad.as_slice()),
            Err(Error::Format(_))
        ));
        assert!(SavedModel::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn reorders_rows_by_id() {
        let m = model();
        let users = IdMap::from_ids(vec!["alice".into()]).unwrap();
        let items = IdMap::from_ids(vec!["y".into(), "x".into()]).unwrap();
        let t = m.table_for(&users, &items).unwrap();
        assert_eq!(t.matrix.row(1), &[-0.125, 3.0]);
        assert_eq!(t.matrix.row(2), &[2.0, 0.25]);
        let missing = IdMap::from_ids(vec!["z".into()]).unwrap();
        assert!(m.table_for(&users, &missing).is_err());
    }
}
