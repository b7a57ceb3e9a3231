//! On-disk patch store: a binary record file plus a JSON-lines index.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DriverKind, Patch, PatchConfig, PatchError, PatchIndexEntry, Result};
use crate::raster::dump::{block_len, read_block, write_block};
use crate::transform::TransformModel;

pub const STORE_FILE: &str = "patches.bin";
pub const INDEX_FILE: &str = "index.jsonl";
pub const META_FILE: &str = "store.json";
pub const TRANSFORM_FILE: &str = "transform.json";
const STORE_VERSION: u32 = 1;

/// Store-wide layout shared by every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub version: u32,
    pub patch_cells: usize,
    pub lr_cells: usize,
    pub alpha: usize,
    pub cell_size: f64,
    pub drivers: Vec<DriverKind>,
    pub n_patches: usize,
}

impl StoreMeta {
    pub fn new(cfg: &PatchConfig, drivers: Vec<DriverKind>, cell_size: f64) -> Self {
        Self {
            version: STORE_VERSION,
            patch_cells: cfg.patch_cells,
            lr_cells: cfg.lr_cells(),
            alpha: cfg.alpha,
            cell_size,
            drivers,
            n_patches: 0,
        }
    }

    /// Bytes of one record.
    pub fn record_len(&self) -> usize {
        let hr = block_len(self.patch_cells, self.patch_cells);
        let lr = block_len(self.lr_cells, self.lr_cells);
        2 * hr + 2 * lr + self.drivers.len() * (hr + lr)
    }

    pub fn driver_position(&self, kind: DriverKind) -> Option<usize> {
        self.drivers.iter().position(|&d| d == kind)
    }
}

pub struct StoreWriter {
    dir: PathBuf,
    meta: StoreMeta,
    data: BufWriter<File>,
    index: BufWriter<File>,
    offset: u64,
}

impl StoreWriter {
    pub fn create(dir: &Path, meta: StoreMeta, transform: &TransformModel) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        transform.save(dir.join(TRANSFORM_FILE))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            data: BufWriter::new(File::create(dir.join(STORE_FILE))?),
            index: BufWriter::new(File::create(dir.join(INDEX_FILE))?),
            offset: 0,
        })
    }

    /// Append a patch; its `store_offset` is assigned here.
    pub fn push(&mut self, mut patch: Patch) -> Result<PatchIndexEntry> {
        let m = &self.meta;
        let (hr, lr) = ((m.patch_cells, m.patch_cells), (m.lr_cells, m.lr_cells));
        let shapes_ok = patch.i_hr.dim() == hr
            && patch.t_hr.dim() == hr
            && patch.i_lr.dim() == lr
            && patch.t_lr.dim() == lr
            && patch.drivers_lr.len() == m.drivers.len()
            && patch.drivers_hr.len() == m.drivers.len()
            && patch.drivers_lr.iter().all(|d| d.dim() == lr)
            && patch.drivers_hr.iter().all(|d| d.dim() == hr);
        if !shapes_ok {
            return Err(PatchError::BadStore(format!(
                "patch {} does not match the store layout",
                patch.meta.patch_id
            )));
        }
        let cs = m.cell_size;
        let lr_cs = cs * m.alpha as f64;
        let mut written = 0;
        written += write_block(&mut self.data, patch.i_hr.view(), cs)?;
        written += write_block(&mut self.data, patch.i_lr.view(), lr_cs)?;
        written += write_block(&mut self.data, patch.t_hr.view(), cs)?;
        written += write_block(&mut self.data, patch.t_lr.view(), lr_cs)?;
        for d in &patch.drivers_lr {
            written += write_block(&mut self.data, d.view(), lr_cs)?;
        }
        for d in &patch.drivers_hr {
            written += write_block(&mut self.data, d.view(), cs)?;
        }
        debug_assert_eq!(written, m.record_len());
        patch.meta.store_offset = self.offset;
        self.offset += written as u64;
        serde_json::to_writer(&mut self.index, &patch.meta)?;
        self.index.write_all(b"\n")?;
        self.meta.n_patches += 1;
        Ok(patch.meta)
    }

    pub fn finish(mut self) -> Result<StoreMeta> {
        self.data.flush()?;
        self.index.flush()?;
        std::fs::write(self.dir.join(META_FILE), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(self.meta)
    }
}

/// Read access to a finished store. Reads are positional, so a shared
/// reference can serve many threads.
pub struct PatchStore {
    dir: PathBuf,
    meta: StoreMeta,
    index: Vec<PatchIndexEntry>,
    file: File,
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = file.seek_read(buf, offset)?;
        if n == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        buf = &mut buf[n..];
        offset += n as u64;
    }
    Ok(())
}

impl PatchStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let meta: StoreMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)?;
        if meta.version != STORE_VERSION {
            return Err(PatchError::BadStore(format!("unsupported version {}", meta.version)));
        }
        let mut index = Vec::with_capacity(meta.n_patches);
        for line in BufReader::new(File::open(dir.join(INDEX_FILE))?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                index.push(serde_json::from_str::<PatchIndexEntry>(&line)?);
            }
        }
        if index.len() != meta.n_patches {
            return Err(PatchError::BadStore(format!(
                "index lists {} patches, metadata says {}",
                index.len(),
                meta.n_patches
            )));
        }
        let file = File::open(dir.join(STORE_FILE))?;
        let expected = (meta.n_patches * meta.record_len()) as u64;
        if file.metadata()?.len() != expected {
            return Err(PatchError::BadStore("record file has the wrong size".into()));
        }
        Ok(Self { dir, meta, index, file })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn index(&self) -> &[PatchIndexEntry] {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// The transform that produced the stored `t_*` arrays.
    pub fn transform(&self) -> Result<TransformModel> {
        Ok(TransformModel::load(self.dir.join(TRANSFORM_FILE))?)
    }

    pub fn entry(&self, patch_id: u64) -> Option<&PatchIndexEntry> {
        // ids are assigned densely in write order
        self.index
            .get(patch_id as usize)
            .filter(|e| e.patch_id == patch_id)
            .or_else(|| self.index.iter().find(|e| e.patch_id == patch_id))
    }

    pub fn read(&self, patch_id: u64) -> Result<Patch> {
        let entry = self
            .entry(patch_id)
            .ok_or_else(|| PatchError::BadStore(format!("no patch with id {patch_id}")))?;
        self.read_entry(entry)
    }

    pub fn read_entry(&self, entry: &PatchIndexEntry) -> Result<Patch> {
        let mut buf = vec![0u8; self.meta.record_len()];
        read_at(&self.file, &mut buf, entry.store_offset)?;
        let mut cursor = buf.as_slice();
        let mut next = || -> Result<Array2<f64>> { Ok(read_block(&mut cursor)?.0) };
        let i_hr = next()?;
        let i_lr = next()?;
        let t_hr = next()?;
        let t_lr = next()?;
        let d = self.meta.drivers.len();
        let drivers_lr = (0..d).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let drivers_hr = (0..d).map(|_| next()).collect::<Result<Vec<_>>>()?;
        Ok(Patch {
            meta: entry.clone(),
            i_hr,
            i_lr,
            t_hr,
            t_lr,
            drivers_lr,
            drivers_hr,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchset::build_store;
    use crate::raster::{GeoExtent, RasterGrid, RasterKind};
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Vec<RasterGrid>, Vec<(DriverKind, RasterGrid)>, RasterGrid) {
        let e = GeoExtent::new(5.0, 10.0, 45.0, 49.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let em = (1..=3)
            .map(|d| {
                RasterGrid::new(
                    e,
                    Array2::from_shape_fn(e.shape(), |_| {
                        if rng.random_bool(0.05) { 0.0 } else { rng.random::<f64>() * 1e-10 }
                    }),
                    RasterKind::Emission,
                    NaiveDate::from_ymd_opt(2018, 6, d),
                )
                .unwrap()
            })
            .collect();
        let cl = RasterGrid::new(e, Array2::from_shape_fn(e.shape(), |(r, c)| ((r + c) % 101) as f64), RasterKind::Percentage, None).unwrap();
        let tc = RasterGrid::new(e, Array2::from_shape_fn(e.shape(), |(r, _)| r as f64), RasterKind::Percentage, None).unwrap();
        let climate = RasterGrid::new(
            e,
            Array2::from_shape_fn(e.shape(), |(_, c)| if c < 25 { 15.0 } else { 26.0 }),
            RasterKind::ClimateClass,
            None,
        )
        .unwrap();
        (em, vec![(DriverKind::Cl, cl), (DriverKind::Tc, tc)], climate)
    }

    #[test]
    fn store_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (em, drivers, climate) = fixture();
        let cfg = PatchConfig::default();
        let summary = build_store(dir.path(), &em, &drivers, Some(&climate), &cfg, None).unwrap();
        assert_eq!(summary.n_windows, 3 * 2 * 3);
        let store = PatchStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), summary.n_retained);
        assert_eq!(store.meta().drivers, vec![DriverKind::Cl, DriverKind::Tc]);
        let t = store.transform().unwrap();

        let windows = crate::patchset::extract_patches(&em, &cfg).unwrap();
        let refs: Vec<_> = drivers.iter().map(|(k, g)| crate::patchset::DriverGrid { kind: *k, grid: g }).collect();
        for (w, entry) in windows.iter().zip(store.index()) {
            let mut want = crate::patchset::build_patch(&em[w.date_index], w, &refs, Some(&climate), &t, &cfg, entry.patch_id).unwrap();
            want.meta.store_offset = entry.store_offset;
            let got = store.read(entry.patch_id).unwrap();
            for (a, b) in [(&got.i_hr, &want.i_hr), (&got.i_lr, &want.i_lr), (&got.t_hr, &want.t_hr), (&got.t_lr, &want.t_lr)] {
                assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(got, want);
            assert!(entry.zero_fraction <= 0.10);
        }
        let e0 = &store.index()[0];
        assert_eq!(e0.store_offset, 0);
        assert_eq!(store.index()[1].store_offset, store.meta().record_len() as u64);
    }

    #[test]
    fn index_lines_are_json() {
        let dir = tempfile::tempdir().unwrap();
        let (em, drivers, climate) = fixture();
        build_store(dir.path(), &em, &drivers, Some(&climate), &PatchConfig::default(), None).unwrap();
        let text = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["patch_id"], 0);
        assert_eq!(first["date"], "2018-06-01");
        assert_eq!(first["climate_class"], 15);
    }

    #[test]
    fn truncated_store_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (em, drivers, climate) = fixture();
        build_store(dir.path(), &em, &drivers, Some(&climate), &PatchConfig::default(), None).unwrap();
        let path = dir.path().join(STORE_FILE);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(PatchStore::open(dir.path()), Err(PatchError::BadStore(_))));
    }
}
