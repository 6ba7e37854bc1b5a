//! Portable on-disk container for instances: named matrices as
//! little-endian 64-bit floats behind a tiny header, plus CSV export of
//! datasets and matrices for inspection.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   5 bytes  b"MPGS1"
//! count   u16      number of records
//! record: u16      name length in bytes
//!         ...      name, UTF-8
//!         u64      rows
//!         u64      cols
//!         ...      rows·cols f64, column-major
//! ```
//!
//! Scalars travel as 1×1 matrices under documented role names, so a file is
//! self-describing: `read_matrices` recovers every record without knowing
//! which bundle type wrote it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::instances::{CriticalInstanceBundle, SfdaDataset, SgepInstance};

const MAGIC: &[u8; 5] = b"MPGS1";
/// Upper bound on a single matrix's element count — rejects nonsense
/// headers before they turn into gigabyte allocations.
const MAX_ELEMENTS: u64 = 1 << 28;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format { reason: reason.into() }
}

fn write_u16(w: &mut impl Write, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

/// Writes named matrices to `path` in the container format.
pub fn write_matrices(path: &Path, records: &[(&str, &DMatrix<f64>)]) -> Result<()> {
    if records.len() > u16::MAX as usize {
        return Err(format_err("too many records for one container"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u16(&mut w, records.len() as u16)?;
    for (name, matrix) in records {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(format_err(format!("record name too long: {name:?}")));
        }
        write_u16(&mut w, bytes.len() as u16)?;
        w.write_all(bytes)?;
        write_u64(&mut w, matrix.nrows() as u64)?;
        write_u64(&mut w, matrix.ncols() as u64)?;
        for value in matrix.iter() {
            // Column-major: DMatrix iteration order.
            w.write_all(&value.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every record of a container file.
pub fn read_matrices(path: &Path) -> Result<Vec<(String, DMatrix<f64>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic: [u8; 5] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(format_err(format!(
            "not an instance container: expected magic {MAGIC:?}, found {magic:?}"
        )));
    }
    let count = read_u16(&mut r)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| format_err("record name is not valid UTF-8"))?;
        let rows = read_u64(&mut r)?;
        let cols = read_u64(&mut r)?;
        if rows.saturating_mul(cols) > MAX_ELEMENTS {
            return Err(format_err(format!(
                "record {name:?} claims {rows}x{cols} entries, refusing to allocate"
            )));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        records.push((name, DMatrix::from_vec(rows, cols, data)));
    }
    Ok(records)
}

/// Records as a name-keyed lookup, preserving an error message that names
/// the missing role.
struct RecordSet {
    records: Vec<(String, DMatrix<f64>)>,
}

impl RecordSet {
    fn load(path: &Path) -> Result<RecordSet> {
        Ok(RecordSet { records: read_matrices(path)? })
    }

    fn take(&self, name: &str) -> Result<DMatrix<f64>> {
        self.records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| format_err(format!("container is missing the {name:?} record")))
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let m = self.take(name)?;
        if m.shape() != (1, 1) {
            return Err(format_err(format!(
                "record {name:?} should be a 1x1 scalar, found {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m[(0, 0)])
    }

    fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let m = self.take(name)?;
        if m.ncols() != 1 {
            return Err(format_err(format!(
                "record {name:?} should be a column vector, found {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(DVector::from_column_slice(m.as_slice()))
    }
}

fn scalar_record(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Encodes an optional count: the count itself, or −1 for "absent".
fn encode_opt(k: Option<usize>) -> f64 {
    k.map_or(-1.0, |v| v as f64)
}

fn decode_opt(v: f64, what: &str) -> Result<Option<usize>> {
    if v == -1.0 {
        Ok(None)
    } else if v >= 0.0 && v.fract() == 0.0 {
        Ok(Some(v as usize))
    } else {
        Err(format_err(format!("{what} is neither a count nor the absent marker: {v}")))
    }
}

fn decode_usize(v: f64, what: &str) -> Result<usize> {
    decode_opt(v, what)?.ok_or_else(|| format_err(format!("{what} must be present")))
}

pub fn save_sgep(path: &Path, instance: &SgepInstance) -> Result<()> {
    let lambda = scalar_record(instance.lambda());
    let topk = scalar_record(encode_opt(instance.topk()));
    let p = scalar_record(instance.p() as f64);
    write_matrices(
        path,
        &[
            ("A", instance.a()),
            ("B", instance.b()),
            ("lambda", &lambda),
            ("topk", &topk),
            ("p", &p),
        ],
    )
}

/// Loads and *revalidates* a trace-ratio instance (symmetry and
/// definiteness are checked again, so a corrupted file cannot smuggle in an
/// invalid problem).
pub fn load_sgep(path: &Path) -> Result<SgepInstance> {
    let set = RecordSet::load(path)?;
    SgepInstance::new(
        set.take("A")?,
        set.take("B")?,
        set.scalar("lambda")?,
        decode_opt(set.scalar("topk")?, "topk record")?,
        decode_usize(set.scalar("p")?, "p record")?,
    )
}

pub fn save_bundle(path: &Path, bundle: &CriticalInstanceBundle) -> Result<()> {
    let xbar = DMatrix::from_column_slice(bundle.n(), 1, bundle.xbar.as_slice());
    let xi = DMatrix::from_column_slice(bundle.xi.len(), 1, bundle.xi.as_slice());
    let w1 = DMatrix::from_column_slice(bundle.w1.len(), 1, bundle.w1.as_slice());
    let w2 = DMatrix::from_column_slice(bundle.w2.len(), 1, bundle.w2.as_slice());
    let lambda = scalar_record(bundle.lambda);
    let topk = scalar_record(bundle.topk as f64);
    let global_opt = scalar_record(bundle.global_opt);
    let nnls_residual = scalar_record(bundle.nnls_residual);
    let seed = scalar_record(bundle.seed as f64);
    let theta = scalar_record(bundle.theta);
    let gamma = scalar_record(bundle.gamma);
    write_matrices(
        path,
        &[
            ("A", &bundle.a),
            ("B", &bundle.b),
            ("xbar", &xbar),
            ("lambda", &lambda),
            ("topk", &topk),
            ("global_opt", &global_opt),
            ("nnls_residual", &nnls_residual),
            ("seed", &seed),
            ("xi", &xi),
            ("theta", &theta),
            ("U", &bundle.u),
            ("gamma", &gamma),
            ("w1", &w1),
            ("w2", &w2),
        ],
    )
}

pub fn load_bundle(path: &Path) -> Result<CriticalInstanceBundle> {
    let set = RecordSet::load(path)?;
    Ok(CriticalInstanceBundle {
        a: set.take("A")?,
        b: set.take("B")?,
        xbar: set.vector("xbar")?,
        lambda: set.scalar("lambda")?,
        topk: decode_usize(set.scalar("topk")?, "topk record")?,
        global_opt: set.scalar("global_opt")?,
        nnls_residual: set.scalar("nnls_residual")?,
        seed: decode_usize(set.scalar("seed")?, "seed record")? as u64,
        xi: set.vector("xi")?,
        theta: set.scalar("theta")?,
        u: set.take("U")?,
        gamma: set.scalar("gamma")?,
        w1: set.vector("w1")?,
        w2: set.vector("w2")?,
    })
}

fn labels_record(labels: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), 1, |i, _| labels[i] as f64)
}

fn decode_labels(m: &DMatrix<f64>) -> Result<Vec<usize>> {
    m.iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(format_err(format!("label record holds a non-label value: {v}")))
            }
        })
        .collect()
}

pub fn save_sfda(path: &Path, dataset: &SfdaDataset) -> Result<()> {
    let train_labels = labels_record(&dataset.train_labels);
    let test_labels = labels_record(&dataset.test_labels);
    let ridge = scalar_record(dataset.ridge);
    let seed = scalar_record(dataset.seed as f64);
    write_matrices(
        path,
        &[
            ("train", &dataset.train),
            ("train_labels", &train_labels),
            ("test", &dataset.test),
            ("test_labels", &test_labels),
            ("A", &dataset.a),
            ("B", &dataset.b),
            ("ridge", &ridge),
            ("seed", &seed),
        ],
    )
}

pub fn load_sfda(path: &Path) -> Result<SfdaDataset> {
    let set = RecordSet::load(path)?;
    Ok(SfdaDataset {
        train: set.take("train")?,
        train_labels: decode_labels(&set.take("train_labels")?)?,
        test: set.take("test")?,
        test_labels: decode_labels(&set.take("test_labels")?)?,
        a: set.take("A")?,
        b: set.take("B")?,
        ridge: set.scalar("ridge")?,
        seed: decode_usize(set.scalar("seed")?, "seed record")? as u64,
    })
}

/// Writes one matrix as CSV, one row per line, entries through the
/// shortest-round-trip float formatting (lossless when parsed back).
pub fn write_matrix_csv(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols()).map(|j| matrix[(i, j)].to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headerless numeric CSV back into a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|field| field.parse::<f64>()).collect();
        rows.push(row.map_err(|e| format_err(format!("non-numeric CSV field: {e}")))?);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(format_err("CSV rows have inconsistent lengths"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Exports the dataset splits for inspection: `<stem>_train.csv` and
/// `<stem>_test.csv`, each row `label, feature_0, …`.
pub fn sfda_to_csv(path_stem: &Path, dataset: &SfdaDataset) -> Result<()> {
    let named = |suffix: &str| {
        let mut name = path_stem.file_name().unwrap_or_default().to_os_string();
        name.push(suffix);
        path_stem.with_file_name(name)
    };
    let dump = |path: &Path, data: &DMatrix<f64>, labels: &[usize]| -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string()];
        header.extend((0..data.ncols()).map(|j| format!("feature_{j}")));
        w.write_record(&header)?;
        for (i, &label) in labels.iter().enumerate() {
            let mut row = vec![label.to_string()];
            row.extend((0..data.ncols()).map(|j| data[(i, j)].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    dump(&named("_train.csv"), &dataset.train, &dataset.train_labels)?;
    dump(&named("_test.csv"), &dataset.test, &dataset.test_labels)
}
