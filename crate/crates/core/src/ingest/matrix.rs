//! Dense row-major `f32` matrices and their on-disk encodings.
//!
//! The binary layout (`ZFM1`) is:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | magic `b"ZFM1"`                           |
//! | 4      | 1    | dtype code, `0x01` = little-endian `f32`  |
//! | 5      | 8    | rows, `u64` little-endian                 |
//! | 13     | 8    | cols, `u64` little-endian                 |
//! | 21     | 4·rows·cols | row-major payload                  |
//!
//! Files ending in `.csv` are read as headerless numeric CSV instead.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::IngestError;

/// Magic bytes at the start of every binary matrix file.
pub const MAGIC: [u8; 4] = *b"ZFM1";
/// The only dtype code defined in version 1 of the format.
pub const DTYPE_F32_LE: u8 = 0x01;
/// Size of the fixed header in bytes.
pub const HEADER_LEN: usize = 21;

/// A dense `rows × cols` matrix of `f32` values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, IngestError> {
        if rows == 0 || cols == 0 {
            return Err(IngestError::EmptyMatrix);
        }
        let expected = rows.checked_mul(cols).ok_or(IngestError::DimOverflow)?;
        if data.len() != expected {
            return Err(IngestError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, IngestError> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(IngestError::RaggedRows {
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Builds a one-column matrix.
    pub fn column(values: Vec<f32>) -> Result<Self, IngestError> {
        let rows = values.len();
        Self::new(rows, 1, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row `i` as a slice. Panics if `i >= rows`.
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    /// Returns the position of the first NaN or infinite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols, p % self.cols))
    }

    /// Serializes to the `ZFM1` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(DTYPE_F32_LE);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the `ZFM1` byte layout.
    pub fn from_bytes(bytes: &[u8], validate: bool) -> Result<Self, IngestError> {
        let (rows, cols) = parse_header(bytes)?;
        let payload_len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or(IngestError::DimOverflow)?;
        let available = bytes.len() - HEADER_LEN;
        if available < payload_len {
            return Err(IngestError::TruncatedFile {
                expected: HEADER_LEN + payload_len,
                found: bytes.len(),
            });
        }
        if available > payload_len {
            return Err(IngestError::TrailingBytes {
                extra: available - payload_len,
            });
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let m = Self::new(rows, cols, data)?;
        if validate {
            m.check_finite()?;
        }
        Ok(m)
    }

    fn check_finite(&self) -> Result<(), IngestError> {
        match self.first_non_finite() {
            Some((row, col)) => Err(IngestError::NonFiniteValue { row, col }),
            None => Ok(()),
        }
    }
}

fn parse_header(bytes: &[u8]) -> Result<(usize, usize), IngestError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(IngestError::MagicMismatch);
    }
    if bytes.len() < HEADER_LEN {
        return Err(IngestError::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[4] != DTYPE_F32_LE {
        return Err(IngestError::UnsupportedDtype(bytes[4]));
    }
    let rows = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[13..21].try_into().unwrap());
    let rows = usize::try_from(rows).map_err(|_| IngestError::DimOverflow)?;
    let cols = usize::try_from(cols).map_err(|_| IngestError::DimOverflow)?;
    Ok((rows, cols))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a matrix from a `ZFM1` file or, for a `.csv` path, from numeric CSV.
///
/// With `validate` set, NaN and infinite entries are rejected.
pub fn read_matrix(path: impl AsRef<Path>, validate: bool) -> Result<FeatureMatrix, IngestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    if is_csv(path) {
        let text = std::str::from_utf8(&bytes).map_err(|_| IngestError::Csv {
            line: 0,
            message: "not valid UTF-8".into(),
        })?;
        let m = parse_csv(text)?;
        if validate {
            m.check_finite()?;
        }
        Ok(m)
    } else {
        FeatureMatrix::from_bytes(&bytes, validate)
    }
}

/// Reads only the `(rows, cols)` shape of a matrix file.
///
/// For `ZFM1` files this touches the header alone; CSV files are parsed fully.
pub fn read_shape(path: impl AsRef<Path>) -> Result<(usize, usize), IngestError> {
    use std::io::Read;
    let path = path.as_ref();
    if is_csv(path) {
        let m = read_matrix(path, false)?;
        return Ok((m.rows(), m.cols()));
    }
    let mut file = fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut header = Vec::with_capacity(HEADER_LEN);
    Read::by_ref(&mut file)
        .take(HEADER_LEN as u64)
        .read_to_end(&mut header)
        .map_err(|e| IngestError::io(path, e))?;
    let (rows, cols) = parse_header(&header)?;
    let len = file.metadata().map_err(|e| IngestError::io(path, e))?.len();
    let payload = (rows as u128) * (cols as u128) * 4;
    if (len as u128) < HEADER_LEN as u128 + payload {
        return Err(IngestError::TruncatedFile {
            expected: usize::try_from(HEADER_LEN as u128 + payload).unwrap_or(usize::MAX),
            found: len as usize,
        });
    }
    if rows == 0 || cols == 0 {
        return Err(IngestError::EmptyMatrix);
    }
    Ok((rows, cols))
}

/// Writes a matrix in the `ZFM1` format.
pub fn write_matrix(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&m.to_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| IngestError::io(path, e))
}

fn parse_csv(text: &str) -> Result<FeatureMatrix, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = 0;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for field in &record {
            data.push(field.parse::<f32>().map_err(|_| IngestError::Csv {
                line,
                message: format!("cannot parse {field:?} as a number"),
            })?);
        }
        cols = record.len();
        rows += 1;
    }
    FeatureMatrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_two_by_two() {
        let m = FeatureMatrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"ZFM1");
        let back = FeatureMatrix::from_bytes(&bytes, true).unwrap();
        assert_eq!(back.rows(), 2);
        assert_eq!(back.cols(), 2);
        assert_eq!(back.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn format_sizes() {
        let one = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        assert_eq!(one.to_bytes().len(), 25);
        let two_by_three = FeatureMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(two_by_three.to_bytes().len() - HEADER_LEN, 24);
        assert_eq!(HEADER_LEN, 21);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = FeatureMatrix::new(2, 2, vec![1.0; 4]).unwrap().to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes, true),
            Err(IngestError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn bad_magic_and_dtype() {
        let mut bytes = FeatureMatrix::new(1, 1, vec![1.0]).unwrap().to_bytes();
        bytes[4] = 0x02;
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes, true),
            Err(IngestError::UnsupportedDtype(2))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes, true),
            Err(IngestError::MagicMismatch)
        ));
    }

    #[test]
    fn huge_dims_overflow() {
        let mut bytes = Vec::from(MAGIC);
        bytes.push(DTYPE_F32_LE);
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes, true),
            Err(IngestError::DimOverflow)
        ));
    }

    #[test]
    fn nan_rejected_only_when_validating() {
        let m = FeatureMatrix::new(1, 2, vec![1.0, f32::NAN]).unwrap();
        let bytes = m.to_bytes();
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes, true),
            Err(IngestError::NonFiniteValue { row: 0, col: 1 })
        ));
        assert!(FeatureMatrix::from_bytes(&bytes, false).is_ok());
    }

    #[test]
    fn csv_with_crlf() {
        let m = parse_csv("1.5,2\r\n3,-4e1\r\n").unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.data(), &[1.5, 2.0, 3.0, -40.0]);
        assert!(parse_csv("1,2\n3\n").is_err());
        assert!(parse_csv("a,b\n").is_err());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let m = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        let err = write_matrix(&m, "/nonexistent-dir/sub/m.zfm").unwrap_err();
        assert!(matches!(err, IngestError::Io { .. }));
    }
}
