//! User and item parameter matrices with matryoshka slicing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::{Deref, Range};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::types::DimensionSchedule;

/// Dense row-major `rows x dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    rows: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![T::zero(); rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::LengthMismatch(data.len(), rows * dim));
        }
        Ok(Self { rows, dim, data })
    }

    /// Xavier-uniform initialisation with `fan_in = fan_out = dim`: entries
    /// are i.i.d. on `[-b, b]`, `b = sqrt(6 / (dim + dim))`.
    ///
    /// Samples are drawn in `f64` and rounded, so `f32` and `f64` tables
    /// built from the same seed agree to `f32` precision.
    pub fn init_xavier(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_xavier_with(rows, dim, &mut rng)
    }

    pub fn init_xavier_with<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        let bound = xavier_bound(dim);
        let data = (0..rows * dim)
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        Self { rows, dim, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_row(&self, r: usize) -> Result<()> {
        if r >= self.rows {
            Err(Error::RowOutOfRange {
                row: r,
                rows: self.rows,
            })
        } else {
            Ok(())
        }
    }

    fn check_schedule(&self, schedule: &DimensionSchedule) -> Result<()> {
        if schedule.full_dim() != self.dim {
            return Err(Error::ScheduleMismatch(format!(
                "schedule full_dim {} but table dim {}",
                schedule.full_dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Dimensions `[0, d_level)` of row `r` (1-based level).
    pub fn prefix_slice(
        &self,
        r: usize,
        level: usize,
        schedule: &DimensionSchedule,
    ) -> Result<SlicedView<'_, T>> {
        self.check_schedule(schedule)?;
        self.check_row(r)?;
        let hi = schedule.size(level)?;
        Ok(SlicedView::new(self.row(r), 0..hi))
    }

    /// Dimensions `[d_x, d_y)` of row `r`, with `d_0 = 0`.
    pub fn block_slice(
        &self,
        r: usize,
        x: usize,
        y: usize,
        schedule: &DimensionSchedule,
    ) -> Result<SlicedView<'_, T>> {
        self.check_schedule(schedule)?;
        self.check_row(r)?;
        let range = schedule.block(x, y)?;
        Ok(SlicedView::new(self.row(r), range))
    }

    /// Dimensions `[0, cut)` of row `r`.
    pub fn truncated(&self, r: usize, cut: usize) -> &[T] {
        &self.row(r)[..cut]
    }

    /// One row per line, space-separated decimals.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for r in 0..self.rows {
            let line = self
                .row(r)
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Converts entrywise to another scalar type.
    pub fn cast<U: Scalar>(&self) -> EmbeddingTable<U> {
        EmbeddingTable {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}

/// `sqrt(6 / (dim + dim)) = sqrt(3 / dim)`.
pub fn xavier_bound(dim: usize) -> f64 {
    (6.0 / (2 * dim) as f64).sqrt()
}

/// Borrowed view of dimensions `[lo, hi)` of one embedding row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicedView<'a, T> {
    values: &'a [T],
    lo: usize,
    hi: usize,
}

impl<'a, T> SlicedView<'a, T> {
    pub fn new(row: &'a [T], range: Range<usize>) -> Self {
        assert!(range.start < range.end && range.end <= row.len());
        Self {
            values: &row[range.clone()],
            lo: range.start,
            hi: range.end,
        }
    }

    pub fn range(&self) -> Range<usize> {
        self.lo..self.hi
    }

    pub fn values(&self) -> &'a [T] {
        self.values
    }
}

impl<T> Deref for SlicedView<'_, T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        self.values
    }
}

/// Inner product of two equally sized views.
pub fn sliced_score<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(dot(a, b))
}

/// User and item tables sharing one dimension schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub users: EmbeddingTable<T>,
    pub items: EmbeddingTable<T>,
    pub schedule: DimensionSchedule,
}

const MAGIC: &[u8; 8] = b"MRLREC01";

impl<T: Scalar> Model<T> {
    pub fn new(
        users: EmbeddingTable<T>,
        items: EmbeddingTable<T>,
        schedule: DimensionSchedule,
    ) -> Result<Self> {
        users.check_schedule(&schedule)?;
        items.check_schedule(&schedule)?;
        Ok(Self {
            users,
            items,
            schedule,
        })
    }

    /// Xavier-initialised model; users and items draw from separate streams
    /// derived from `seed`.
    pub fn init(n_users: usize, n_items: usize, schedule: DimensionSchedule, seed: u64) -> Self {
        let dim = schedule.full_dim();
        let users =
            EmbeddingTable::init_xavier(n_users, dim, crate::digest::derive_seed(seed, "init.users"));
        let items =
            EmbeddingTable::init_xavier(n_items, dim, crate::digest::derive_seed(seed, "init.items"));
        Self {
            users,
            items,
            schedule,
        }
    }

    pub fn dim(&self) -> usize {
        self.schedule.full_dim()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            users: self.users.cast(),
            items: self.items.cast(),
            schedule: self.schedule.clone(),
        }
    }

    /// Binary checkpoint: magic `MRLREC01`; little-endian u64 `n_users`,
    /// `n_items`, `dim`, `L`; the `L` schedule sizes as u64; then the user
    /// and item matrices as row-major little-endian f32.
    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(MAGIC)?;
        let header = [
            self.users.rows() as u64,
            self.items.rows() as u64,
            self.dim() as u64,
            self.schedule.levels() as u64,
        ];
        for v in header
            .iter()
            .chain(self.schedule.sizes().iter().map(|&s| s as u64).collect::<Vec<_>>().iter())
        {
            w.write_all(&v.to_le_bytes())?;
        }
        for x in self.users.as_slice().iter().chain(self.items.as_slice()) {
            w.write_all(&x.as_f32().to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let read_u64 = |r: &mut BufReader<R>| -> Result<u64> {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint("truncated header".into()))?;
            Ok(u64::from_le_bytes(buf))
        };
        let n_users = read_u64(&mut r)? as usize;
        let n_items = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let levels = read_u64(&mut r)? as usize;
        if levels == 0 || levels > dim.max(1) {
            return Err(Error::Checkpoint(format!("implausible level count {levels}")));
        }
        let sizes = (0..levels)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let schedule = DimensionSchedule::new(&sizes, dim)?;
        let mut read_table = |rows: usize| -> Result<EmbeddingTable<T>> {
            let mut bytes = vec![0u8; rows * dim * 4];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Checkpoint("truncated matrix data".into()))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            EmbeddingTable::from_vec(rows, dim, data)
        };
        let users = read_table(n_users)?;
        let items = read_table(n_items)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Self::new(users, items, schedule)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_checkpoint(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_checkpoint(file)
    }
}
