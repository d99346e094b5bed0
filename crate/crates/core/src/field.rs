//! Grid fields and ω-ensembles of grid fields, with the binary block format.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! magic  b"MRLF"
//! u32    format version (1)
//! u64    d
//! u64    nx
//! u64    nt           (the block holds nt + 1 time slices)
//! f64    L
//! f64    T
//! u64    channels
//! u64    M
//! f64 ×  M · (nt + 1) · channels · nx^d   payload, member-major, then time,
//!                                         channel, row-major space
//! ```

use std::borrow::Cow;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;

const MAGIC: &[u8; 4] = b"MRLF";
const VERSION: u32 = 1;

/// Values at every (time slice, channel, spatial node).
#[derive(Clone, Debug, PartialEq)]
pub struct DeterministicField {
    grid: SpaceTimeGrid,
    channels: usize,
    /// [t][channel][x]
    data: Vec<f64>,
}

impl DeterministicField {
    pub fn zeros(grid: SpaceTimeGrid, channels: usize) -> Self {
        Self {
            grid,
            channels,
            data: vec![0.0; grid.slices() * channels * grid.spatial_len()],
        }
    }

    pub fn from_vec(grid: SpaceTimeGrid, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != grid.slices() * channels * grid.spatial_len() {
            return Err(Error::mismatch(format!(
                "field data length {} does not match grid ({} slices x {channels} channels x {} nodes)",
                data.len(),
                grid.slices(),
                grid.spatial_len()
            )));
        }
        Ok(Self {
            grid,
            channels,
            data,
        })
    }

    /// Samples `f(t, channel, x)` at every node.
    pub fn from_fn(
        grid: SpaceTimeGrid,
        channels: usize,
        f: impl Fn(f64, usize, &[f64]) -> f64,
    ) -> Self {
        let n = grid.spatial_len();
        let points: Vec<Vec<f64>> = (0..n).map(|j| grid.point(j)).collect();
        let mut data = Vec::with_capacity(grid.slices() * channels * n);
        for i in 0..grid.slices() {
            let t = grid.time(i);
            for k in 0..channels {
                data.extend(points.iter().map(|x| f(t, k, x)));
            }
        }
        Self {
            grid,
            channels,
            data,
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offset(&self, t: usize, k: usize) -> usize {
        (t * self.channels + k) * self.grid.spatial_len()
    }

    pub fn slice(&self, t: usize, k: usize) -> &[f64] {
        let o = self.offset(t, k);
        &self.data[o..o + self.grid.spatial_len()]
    }

    pub fn slice_mut(&mut self, t: usize, k: usize) -> &mut [f64] {
        let o = self.offset(t, k);
        let n = self.grid.spatial_len();
        &mut self.data[o..o + n]
    }

    pub fn get(&self, t: usize, k: usize, x: usize) -> f64 {
        self.data[self.offset(t, k) + x]
    }

    pub fn set(&mut self, t: usize, k: usize, x: usize, v: f64) {
        let o = self.offset(t, k);
        self.data[o + x] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        if self.grid != other.grid || self.channels != other.channels {
            return Err(Error::mismatch(
                "fields live on different grids or channel counts",
            ));
        }
        Ok(Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + s * b)
                .collect(),
            ..self.clone()
        })
    }

    /// l2 norm over channels at every (t, x), as a one-channel field.
    pub fn channel_norm(&self) -> Self {
        let n = self.grid.spatial_len();
        let mut out = Self::zeros(self.grid, 1);
        for t in 0..self.grid.slices() {
            for k in 0..self.channels {
                let src = self.slice(t, k).to_vec();
                let dst = out.slice_mut(t, 0);
                for x in 0..n {
                    dst[x] += src[x] * src[x];
                }
            }
            for v in out.slice_mut(t, 0) {
                *v = v.sqrt();
            }
        }
        out
    }

    /// Largest |value| at nodes outside the central sub-box [−L/2, L/2]^d.
    pub fn mass_outside_support_box(&self) -> f64 {
        let n = self.grid.spatial_len();
        let outside: Vec<usize> = (0..n)
            .filter(|&j| !self.grid.in_support_box(&self.grid.point(j)))
            .collect();
        let mut worst = 0.0f64;
        for t in 0..self.grid.slices() {
            for k in 0..self.channels {
                let s = self.slice(t, k);
                for &j in &outside {
                    worst = worst.max(s[j].abs());
                }
            }
        }
        worst
    }
}

type Generator = Arc<dyn Fn(usize) -> DeterministicField + Send + Sync>;

#[derive(Clone)]
enum Source {
    /// Every member equals this field.
    Shared(Arc<DeterministicField>),
    Stored(Arc<Vec<DeterministicField>>),
    /// Member i is produced on demand; must be a pure function of i.
    Generated(Generator),
}

/// Ensemble of `members` fields on one grid, indexed by ω.
///
/// Large ensembles are kept lazy: statistics stream over members, so at most
/// a few members are alive per worker.
#[derive(Clone)]
pub struct RandomField {
    grid: SpaceTimeGrid,
    channels: usize,
    members: usize,
    /// Master seed the members were derived from, if random.
    seed: Option<u64>,
    /// Data are genuinely periodic on the grid, so the compact-support
    /// requirement of the solvers does not apply.
    periodic: bool,
    source: Source,
}

impl fmt::Debug for RandomField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.source {
            Source::Shared(_) => "shared",
            Source::Stored(_) => "stored",
            Source::Generated(_) => "generated",
        };
        f.debug_struct("RandomField")
            .field("grid", &self.grid)
            .field("channels", &self.channels)
            .field("members", &self.members)
            .field("seed", &self.seed)
            .field("periodic", &self.periodic)
            .field("source", &kind)
            .finish()
    }
}

impl RandomField {
    pub fn shared(field: DeterministicField, members: usize) -> Self {
        Self {
            grid: field.grid,
            channels: field.channels,
            members,
            seed: None,
            periodic: false,
            source: Source::Shared(Arc::new(field)),
        }
    }

    pub fn zeros(grid: SpaceTimeGrid, channels: usize, members: usize) -> Self {
        Self::shared(DeterministicField::zeros(grid, channels), members)
    }

    pub fn stored(fields: Vec<DeterministicField>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::invalid("random field needs at least one member"))?;
        if fields
            .iter()
            .any(|f| f.grid != first.grid || f.channels != first.channels)
        {
            return Err(Error::mismatch("members must share grid and channel count"));
        }
        Ok(Self {
            grid: first.grid,
            channels: first.channels,
            members: fields.len(),
            seed: None,
            periodic: false,
            source: Source::Stored(Arc::new(fields)),
        })
    }

    pub fn generated(
        grid: SpaceTimeGrid,
        channels: usize,
        members: usize,
        seed: Option<u64>,
        generator: impl Fn(usize) -> DeterministicField + Send + Sync + 'static,
    ) -> Self {
        Self {
            grid,
            channels,
            members,
            seed,
            periodic: false,
            source: Source::Generated(Arc::new(generator)),
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn with_periodic(mut self, periodic: bool) -> Self {
        self.periodic = periodic;
        self
    }

    pub fn member(&self, i: usize) -> Cow<'_, DeterministicField> {
        assert!(
            i < self.members,
            "member {i} out of range ({})",
            self.members
        );
        match &self.source {
            Source::Shared(f) => Cow::Borrowed(f),
            Source::Stored(v) => Cow::Borrowed(&v[i]),
            Source::Generated(g) => {
                let f = g(i);
                debug_assert!(f.grid == self.grid && f.channels == self.channels);
                Cow::Owned(f)
            }
        }
    }

    /// The common field when all members are identical by construction.
    pub fn as_shared(&self) -> Option<&DeterministicField> {
        match &self.source {
            Source::Shared(f) => Some(f),
            _ => None,
        }
    }

    /// Evaluates every member once and keeps them.
    pub fn materialize(&self) -> Self {
        match &self.source {
            Source::Generated(_) => {
                let fields =
                    crate::parallel::ordered_map(self.members, |i| self.member(i).into_owned());
                Self {
                    source: Source::Stored(Arc::new(fields)),
                    ..self.clone()
                }
            }
            _ => self.clone(),
        }
    }

    /// Lazily applies `f` to every member.
    pub fn map(
        &self,
        f: impl Fn(usize, &DeterministicField) -> DeterministicField + Send + Sync + 'static,
    ) -> Self {
        let base = self.clone();
        let probe = f(0, &self.member(0));
        let (grid, channels) = (probe.grid, probe.channels);
        let periodic = self.periodic;
        Self::generated(grid, channels, self.members, self.seed, move |i| {
            f(i, &base.member(i))
        })
        .with_periodic(periodic)
    }

    /// Like [`map`](Self::map) for member-independent `f`; keeps sharing.
    pub fn map_fields(
        &self,
        f: impl Fn(&DeterministicField) -> DeterministicField + Send + Sync + 'static,
    ) -> Self {
        match &self.source {
            Source::Shared(x) => Self::shared(f(x), self.members)
                .with_periodic(self.periodic)
                .with_seed(self.seed),
            _ => self.map(move |_, x| f(x)),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match &self.source {
            Source::Shared(f) => {
                Self::shared(f.scaled(s), self.members).with_periodic(self.periodic)
            }
            _ => self.map(move |_, f| f.scaled(s)),
        }
    }

    /// Member-wise `self + other`.
    pub fn add(&self, other: &RandomField) -> Result<Self> {
        if self.grid != other.grid
            || self.channels != other.channels
            || self.members != other.members
        {
            return Err(Error::mismatch(
                "random fields differ in grid, channels or members",
            ));
        }
        if let (Some(a), Some(b)) = (self.as_shared(), other.as_shared()) {
            return Ok(Self::shared(a.axpy(1.0, b)?, self.members)
                .with_periodic(self.periodic && other.periodic));
        }
        let other = other.clone();
        let periodic = self.periodic && other.periodic;
        Ok(self
            .map(move |i, f| f.axpy(1.0, &other.member(i)).expect("checked shapes"))
            .with_periodic(periodic))
    }

    pub fn truncate_members(&self, members: usize) -> Self {
        Self {
            members: members.min(self.members),
            ..self.clone()
        }
    }
}

fn write_header(
    w: &mut impl Write,
    grid: &SpaceTimeGrid,
    channels: usize,
    members: usize,
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [grid.dim() as u64, grid.nx() as u64, grid.nt() as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&grid.half_width().to_le_bytes())?;
    w.write_all(&grid.horizon().to_le_bytes())?;
    w.write_all(&(channels as u64).to_le_bytes())?;
    w.write_all(&(members as u64).to_le_bytes())
}

/// Streams `field` member by member to `path`.
pub fn write_field(path: &Path, field: &RandomField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, field.grid(), field.channels(), field.members())?;
    for i in 0..field.members() {
        for v in field.member(i).data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<RandomField> {
    let malformed = |m: &str| Error::FieldFormat {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| malformed("truncated header"))?;
    if &magic != MAGIC {
        return Err(malformed("bad magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)
        .map_err(|_| malformed("truncated header"))?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(malformed("unsupported version"));
    }
    let mut b8 = [0u8; 8];
    let mut u64s = [0u64; 3];
    for v in &mut u64s {
        r.read_exact(&mut b8)
            .map_err(|_| malformed("truncated header"))?;
        *v = u64::from_le_bytes(b8);
    }
    let mut f64s = [0f64; 2];
    for v in &mut f64s {
        r.read_exact(&mut b8)
            .map_err(|_| malformed("truncated header"))?;
        *v = f64::from_le_bytes(b8);
    }
    let mut tail = [0u64; 2];
    for v in &mut tail {
        r.read_exact(&mut b8)
            .map_err(|_| malformed("truncated header"))?;
        *v = u64::from_le_bytes(b8);
    }
    let [d, nx, nt] = u64s.map(|v| v as usize);
    let [channels, members] = tail.map(|v| v as usize);
    let grid =
        SpaceTimeGrid::new(d, f64s[0], nx, f64s[1], nt).map_err(|e| malformed(&e.to_string()))?;
    if members == 0 || channels == 0 {
        return Err(malformed("zero members or channels"));
    }
    let per = grid.slices() * channels * grid.spatial_len();
    let mut fields = Vec::with_capacity(members);
    let mut buf = vec![0u8; per * 8];
    for _ in 0..members {
        r.read_exact(&mut buf)
            .map_err(|_| malformed("truncated payload"))?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        fields.push(DeterministicField::from_vec(grid, channels, data)?);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(malformed("trailing bytes after payload"));
    }
    RandomField::stored(fields)
}

/// CSV for small grids: `member,t,channel,x0[,x1,x2],value`.
pub fn field_to_csv(field: &RandomField) -> String {
    let g = field.grid();
    let mut out = String::from("member,t,channel");
    for a in 0..g.dim() {
        out.push_str(&format!(",x{a}"));
    }
    out.push_str(",value\r\n");
    for m in 0..field.members() {
        let f = field.member(m);
        for i in 0..g.slices() {
            for k in 0..field.channels() {
                for (j, v) in f.slice(i, k).iter().enumerate() {
                    let x = g.point(j);
                    let xs: Vec<String> = x.iter().map(|c| format!("{c:?}")).collect();
                    out.push_str(&format!(
                        "{m},{:?},{k},{},{v:?}\r\n",
                        g.time(i),
                        xs.join(",")
                    ));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 1.0, 8, 1.0, 8).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let g = grid();
        let members: Vec<DeterministicField> = (0..3)
            .map(|m| DeterministicField::from_fn(g, 2, |t, k, x| m as f64 + t * x[0] + k as f64))
            .collect();
        let rf = RandomField::stored(members.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        write_field(&path, &rf).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.members(), 3);
        for (m, f) in members.iter().enumerate() {
            assert_eq!(back.member(m).as_ref(), f);
        }
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, 4 + 4 + 8 * 7 + 8 * (3 * 9 * 2 * 8) as u64);
    }

    #[test]
    fn truncated_file_rejected() {
        let rf = RandomField::zeros(grid(), 1, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        write_field(&path, &rf).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_field(&path), Err(Error::FieldFormat { .. })));
    }

    #[test]
    fn generated_members_are_recomputed_identically() {
        let g = grid();
        let rf = RandomField::generated(g, 1, 4, Some(1), move |i| {
            DeterministicField::from_fn(g, 1, |_, _, _| i as f64)
        });
        assert_eq!(rf.member(2).get(3, 0, 1), 2.0);
        let m = rf.materialize();
        assert_eq!(m.member(3).as_ref(), rf.member(3).as_ref());
    }

    #[test]
    fn channel_norm_is_l2() {
        let f = DeterministicField::from_fn(grid(), 2, |_, k, _| if k == 0 { 3.0 } else { 4.0 });
        assert!(f
            .channel_norm()
            .data()
            .iter()
            .all(|v| (*v - 5.0).abs() < 1e-15));
    }
}
