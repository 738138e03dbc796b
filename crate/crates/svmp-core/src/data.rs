//! Dataset ingestion, synthetic data generation, run-log persistence, and
//! state checkpoints.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bmf::{FactorState, Side};
use crate::error::{Error, Result};
use crate::expfam::GaussianNatural;
use crate::optimizer::RunLogEntry;

const CHECKPOINT_MAGIC: &[u8; 5] = b"SVMP1";
const CSV_HEADER: [&str; 5] = ["t", "ratings_accessed", "elbo", "rho", "diverged"];
const PATTERN_RETRIES: usize = 100;

/// One observed rating.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// Observed rating triplets with per-user and per-item child adjacency.
///
/// `user_children[m]` / `item_children[n]` are the triplet indices touching
/// row m / column n, in triplet order; a factor's child count is the length
/// of its row's list.
#[derive(Clone, Debug)]
pub struct SparseRatings {
    triplets: Vec<Rating>,
    user_children: Vec<Vec<usize>>,
    item_children: Vec<Vec<usize>>,
    users: usize,
    items: usize,
}

impl SparseRatings {
    pub fn from_triplets(users: usize, items: usize, triplets: Vec<Rating>) -> Result<Self> {
        let mut user_children = vec![Vec::new(); users];
        let mut item_children = vec![Vec::new(); items];
        let mut seen = HashSet::with_capacity(triplets.len());
        for (idx, r) in triplets.iter().enumerate() {
            if r.user >= users || r.item >= items {
                return Err(Error::DimensionMismatch {
                    expected: users.max(items),
                    got: r.user.max(r.item),
                });
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::DuplicateRating {
                    user: r.user.to_string(),
                    item: r.item.to_string(),
                });
            }
            user_children[r.user].push(idx);
            item_children[r.item].push(idx);
        }
        Ok(Self { triplets, user_children, item_children, users, items })
    }

    pub fn user_count(&self) -> usize {
        self.users
    }

    pub fn item_count(&self) -> usize {
        self.items
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn triplets(&self) -> &[Rating] {
        &self.triplets
    }

    pub fn rating(&self, idx: usize) -> Rating {
        self.triplets[idx]
    }

    /// Triplet indices of the row's children on the given side.
    pub fn children(&self, side: Side, row: usize) -> &[usize] {
        match side {
            Side::User => &self.user_children[row],
            Side::Item => &self.item_children[row],
        }
    }

    pub fn child_count(&self, side: Side, row: usize) -> usize {
        self.children(side, row).len()
    }

    pub fn max_child_count(&self) -> usize {
        let u = self.user_children.iter().map(Vec::len).max().unwrap_or(0);
        let v = self.item_children.iter().map(Vec::len).max().unwrap_or(0);
        u.max(v)
    }

    /// Same data with users and items swapped (ratings transposed).
    pub fn transposed(&self) -> Self {
        let triplets = self
            .triplets
            .iter()
            .map(|r| Rating { user: r.item, item: r.user, value: r.value })
            .collect();
        Self {
            triplets,
            user_children: self.item_children.clone(),
            item_children: self.user_children.clone(),
            users: self.items,
            items: self.users,
        }
    }
}

/// Parse `user<TAB>item<TAB>rating` lines. Ids are arbitrary strings and are
/// densely re-indexed in first-appearance order; `#` lines and blank lines
/// are skipped.
pub fn load_ratings(source: impl Read) -> Result<SparseRatings> {
    let reader = BufReader::new(source);
    let mut user_index: std::collections::HashMap<String, usize> = Default::default();
    let mut item_index: std::collections::HashMap<String, usize> = Default::default();
    let mut seen: HashSet<(usize, usize)> = Default::default();
    let mut triplets = Vec::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let value: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("rating `{}` is not a number", fields[2]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("rating `{}` is not finite", fields[2]),
            });
        }
        let next_user = user_index.len();
        let user = *user_index.entry(fields[0].to_string()).or_insert(next_user);
        let next_item = item_index.len();
        let item = *item_index.entry(fields[1].to_string()).or_insert(next_item);
        if !seen.insert((user, item)) {
            return Err(Error::DuplicateRating {
                user: fields[0].to_string(),
                item: fields[1].to_string(),
            });
        }
        triplets.push(Rating { user, item, value });
    }

    if triplets.is_empty() {
        return Err(Error::EmptyInput);
    }
    SparseRatings::from_triplets(user_index.len(), item_index.len(), triplets)
}

/// Ground-truth trait grids behind a synthetic dataset.
#[derive(Clone, Debug)]
pub struct SyntheticTruth {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub users: usize,
    pub items: usize,
    pub traits: usize,
}

impl SyntheticTruth {
    pub fn user_row(&self, m: usize) -> &[f64] {
        &self.u[m * self.traits..(m + 1) * self.traits]
    }

    pub fn item_row(&self, n: usize) -> &[f64] {
        &self.v[n * self.traits..(n + 1) * self.traits]
    }
}

/// Draw a dataset from the model itself: standard-normal traits, cells kept
/// independently with probability `density`, Gaussian observation noise.
/// The sparsity pattern is redrawn (bounded retries) until every user and
/// every item has at least one rating. Deterministic for a fixed seed; the
/// generator is consumed as traits, then pattern attempts, then noise.
pub fn generate_synthetic(
    users: usize,
    items: usize,
    traits: usize,
    density: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(SparseRatings, SyntheticTruth)> {
    if users == 0 || items == 0 || traits == 0 {
        return Err(Error::InvalidParameter {
            name: "dimensions",
            reason: "users, items and traits must all be >= 1".to_string(),
        });
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "density",
            reason: format!("must lie in (0, 1], got {density}"),
        });
    }
    if !noise_sd.is_finite() || noise_sd < 0.0 {
        return Err(Error::InvalidParameter {
            name: "noise_sd",
            reason: format!("must be finite and >= 0, got {noise_sd}"),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..users * traits).map(|_| rng.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..items * traits).map(|_| rng.sample(StandardNormal)).collect();

    let mut pattern: Option<Vec<(usize, usize)>> = None;
    for _ in 0..PATTERN_RETRIES {
        let mut cells = Vec::new();
        let mut user_hit = vec![false; users];
        let mut item_hit = vec![false; items];
        for (m, u_hit) in user_hit.iter_mut().enumerate() {
            for (n, i_hit) in item_hit.iter_mut().enumerate() {
                if rng.gen::<f64>() < density {
                    cells.push((m, n));
                    *u_hit = true;
                    *i_hit = true;
                }
            }
        }
        if user_hit.iter().all(|&h| h) && item_hit.iter().all(|&h| h) {
            pattern = Some(cells);
            break;
        }
    }
    let cells = pattern.ok_or(Error::PatternUnsatisfiable { retries: PATTERN_RETRIES })?;

    let truth = SyntheticTruth { u, v, users, items, traits };
    let triplets = cells
        .into_iter()
        .map(|(m, n)| {
            let mean: f64 = truth
                .user_row(m)
                .iter()
                .zip(truth.item_row(n))
                .map(|(a, b)| a * b)
                .sum();
            let noise: f64 = rng.sample(StandardNormal);
            Rating { user: m, item: n, value: mean + noise_sd * noise }
        })
        .collect();

    let ratings = SparseRatings::from_triplets(users, items, triplets)?;
    Ok((ratings, truth))
}

/// 17 significant digits: enough for an exact f64 round trip.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write log entries as `t,ratings_accessed,elbo,rho,diverged` CSV.
pub fn write_convergence_csv(entries: &[RunLogEntry], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER).map_err(|e| Error::CsvLog(e.to_string()))?;
    for e in entries {
        w.write_record([
            e.t.to_string(),
            e.ratings_accessed.to_string(),
            format_f64(e.elbo),
            format_f64(e.rho),
            if e.diverged { "1" } else { "0" }.to_string(),
        ])
        .map_err(|e| Error::CsvLog(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Exact inverse of `write_convergence_csv` on valid files.
pub fn read_convergence_csv(source: impl Read) -> Result<Vec<RunLogEntry>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = r.headers().map_err(|e| Error::CsvLog(e.to_string()))?;
    if header != CSV_HEADER.as_slice() {
        return Err(Error::CsvLog(format!(
            "bad header: expected `{}`, got `{}`",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for (row_no, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::CsvLog(e.to_string()))?;
        if record.len() != 5 {
            return Err(Error::CsvLog(format!(
                "row {}: expected 5 fields, got {}",
                row_no + 1,
                record.len()
            )));
        }
        let field = |i: usize| record.get(i).unwrap();
        let parse_f64 = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| {
                Error::CsvLog(format!("row {}: `{}` is not a number", row_no + 1, field(i)))
            })
        };
        let t: usize = field(0).parse().map_err(|_| {
            Error::CsvLog(format!("row {}: `{}` is not a count", row_no + 1, field(0)))
        })?;
        let ratings_accessed: u64 = field(1).parse().map_err(|_| {
            Error::CsvLog(format!("row {}: `{}` is not a count", row_no + 1, field(1)))
        })?;
        let diverged = match field(4) {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::CsvLog(format!(
                    "row {}: diverged flag must be 0 or 1, got `{other}`",
                    row_no + 1
                )))
            }
        };
        entries.push(RunLogEntry {
            t,
            ratings_accessed,
            elbo: parse_f64(2)?,
            rho: parse_f64(3)?,
            diverged,
        });
    }
    Ok(entries)
}

/// Binary checkpoint: magic `SVMP1`, dims (users, items, traits) as
/// little-endian u64, then (precision, mean*precision) f64 pairs row-major,
/// user grid then item grid.
pub fn checkpoint_save(state: &FactorState, mut sink: impl Write) -> Result<()> {
    sink.write_all(CHECKPOINT_MAGIC)?;
    for dim in [state.user_count(), state.item_count(), state.trait_dim()] {
        sink.write_all(&(dim as u64).to_le_bytes())?;
    }
    for lam in state.user_factors().iter().chain(state.item_factors()) {
        sink.write_all(&lam.precision().to_le_bytes())?;
        sink.write_all(&lam.mean_times_precision().to_le_bytes())?;
    }
    Ok(())
}

pub fn checkpoint_load(mut source: impl Read) -> Result<FactorState> {
    let mut magic = [0u8; 5];
    read_exact(&mut source, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".to_string()));
    }
    let users = read_u64(&mut source, "user count")? as usize;
    let items = read_u64(&mut source, "item count")? as usize;
    let traits = read_u64(&mut source, "trait count")? as usize;
    if users == 0 || items == 0 || traits == 0 {
        return Err(Error::Checkpoint("dimensions must all be >= 1".to_string()));
    }
    let cells = users
        .checked_mul(traits)
        .zip(items.checked_mul(traits))
        .filter(|(a, b)| a + b <= 1 << 28);
    let (u_cells, v_cells) = cells.ok_or_else(|| {
        Error::Checkpoint(format!("implausible dimensions {users}x{items}x{traits}"))
    })?;

    let mut read_grid = |cells: usize| -> Result<Vec<GaussianNatural>> {
        (0..cells)
            .map(|_| {
                let precision = read_f64(&mut source, "precision")?;
                let mtp = read_f64(&mut source, "mean*precision")?;
                GaussianNatural::new(precision, mtp)
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect()
    };
    let u = read_grid(u_cells)?;
    let v = read_grid(v_cells)?;
    FactorState::from_grids(users, items, traits, u, v)
}

fn read_exact(source: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    source.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint(format!("truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u64(source: &mut impl Read, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(source, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(source: &mut impl Read, what: &str) -> Result<f64> {
    let mut buf = [0u8; 8];
    read_exact(source, &mut buf, what)?;
    Ok(f64::from_le_bytes(buf))
}
