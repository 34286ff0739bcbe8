//! Categorical response datasets and their marginal frequencies.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LlsError, Result};
use crate::moments::MomentSource;
use crate::pattern::{Level, Pattern, Schema};
use crate::scalar::Real;

/// `N x J` matrix of responses, each in `1..=L_j`. Missing responses are
/// not representable.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    responses: Vec<Level>,
}

impl Dataset {
    /// Builds a dataset from row-major responses, validating every entry.
    pub fn new(schema: Schema, responses: Vec<Level>) -> Result<Self> {
        let j = schema.questions();
        if responses.is_empty() {
            return Err(LlsError::NoRows);
        }
        if !responses.len().is_multiple_of(j) {
            return Err(LlsError::Precondition(format!(
                "{} responses is not a multiple of {j} questions",
                responses.len()
            )));
        }
        for (i, row) in responses.chunks(j).enumerate() {
            for (c, (&x, &l)) in row.iter().zip(schema.levels()).enumerate() {
                if x == 0 || x > l {
                    return Err(LlsError::CategoryOutOfRange {
                        row: i + 1,
                        column: c + 1,
                        value: x as i64,
                        max: l,
                    });
                }
            }
        }
        Ok(Self { schema, responses })
    }

    pub fn from_rows(schema: Schema, rows: &[Vec<Level>]) -> Result<Self> {
        let j = schema.questions();
        if let Some(i) = rows.iter().position(|r| r.len() != j) {
            return Err(LlsError::Precondition(format!(
                "row {} has {} entries, expected {j}",
                i + 1,
                rows[i].len()
            )));
        }
        Self::new(schema, rows.concat())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Number of individuals `N`.
    pub fn len(&self) -> usize {
        self.responses.len() / self.schema.questions()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn row(&self, i: usize) -> &[Level] {
        let j = self.schema.questions();
        &self.responses[i * j..(i + 1) * j]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, Level> {
        self.responses.chunks(self.schema.questions())
    }

    /// Writes the dataset as CSV with an `x1,...,xJ` header line.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header: Vec<String> = (1..=self.schema.questions()).map(|j| format!("x{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for row in self.rows() {
            line.clear();
            for (k, x) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&x.to_string());
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads one individual per line, `J` comma-separated category labels.
///
/// A first line that does not parse as integers is treated as a header.
pub fn read_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let j = schema.questions();
    let mut responses = Vec::new();
    let mut data_row = 0usize;
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let parsed: Vec<Option<i64>> = rec.iter().map(|f| f.parse::<i64>().ok()).collect();
        if idx == 0 && parsed.iter().any(Option::is_none) {
            continue;
        }
        if rec.len() != j {
            return Err(LlsError::Parse {
                path: path.to_owned(),
                line,
                message: format!("expected {j} fields, found {}", rec.len()),
            });
        }
        data_row += 1;
        for (c, (v, &l)) in parsed.iter().zip(schema.levels()).enumerate() {
            let v = v.ok_or_else(|| LlsError::Parse {
                path: path.to_owned(),
                line,
                message: format!("field {} is not an integer: {:?}", c + 1, &rec[c]),
            })?;
            if v < 1 || v > l as i64 {
                return Err(LlsError::CategoryOutOfRange {
                    row: data_row,
                    column: c + 1,
                    value: v,
                    max: l,
                });
            }
            responses.push(v as Level);
        }
    }
    if responses.is_empty() {
        return Err(LlsError::NoRows);
    }
    Dataset::new(schema.clone(), responses)
}

fn csv_error(path: &Path, e: csv::Error) -> LlsError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LlsError::Io(io),
        other => LlsError::Parse {
            path: path.to_owned(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// `N_l`: individuals matching `pattern` on its support.
pub fn marginal_count(ds: &Dataset, pattern: &Pattern) -> u64 {
    let support: Vec<(usize, Level)> = pattern
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, &e)| e != 0)
        .map(|(j, &e)| (j, e))
        .collect();
    ds.rows()
        .filter(|row| support.iter().all(|&(j, e)| row[j] == e))
        .count() as u64
}

/// `f_l = N_l / N`.
pub fn marginal_frequency<T: Real>(ds: &Dataset, pattern: &Pattern) -> T {
    T::from_count(marginal_count(ds, pattern)) / T::from_count(ds.len() as u64)
}

impl<T: Real> MomentSource<T> for Dataset {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn moment(&self, pattern: &Pattern) -> Result<T> {
        self.schema.check(pattern)?;
        Ok(marginal_frequency(self, pattern))
    }

    fn count(&self, pattern: &Pattern) -> Option<u64> {
        Some(marginal_count(self, pattern))
    }

    fn total(&self) -> Option<u64> {
        Some(self.len() as u64)
    }
}

/// Exact counts `N_l` for a set of patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyTable {
    schema: Schema,
    counts: HashMap<Pattern, u64>,
    total: u64,
}

#[derive(Serialize)]
struct FrequencyTableJson<'a> {
    schema: &'a Schema,
    total: u64,
    counts: BTreeMap<String, u64>,
}

impl FrequencyTable {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, pattern: &Pattern) -> Option<u64> {
        self.counts.get(pattern).copied()
    }

    pub fn ratio(&self, pattern: &Pattern) -> Option<Ratio<u64>> {
        self.count(pattern).map(|c| Ratio::new(c, self.total))
    }

    pub fn frequency<T: Real>(&self, pattern: &Pattern) -> Option<T> {
        self.count(pattern)
            .map(|c| T::from_count(c) / T::from_count(self.total))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn patterns(&self) -> impl Iterator<Item = &Pattern> {
        self.counts.keys()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let counts = self.counts.iter().map(|(p, &c)| (p.key(), c)).collect();
        serde_json::to_value(FrequencyTableJson {
            schema: &self.schema,
            total: self.total,
            counts,
        })
        .expect("frequency table serializes")
    }
}

impl<T: Real> MomentSource<T> for FrequencyTable {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn moment(&self, pattern: &Pattern) -> Result<T> {
        self.frequency(pattern)
            .ok_or_else(|| LlsError::MissingMoment(pattern.to_string()))
    }

    fn count(&self, pattern: &Pattern) -> Option<u64> {
        FrequencyTable::count(self, pattern)
    }

    fn total(&self) -> Option<u64> {
        Some(self.total)
    }
}

/// Counts every pattern in one pass over the rows (row-partitioned, merged
/// by addition, so the result does not depend on the partition).
pub fn frequency_table(ds: &Dataset, patterns: &[Pattern]) -> FrequencyTable {
    let supports: Vec<Vec<(usize, Level)>> = patterns
        .iter()
        .map(|p| {
            p.entries()
                .iter()
                .enumerate()
                .filter(|(_, &e)| e != 0)
                .map(|(j, &e)| (j, e))
                .collect()
        })
        .collect();
    let j = ds.schema.questions();
    let counts = ds
        .responses
        .par_chunks(j * 256)
        .map(|block| {
            let mut local = vec![0u64; patterns.len()];
            for row in block.chunks(j) {
                for (c, sup) in local.iter_mut().zip(&supports) {
                    if sup.iter().all(|&(q, e)| row[q] == e) {
                        *c += 1;
                    }
                }
            }
            local
        })
        .reduce(
            || vec![0u64; patterns.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    FrequencyTable {
        schema: ds.schema.clone(),
        counts: patterns.iter().cloned().zip(counts).collect(),
        total: ds.len() as u64,
    }
}

/// Dense first- and second-order counts: `N_l` for every pattern with
/// support at most two, computed with bit-packed intersections.
#[derive(Clone, Debug)]
pub struct PairCounts {
    schema: Schema,
    total: u64,
    cell_question: Vec<usize>,
    /// `|L| x |L|`, symmetric; the diagonal holds first-order counts and
    /// same-question off-diagonal entries are zero.
    pairs: Vec<u64>,
}

impl PairCounts {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let schema = ds.schema().clone();
        let n = ds.len();
        let cells = schema.total_levels();
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; cells * words];
        for (i, row) in ds.rows().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                let cell = schema.offset(j) + x as usize - 1;
                bits[cell * words + i / 64] |= 1u64 << (i % 64);
            }
        }
        let mut pairs = vec![0u64; cells * cells];
        pairs.par_chunks_mut(cells).enumerate().for_each(|(a, out)| {
            let ba = &bits[a * words..(a + 1) * words];
            for (b, slot) in out.iter_mut().enumerate() {
                let bb = &bits[b * words..(b + 1) * words];
                *slot = ba.iter().zip(bb).map(|(x, y)| (x & y).count_ones() as u64).sum();
            }
        });
        Self {
            cell_question: schema.cell_questions(),
            schema,
            total: n as u64,
            pairs,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn cell_count(&self, cell: usize) -> u64 {
        self.pairs[cell * self.cell_question.len() + cell]
    }

    /// Joint count of two cells; zero for distinct cells of one question.
    pub fn pair_count(&self, a: usize, b: usize) -> u64 {
        self.pairs[a * self.cell_question.len() + b]
    }

    fn lookup(&self, pattern: &Pattern) -> Option<u64> {
        let cells = pattern.cells(&self.schema);
        match cells.as_slice() {
            [] => Some(self.total),
            [a] => Some(self.cell_count(*a)),
            [a, b] => Some(self.pair_count(*a, *b)),
            _ => None,
        }
    }
}

impl<T: Real> MomentSource<T> for PairCounts {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn moment(&self, pattern: &Pattern) -> Result<T> {
        self.schema.check(pattern)?;
        self.lookup(pattern)
            .map(|c| T::from_count(c) / T::from_count(self.total))
            .ok_or_else(|| LlsError::MissingMoment(pattern.to_string()))
    }

    fn cell_moment(&self, cells: &[usize]) -> Result<T> {
        let c = match cells {
            [] => self.total,
            [a] => self.cell_count(*a),
            [a, b] => self.pair_count(*a, *b),
            _ => {
                let mut e = vec![0; self.schema.questions()];
                for &c in cells {
                    let cell = self.schema.cell_at(c);
                    e[cell.question] = cell.level;
                }
                return Err(LlsError::MissingMoment(Pattern::from(e).to_string()));
            }
        };
        Ok(T::from_count(c) / T::from_count(self.total))
    }

    fn count(&self, pattern: &Pattern) -> Option<u64> {
        self.lookup(pattern)
    }

    fn total(&self) -> Option<u64> {
        Some(self.total)
    }
}
