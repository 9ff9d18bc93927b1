//! Sparse binary measurement designs and the deterministic expander
//! conditions (degree bounds, vertex expansion, bounded intersection).
//!
//! A design `M ∈ {0,1}^{m×n}` is viewed as a bipartite graph between
//! equations (rows) and coordinates (columns). Indices are 0-based in
//! memory and 1-based in the on-disk format.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryDesign {
    m: usize,
    n: usize,
    /// Per-row strictly increasing coordinate lists.
    rows: Vec<Vec<usize>>,
    /// Target degree parameter.
    pub d: f64,
    /// Bernoulli density used at generation (or the realized density).
    pub p: f64,
    pub seed: Option<u64>,
    #[serde(skip)]
    columns: OnceLock<Vec<Vec<usize>>>,
}

impl PartialEq for BinaryDesign {
    /// Structural equality: same shape and same nonzero pattern.
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.n == other.n && self.rows == other.rows
    }
}

impl Eq for BinaryDesign {}

impl BinaryDesign {
    /// Builds a design from per-row coordinate lists (0-based). Lists are
    /// sorted here; duplicates and out-of-range indices are rejected.
    pub fn from_rows(m: usize, n: usize, mut rows: Vec<Vec<usize>>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::param("design needs m ≥ 1 and n ≥ 1"));
        }
        if rows.len() != m {
            return Err(Error::param(format!(
                "expected {m} rows, got {}",
                rows.len()
            )));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            if let Some(&j) = row.iter().find(|&&j| j >= n) {
                return Err(Error::param(format!("entry ({i}, {j}) outside {m}x{n}")));
            }
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::param(format!("duplicate entry in row {i}")));
            }
        }
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let p = nnz as f64 / (m * n) as f64;
        Ok(Self {
            m,
            n,
            rows,
            d: nnz as f64 / n as f64,
            p,
            seed: None,
            columns: OnceLock::new(),
        })
    }

    /// Builds from a dense 0/1 row-major slice.
    pub fn from_dense(m: usize, n: usize, entries: &[u8]) -> Result<Self> {
        if entries.len() != m * n {
            return Err(Error::param("dense entry count does not match shape"));
        }
        let rows = (0..m)
            .map(|i| (0..n).filter(|&j| entries[i * n + j] != 0).collect())
            .collect();
        Self::from_rows(m, n, rows)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, n, (0..n).map(|i| vec![i]).collect()).expect("valid identity")
    }

    pub fn all_ones(m: usize, n: usize) -> Self {
        Self::from_rows(m, n, vec![(0..n).collect(); m]).expect("valid all-ones")
    }

    /// Design with no nonzero entries.
    pub fn zeros(m: usize, n: usize) -> Self {
        Self::from_rows(m, n, vec![Vec::new(); m]).expect("valid zero design")
    }

    /// Same pattern with a different degree parameter.
    pub fn with_degree(mut self, d: f64) -> Self {
        self.d = d;
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// Column lists (equations touching each coordinate), built on first use.
    pub fn columns(&self) -> &[Vec<usize>] {
        self.columns.get_or_init(|| {
            let mut cols = vec![Vec::new(); self.n];
            for (i, row) in self.rows.iter().enumerate() {
                for &j in row {
                    cols[j].push(i);
                }
            }
            cols
        })
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    pub fn max_row_weight(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// Dense `M_{Bᶜ}`: rows not in `erased` (which must be sorted), in order.
    pub fn surviving_dense(&self, erased: &[usize]) -> DMatrix<f64> {
        let keep = complement(erased, self.m);
        let mut a = DMatrix::zeros(keep.len(), self.n);
        for (r, &i) in keep.iter().enumerate() {
            for &j in &self.rows[i] {
                a[(r, j)] = 1.0;
            }
        }
        a
    }

    /// Row `i` as a dense vector.
    pub fn row_vector(&self, i: usize) -> nalgebra::DVector<f64> {
        let mut v = nalgebra::DVector::zeros(self.n);
        for &j in &self.rows[i] {
            v[j] = 1.0;
        }
        v
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.nnz() as f64).sqrt()
    }

    /// `N′(E)`: coordinates adjacent to any equation in `equations`.
    pub fn equation_neighborhood(&self, equations: &[usize]) -> Result<Vec<usize>> {
        let mut mark = vec![false; self.n];
        for &i in equations {
            if i >= self.m {
                return Err(Error::param(format!("equation {i} out of range")));
            }
            for &j in &self.rows[i] {
                mark[j] = true;
            }
        }
        Ok(indices_of(&mark))
    }
}

/// Generates `M` with independent `Ber(d/m)` entries, row-major from one
/// seeded stream.
pub fn gen_bernoulli_design(m: usize, n: usize, d: f64, seed: u64) -> Result<BinaryDesign> {
    if m == 0 || n == 0 {
        return Err(Error::param("design needs m ≥ 1 and n ≥ 1"));
    }
    if !(d >= 1.0 && d <= m as f64) || m > n {
        return Err(Error::param(format!(
            "need 1 ≤ d ≤ m ≤ n, got d={d}, m={m}, n={n}"
        )));
    }
    let p = d / m as f64;
    let mut rng = seeds::rng(seed);
    let rows = (0..m)
        .map(|_| (0..n).filter(|_| rng.random_bool(p)).collect())
        .collect();
    let mut design = BinaryDesign::from_rows(m, n, rows)?;
    design.d = d;
    design.p = p;
    design.seed = Some(seed);
    Ok(design)
}

/// `(N(S), U(S))`: equations touching `S`, and equations touching exactly
/// one coordinate of `S`.
pub fn neighborhoods(design: &BinaryDesign, coords: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut count = vec![0usize; design.m];
    let cols = design.columns();
    let mut seen = vec![false; design.n];
    for &j in coords {
        if j >= design.n {
            return Err(Error::param(format!("coordinate {j} out of range")));
        }
        if std::mem::replace(&mut seen[j], true) {
            continue;
        }
        for &i in &cols[j] {
            count[i] += 1;
        }
    }
    let n_set = (0..design.m).filter(|&i| count[i] > 0).collect();
    let u_set = (0..design.m).filter(|&i| count[i] == 1).collect();
    Ok((n_set, u_set))
}

pub(crate) fn indices_of(mark: &[bool]) -> Vec<usize> {
    mark.iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect()
}

/// Sorted complement of a sorted index set within `0..len`.
pub(crate) fn complement(set: &[usize], len: usize) -> Vec<usize> {
    let mut mark = vec![true; len];
    for &i in set {
        if i < len {
            mark[i] = false;
        }
    }
    indices_of(&mark)
}

// ---------------------------------------------------------------------------
// Serialization

/// Writes `"m n nnz"` followed by one `"i j"` line per entry (1-based,
/// row-major).
pub fn write_design(design: &BinaryDesign) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", design.m, design.n, design.nnz());
    for (i, row) in design.rows.iter().enumerate() {
        for &j in row {
            let _ = writeln!(out, "{} {}", i + 1, j + 1);
        }
    }
    out
}

pub fn parse_design(text: &str) -> Result<BinaryDesign> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let head = parse_ints(header, 3, hline)?;
    let (m, n, nnz) = (head[0], head[1], head[2]);
    if m == 0 || n == 0 {
        return Err(Error::Parse {
            line: hline,
            msg: "m and n must be positive".into(),
        });
    }
    let mut rows = vec![Vec::new(); m];
    let mut last: Option<(usize, usize)> = None;
    let mut count = 0usize;
    for (ln, line) in lines {
        let e = parse_ints(line, 2, ln)?;
        let (i, j) = (e[0], e[1]);
        if i == 0 || j == 0 || i > m || j > n {
            return Err(Error::Parse {
                line: ln,
                msg: format!("entry ({i}, {j}) outside {m}x{n}"),
            });
        }
        if let Some(prev) = last {
            if (i, j) <= prev {
                return Err(Error::Parse {
                    line: ln,
                    msg: "entries must be strictly row-major sorted".into(),
                });
            }
        }
        last = Some((i, j));
        rows[i - 1].push(j - 1);
        count += 1;
    }
    if count != nnz {
        return Err(Error::Parse {
            line: hline,
            msg: format!("header declares {nnz} entries, found {count}"),
        });
    }
    BinaryDesign::from_rows(m, n, rows)
}

fn parse_ints(line: &str, expected: usize, ln: usize) -> Result<Vec<usize>> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != expected {
        return Err(Error::Parse {
            line: ln,
            msg: format!("expected {expected} integers, got {:?}", line),
        });
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<usize>().map_err(|e| Error::Parse {
                line: ln,
                msg: format!("{p:?}: {e}"),
            })
        })
        .collect()
}

pub fn serialize_design(design: &BinaryDesign, path: &Path) -> Result<()> {
    std::fs::write(path, write_design(design)).map_err(|e| Error::io(path, e))
}

pub fn load_design(path: &Path) -> Result<BinaryDesign> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_design(&text)
}

// ---------------------------------------------------------------------------
// Assumption checking

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckMode {
    Exhaustive,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct CheckBudget {
    /// Maximum `Σ_{l≤k} C(n,l)` for exhaustive subset scans.
    pub subsets: u128,
    /// Maximum number of subset pairs for the exhaustive intersection scan;
    /// above it the intersection condition is sampled.
    pub pairs: u128,
    /// Pair samples used when the pair budget is exceeded.
    pub pair_samples: usize,
}

impl Default for CheckBudget {
    fn default() -> Self {
        Self {
            subsets: 10_000_000,
            pairs: 4_000_000_000,
            pair_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetWitness {
    pub set: Vec<usize>,
    /// Size of the relevant neighborhood (`|N(S)|` or `|U(S)|`).
    pub neighbors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWitness {
    pub s: Vec<usize>,
    pub t: Vec<usize>,
    pub common: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub epsilon: f64,
    pub k: usize,
    pub d: f64,
    pub mode: CheckMode,
    pub column_degree_ok: bool,
    pub row_degree_ok: bool,
    pub degree_ok: bool,
    pub expansion_ok: bool,
    pub intersection_ok: bool,
    /// True when the intersection scan was sampled because the pair budget
    /// was exceeded, even in exhaustive mode.
    pub intersection_sampled: bool,
    /// `|U(S)| ≥ (1−3ε)d|S|` over the checked subsets.
    pub unique_neighbor_ok: bool,
    pub max_column_degree: usize,
    pub worst_column: usize,
    pub max_row_degree: usize,
    pub worst_row: usize,
    pub worst_expansion: Option<SubsetWitness>,
    pub worst_unique: Option<SubsetWitness>,
    pub worst_intersection: Option<PairWitness>,
    /// Smallest ε for which the expansion inequality holds on the checked subsets.
    pub expansion_epsilon_min: f64,
    /// `d < 16`: the bounded-intersection and amplification constants are out of regime.
    pub constant_regime_not_met: bool,
    /// `n ≥ n₀` and `d ≥ D₀` for user-supplied thresholds; unset when none given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_regime_met: Option<bool>,
    pub samples_checked: u128,
    pub pairs_checked: u128,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.degree_ok && self.expansion_ok && self.intersection_ok
    }

    /// Records whether `n ≥ n₀` and `d ≥ D₀`. Either threshold may be absent.
    pub fn with_size_regime(mut self, n: usize, d0: Option<f64>, n0: Option<usize>) -> Self {
        if d0.is_some() || n0.is_some() {
            self.size_regime_met = Some(d0.is_none_or(|d0| self.d >= d0) && n0.is_none_or(|n0| n >= n0));
        }
        self
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// `Σ_{1≤l≤k} C(n,l)`.
pub fn subsets_up_to(n: usize, k: usize) -> u128 {
    (1..=k.min(n)).map(|l| binomial(n, l)).sum()
}

/// Fixed-width bitset arithmetic over `u64` words.
#[derive(Debug, Clone)]
struct Bits {
    words: usize,
}

impl Bits {
    fn new(len: usize) -> Self {
        Self {
            words: len.div_ceil(64).max(1),
        }
    }

    fn set(&self, buf: &mut [u64], i: usize) {
        buf[i / 64] |= 1 << (i % 64);
    }
}

fn popcount(a: &[u64]) -> usize {
    a.iter().map(|w| w.count_ones() as usize).sum()
}

fn and_count(a: &[u64], b: &[u64]) -> usize {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x & y).count_ones() as usize)
        .sum()
}

fn disjoint(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & y == 0)
}

/// Per-subset statistics gathered during a scan.
#[derive(Debug, Clone, Default)]
struct ScanAcc {
    count: u128,
    /// (|N(S)|, |S|, S) minimizing |N(S)|/|S|.
    worst_exp: Option<(usize, usize, Vec<usize>)>,
    worst_uniq: Option<(usize, usize, Vec<usize>)>,
}

impl ScanAcc {
    fn visit(&mut self, set: &[usize], n_size: usize, u_size: usize) {
        self.count += 1;
        let s = set.len();
        let better = |cur: &Option<(usize, usize, Vec<usize>)>, val: usize| match cur {
            None => true,
            Some((v, sz, _)) => val * sz < v * s,
        };
        if better(&self.worst_exp, n_size) {
            self.worst_exp = Some((n_size, s, set.to_vec()));
        }
        if better(&self.worst_uniq, u_size) {
            self.worst_uniq = Some((u_size, s, set.to_vec()));
        }
    }

    /// Merge preserving sequential (lexicographic) tie-breaking: `self`
    /// precedes `later`.
    fn merge(mut self, later: ScanAcc) -> ScanAcc {
        self.count += later.count;
        let pick = |a: Option<(usize, usize, Vec<usize>)>, b: Option<(usize, usize, Vec<usize>)>| match (a, b) {
            (None, b) => b,
            (a, None) => a,
            (Some(a), Some(b)) => {
                if b.0 * a.1 < a.0 * b.1 {
                    Some(b)
                } else {
                    Some(a)
                }
            }
        };
        self.worst_exp = pick(self.worst_exp, later.worst_exp);
        self.worst_uniq = pick(self.worst_uniq, later.worst_uniq);
        self
    }
}

/// Column bitsets over the equation index space.
fn column_bits(design: &BinaryDesign) -> (Bits, Vec<u64>) {
    let bits = Bits::new(design.m);
    let mut buf = vec![0u64; bits.words * design.n];
    for (j, col) in design.columns().iter().enumerate() {
        let slot = &mut buf[j * bits.words..(j + 1) * bits.words];
        for &i in col {
            bits.set(slot, i);
        }
    }
    (bits, buf)
}

/// Lexicographic DFS over all subsets of size `1..=k` whose smallest
/// element is `first`, tracking `N(S)` and `U(S)` incrementally.
#[allow(clippy::too_many_arguments)]
fn dfs_subsets(
    n: usize,
    k: usize,
    bits: &Bits,
    cols: &[u64],
    set: &mut Vec<usize>,
    once: &[u64],
    multi: &[u64],
    acc: &mut ScanAcc,
    on_set: &mut dyn FnMut(&[usize], &[u64]),
) {
    let w = bits.words;
    let start = set.last().map_or(0, |&l| l + 1);
    for j in start..n {
        let c = &cols[j * w..(j + 1) * w];
        let mut new_multi = vec![0u64; w];
        let mut new_once = vec![0u64; w];
        for t in 0..w {
            new_multi[t] = multi[t] | (once[t] & c[t]);
            new_once[t] = (once[t] | c[t]) & !new_multi[t];
        }
        set.push(j);
        let u = popcount(&new_once);
        let nn = u + popcount(&new_multi);
        acc.visit(set, nn, u);
        let nbits: Vec<u64> = new_once.iter().zip(&new_multi).map(|(a, b)| a | b).collect();
        on_set(set, &nbits);
        if set.len() < k {
            dfs_subsets(n, k, bits, cols, set, &new_once, &new_multi, acc, on_set);
        }
        set.pop();
    }
}

fn scan_rooted(
    n: usize,
    k: usize,
    bits: &Bits,
    cols: &[u64],
    root: usize,
    on_set: &mut dyn FnMut(&[usize], &[u64]),
) -> ScanAcc {
    let w = bits.words;
    let mut acc = ScanAcc::default();
    let c = &cols[root * w..(root + 1) * w];
    let once = c.to_vec();
    let multi = vec![0u64; w];
    let u = popcount(&once);
    acc.visit(&[root], u, u);
    on_set(&[root], &once);
    let mut set = vec![root];
    if k > 1 {
        dfs_subsets(n, k, bits, cols, &mut set, &once, &multi, &mut acc, on_set);
    }
    acc
}

/// Checks the three deterministic conditions (plus the derived
/// unique-neighbor bound) for subsets of size at most `k`, using the
/// design's own `d`.
pub fn check_assumption(
    design: &BinaryDesign,
    epsilon: f64,
    k: usize,
    mode: CheckMode,
) -> Result<AssumptionReport> {
    check_assumption_with_budget(design, epsilon, k, mode, CheckBudget::default())
}

pub fn check_assumption_with_budget(
    design: &BinaryDesign,
    epsilon: f64,
    k: usize,
    mode: CheckMode,
    budget: CheckBudget,
) -> Result<AssumptionReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param("epsilon must lie in (0, 1)"));
    }
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let (m, n, d) = (design.m, design.n, design.d);
    let k = k.min(n);

    // Degree bounds.
    let cols = design.columns();
    let (worst_column, max_column_degree) = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (j, c.len()))
        .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let (worst_row, max_row_degree) = design
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.len()))
        .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let column_degree_ok = max_column_degree as f64 <= (1.0 + epsilon) * d;
    let row_degree_ok = max_row_degree as f64 <= (1.0 + epsilon) * (n as f64 / m as f64) * d;

    let (bits, colbits) = column_bits(design);
    let w = bits.words;
    let sqrt_d_over_8 = d.sqrt() / 8.0;

    let (acc, worst_pair, intersection_sampled, pairs_checked) = match mode {
        CheckMode::Exhaustive => {
            let required = subsets_up_to(n, k);
            if required > budget.subsets {
                return Err(Error::Budget {
                    required,
                    budget: budget.subsets,
                });
            }
            let pair_count = required * required.saturating_sub(1) / 2;
            if pair_count <= budget.pairs {
                // Materialize (S, N(S)) for all subsets, then scan pairs.
                let parts: Vec<(ScanAcc, Vec<Vec<usize>>, Vec<u64>)> = (0..n)
                    .into_par_iter()
                    .map(|root| {
                        let mut sets = Vec::new();
                        let mut nb = Vec::new();
                        let acc = scan_rooted(n, k, &bits, &colbits, root, &mut |s, b| {
                            sets.push(s.to_vec());
                            nb.extend_from_slice(b);
                        });
                        (acc, sets, nb)
                    })
                    .collect();
                let mut acc = ScanAcc::default();
                let mut sets = Vec::new();
                let mut nbits = Vec::new();
                for (a, s, b) in parts {
                    acc = acc.merge(a);
                    sets.extend(s);
                    nbits.extend(b);
                }
                let (worst, checked) = exhaustive_pairs(&sets, &nbits, w, n);
                (acc, worst, false, checked)
            } else {
                let acc = (0..n)
                    .into_par_iter()
                    .map(|root| scan_rooted(n, k, &bits, &colbits, root, &mut |_, _| {}))
                    .collect::<Vec<_>>()
                    .into_iter()
                    .fold(ScanAcc::default(), ScanAcc::merge);
                let (worst, checked) =
                    sampled_pairs(design, k, &colbits, w, budget.pair_samples, seeds::derive(0x5eed, 1));
                (acc, worst, true, checked)
            }
        }
        CheckMode::Sampled { samples, seed } => {
            let mut acc = ScanAcc::default();
            let mut rng = seeds::rng(seed);
            for l in 1..=k {
                for _ in 0..samples {
                    let mut s = index::sample(&mut rng, n, l).into_vec();
                    s.sort_unstable();
                    let (nn, uu) = subset_counts(&s, &colbits, w);
                    acc.visit(&s, nn, uu);
                }
            }
            let (worst, checked) =
                sampled_pairs(design, k, &colbits, w, samples, seeds::derive(seed, 1));
            (acc, worst, true, checked)
        }
    };

    let expansion_ok = acc
        .worst_exp
        .as_ref()
        .is_none_or(|(nn, s, _)| *nn as f64 >= (1.0 - epsilon) * d * *s as f64);
    let expansion_epsilon_min = acc
        .worst_exp
        .as_ref()
        .map_or(0.0, |(nn, s, _)| (1.0 - *nn as f64 / (d * *s as f64)).max(0.0));
    let unique_neighbor_ok = acc
        .worst_uniq
        .as_ref()
        .is_none_or(|(u, s, _)| *u as f64 >= (1.0 - 3.0 * epsilon) * d * *s as f64);
    let intersection_ok = worst_pair.as_ref().is_none_or(|p| {
        p.common as f64 <= sqrt_d_over_8 * p.s.len().max(p.t.len()) as f64
    });

    Ok(AssumptionReport {
        epsilon,
        k,
        d,
        mode,
        column_degree_ok,
        row_degree_ok,
        degree_ok: column_degree_ok && row_degree_ok,
        expansion_ok,
        intersection_ok,
        intersection_sampled,
        unique_neighbor_ok,
        max_column_degree,
        worst_column,
        max_row_degree,
        worst_row,
        worst_expansion: acc.worst_exp.map(|(nn, _, set)| SubsetWitness { set, neighbors: nn }),
        worst_unique: acc.worst_uniq.map(|(u, _, set)| SubsetWitness { set, neighbors: u }),
        worst_intersection: worst_pair,
        expansion_epsilon_min,
        constant_regime_not_met: d < 16.0,
        size_regime_met: None,
        samples_checked: acc.count,
        pairs_checked,
    })
}

fn subset_counts(set: &[usize], colbits: &[u64], w: usize) -> (usize, usize) {
    let mut once = vec![0u64; w];
    let mut multi = vec![0u64; w];
    for &j in set {
        let c = &colbits[j * w..(j + 1) * w];
        for t in 0..w {
            multi[t] |= once[t] & c[t];
            once[t] = (once[t] | c[t]) & !multi[t];
        }
    }
    let u = popcount(&once);
    (u + popcount(&multi), u)
}

fn coord_bits(set: &[usize], n: usize) -> Vec<u64> {
    let b = Bits::new(n);
    let mut buf = vec![0u64; b.words];
    for &j in set {
        b.set(&mut buf, j);
    }
    buf
}

/// Ratio comparison `a.common / max(|a.s|,|a.t|) > b.common / max(...)`.
fn pair_worse(common: usize, size: usize, cur: &Option<(usize, usize, usize, usize)>) -> bool {
    match cur {
        None => true,
        Some((c, sz, _, _)) => common * sz > c * size,
    }
}

/// Scans all unordered disjoint pairs of the materialized subsets. Returns
/// the pair maximizing `|N(S)∩N(T)| / max(|S|,|T|)` (first in scan order).
fn exhaustive_pairs(
    sets: &[Vec<usize>],
    nbits: &[u64],
    w: usize,
    n: usize,
) -> (Option<PairWitness>, u128) {
    let cbits: Vec<Vec<u64>> = sets.iter().map(|s| coord_bits(s, n)).collect();
    let total = sets.len();
    let partial: Vec<(Option<(usize, usize, usize, usize)>, u128)> = (0..total)
        .into_par_iter()
        .map(|a| {
            let na = &nbits[a * w..(a + 1) * w];
            let mut best: Option<(usize, usize, usize, usize)> = None;
            let mut checked = 0u128;
            for b in (a + 1)..total {
                if !disjoint(&cbits[a], &cbits[b]) {
                    continue;
                }
                checked += 1;
                let common = and_count(na, &nbits[b * w..(b + 1) * w]);
                let size = sets[a].len().max(sets[b].len());
                if pair_worse(common, size, &best) {
                    best = Some((common, size, a, b));
                }
            }
            (best, checked)
        })
        .collect();
    let mut best = None;
    let mut checked = 0;
    for (p, c) in partial {
        checked += c;
        if let Some((common, size, a, b)) = p {
            if pair_worse(common, size, &best) {
                best = Some((common, size, a, b));
            }
        }
    }
    let witness = best.map(|(common, _, a, b)| PairWitness {
        s: sets[a].clone(),
        t: sets[b].clone(),
        common,
    });
    (witness, checked)
}

fn sampled_pairs(
    design: &BinaryDesign,
    k: usize,
    colbits: &[u64],
    w: usize,
    samples: usize,
    seed: u64,
) -> (Option<PairWitness>, u128) {
    let n = design.n;
    let mut rng = seeds::rng(seed);
    let mut best: Option<(usize, usize, Vec<usize>, Vec<usize>)> = None;
    let mut checked = 0u128;
    for ls in 1..=k {
        for lt in 1..=k {
            if ls + lt > n {
                continue;
            }
            for _ in 0..samples {
                let both = index::sample(&mut rng, n, ls + lt).into_vec();
                let mut s = both[..ls].to_vec();
                let mut t = both[ls..].to_vec();
                s.sort_unstable();
                t.sort_unstable();
                let ns = neighborhood_bits(&s, colbits, w);
                let nt = neighborhood_bits(&t, colbits, w);
                let common = and_count(&ns, &nt);
                let size = ls.max(lt);
                checked += 1;
                let worse = match &best {
                    None => true,
                    Some((c, sz, _, _)) => common * sz > c * size,
                };
                if worse {
                    best = Some((common, size, s, t));
                }
            }
        }
    }
    (
        best.map(|(common, _, s, t)| PairWitness { s, t, common }),
        checked,
    )
}

fn neighborhood_bits(set: &[usize], colbits: &[u64], w: usize) -> Vec<u64> {
    let mut out = vec![0u64; w];
    for &j in set {
        for t in 0..w {
            out[t] |= colbits[j * w + t];
        }
    }
    out
}

/// Direct scan of `|U(S)| ≥ (1−3ε)d|S|` over every subset of size `≤ k`.
/// Returns the violating subsets (empty when the bound holds everywhere).
pub fn unique_neighbor_violations(
    design: &BinaryDesign,
    epsilon: f64,
    k: usize,
) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let bound = |s: usize| (1.0 - 3.0 * epsilon) * design.d * s as f64;
    let n = design.n;
    let mut stack: Vec<usize> = Vec::new();
    fn rec(
        design: &BinaryDesign,
        n: usize,
        k: usize,
        stack: &mut Vec<usize>,
        bound: &dyn Fn(usize) -> f64,
        out: &mut Vec<Vec<usize>>,
    ) {
        let start = stack.last().map_or(0, |&l| l + 1);
        for j in start..n {
            stack.push(j);
            let (_, u) = neighborhoods(design, stack).expect("in range");
            if (u.len() as f64) < bound(stack.len()) {
                out.push(stack.clone());
            }
            if stack.len() < k {
                rec(design, n, k, stack, bound, out);
            }
            stack.pop();
        }
    }
    rec(design, n, k, &mut stack, &bound, &mut out);
    out
}

/// Draws a uniformly random subset of the given size, sorted.
pub fn random_subset<R: Rng + ?Sized>(rng: &mut R, n: usize, size: usize) -> Vec<usize> {
    let mut s = index::sample(rng, n, size).into_vec();
    s.sort_unstable();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_three() -> BinaryDesign {
        BinaryDesign::from_dense(2, 3, &[1, 1, 0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn generation_with_unit_density_is_all_ones() {
        let m = gen_bernoulli_design(2, 4, 2.0, 7).unwrap();
        assert_eq!(m, BinaryDesign::all_ones(2, 4));
        let m = gen_bernoulli_design(4, 4, 4.0, 3).unwrap();
        assert_eq!(m, BinaryDesign::all_ones(4, 4));
        let (nb, _) = neighborhoods(&m, &[2]).unwrap();
        assert_eq!(nb, vec![0, 1, 2, 3]);
    }

    #[test]
    fn generation_rejects_bad_dimensions() {
        assert!(gen_bernoulli_design(4, 8, 5.0, 1).is_err());
        assert!(gen_bernoulli_design(8, 4, 2.0, 1).is_err());
        assert!(gen_bernoulli_design(4, 8, 0.5, 1).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_bernoulli_design(10, 20, 3.0, 42).unwrap();
        let b = gen_bernoulli_design(10, 20, 3.0, 42).unwrap();
        let c = gen_bernoulli_design(10, 20, 3.0, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.p, 0.3);
    }

    #[test]
    fn mean_weight_matches_binomial() {
        // Binomial(128, 0.25): mean 32, sd √24 ≈ 4.9; the mean over 10⁴
        // designs has standard error ≈ 0.049, so ±1 is a very loose band.
        let total: usize = (0..10_000u64)
            .map(|s| gen_bernoulli_design(8, 16, 2.0, s).unwrap().nnz())
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 32.0).abs() < 1.0, "mean weight {mean}");
    }

    #[test]
    fn neighborhood_examples() {
        let m = two_by_three();
        assert_eq!(neighborhoods(&m, &[1]).unwrap(), (vec![0, 1], vec![0, 1]));
        assert_eq!(neighborhoods(&m, &[0, 2]).unwrap(), (vec![0, 1], vec![0, 1]));
        let id = BinaryDesign::identity(3);
        assert_eq!(neighborhoods(&id, &[0, 1]).unwrap(), (vec![0, 1], vec![0, 1]));
        assert!(neighborhoods(&m, &[3]).is_err());
        assert_eq!(m.equation_neighborhood(&[1]).unwrap(), vec![1, 2]);
    }

    #[test]
    fn identity_satisfies_assumption() {
        let id = BinaryDesign::identity(4).with_degree(1.0);
        let r = check_assumption(&id, 0.01, 2, CheckMode::Exhaustive).unwrap();
        assert!(r.degree_ok && r.expansion_ok && r.intersection_ok, "{r:?}");
        assert!(r.unique_neighbor_ok);
        assert!(r.constant_regime_not_met);
        assert_eq!(r.size_regime_met, None);
        assert_eq!(r.clone().with_size_regime(4, Some(1.0), None).size_regime_met, Some(true));
        assert_eq!(r.clone().with_size_regime(4, Some(1.0), Some(5)).size_regime_met, Some(false));
        assert_eq!(r.clone().with_size_regime(4, Some(2.0), Some(4)).size_regime_met, Some(false));
        assert_eq!(r.samples_checked, 4 + 6);
        assert_eq!(r.worst_intersection.as_ref().unwrap().common, 0);
    }

    #[test]
    fn all_ones_fails_expansion() {
        let ones = BinaryDesign::all_ones(4, 4).with_degree(4.0);
        let r = check_assumption(&ones, 0.01, 2, CheckMode::Exhaustive).unwrap();
        assert!(!r.expansion_ok);
        let w = r.worst_expansion.unwrap();
        assert_eq!(w.set, vec![0, 1]);
        assert_eq!(w.neighbors, 4);
        assert!(r.degree_ok);
    }

    #[test]
    fn budget_refusal_reports_requirement() {
        let m = gen_bernoulli_design(10, 40, 3.0, 1).unwrap();
        let budget = CheckBudget {
            subsets: 100,
            ..CheckBudget::default()
        };
        match check_assumption_with_budget(&m, 0.5, 2, CheckMode::Exhaustive, budget) {
            Err(Error::Budget { required, budget }) => {
                assert_eq!(required, 40 + 780);
                assert_eq!(budget, 100);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn exhaustive_matches_naive_enumeration() {
        let m = gen_bernoulli_design(12, 20, 3.0, 11).unwrap();
        let r = check_assumption(&m, 0.5, 3, CheckMode::Exhaustive).unwrap();
        // Naive: min |N(S)|/|S| and max pair ratio via neighborhoods().
        let mut all = Vec::new();
        for a in 0..20 {
            all.push(vec![a]);
            for b in a + 1..20 {
                all.push(vec![a, b]);
                for c in b + 1..20 {
                    all.push(vec![a, b, c]);
                }
            }
        }
        let nsz = |s: &Vec<usize>| neighborhoods(&m, s).unwrap().0.len();
        let min_ratio = all
            .iter()
            .map(|s| nsz(s) as f64 / s.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let w = r.worst_expansion.as_ref().unwrap();
        assert_eq!(w.neighbors as f64 / w.set.len() as f64, min_ratio);
        let mut max_pair: f64 = 0.0;
        for (i, s) in all.iter().enumerate() {
            let ns = neighborhoods(&m, s).unwrap().0;
            for t in &all[i + 1..] {
                if s.iter().any(|x| t.contains(x)) {
                    continue;
                }
                let nt = neighborhoods(&m, t).unwrap().0;
                let common = ns.iter().filter(|x| nt.contains(x)).count();
                max_pair = max_pair.max(common as f64 / s.len().max(t.len()) as f64);
            }
        }
        let p = r.worst_intersection.as_ref().unwrap();
        assert_eq!(p.common as f64 / p.s.len().max(p.t.len()) as f64, max_pair);
        assert_eq!(r.samples_checked, subsets_up_to(20, 3));
    }

    #[test]
    fn sampled_mode_is_labeled_and_reproducible() {
        let m = gen_bernoulli_design(30, 60, 6.0, 11).unwrap();
        let mode = CheckMode::Sampled {
            samples: 500,
            seed: 9,
        };
        let a = check_assumption(&m, 0.5, 3, mode).unwrap();
        let b = check_assumption(&m, 0.5, 3, mode).unwrap();
        assert_eq!(a, b);
        assert!(a.intersection_sampled);
        assert_eq!(a.samples_checked, 1500);
    }

    #[test]
    fn file_format_examples() {
        let id = BinaryDesign::identity(2);
        let text = write_design(&id);
        assert_eq!(text, "2 2 2\n1 1\n2 2\n");
        assert_eq!(parse_design(&text).unwrap(), id);
        let empty = BinaryDesign::zeros(1, 1);
        let text = write_design(&empty);
        assert_eq!(text, "1 1 0\n");
        assert_eq!(parse_design(&text).unwrap(), empty);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("2 2 2\n1 1\n3 1\n", 3),
            ("2 2 2\n1 1\n", 1),
            ("2 2\n", 1),
            ("2 2 2\n2 2\n1 1\n", 3),
            ("2 2 1\n1 x\n", 2),
        ];
        for (text, line) in cases {
            match parse_design(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let m = gen_bernoulli_design(12, 30, 4.0, 5).unwrap();
        serialize_design(&m, &path).unwrap();
        assert_eq!(load_design(&path).unwrap(), m);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn design_and_set() -> impl Strategy<Value = (BinaryDesign, Vec<usize>)> {
            (1usize..8, 1usize..10, any::<u64>()).prop_flat_map(|(m, n, seed)| {
                let mut rng = seeds::rng(seed);
                let dense: Vec<u8> = (0..m * n).map(|_| rng.random_bool(0.4) as u8).collect();
                let d = BinaryDesign::from_dense(m, n, &dense).unwrap();
                (Just(d), prop::collection::btree_set(0..n, 0..=n))
                    .prop_map(|(d, s)| (d, s.into_iter().collect()))
            })
        }

        proptest! {
            #[test]
            fn neighborhood_invariants((m, s) in design_and_set()) {
                let (nb, un) = neighborhoods(&m, &s).unwrap();
                prop_assert!(un.iter().all(|i| nb.contains(i)));
                prop_assert!(nb.iter().all(|&i| i < m.m()));
                let deg_sum: usize = s.iter().map(|&j| m.columns()[j].len()).sum();
                prop_assert!(nb.len() <= deg_sum);
                // Double counting: unique neighbors are counted once, others at least twice.
                prop_assert!(un.len() as i64 >= 2 * nb.len() as i64 - deg_sum as i64);
            }

            #[test]
            fn serialization_round_trips((m, _s) in design_and_set()) {
                prop_assert_eq!(parse_design(&write_design(&m)).unwrap(), m);
            }
        }
    }
}
