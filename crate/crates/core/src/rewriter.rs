//! Social query rewriting.
//!
//! A keyword expression is wrapped as `(and keyword-expr social-expr)` where
//! the social expression is an `or` over the searcher's scored connections,
//! one prefixed atom per kept connection. Connections are scored per prefix
//! class by a small linear model over the social features, and each class
//! keeps its top `t_p`. The thresholds come from a budgeted sweep that
//! simulates rewritten queries against the index and caps mean cost.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::graph::{GraphError, NodeId, NodeKind, SocialFeatureVector, SocialGraph};
use crate::index::{InvertedIndex, Term};
use crate::query::{cost_of, SExpr};

/// Retrieval prefix a kept connection is emitted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrefixClass {
    Involves,
    AuthoredBy,
    GroupOf,
    PageOf,
}

impl PrefixClass {
    /// Canonical emission order inside the social expression.
    pub const ALL: [PrefixClass; 4] = [
        PrefixClass::Involves,
        PrefixClass::AuthoredBy,
        PrefixClass::GroupOf,
        PrefixClass::PageOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrefixClass::Involves => "involves",
            PrefixClass::AuthoredBy => "authored-by",
            PrefixClass::GroupOf => "group-of",
            PrefixClass::PageOf => "page-of",
        }
    }

    pub fn from_name(name: &str) -> Option<PrefixClass> {
        PrefixClass::ALL.into_iter().find(|c| c.as_str() == name)
    }

    fn term(self, id: NodeId) -> Term {
        match self {
            PrefixClass::Involves => Term::Involves(id),
            PrefixClass::AuthoredBy => Term::AuthoredBy(id),
            PrefixClass::GroupOf => Term::GroupOf(id),
            PrefixClass::PageOf => Term::PageOf(id),
        }
    }
}

/// One value per prefix class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PerPrefix<T> {
    pub involves: T,
    pub authored_by: T,
    pub group_of: T,
    pub page_of: T,
}

impl<T> PerPrefix<T> {
    pub fn get(&self, class: PrefixClass) -> &T {
        match class {
            PrefixClass::Involves => &self.involves,
            PrefixClass::AuthoredBy => &self.authored_by,
            PrefixClass::GroupOf => &self.group_of,
            PrefixClass::PageOf => &self.page_of,
        }
    }

    pub fn get_mut(&mut self, class: PrefixClass) -> &mut T {
        match class {
            PrefixClass::Involves => &mut self.involves,
            PrefixClass::AuthoredBy => &mut self.authored_by,
            PrefixClass::GroupOf => &mut self.group_of,
            PrefixClass::PageOf => &mut self.page_of,
        }
    }

    pub fn uniform(value: T) -> Self
    where
        T: Clone,
    {
        PerPrefix {
            involves: value.clone(),
            authored_by: value.clone(),
            group_of: value.clone(),
            page_of: value,
        }
    }
}

/// Linear scorer over the 5 social features.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinearWeights {
    pub w: [f64; 5],
    pub bias: f64,
}

impl LinearWeights {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn score(&self, f: &SocialFeatureVector) -> f64 {
        let mut s = self.bias;
        for i in 0..5 {
            s += self.w[i] * f.0[i];
        }
        s
    }
}

/// Per-prefix weights and keep thresholds: the trained rewriting policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewriteModel {
    pub weights: PerPrefix<LinearWeights>,
    pub thresholds: PerPrefix<u32>,
}

impl RewriteModel {
    /// Keeps every candidate connection; useful before any training.
    pub fn keep_all() -> Self {
        RewriteModel {
            weights: PerPrefix::uniform(LinearWeights::zero()),
            thresholds: PerPrefix::uniform(u32::MAX),
        }
    }
}

/// A labeled (searcher, candidate connection) example: did the connection
/// lead to the ideal result for this query?
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub query: String,
    pub searcher: NodeId,
    pub result_doc: NodeId,
    pub source_entity: NodeId,
    pub prefix: PrefixClass,
    pub features: SocialFeatureVector,
    pub label: u8,
}

#[derive(Debug, Error)]
pub enum RewriteError {
    /// No candidate connection survived the thresholds; callers may fall
    /// back to keyword-only search.
    #[error("no social connections kept for this searcher")]
    NoConnections,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrainError {
    #[error("no ground-truth rows supplied")]
    EmptyRows,
    #[error("normal equations are singular; use a positive ridge penalty")]
    SingularSystem,
}

/// Enumerates the searcher's candidate connections with their prefix class
/// and social features: self plus every entity in `conn(u)`.
pub fn candidates(
    g: &SocialGraph,
    u: NodeId,
    now: u64,
) -> Result<Vec<(PrefixClass, NodeId, SocialFeatureVector)>, GraphError> {
    let conn = g.conn(u)?;
    let mut out = Vec::with_capacity(conn.len());
    out.push((PrefixClass::Involves, u, g.social_features(u, u, now)?));
    for &e in &conn {
        if e == u {
            continue;
        }
        let class = match g.node_kind(e) {
            Some(NodeKind::Person) => PrefixClass::AuthoredBy,
            Some(NodeKind::Group) => PrefixClass::GroupOf,
            Some(NodeKind::Page) => PrefixClass::PageOf,
            _ => continue,
        };
        out.push((class, e, g.social_features(u, e, now)?));
    }
    out.sort_by_key(|&(class, id, _)| (PrefixClass::ALL.iter().position(|&c| c == class), id));
    Ok(out)
}

/// Scores and thresholds the searcher's connections, then restricts the
/// keyword expression to them: `(and keyword-expr (or atom...))`.
///
/// Atoms appear in class order (involves, authored-by, group-of, page-of),
/// each class by descending score with ties broken by ascending id. When at
/// least one candidate is kept, `involves:{u}` is always included even if
/// the involves threshold is 0. When nothing is kept at all, the rewrite
/// fails with [`RewriteError::NoConnections`].
pub fn rewrite(
    g: &SocialGraph,
    u: NodeId,
    keyword_expr: SExpr,
    model: &RewriteModel,
    now: u64,
) -> Result<SExpr, RewriteError> {
    let cands = candidates(g, u, now)?;
    let mut kept: PerPrefix<Vec<NodeId>> = PerPrefix::default();
    let mut kept_total = 0usize;
    for class in PrefixClass::ALL {
        let weights = model.weights.get(class);
        let mut scored: Vec<(NodeId, f64)> = cands
            .iter()
            .filter(|(c, _, _)| *c == class)
            .map(|(_, id, f)| (*id, weights.score(f)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(*model.thresholds.get(class) as usize);
        kept_total += scored.len();
        *kept.get_mut(class) = scored.into_iter().map(|(id, _)| id).collect();
    }
    if kept_total == 0 {
        return Err(RewriteError::NoConnections);
    }
    if kept.involves.is_empty() {
        kept.involves.push(u);
    }
    let mut atoms = Vec::with_capacity(kept_total + 1);
    for class in PrefixClass::ALL {
        for &id in kept.get(class) {
            atoms.push(SExpr::Term(class.term(id)));
        }
    }
    Ok(SExpr::and(vec![keyword_expr, SExpr::or(atoms)]))
}

/// Feature matrix column count: 5 social features plus a bias column.
const DIMS: usize = 6;

fn solve_gauss(mut a: [[f64; DIMS]; DIMS], mut b: [f64; DIMS]) -> Option<[f64; DIMS]> {
    for col in 0..DIMS {
        let pivot = (col..DIMS).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..DIMS {
            let factor = a[row][col] / a[col][col];
            for k in col..DIMS {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; DIMS];
    for col in (0..DIMS).rev() {
        let mut s = b[col];
        for k in col + 1..DIMS {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Ridge regression of label on social features, per prefix class, via the
/// normal equations. The bias column is not penalized. Classes with no rows
/// get zero weights. Row order does not affect the result: rows are
/// accumulated in a canonical sort order.
pub fn train_weights(
    rows: &[GroundTruthRow],
    ridge: f64,
) -> Result<PerPrefix<LinearWeights>, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::EmptyRows);
    }
    let mut out: PerPrefix<LinearWeights> = PerPrefix::default();
    for class in PrefixClass::ALL {
        let mut class_rows: Vec<&GroundTruthRow> =
            rows.iter().filter(|r| r.prefix == class).collect();
        if class_rows.is_empty() {
            continue;
        }
        class_rows.sort_by(|a, b| {
            let key = |r: &GroundTruthRow| {
                let mut k = [0.0f64; DIMS];
                k[..5].copy_from_slice(&r.features.0);
                k[5] = r.label as f64;
                k
            };
            let (ka, kb) = (key(a), key(b));
            ka.iter()
                .zip(kb.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut xtx = [[0.0; DIMS]; DIMS];
        let mut xty = [0.0; DIMS];
        for row in &class_rows {
            let mut x = [0.0; DIMS];
            x[..5].copy_from_slice(&row.features.0);
            x[5] = 1.0;
            for i in 0..DIMS {
                for j in 0..DIMS {
                    xtx[i][j] += x[i] * x[j];
                }
                xty[i] += x[i] * row.label as f64;
            }
        }
        for (i, row) in xtx.iter_mut().enumerate().take(5) {
            row[i] += ridge;
        }
        let solution = solve_gauss(xtx, xty).ok_or(TrainError::SingularSystem)?;
        *out.get_mut(class) = LinearWeights {
            w: solution[..5].try_into().unwrap(),
            bias: solution[5],
        };
    }
    Ok(out)
}

/// Fraction of ideal rows whose source entity ranks within the top `t_p`
/// of its prefix class, grouping candidates per (query, searcher).
pub fn recall_at_t(
    rows: &[GroundTruthRow],
    weights: &PerPrefix<LinearWeights>,
    t: &PerPrefix<u32>,
) -> Result<f64, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::EmptyRows);
    }
    // (query, searcher, class) → deduped candidate entities and their ideals.
    type GroupKey<'a> = (&'a str, NodeId, PrefixClass);
    let mut groups: BTreeMap<GroupKey, BTreeMap<NodeId, (f64, bool)>> = BTreeMap::new();
    for row in rows {
        let score = weights.get(row.prefix).score(&row.features);
        let entry = groups
            .entry((row.query.as_str(), row.searcher, row.prefix))
            .or_default()
            .entry(row.source_entity)
            .or_insert((score, false));
        entry.1 |= row.label != 0;
    }
    let mut ideals = 0u64;
    let mut recovered = 0u64;
    for ((_, _, class), members) in &groups {
        let mut ranked: Vec<(NodeId, f64, bool)> =
            members.iter().map(|(&id, &(s, l))| (id, s, l)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep = *t.get(*class) as usize;
        for (pos, (_, _, ideal)) in ranked.iter().enumerate() {
            if *ideal {
                ideals += 1;
                if pos < keep {
                    recovered += 1;
                }
            }
        }
    }
    if ideals == 0 {
        return Ok(0.0);
    }
    Ok(recovered as f64 / ideals as f64)
}

/// Thresholds chosen by [`sweep_tp`], with a flag set when nothing above
/// the all-zero floor fits the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOutcome {
    pub thresholds: PerPrefix<u32>,
    /// Uniform threshold reached by the first pass; classes with fewer
    /// candidates sit at their cap below it.
    pub uniform_t: u32,
    /// Whether greedy refinement raised any class beyond the uniform pass.
    pub refined: bool,
    pub at_floor: bool,
}

/// Mean rewritten-query retrieval cost over a workload. Searchers whose
/// rewrite has no connections retrieve nothing and count as zero cost.
pub fn mean_cost(
    idx: &InvertedIndex,
    g: &SocialGraph,
    workload: &[(NodeId, SExpr)],
    model: &RewriteModel,
    now: u64,
) -> f64 {
    let mut total = 0u64;
    for (searcher, kw) in workload {
        match rewrite(g, *searcher, kw.clone(), model, now) {
            Ok(expr) => total += cost_of(idx, &expr).postings_touched,
            Err(RewriteError::NoConnections) => {}
            Err(RewriteError::Graph(_)) => {}
        }
    }
    total as f64 / workload.len() as f64
}

/// Largest per-prefix thresholds whose mean rewritten-query cost over the
/// workload stays within budget `k`.
///
/// First a uniform threshold is raised as far as the budget allows, then
/// single classes are raised greedily, preferring the largest marginal
/// recall (on `rows`, which may be empty) per unit of marginal cost. The
/// result is maximal: raising any single class by one either exceeds the
/// budget or cannot change any rewrite (the class is at its candidate cap).
pub fn sweep_tp(
    idx: &InvertedIndex,
    g: &SocialGraph,
    workload: &[(NodeId, SExpr)],
    weights: &PerPrefix<LinearWeights>,
    rows: &[GroundTruthRow],
    k: f64,
    now: u64,
) -> SweepOutcome {
    assert!(!workload.is_empty(), "sweep_tp requires a workload");
    assert!(k > 0.0, "budget must be positive");

    // Per-class candidate caps over the workload's searchers; raising a
    // threshold past its cap can never change any rewrite.
    let mut caps: PerPrefix<u32> = PerPrefix::default();
    for (searcher, _) in workload {
        if let Ok(cands) = candidates(g, *searcher, now) {
            let mut counts: PerPrefix<u32> = PerPrefix::default();
            for (class, _, _) in cands {
                *counts.get_mut(class) += 1;
            }
            for class in PrefixClass::ALL {
                let cap = caps.get_mut(class);
                *cap = (*cap).max(*counts.get(class));
            }
        }
    }

    let cost_at = |t: PerPrefix<u32>| {
        mean_cost(
            idx,
            g,
            workload,
            &RewriteModel {
                weights: *weights,
                thresholds: t,
            },
            now,
        )
    };
    let recall_at = |t: PerPrefix<u32>| recall_at_t(rows, weights, &t).unwrap_or(0.0);

    // Uniform pass: grow all classes together while the budget holds.
    let max_cap = PrefixClass::ALL
        .iter()
        .map(|&c| *caps.get(c))
        .max()
        .unwrap_or(0);
    let mut t = PerPrefix::uniform(0u32);
    let mut uniform_t = 0u32;
    for uniform in 1..=max_cap {
        let trial = PerPrefix::uniform(uniform);
        let capped = PerPrefix {
            involves: trial.involves.min(caps.involves),
            authored_by: trial.authored_by.min(caps.authored_by),
            group_of: trial.group_of.min(caps.group_of),
            page_of: trial.page_of.min(caps.page_of),
        };
        if capped == t {
            break;
        }
        if cost_at(capped) <= k {
            t = capped;
            uniform_t = uniform;
        } else {
            break;
        }
    }
    let uniform_result = t;

    // Greedy refinement: raise one class at a time while the budget holds.
    let mut cur_cost = cost_at(t);
    let mut cur_recall = recall_at(t);
    loop {
        let mut best: Option<(f64, usize, PerPrefix<u32>, f64, f64)> = None;
        for (order, class) in PrefixClass::ALL.into_iter().enumerate() {
            if *t.get(class) >= *caps.get(class) {
                continue;
            }
            let mut trial = t;
            *trial.get_mut(class) += 1;
            let c = cost_at(trial);
            if c > k {
                continue;
            }
            let r = recall_at(trial);
            let ratio = if c > cur_cost {
                (r - cur_recall) / (c - cur_cost)
            } else {
                f64::INFINITY
            };
            let better = match &best {
                None => true,
                Some((best_ratio, best_order, ..)) => {
                    ratio > *best_ratio || (ratio == *best_ratio && order < *best_order)
                }
            };
            if better {
                best = Some((ratio, order, trial, c, r));
            }
        }
        match best {
            Some((_, _, trial, c, r)) => {
                t = trial;
                cur_cost = c;
                cur_recall = r;
            }
            None => break,
        }
    }

    SweepOutcome {
        at_floor: t == PerPrefix::uniform(0),
        uniform_t,
        refined: t != uniform_result,
        thresholds: t,
    }
}

#[derive(Debug, Error)]
pub enum GroundTruthIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Writes rows as tab-separated
/// `query searcher doc entity prefix f1..f5 label` lines.
pub fn write_ground_truth<W: Write>(
    w: &mut W,
    rows: &[GroundTruthRow],
) -> Result<(), GroundTruthIoError> {
    for (i, row) in rows.iter().enumerate() {
        if row.query.contains(['\t', '\n']) {
            return Err(GroundTruthIoError::Format {
                line: i + 1,
                msg: "query contains tab or newline".into(),
            });
        }
        let f = &row.features.0;
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            row.query,
            row.searcher,
            row.result_doc,
            row.source_entity,
            row.prefix.as_str(),
            f[0],
            f[1],
            f[2],
            f[3],
            f[4],
            row.label
        )?;
    }
    Ok(())
}

/// Parses the tab-separated ground-truth format written by
/// [`write_ground_truth`].
pub fn read_ground_truth<R: BufRead>(r: R) -> Result<Vec<GroundTruthRow>, GroundTruthIoError> {
    let mut rows = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| GroundTruthIoError::Format {
            line: lineno + 1,
            msg,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 11 {
            return Err(err(format!("expected 11 columns, got {}", cols.len())));
        }
        let id = |s: &str| -> Result<NodeId, GroundTruthIoError> {
            s.parse::<u64>()
                .map(NodeId)
                .map_err(|_| err(format!("bad node id {s:?}")))
        };
        let real = |s: &str| -> Result<f64, GroundTruthIoError> {
            let v: f64 = s
                .parse()
                .map_err(|_| err(format!("bad number {s:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite feature {s:?}")));
            }
            Ok(v)
        };
        let prefix = PrefixClass::from_name(cols[4])
            .ok_or_else(|| err(format!("unknown prefix {:?}", cols[4])))?;
        let label: u8 = match cols[10] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("label must be 0 or 1, got {other:?}"))),
        };
        rows.push(GroundTruthRow {
            query: cols[0].to_string(),
            searcher: id(cols[1])?,
            result_doc: id(cols[2])?,
            source_entity: id(cols[3])?,
            prefix,
            features: SocialFeatureVector([
                real(cols[5])?,
                real(cols[6])?,
                real(cols[7])?,
                real(cols[8])?,
                real(cols[9])?,
            ]),
            label,
        });
    }
    Ok(rows)
}

pub fn save_ground_truth(path: &Path, rows: &[GroundTruthRow]) -> Result<(), GroundTruthIoError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ground_truth(&mut w, rows)
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>, GroundTruthIoError> {
    read_ground_truth(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Debug, Error)]
pub enum ModelTextError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad rewrite model file: {0}")]
    Format(String),
}

impl RewriteModel {
    /// Plain-text serialization: a header line then one line per class with
    /// threshold, five weights, and bias, tab-separated.
    pub fn to_text(&self) -> String {
        let mut out = String::from("rewrite-model v1\n");
        for class in PrefixClass::ALL {
            let lw = self.weights.get(class);
            out.push_str(class.as_str());
            out.push('\t');
            out.push_str(&self.thresholds.get(class).to_string());
            for v in lw.w.iter().chain(std::iter::once(&lw.bias)) {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelTextError> {
        let mut lines = text.lines();
        if lines.next() != Some("rewrite-model v1") {
            return Err(ModelTextError::Format("missing header".into()));
        }
        let mut model = RewriteModel {
            weights: PerPrefix::default(),
            thresholds: PerPrefix::default(),
        };
        let mut seen = 0;
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 8 {
                return Err(ModelTextError::Format(format!(
                    "expected 8 columns, got {}",
                    cols.len()
                )));
            }
            let class = PrefixClass::from_name(cols[0])
                .ok_or_else(|| ModelTextError::Format(format!("unknown class {:?}", cols[0])))?;
            let t: u32 = cols[1]
                .parse()
                .map_err(|_| ModelTextError::Format(format!("bad threshold {:?}", cols[1])))?;
            let mut vals = [0.0f64; 6];
            for (i, col) in cols[2..].iter().enumerate() {
                vals[i] = col
                    .parse()
                    .map_err(|_| ModelTextError::Format(format!("bad weight {col:?}")))?;
            }
            *model.thresholds.get_mut(class) = t;
            *model.weights.get_mut(class) = LinearWeights {
                w: vals[..5].try_into().unwrap(),
                bias: vals[5],
            };
            seen += 1;
        }
        if seen != 4 {
            return Err(ModelTextError::Format(format!(
                "expected 4 class lines, got {seen}"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelTextError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelTextError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
