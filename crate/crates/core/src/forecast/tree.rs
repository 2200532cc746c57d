//! Histogram-based regression trees with native categorical splits.
//!
//! Numeric columns are quantized into at most `max_bins` quantile bins whose
//! upper edges become split thresholds, so routing a raw value through a
//! threshold agrees with routing its bin. Categorical columns split on a set
//! of codes found by ordering the node's categories by mean target and
//! scanning prefixes.

use crate::model::{Feature, FeatureVector};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_BINS: usize = 255;
const MIN_GAIN: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Column {
    pub feature: Feature,
    categorical: bool,
    /// Upper edge of each numeric bin; empty for categorical columns.
    edges: Vec<f64>,
    n_bins: usize,
    bins: Vec<u16>,
}

impl Column {
    fn bin_of(&self, x: f64) -> u16 {
        if self.categorical {
            x as u16
        } else {
            self.edges.partition_point(|&e| e < x).min(self.n_bins - 1) as u16
        }
    }
}

/// Column-major binned design matrix.
#[derive(Debug, Clone)]
pub struct TrainMatrix {
    n_rows: usize,
    columns: Vec<Column>,
}

impl TrainMatrix {
    pub fn from_rows(rows: &[FeatureVector], features: &[Feature], max_bins: usize) -> Self {
        let edges: Vec<Vec<f64>> = features
            .iter()
            .map(|&f| {
                if f.is_categorical() {
                    Vec::new()
                } else {
                    numeric_edges(rows.iter().map(|r| r.get(f)).collect(), max_bins)
                }
            })
            .collect();
        Self::from_rows_with_edges(rows.iter().copied(), rows.len(), features, edges)
    }

    /// Bins `rows` using precomputed numeric edges (one entry per feature,
    /// ignored for categorical features).
    pub fn from_rows_with_edges(
        rows: impl Iterator<Item = FeatureVector>,
        n_rows: usize,
        features: &[Feature],
        edges: Vec<Vec<f64>>,
    ) -> Self {
        let mut columns: Vec<Column> = features
            .iter()
            .zip(edges)
            .map(|(&feature, edges)| Column {
                feature,
                categorical: feature.is_categorical(),
                n_bins: edges.len().max(1),
                edges,
                bins: Vec::with_capacity(n_rows),
            })
            .collect();
        let mut count = 0;
        for r in rows {
            for c in &mut columns {
                let b = c.bin_of(r.get(c.feature));
                if c.categorical {
                    c.n_bins = c.n_bins.max(b as usize + 1);
                }
                c.bins.push(b);
            }
            count += 1;
        }
        assert_eq!(count, n_rows);
        Self { n_rows, columns }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn features(&self) -> Vec<Feature> {
        self.columns.iter().map(|c| c.feature).collect()
    }
}

/// Bin upper edges: every distinct value when few, otherwise quantiles of the
/// distinct values.
pub fn numeric_edges(mut values: Vec<f64>, max_bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() <= max_bins {
        return values;
    }
    let u = values.len();
    let mut edges: Vec<f64> = (1..=max_bins)
        .map(|b| values[b * u / max_bins - 1])
        .collect();
    edges.dedup();
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Left when the value is at most the threshold.
    Threshold { value: f64, bin: u16 },
    /// Left when the integer code is in the (sorted) set.
    Categories(Vec<u16>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        rows: u32,
    },
    Split {
        feature: Feature,
        column: u16,
        rule: SplitRule,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Columns considered at each node; `None` means all allowed columns.
    pub features_per_node: Option<usize>,
}

impl Default for GrowParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_samples_leaf: 1,
            features_per_node: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Best {
    gain: f64,
    column: usize,
    rule: SplitRule,
}

struct Grower<'a> {
    m: &'a TrainMatrix,
    y: &'a [f64],
    params: GrowParams,
    allowed: &'a [usize],
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node>,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl RegressionTree {
    /// Fits a tree to `y` over the given `rows` (duplicates allowed), using
    /// only `allowed` columns. Per-node column sampling draws from `rng`.
    pub fn fit(
        m: &TrainMatrix,
        y: &[f64],
        rows: &mut [u32],
        allowed: &[usize],
        params: GrowParams,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Self {
        assert_eq!(y.len(), m.n_rows);
        let max_bins = m.columns.iter().map(|c| c.n_bins).max().unwrap_or(1);
        let mut g = Grower {
            m,
            y,
            params,
            allowed,
            rng,
            nodes: Vec::new(),
            sums: vec![0.0; max_bins],
            counts: vec![0; max_bins],
        };
        g.grow(rows, 0);
        Self { nodes: g.nodes }
    }

    /// Tree that predicts `value` everywhere.
    pub fn constant(value: f64, rows: u32) -> Self {
        Self {
            nodes: vec![Node::Leaf { value, rows }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_of(&self, x: &FeatureVector) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    rule,
                    left,
                    right,
                    ..
                } => {
                    let v = x.get(*feature);
                    let go_left = match rule {
                        SplitRule::Threshold { value, .. } => v <= *value,
                        SplitRule::Categories(set) => {
                            v >= 0.0 && set.binary_search(&(v as u16)).is_ok()
                        }
                    };
                    i = if go_left { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> f64 {
        match self.nodes[self.leaf_of(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Prediction for a training row, routed by bins.
    pub fn predict_row(&self, m: &TrainMatrix, row: usize) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    column,
                    rule,
                    left,
                    right,
                    ..
                } => {
                    let b = m.columns[*column as usize].bins[row];
                    let go_left = match rule {
                        SplitRule::Threshold { bin, .. } => b <= *bin,
                        SplitRule::Categories(set) => set.binary_search(&b).is_ok(),
                    };
                    i = if go_left { *left } else { *right } as usize;
                }
            }
        }
    }

    /// Number of splits on each feature.
    pub fn split_counts(&self) -> impl Iterator<Item = Feature> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [u32], depth: usize) -> u32 {
        let (sum, n) = rows
            .iter()
            .fold((0.0, 0usize), |(s, n), &r| (s + self.y[r as usize], n + 1));
        let value = if n == 0 { 0.0 } else { sum / n as f64 };
        let me = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            value,
            rows: n as u32,
        });
        if depth >= self.params.max_depth || n < 2 * self.params.min_samples_leaf.max(1) {
            return me;
        }
        let Some(best) = self.best_split(rows, sum, n) else {
            return me;
        };
        let col = &self.m.columns[best.column];
        let goes_left = |r: u32| {
            let b = col.bins[r as usize];
            match &best.rule {
                SplitRule::Threshold { bin, .. } => b <= *bin,
                SplitRule::Categories(set) => set.binary_search(&b).is_ok(),
            }
        };
        let mut split = 0;
        for i in 0..rows.len() {
            if goes_left(rows[i]) {
                rows.swap(i, split);
                split += 1;
            }
        }
        let feature = col.feature;
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me as usize] = Node::Split {
            feature,
            column: best.column as u16,
            rule: best.rule,
            left,
            right,
        };
        me
    }

    fn candidate_columns(&mut self) -> Vec<usize> {
        match (self.params.features_per_node, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < self.allowed.len() => {
                let mut picked: Vec<usize> = sample(rng, self.allowed.len(), k.max(1))
                    .into_iter()
                    .map(|i| self.allowed[i])
                    .collect();
                picked.sort_unstable();
                picked
            }
            _ => self.allowed.to_vec(),
        }
    }

    fn best_split(&mut self, rows: &[u32], sum: f64, n: usize) -> Option<Best> {
        let parent = sum * sum / n as f64;
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<Best> = None;
        for c in self.candidate_columns() {
            let col = &self.m.columns[c];
            let nb = col.n_bins;
            self.sums[..nb].fill(0.0);
            self.counts[..nb].fill(0);
            for &r in rows {
                let b = col.bins[r as usize] as usize;
                self.sums[b] += self.y[r as usize];
                self.counts[b] += 1;
            }
            let mut order: Vec<usize> = (0..nb).filter(|&b| self.counts[b] > 0).collect();
            if order.len() < 2 {
                continue;
            }
            if col.categorical {
                let mean = |b: usize| self.sums[b] / self.counts[b] as f64;
                order.sort_by(|&a, &b| mean(a).total_cmp(&mean(b)).then(a.cmp(&b)));
            }
            let (mut ls, mut ln) = (0.0, 0usize);
            for k in 0..order.len() - 1 {
                ls += self.sums[order[k]];
                ln += self.counts[order[k]] as usize;
                let rn = n - ln;
                if ln < min_leaf || rn < min_leaf {
                    continue;
                }
                let rs = sum - ls;
                let gain = ls * ls / ln as f64 + rs * rs / rn as f64 - parent;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let rule = if col.categorical {
                        let mut set: Vec<u16> = order[..=k].iter().map(|&b| b as u16).collect();
                        set.sort_unstable();
                        SplitRule::Categories(set)
                    } else {
                        let b = order[k];
                        SplitRule::Threshold {
                            value: col.edges[b],
                            bin: b as u16,
                        }
                    };
                    best = Some(Best {
                        gain,
                        column: c,
                        rule,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DayContext, StationId};
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};

    fn rows_and_targets(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<f64>) {
        let e = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let mut ctx = DayContext::plain(e + chrono::Duration::days(rng.random_range(0..60)), e);
            ctx.avg_temperature = rng.random_range(-5.0..30.0);
            ctx.rain = rng.random_bool(0.3);
            let slot = rng.random_range(0..48);
            let x = FeatureVector::new(&ctx, slot, StationId(rng.random_range(0..5)));
            let y =
                (slot % 5) as f64 + 0.1 * ctx.avg_temperature - if ctx.rain { 2.0 } else { 0.0 };
            xs.push(x);
            ys.push(y + rng.random_range(-0.5..0.5));
        }
        (xs, ys)
    }

    fn all_columns(m: &TrainMatrix) -> Vec<usize> {
        (0..m.n_columns()).collect()
    }

    #[test]
    fn depth_zero_is_mean() {
        let (xs, ys) = rows_and_targets(100, 1);
        let m = TrainMatrix::from_rows(&xs, &Feature::ALL, DEFAULT_MAX_BINS);
        let mut rows: Vec<u32> = (0..100).collect();
        let params = GrowParams {
            max_depth: 0,
            ..Default::default()
        };
        let t = RegressionTree::fit(&m, &ys, &mut rows, &all_columns(&m), params, None);
        let mean = ys.iter().sum::<f64>() / 100.0;
        assert!((t.predict(&xs[0]) - mean).abs() < 1e-12);
        assert_eq!(t.nodes().len(), 1);
    }

    #[test]
    fn leaf_values_are_means_of_rerouted_rows() {
        let (xs, ys) = rows_and_targets(500, 2);
        let m = TrainMatrix::from_rows(&xs, &Feature::ALL, 16);
        let mut rows: Vec<u32> = (0..500).collect();
        let params = GrowParams {
            max_depth: 6,
            min_samples_leaf: 3,
            features_per_node: None,
        };
        let t = RegressionTree::fit(&m, &ys, &mut rows, &all_columns(&m), params, None);
        assert!(t.depth() <= 6 && t.depth() > 1);
        let mut acc = vec![(0.0, 0u32); t.nodes().len()];
        for (x, y) in xs.iter().zip(&ys) {
            let leaf = t.leaf_of(x);
            acc[leaf].0 += y;
            acc[leaf].1 += 1;
        }
        for (i, node) in t.nodes().iter().enumerate() {
            if let Node::Leaf { value, rows } = node {
                assert_eq!(acc[i].1, *rows);
                assert!(*rows >= 3);
                assert!((acc[i].0 / acc[i].1 as f64 - value).abs() < 1e-9);
            }
        }
        // binned routing agrees with raw routing
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(t.predict(x), t.predict_row(&m, i));
        }
    }

    #[test]
    fn categorical_split_groups_codes() {
        // Target depends on slot parity: one categorical split separates it.
        let e = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let ctx = DayContext::plain(e, e);
        let xs: Vec<FeatureVector> = (0..48)
            .map(|s| FeatureVector::new(&ctx, s, StationId(0)))
            .collect();
        let ys: Vec<f64> = (0..48)
            .map(|s| if s % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let m = TrainMatrix::from_rows(&xs, &[Feature::SlotOfDay], DEFAULT_MAX_BINS);
        let mut rows: Vec<u32> = (0..48).collect();
        let t = RegressionTree::fit(
            &m,
            &ys,
            &mut rows,
            &[0],
            GrowParams {
                max_depth: 1,
                ..Default::default()
            },
            None,
        );
        assert_eq!(t.nodes().len(), 3);
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(t.predict(x), *y);
        }
    }

    #[test]
    fn balanced_targets_give_zero() {
        let (xs, _) = rows_and_targets(10, 3);
        let ys: Vec<f64> = (0..10)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let m = TrainMatrix::from_rows(&xs, &Feature::ALL, DEFAULT_MAX_BINS);
        let mut rows: Vec<u32> = (0..10).collect();
        let t = RegressionTree::fit(
            &m,
            &ys,
            &mut rows,
            &all_columns(&m),
            GrowParams {
                max_depth: 0,
                ..Default::default()
            },
            None,
        );
        assert_eq!(t.predict(&xs[3]), 0.0);
    }

    #[test]
    fn quantile_edges() {
        let e = numeric_edges((0..1000).map(|v| v as f64).collect(), 10);
        assert_eq!(e.len(), 10);
        assert_eq!(e[0], 99.0);
        assert_eq!(*e.last().unwrap(), 999.0);
        assert_eq!(numeric_edges(vec![3.0, 1.0, 3.0], 10), vec![1.0, 3.0]);
    }
}
