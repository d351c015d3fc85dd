//! Scenario-tree topology.
//!
//! Nodes are numbered breadth-first by stage with the root at index 0, and
//! the children of every node are appended in the order of their parents.
//! As a consequence both `nodes(t)` and `ch(i)` are contiguous index ranges,
//! which is what the per-stage parallel loops rely on.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Tolerance for a probability vector to count as stochastic.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Node probabilities below this value are rejected at build time.
pub const MIN_NODE_PROB: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    horizon: usize,
    stop_stage: usize,
    stage_of: Vec<usize>,
    ancestor_of: Vec<usize>,
    children_of: Vec<Range<usize>>,
    stage_ranges: Vec<Range<usize>>,
    prob: Vec<f64>,
    cond_prob: Vec<f64>,
    event_of: Vec<Option<usize>>,
}

fn check_stochastic(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::NotStochastic(format!("{what}: empty")));
    }
    if let Some(x) = p.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::NotStochastic(format!("{what}: entry {x} not positive")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::NotStochastic(format!("{what}: sums to {s}")));
    }
    Ok(())
}

impl ScenarioTree {
    /// Builds a tree from its ancestor array.
    ///
    /// `ancestors[i]` is the parent of node `i + 1`; `cond_prob[i]` and
    /// `events[i]` likewise describe node `i + 1`. Parents must be
    /// nondecreasing (breadth-first numbering). The horizon is the depth of
    /// the tree and every leaf must sit at the last stage.
    pub fn from_ancestors(ancestors: &[usize], cond_prob: &[f64], events: &[usize]) -> Result<Self> {
        let n = ancestors.len() + 1;
        if cond_prob.len() != n - 1 || events.len() != n - 1 {
            return Err(Error::Dimension(format!(
                "tree arrays: {} ancestors, {} probabilities, {} events",
                n - 1,
                cond_prob.len(),
                events.len()
            )));
        }
        let mut stage_of = vec![0usize; n];
        let mut ancestor_of = vec![usize::MAX; n];
        let mut children_of = vec![0..0; n];
        let mut prob = vec![1.0; n];
        let mut cond = vec![1.0; n];
        let mut event_of = vec![None; n];
        for (k, &a) in ancestors.iter().enumerate() {
            let i = k + 1;
            if a >= i {
                return Err(Error::InvalidTree(format!("node {i} has ancestor {a} >= itself")));
            }
            if k > 0 && a < ancestors[k - 1] {
                return Err(Error::InvalidTree(format!(
                    "ancestors not breadth-first ordered at node {i}"
                )));
            }
            stage_of[i] = stage_of[a] + 1;
            if k > 0 && stage_of[i] < stage_of[i - 1] {
                return Err(Error::InvalidTree(format!("node {i} breaks stage ordering")));
            }
            ancestor_of[i] = a;
            let r = &mut children_of[a];
            if r.start == r.end {
                *r = i..i + 1;
            } else {
                r.end = i + 1;
            }
            cond[i] = cond_prob[k];
            prob[i] = prob[a] * cond_prob[k];
            event_of[i] = Some(events[k]);
        }
        let horizon = stage_of[n - 1];
        let mut stage_ranges = vec![0..0; horizon + 1];
        for (i, &t) in stage_of.iter().enumerate() {
            let r = &mut stage_ranges[t];
            if r.start == r.end {
                *r = i..i + 1;
            } else {
                r.end = i + 1;
            }
        }
        let tree = ScenarioTree {
            horizon,
            stop_stage: 0,
            stage_of,
            ancestor_of,
            children_of,
            stage_ranges,
            prob,
            cond_prob: cond,
            event_of,
        };
        tree.finish()
    }

    fn finish(mut self) -> Result<Self> {
        let n = self.num_nodes();
        for i in 0..n {
            let leaf = self.children_of[i].is_empty();
            if leaf != (self.stage_of[i] == self.horizon) {
                return Err(Error::InvalidTree(format!(
                    "node {i} at stage {} is a leaf: {leaf}",
                    self.stage_of[i]
                )));
            }
            if !leaf {
                let p: Vec<f64> = self.children_of[i].clone().map(|c| self.cond_prob[c]).collect();
                check_stochastic(&p, &format!("children of node {i}"))?;
            }
            if self.prob[i] < MIN_NODE_PROB {
                return Err(Error::DegenerateProbability { node: i, prob: self.prob[i] });
            }
        }
        for t in 0..=self.horizon {
            let s: f64 = self.stage_ranges[t].clone().map(|i| self.prob[i]).sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotStochastic(format!("stage {t} probabilities sum to {s}")));
            }
        }
        // smallest n_b such that every node at a stage >= n_b has one child
        let mut nb = self.horizon;
        while nb > 0 && self.nodes(nb - 1).all(|i| self.children_of[i].len() == 1) {
            nb -= 1;
        }
        self.stop_stage = nb;
        Ok(self)
    }

    /// Builds a tree from per-stage branching factors.
    ///
    /// `cond_probs[i]` is the conditional distribution over the children of
    /// non-leaf node `i` and must have length `branching[stage_of(i)]`.
    pub fn from_branching(branching: &[usize], cond_probs: &[Vec<f64>]) -> Result<Self> {
        if let Some(t) = branching.iter().position(|&b| b == 0) {
            return Err(Error::ZeroBranching(t));
        }
        let mut ancestors = Vec::new();
        let mut probs = Vec::new();
        let mut events = Vec::new();
        let mut stage_start = 0usize;
        let mut stage_len = 1usize;
        for &b in branching {
            for i in stage_start..stage_start + stage_len {
                let p = cond_probs.get(i).ok_or_else(|| {
                    Error::Dimension(format!("missing conditional probabilities for node {i}"))
                })?;
                if p.len() != b {
                    return Err(Error::Dimension(format!(
                        "node {i}: {} probabilities for {b} children",
                        p.len()
                    )));
                }
                check_stochastic(p, &format!("node {i}"))?;
                for (k, &pk) in p.iter().enumerate() {
                    ancestors.push(i);
                    probs.push(pk);
                    events.push(k);
                }
            }
            stage_start += stage_len;
            stage_len *= b;
        }
        Self::from_ancestors(&ancestors, &probs, &events)
    }

    /// Tree with equiprobable children at every branching.
    pub fn uniform(branching: &[usize]) -> Result<Self> {
        if let Some(t) = branching.iter().position(|&b| b == 0) {
            return Err(Error::ZeroBranching(t));
        }
        let mut cps = Vec::new();
        let mut width = 1usize;
        for &b in branching {
            cps.extend(std::iter::repeat_n(vec![1.0 / b as f64; b], width));
            width *= b;
        }
        Self::from_branching(branching, &cps)
    }

    /// Builds the tree of a finite Markov chain with `n_w` events.
    ///
    /// The children of the root follow `initial_dist^T * transition`. Up to
    /// (excluding) stage `stop_stage` every node branches over all events with
    /// positive probability; from then on only the most probable successor is
    /// kept (ties broken towards the lowest event index) with conditional
    /// probability renormalised to one.
    pub fn from_markov(
        transition: &[Vec<f64>],
        initial_dist: &[f64],
        horizon: usize,
        stop_stage: usize,
    ) -> Result<Self> {
        let nw = transition.len();
        if initial_dist.len() != nw {
            return Err(Error::Dimension("initial distribution length".into()));
        }
        if stop_stage > horizon {
            return Err(Error::InvalidParameter(format!(
                "stop stage {stop_stage} exceeds horizon {horizon}"
            )));
        }
        for (w, row) in transition.iter().enumerate() {
            if row.len() != nw {
                return Err(Error::Dimension(format!("transition row {w}")));
            }
            let s: f64 = row.iter().sum();
            if row.iter().any(|&x| x < 0.0) || (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotStochastic(format!("transition row {w}")));
            }
        }
        let s: f64 = initial_dist.iter().sum();
        if initial_dist.iter().any(|&x| x < 0.0) || (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic("initial distribution".into()));
        }
        let root_row: Vec<f64> = (0..nw)
            .map(|v| (0..nw).map(|w| initial_dist[w] * transition[w][v]).sum())
            .collect();

        let successors = |row: &[f64], branch: bool| -> Vec<(usize, f64)> {
            if branch {
                row.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(w, &p)| (w, p)).collect()
            } else {
                let mut best = 0;
                for (w, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = w;
                    }
                }
                vec![(best, 1.0)]
            }
        };

        let mut ancestors = Vec::new();
        let mut probs = Vec::new();
        let mut events = Vec::new();
        // event of each node in the current stage; root has none
        let mut frontier: Vec<(usize, Option<usize>)> = vec![(0, None)];
        let mut next_id = 1usize;
        for t in 0..horizon {
            let mut next = Vec::new();
            for &(i, ev) in &frontier {
                let row = match ev {
                    None => &root_row[..],
                    Some(w) => &transition[w][..],
                };
                let mut succ = successors(row, t < stop_stage);
                if t < stop_stage {
                    // renormalise away rounding in the products for the root row
                    let s: f64 = succ.iter().map(|x| x.1).sum();
                    succ.iter_mut().for_each(|x| x.1 /= s);
                }
                for (w, p) in succ {
                    ancestors.push(i);
                    probs.push(p);
                    events.push(w);
                    next.push((next_id, Some(w)));
                    next_id += 1;
                }
            }
            frontier = next;
        }
        Self::from_ancestors(&ancestors, &probs, &events)
    }

    pub fn num_nodes(&self) -> usize {
        self.stage_of.len()
    }

    /// Prediction horizon `N`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Stage after which every node has exactly one child.
    pub fn stop_stage(&self) -> usize {
        self.stop_stage
    }

    pub fn stage_of(&self, i: usize) -> usize {
        self.stage_of[i]
    }

    /// Parent of a non-root node.
    pub fn ancestor(&self, i: usize) -> Option<usize> {
        (i > 0).then(|| self.ancestor_of[i])
    }

    pub fn children(&self, i: usize) -> Range<usize> {
        self.children_of[i].clone()
    }

    pub fn num_children(&self, i: usize) -> usize {
        self.children_of[i].len()
    }

    pub fn max_children(&self) -> usize {
        self.children_of.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    /// Nodes at stage `t`.
    pub fn nodes(&self, t: usize) -> Range<usize> {
        self.stage_ranges[t].clone()
    }

    /// Nodes at stages `t1..=t2`.
    pub fn nodes_between(&self, t1: usize, t2: usize) -> Range<usize> {
        self.stage_ranges[t1].start..self.stage_ranges[t2].end
    }

    /// Number of non-leaf nodes; they occupy indices `0..num_nonleaf()`.
    pub fn num_nonleaf(&self) -> usize {
        self.stage_ranges[self.horizon].start
    }

    pub fn num_leaves(&self) -> usize {
        self.stage_ranges[self.horizon].len()
    }

    pub fn leaves(&self) -> Range<usize> {
        self.nodes(self.horizon)
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.stage_of[i] == self.horizon
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.prob[i]
    }

    pub fn cond_prob(&self, i: usize) -> f64 {
        self.cond_prob[i]
    }

    pub fn event(&self, i: usize) -> Option<usize> {
        self.event_of[i]
    }

    /// Conditional distribution over the children of `i`.
    pub fn children_probs(&self, i: usize) -> Vec<f64> {
        self.children(i).map(|c| self.cond_prob[c]).collect()
    }

    /// Ancestor array in the layout accepted by [`ScenarioTree::from_ancestors`].
    pub fn ancestor_array(&self) -> Vec<usize> {
        self.ancestor_of[1..].to_vec()
    }

    pub fn cond_prob_array(&self) -> Vec<f64> {
        self.cond_prob[1..].to_vec()
    }

    pub fn event_array(&self) -> Vec<usize> {
        self.event_of[1..].iter().map(|e| e.unwrap_or(0)).collect()
    }

    /// Runs `body` once for every node of stage `t` on the rayon pool and
    /// returns the results in ascending node order. The result is identical
    /// to a serial loop as long as `body` only reads shared data.
    pub fn stage_parallel_for<R, F>(&self, t: usize, body: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        self.nodes(t).into_par_iter().with_min_len(8).map(body).collect()
    }
}
