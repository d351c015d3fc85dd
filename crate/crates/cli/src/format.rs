//! Problem file: a magic line with the format version, the byte length of a
//! JSON header, the header itself, then little-endian `f64` payload blocks in
//! the order the header lists them. Every number lives in the payload so
//! that loading and saving are exact.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use spock_core::problem::{
    BoxSet, Dynamics, NodeConstraint, Raocp, StageCost, TerminalConstraint, TerminalCost,
};
use spock_core::risk::RiskKind;
use spock_core::{ConeDesc, ConeKind, RiskSpec, ScenarioTree};

pub const MAGIC: &str = "SPOCKRAOCP";
pub const VERSION: u32 = 1;

/// Free-form description of where a problem came from.
pub type Meta = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    nx: usize,
    nu: usize,
    nodes: usize,
    /// Parent of each node `1..nodes`.
    ancestors: Vec<usize>,
    /// Event of each node `1..nodes`.
    events: Vec<usize>,
    risks: Vec<RiskHeader>,
    meta: Meta,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RiskHeader {
    Avar,
    Custom { cone: Vec<(String, usize)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    name: String,
    rows: usize,
    cols: usize,
}

struct Writer {
    blocks: Vec<Block>,
    data: Vec<u8>,
}

impl Writer {
    fn mat(&mut self, name: String, m: &DMatrix<f64>) {
        self.blocks.push(Block { name, rows: m.nrows(), cols: m.ncols() });
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.data.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
    }

    fn vec(&mut self, name: String, v: &[f64]) {
        self.mat(name, &DMatrix::from_row_slice(1, v.len(), v));
    }
}

struct Reader<'a> {
    blocks: std::slice::Iter<'a, Block>,
    data: &'a [u8],
}

impl Reader<'_> {
    fn mat(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let b = self.blocks.next().ok_or_else(|| anyhow!("missing block {name}"))?;
        ensure!(b.name == name, "expected block {name}, found {}", b.name);
        let n = b.rows * b.cols;
        ensure!(self.data.len() >= 8 * n, "payload truncated in block {name}");
        let (head, rest) = self.data.split_at(8 * n);
        self.data = rest;
        let vals: Vec<f64> = head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(DMatrix::from_row_slice(b.rows, b.cols, &vals))
    }

    fn vec(&mut self, name: &str) -> Result<DVector<f64>> {
        let m = self.mat(name)?;
        Ok(DVector::from_iterator(m.len(), m.transpose().iter().copied()))
    }
}

fn cone_name(k: ConeKind) -> &'static str {
    match k {
        ConeKind::Zero => "zero",
        ConeKind::Free => "free",
        ConeKind::NonnegOrthant => "nonneg",
        ConeKind::Soc => "soc",
    }
}

fn cone_kind(s: &str) -> Result<ConeKind> {
    Ok(match s {
        "zero" => ConeKind::Zero,
        "free" => ConeKind::Free,
        "nonneg" => ConeKind::NonnegOrthant,
        "soc" => ConeKind::Soc,
        _ => bail!("unknown cone {s}"),
    })
}

/// Serializes a problem with its metadata.
pub fn to_bytes(p: &Raocp<f64>, meta: &Meta) -> Vec<u8> {
    let tree = &p.tree;
    let n = tree.num_nodes();
    let mut w = Writer { blocks: Vec::new(), data: Vec::new() };
    w.vec("cond_prob".into(), &tree.cond_prob_array());
    w.vec("x0".into(), p.x0.as_slice());
    for i in 1..n {
        let d = p.dynamics(i);
        w.mat(format!("A.{i}"), &d.a);
        w.mat(format!("B.{i}"), &d.b);
        w.vec(format!("c.{i}"), d.c.as_slice());
        let s = p.stage_cost(i);
        w.mat(format!("Q.{i}"), &s.q);
        w.mat(format!("R.{i}"), &s.r);
        w.vec(format!("q.{i}"), s.q_lin.as_slice());
        w.vec(format!("r.{i}"), s.r_lin.as_slice());
    }
    for j in tree.leaves() {
        let t = p.terminal_cost(j);
        w.mat(format!("QN.{j}"), &t.q);
        w.vec(format!("qN.{j}"), t.q_lin.as_slice());
        let c = p.terminal_constraint(j);
        w.mat(format!("GN.{j}"), &c.gamma);
        w.vec(format!("loN.{j}"), c.set.lo.as_slice());
        w.vec(format!("hiN.{j}"), c.set.hi.as_slice());
    }
    let mut risks = Vec::new();
    for i in 0..tree.num_nonleaf() {
        let c = p.constraint(i);
        w.mat(format!("Gx.{i}"), &c.gamma_x);
        w.mat(format!("Gu.{i}"), &c.gamma_u);
        w.vec(format!("lo.{i}"), c.set.lo.as_slice());
        w.vec(format!("hi.{i}"), c.set.hi.as_slice());
        let r = p.risk(i);
        match &r.kind {
            RiskKind::Avar { gamma, pi } => {
                risks.push(RiskHeader::Avar);
                w.vec(format!("gamma.{i}"), &[*gamma]);
                w.vec(format!("pi.{i}"), pi);
            }
            RiskKind::Custom => {
                let cone = r.cone.parts.iter().map(|&(k, d)| (cone_name(k).to_string(), d)).collect();
                risks.push(RiskHeader::Custom { cone });
                w.mat(format!("E.{i}"), &r.e);
                w.mat(format!("F.{i}"), &r.f);
                w.vec(format!("b.{i}"), r.b.as_slice());
            }
        }
    }
    let header = Header {
        version: VERSION,
        nx: p.nx,
        nu: p.nu,
        nodes: n,
        ancestors: tree.ancestor_array(),
        events: tree.event_array(),
        risks,
        meta: meta.clone(),
        blocks: w.blocks,
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    let mut out = format!("{MAGIC} {VERSION}\n{}\n{text}\n", text.len()).into_bytes();
    out.extend_from_slice(&w.data);
    out
}

/// Parses a problem file and validates the problem.
pub fn from_bytes(bytes: &[u8]) -> Result<(Raocp<f64>, Meta)> {
    let mut cur = std::io::Cursor::new(bytes);
    let mut line = String::new();
    cur.read_line(&mut line)?;
    let version = line
        .trim_end()
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| anyhow!("not a problem file"))?;
    ensure!(version == VERSION, "unsupported format version {version}");
    line.clear();
    cur.read_line(&mut line)?;
    let len: usize = line.trim().parse().context("header length")?;
    let mut text = vec![0u8; len];
    cur.read_exact(&mut text).context("header truncated")?;
    let mut nl = [0u8; 1];
    cur.read_exact(&mut nl)?;
    ensure!(nl[0] == b'\n', "malformed header terminator");
    let header: Header = serde_json::from_slice(&text).context("header")?;
    let data = &bytes[cur.position() as usize..];
    let expected: usize = header.blocks.iter().map(|b| 8 * b.rows * b.cols).sum();
    ensure!(data.len() == expected, "payload has {} bytes, header describes {expected}", data.len());

    let mut r = Reader { blocks: header.blocks.iter(), data };
    let cond = r.vec("cond_prob")?;
    let tree = ScenarioTree::from_ancestors(&header.ancestors, cond.as_slice(), &header.events)?;
    let n = header.nodes;
    ensure!(tree.num_nodes() == n, "node count mismatch");
    let x0 = r.vec("x0")?;
    let mut dynamics = Vec::new();
    let mut stage_costs = Vec::new();
    for i in 1..n {
        dynamics.push(Dynamics { a: r.mat(&format!("A.{i}"))?, b: r.mat(&format!("B.{i}"))?, c: r.vec(&format!("c.{i}"))? });
        stage_costs.push(StageCost {
            q: r.mat(&format!("Q.{i}"))?,
            r: r.mat(&format!("R.{i}"))?,
            q_lin: r.vec(&format!("q.{i}"))?,
            r_lin: r.vec(&format!("r.{i}"))?,
        });
    }
    let mut terminal_costs = Vec::new();
    let mut terminal_constraints = Vec::new();
    for j in tree.leaves() {
        terminal_costs.push(TerminalCost { q: r.mat(&format!("QN.{j}"))?, q_lin: r.vec(&format!("qN.{j}"))? });
        let gamma = r.mat(&format!("GN.{j}"))?;
        let set = BoxSet::new(r.vec(&format!("loN.{j}"))?, r.vec(&format!("hiN.{j}"))?)?;
        terminal_constraints.push(TerminalConstraint { gamma, set });
    }
    ensure!(header.risks.len() == tree.num_nonleaf(), "one risk per non-leaf node");
    let mut constraints = Vec::new();
    let mut risks = Vec::new();
    for (i, rh) in header.risks.iter().enumerate() {
        let gamma_x = r.mat(&format!("Gx.{i}"))?;
        let gamma_u = r.mat(&format!("Gu.{i}"))?;
        let set = BoxSet::new(r.vec(&format!("lo.{i}"))?, r.vec(&format!("hi.{i}"))?)?;
        constraints.push(NodeConstraint { gamma_x, gamma_u, set });
        risks.push(match rh {
            RiskHeader::Avar => {
                let g = r.vec(&format!("gamma.{i}"))?;
                let pi = r.vec(&format!("pi.{i}"))?;
                RiskSpec::avar(g[0], pi.as_slice())?
            }
            RiskHeader::Custom { cone } => {
                let parts = cone.iter().map(|(k, d)| Ok((cone_kind(k)?, *d))).collect::<Result<Vec<_>>>()?;
                let e = r.mat(&format!("E.{i}"))?;
                let f = r.mat(&format!("F.{i}"))?;
                let b = r.vec(&format!("b.{i}"))?;
                RiskSpec::custom(e, f, b, ConeDesc::new(parts)?)?
            }
        });
    }
    let p = Raocp {
        tree,
        nx: header.nx,
        nu: header.nu,
        dynamics,
        stage_costs,
        terminal_costs,
        constraints,
        terminal_constraints,
        risks,
        x0,
    };
    p.validate()?;
    Ok((p, header.meta))
}

pub fn save(path: &Path, p: &Raocp<f64>, meta: &Meta) -> Result<()> {
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&to_bytes(p, meta))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Raocp<f64>, Meta)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
}
