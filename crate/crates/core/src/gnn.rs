//! Two-layer graph networks over neighborhood cliques. Each layer maps node
//! features `(v x n_in)` to `(v x n)`; the last layer gives the vertex
//! embeddings `rho` and pooling gives the graph embedding `g`.
//!
//! Several graphs are processed together as one block-diagonal union, which
//! is exact because every layer only mixes features along edges.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::uniform_init;
use crate::graphbuild::NeighborhoodGraph;
use crate::rng::rng_for;
use crate::tensorcore::{ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnArch {
    Gcn,
    Gat,
    Sage,
}

impl std::str::FromStr for GnnArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(GnnArch::Gcn),
            "gat" => Ok(GnnArch::Gat),
            "sage" => Ok(GnnArch::Sage),
            other => Err(Error::InvalidArgument(format!("unknown gnn arch {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Elu,
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Identity => x,
        Activation::Relu => tape.relu(x),
        Activation::Elu => tape.elu(x),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub arch: GnnArch,
    pub n: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    pub pooling: Pooling,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            arch: GnnArch::Gat,
            n: 32,
            heads: 4,
            leaky_slope: 0.2,
            pooling: Pooling::Mean,
        }
    }
}

fn check_adjacency(op: &'static str, v: usize, adj: &[bool]) -> Result<()> {
    if adj.len() != v * v {
        return Err(Error::shape(op, format!("{v} vertices but {} adjacency entries", adj.len())));
    }
    Ok(())
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree of `A + I`.
pub fn gcn_normalized(v: usize, adj: &[bool]) -> Tensor {
    let deg: Vec<f64> = (0..v)
        .map(|i| 1.0 + (0..v).filter(|&j| j != i && adj[i * v + j]).count() as f64)
        .collect();
    let mut out = Tensor::zeros(&[v, v]);
    for i in 0..v {
        for j in 0..v {
            if i == j || adj[i * v + j] {
                out.set(i, j, 1.0 / (deg[i] * deg[j]).sqrt());
            }
        }
    }
    out
}

/// Row-normalized adjacency; isolated vertices get a zero row.
pub fn neighbor_mean(v: usize, adj: &[bool]) -> Tensor {
    let mut out = Tensor::zeros(&[v, v]);
    for i in 0..v {
        let nbrs: Vec<usize> = (0..v).filter(|&j| j != i && adj[i * v + j]).collect();
        for &j in &nbrs {
            out.set(i, j, 1.0 / nbrs.len() as f64);
        }
    }
    out
}

/// `act(A_hat X W)`.
pub fn gcn_layer(tape: &mut Tape, x: Var, adj: &[bool], w: Var, act: Activation) -> Result<Var> {
    let v = tape.value(x).rows();
    check_adjacency("gcn_layer", v, adj)?;
    let a_hat = tape.constant(gcn_normalized(v, adj));
    let xw = tape.matmul(x, w)?;
    let h = tape.matmul(a_hat, xw)?;
    Ok(activate(tape, h, act))
}

/// `act([x_i || mean_{j in N(i)} x_j] W)` with `W (2 n_in x n)`.
pub fn sage_layer(tape: &mut Tape, x: Var, adj: &[bool], w: Var, act: Activation) -> Result<Var> {
    let v = tape.value(x).rows();
    check_adjacency("sage_layer", v, adj)?;
    let mean = tape.constant(neighbor_mean(v, adj));
    let nbr = tape.matmul(mean, x)?;
    let cat = tape.concat_cols(&[x, nbr])?;
    let h = tape.matmul(cat, w)?;
    Ok(activate(tape, h, act))
}

/// Multi-head attention layer. `w` is `(n_in x heads*dh)`, `a_src` and
/// `a_dst` are `(dh x heads)`. Returns the concatenated head outputs and
/// each head's `(v x v)` attention matrix.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer(
    tape: &mut Tape,
    x: Var,
    adj: &[bool],
    w: Var,
    a_src: Var,
    a_dst: Var,
    heads: usize,
    slope: f64,
    act: Activation,
) -> Result<(Var, Vec<Var>)> {
    let v = tape.value(x).rows();
    check_adjacency("gat_layer", v, adj)?;
    let width = tape.value(w).cols();
    if heads == 0 || !width.is_multiple_of(heads) || tape.value(a_src).cols() != heads {
        return Err(Error::shape(
            "gat_layer",
            format!("{width} output columns, {heads} heads, a_src {:?}", tape.value(a_src).shape()),
        ));
    }
    let dh = width / heads;
    let mask: Rc<Vec<bool>> = Rc::new((0..v * v).map(|k| k / v == k % v || adj[k]).collect());
    let z = tape.matmul(x, w)?;
    let mut outs = Vec::with_capacity(heads);
    let mut alphas = Vec::with_capacity(heads);
    for h in 0..heads {
        let zh = tape.slice_cols(z, h * dh, dh)?;
        let asv = tape.slice_cols(a_src, h, 1)?;
        let adv = tape.slice_cols(a_dst, h, 1)?;
        let s = tape.matmul(zh, asv)?;
        let t = tape.matmul(zh, adv)?;
        let e = tape.outer_add(s, t)?;
        let e = tape.leaky_relu(e, slope);
        let alpha = tape.masked_softmax_rows(e, Rc::clone(&mask))?;
        outs.push(tape.matmul(alpha, zh)?);
        alphas.push(alpha);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok((activate(tape, cat, act), alphas))
}

#[derive(Clone, Debug, PartialEq)]
enum LayerIds {
    Gcn { w: usize },
    Gat { w: usize, a_src: usize, a_dst: usize },
    Sage { w: usize },
}

/// Handle to the two GNN layers' parameters inside a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gnn {
    pub config: GnnConfig,
    layers: [LayerIds; 2],
}

/// Vertex and graph embeddings of one graph, as tape values.
#[derive(Clone, Copy, Debug)]
pub struct GraphEmbeddings {
    /// `(v x n)`, one row per vertex.
    pub rho: Var,
    /// `(1 x n)`, the center's row of `rho`.
    pub rho_center: Var,
    /// `(1 x n)` pooled embedding.
    pub g: Var,
}

/// Center and pooled embeddings for a list of graphs, one row per graph.
#[derive(Clone, Copy, Debug)]
pub struct BatchEmbeddings {
    pub rho_center: Var,
    pub g: Var,
}

/// Largest vertex count processed as one dense union.
const UNION_VERTICES: usize = 64;

impl Gnn {
    /// Registers parameters under `{prefix}.l0.*`, `{prefix}.l1.*`. Input
    /// features are `n` wide.
    pub fn new(config: GnnConfig, params: &mut ParamSet, seed: u64, prefix: &str) -> Result<Self> {
        let n = config.n;
        if n == 0 {
            return Err(Error::InvalidArgument("gnn width must be positive".into()));
        }
        if config.arch == GnnArch::Gat && (config.heads == 0 || !n.is_multiple_of(config.heads)) {
            return Err(Error::InvalidArgument(format!(
                "gat needs n divisible by heads, got n={n} heads={}",
                config.heads
            )));
        }
        let mut rng = rng_for(seed, &format!("{prefix}.init"));
        let layers = [0, 1].map(|l| {
            let name = |s: &str| format!("{prefix}.l{l}.{s}");
            match config.arch {
                GnnArch::Gcn => LayerIds::Gcn {
                    w: params.add(name("w"), uniform_init(n, n, n, &mut rng)),
                },
                GnnArch::Sage => LayerIds::Sage {
                    w: params.add(name("w"), uniform_init(2 * n, n, 2 * n, &mut rng)),
                },
                GnnArch::Gat => {
                    let dh = n / config.heads;
                    let w = params.add(name("w"), uniform_init(n, n, n, &mut rng));
                    let r = 1.0 / (dh as f64).sqrt();
                    let mut att = || {
                        let data = (0..dh * config.heads).map(|_| rng.random_range(-r..=r)).collect();
                        Tensor::matrix(dh, config.heads, data).expect("dims")
                    };
                    let a_src = params.add(name("a_src"), att());
                    let a_dst = params.add(name("a_dst"), att());
                    LayerIds::Gat { w, a_src, a_dst }
                }
            }
        });
        Ok(Self { config, layers })
    }

    fn layer(&self, tape: &mut Tape, params: &ParamSet, l: usize, x: Var, adj: &[bool]) -> Result<Var> {
        match &self.layers[l] {
            LayerIds::Gcn { w } => {
                let w = tape.param(params, *w);
                gcn_layer(tape, x, adj, w, Activation::Relu)
            }
            LayerIds::Sage { w } => {
                let w = tape.param(params, *w);
                sage_layer(tape, x, adj, w, Activation::Relu)
            }
            LayerIds::Gat { w, a_src, a_dst } => {
                let w = tape.param(params, *w);
                let s = tape.param(params, *a_src);
                let d = tape.param(params, *a_dst);
                let (out, _) = gat_layer(
                    tape,
                    x,
                    adj,
                    w,
                    s,
                    d,
                    self.config.heads,
                    self.config.leaky_slope,
                    Activation::Elu,
                )?;
                Ok(out)
            }
        }
    }

    /// Both layers on an arbitrary adjacency. `x` is `(v x n)`.
    pub fn node_embeddings(&self, tape: &mut Tape, params: &ParamSet, x: Var, adj: &[bool]) -> Result<Var> {
        let h = self.layer(tape, params, 0, x, adj)?;
        self.layer(tape, params, 1, h, adj)
    }

    /// Embeds one graph whose vertex features are the rows of `x`, in
    /// `graph.vertices` order.
    pub fn embed_graph(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        graph: &NeighborhoodGraph,
        x: Var,
    ) -> Result<GraphEmbeddings> {
        if tape.value(x).rows() != graph.len() {
            return Err(Error::shape(
                "embed_graph",
                format!("{} feature rows for {} vertices", tape.value(x).rows(), graph.len()),
            ));
        }
        let rho = self.node_embeddings(tape, params, x, &graph.adjacency)?;
        let rho_center = tape.slice_row(rho, graph.center)?;
        let g = match self.config.pooling {
            Pooling::Mean => tape.mean_rows(rho),
            Pooling::Max => tape.max_rows(rho),
        };
        Ok(GraphEmbeddings { rho, rho_center, g })
    }

    /// Embeds many graphs. `x` stacks every graph's vertex features in
    /// order (graph 0's vertices, then graph 1's, ...).
    pub fn embed_graphs(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        graphs: &[&NeighborhoodGraph],
        x: Var,
    ) -> Result<BatchEmbeddings> {
        let total: usize = graphs.iter().map(|g| g.len()).sum();
        if graphs.is_empty() {
            return Err(Error::Empty("graph batch"));
        }
        if tape.value(x).rows() != total {
            return Err(Error::shape(
                "embed_graphs",
                format!("{} feature rows for {total} vertices", tape.value(x).rows()),
            ));
        }
        let mut centers = Vec::new();
        let mut pools = Vec::new();
        let mut start_graph = 0;
        let mut offset = 0;
        while start_graph < graphs.len() {
            let mut end = start_graph;
            let mut v = 0;
            while end < graphs.len() && (end == start_graph || v + graphs[end].len() <= UNION_VERTICES) {
                v += graphs[end].len();
                end += 1;
            }
            let chunk = &graphs[start_graph..end];
            let mut adj = vec![false; v * v];
            let mut base = 0;
            let mut center_rows = Vec::with_capacity(chunk.len());
            let mut pool = Tensor::zeros(&[chunk.len(), v]);
            for (gi, g) in chunk.iter().enumerate() {
                let m = g.len();
                for i in 0..m {
                    for j in 0..m {
                        adj[(base + i) * v + base + j] = g.adjacent(i, j);
                    }
                    pool.set(gi, base + i, 1.0 / m as f64);
                }
                center_rows.push(base + g.center);
                base += m;
            }
            let rows: Vec<usize> = (offset..offset + v).collect();
            let xc = if start_graph == 0 && end == graphs.len() {
                x
            } else {
                tape.gather_rows(x, Rc::new(rows))?
            };
            let rho = self.node_embeddings(tape, params, xc, &adj)?;
            centers.push(tape.gather_rows(rho, Rc::new(center_rows))?);
            pools.push(match self.config.pooling {
                Pooling::Mean => {
                    let p = tape.constant(pool);
                    tape.matmul(p, rho)?
                }
                Pooling::Max => {
                    let mut rows = Vec::with_capacity(chunk.len());
                    let mut b = 0;
                    for g in chunk {
                        let r = tape.gather_rows(rho, Rc::new((b..b + g.len()).collect()))?;
                        rows.push(tape.max_rows(r));
                        b += g.len();
                    }
                    tape.concat_rows(&rows)?
                }
            });
            offset += v;
            start_graph = end;
        }
        let join = |tape: &mut Tape, parts: Vec<Var>| {
            if parts.len() == 1 {
                Ok(parts[0])
            } else {
                tape.concat_rows(&parts)
            }
        };
        Ok(BatchEmbeddings {
            rho_center: join(tape, centers)?,
            g: join(tape, pools)?,
        })
    }
}
