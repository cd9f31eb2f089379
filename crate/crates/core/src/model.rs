//! The model file format: a TOML document describing either a quantum
//! reference experiment (nodes, layers, edges, gap channels, optional
//! fiducials) or a classical model (nodes, edges, conditional tables).
//!
//! Choi matrices are serialized as row-major interleaved real/imag arrays.
//! The format is versioned through the required `format_version` field.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;

use crate::classical::{ClassicalModel, Cpt};
use crate::error::{Error, Result};
use crate::graph::{Dag, Kind, Layering, Node, NodeId};
use crate::linalg::{c, CMat};
use crate::network::{QuantumNetwork, SubChannel};
use crate::quantum::{random_unbiased_channel, Channel};
use crate::tol::Tolerances;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format_version: u32,
    #[serde(default)]
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
    #[serde(default)]
    channels: Vec<ChannelDoc>,
    #[serde(default)]
    classical: Option<ClassicalDoc>,
    /// Per-dimension SIC fiducials as interleaved re/im pairs, keyed by the
    /// dimension rendered as a string.
    #[serde(default)]
    fiducials: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: u32,
    name: String,
    dim: usize,
    kind: Kind,
    /// Layer index; required for quantum models, ignored for classical.
    #[serde(default)]
    layer: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    from: u32,
    to: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelDoc {
    /// Gap index: the channel sits between `layer` and `layer + 1`.
    layer: usize,
    sources: Vec<u32>,
    targets: Vec<u32>,
    kind: String,
    #[serde(default)]
    seed: Option<u64>,
    /// Row-major interleaved re/im entries of the Choi matrix.
    #[serde(default)]
    choi: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassicalDoc {
    cpts: Vec<CptDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CptDoc {
    node: u32,
    table: Vec<f64>,
}

/// A parsed model: either a quantum reference experiment or a classical
/// stochastic model.
#[derive(Debug)]
pub enum Model {
    Quantum(Box<QuantumNetwork>),
    Classical(Box<ClassicalModel>),
}

impl Model {
    pub fn dag(&self) -> &Dag {
        match self {
            Model::Quantum(n) => n.dag(),
            Model::Classical(m) => m.dag(),
        }
    }

    pub fn layering(&self) -> Option<&Layering> {
        match self {
            Model::Quantum(n) => Some(n.layering()),
            Model::Classical(_) => None,
        }
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    load_model_with_tol(path, Tolerances::default())
}

pub fn load_model_with_tol(path: &Path, tol: Tolerances) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text, tol)
}

pub fn parse_model(text: &str, tol: Tolerances) -> Result<Model> {
    let doc: ModelDoc = toml::from_str(text).map_err(|e| Error::ModelParse(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::ModelField {
            field: "format_version".into(),
            msg: format!("expected {FORMAT_VERSION}, got {}", doc.format_version),
        });
    }
    if doc.nodes.is_empty() {
        return Err(Error::ModelField {
            field: "nodes".into(),
            msg: "at least one node is required".into(),
        });
    }
    let mut names = std::collections::BTreeSet::new();
    for n in &doc.nodes {
        if !names.insert(n.name.clone()) {
            return Err(Error::ModelField {
                field: format!("nodes.{}", n.name),
                msg: "duplicate node name".into(),
            });
        }
    }
    let nodes: Vec<Node> = doc
        .nodes
        .iter()
        .map(|n| Node {
            id: NodeId(n.id),
            name: n.name.clone(),
            dim: n.dim,
            kind: n.kind,
        })
        .collect();
    let edges: Vec<(NodeId, NodeId)> = doc
        .edges
        .iter()
        .map(|e| (NodeId(e.from), NodeId(e.to)))
        .collect();
    let dag = Dag::new(nodes, edges)?;

    if let Some(classical) = doc.classical {
        if !doc.channels.is_empty() {
            return Err(Error::ModelField {
                field: "channels".into(),
                msg: "a classical model must not declare channels".into(),
            });
        }
        let cpts = classical
            .cpts
            .into_iter()
            .map(|c| Cpt {
                node: NodeId(c.node),
                values: c.table,
            })
            .collect();
        return Ok(Model::Classical(Box::new(ClassicalModel::new(dag, cpts)?)));
    }

    // Quantum model: layering from the per-node layer fields.
    let mut max_layer = 0usize;
    for n in &doc.nodes {
        let layer = n.layer.ok_or_else(|| Error::ModelField {
            field: format!("nodes.{}.layer", n.name),
            msg: "quantum models require a layer index on every node".into(),
        })?;
        max_layer = max_layer.max(layer);
    }
    let mut layers = vec![std::collections::BTreeSet::new(); max_layer + 1];
    for n in &doc.nodes {
        layers[n.layer.unwrap()].insert(NodeId(n.id));
    }
    let layering = Layering::new(layers);

    let fiducials = parse_fiducials(&doc.fiducials)?;

    let mut gaps: Vec<Vec<SubChannel>> = vec![Vec::new(); max_layer];
    for (i, ch) in doc.channels.iter().enumerate() {
        if ch.layer >= max_layer {
            return Err(Error::ModelField {
                field: format!("channels[{i}].layer"),
                msg: format!("gap index {} out of range (layers: {})", ch.layer, max_layer + 1),
            });
        }
        let sources: Vec<NodeId> = ch.sources.iter().map(|&x| NodeId(x)).collect();
        let targets: Vec<NodeId> = ch.targets.iter().map(|&x| NodeId(x)).collect();
        let din: usize = sources
            .iter()
            .map(|&n| dag.dim(n))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .product();
        let dout: usize = targets
            .iter()
            .map(|&n| dag.dim(n))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .product();
        let channel = match ch.kind.as_str() {
            "random_unbiased" => {
                let seed = ch.seed.ok_or_else(|| Error::ModelField {
                    field: format!("channels[{i}].seed"),
                    msg: "random_unbiased channels require a seed".into(),
                })?;
                random_unbiased_channel(din, dout, seed)?
            }
            "choi" => {
                let data = ch.choi.as_ref().ok_or_else(|| Error::ModelField {
                    field: format!("channels[{i}].choi"),
                    msg: "explicit channels require the choi array".into(),
                })?;
                let n = din * dout;
                if data.len() != 2 * n * n {
                    return Err(Error::ModelField {
                        field: format!("channels[{i}].choi"),
                        msg: format!(
                            "expected {} interleaved entries for a {n}x{n} Choi matrix, got {}",
                            2 * n * n,
                            data.len()
                        ),
                    });
                }
                let mat = CMat::from_fn(n, n, |r, cidx| {
                    let k = 2 * (r * n + cidx);
                    c(data[k], data[k + 1])
                });
                Channel::from_choi_with_tol(din, dout, mat, &tol)?
            }
            other => {
                return Err(Error::ModelField {
                    field: format!("channels[{i}].kind"),
                    msg: format!("unknown channel kind {other:?} (expected random_unbiased or choi)"),
                });
            }
        };
        gaps[ch.layer].push(SubChannel {
            sources,
            targets,
            channel,
        });
    }

    let net = QuantumNetwork::new(dag, layering, gaps, &fiducials, tol)?;
    Ok(Model::Quantum(Box::new(net)))
}

fn parse_fiducials(
    raw: &BTreeMap<String, Vec<f64>>,
) -> Result<BTreeMap<usize, Vec<Complex64>>> {
    let mut out = BTreeMap::new();
    for (key, data) in raw {
        let dim: usize = key.parse().map_err(|_| Error::ModelField {
            field: format!("fiducials.{key}"),
            msg: "keys must be dimensions".into(),
        })?;
        if data.len() != 2 * dim {
            return Err(Error::ModelField {
                field: format!("fiducials.{key}"),
                msg: format!("expected {} interleaved entries, got {}", 2 * dim, data.len()),
            });
        }
        let vec: Vec<Complex64> = data.chunks(2).map(|p| c(p[0], p[1])).collect();
        out.insert(dim, vec);
    }
    Ok(out)
}

/// Serialize a channel's Choi matrix as the interleaved row-major array
/// used by the file format.
pub fn choi_to_interleaved(channel: &Channel) -> Vec<f64> {
    let m = channel.choi();
    let n = m.nrows();
    let mut out = Vec::with_capacity(2 * n * n);
    for r in 0..n {
        for cidx in 0..n {
            out.push(m[(r, cidx)].re);
            out.push(m[(r, cidx)].im);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"
format_version = 1

[[nodes]]
id = 0
name = "X"
dim = 2
kind = "exogenous"
layer = 0

[[nodes]]
id = 1
name = "Y"
dim = 2
kind = "internal"
layer = 1

[[nodes]]
id = 2
name = "Z"
dim = 2
kind = "terminal"
layer = 2

[[edges]]
from = 0
to = 1

[[edges]]
from = 1
to = 2

[[channels]]
layer = 0
sources = [0]
targets = [1]
kind = "random_unbiased"
seed = 7

[[channels]]
layer = 1
sources = [1]
targets = [2]
kind = "random_unbiased"
seed = 8
"#;

    #[test]
    fn parses_quantum_chain() {
        let model = parse_model(CHAIN, Tolerances::default()).unwrap();
        match model {
            Model::Quantum(net) => {
                assert_eq!(net.dag().node_count(), 3);
                assert_eq!(net.layering().len(), 3);
            }
            _ => panic!("expected quantum model"),
        }
    }

    #[test]
    fn parses_classical_model() {
        let text = r#"
format_version = 1

[[nodes]]
id = 0
name = "A"
dim = 2
kind = "exogenous"

[[nodes]]
id = 1
name = "B"
dim = 2
kind = "terminal"

[[edges]]
from = 0
to = 1

[[classical.cpts]]
node = 0
table = [0.5, 0.5]

[[classical.cpts]]
node = 1
table = [1.0, 0.0, 0.0, 1.0]
"#;
        let model = parse_model(text, Tolerances::default()).unwrap();
        match model {
            Model::Classical(m) => {
                let joint = m.joint().unwrap();
                assert_eq!(joint.values(), &[0.5, 0.0, 0.0, 0.5]);
            }
            _ => panic!("expected classical model"),
        }
    }

    #[test]
    fn explicit_choi_roundtrip() {
        let ch = Channel::identity(2);
        let data = choi_to_interleaved(&ch);
        let text = format!(
            r#"
format_version = 1

[[nodes]]
id = 0
name = "X"
dim = 2
kind = "exogenous"
layer = 0

[[nodes]]
id = 1
name = "Y"
dim = 2
kind = "terminal"
layer = 1

[[edges]]
from = 0
to = 1

[[channels]]
layer = 0
sources = [0]
targets = [1]
kind = "choi"
choi = {data:?}
"#
        );
        let model = parse_model(&text, Tolerances::default()).unwrap();
        assert!(matches!(model, Model::Quantum(_)));
    }

    #[test]
    fn bad_version_rejected() {
        let text = "format_version = 9\n";
        let err = parse_model(text, Tolerances::default());
        assert!(matches!(err, Err(Error::ModelField { .. })));
    }

    #[test]
    fn malformed_choi_dims_reported_with_field_path() {
        let text = r#"
format_version = 1

[[nodes]]
id = 0
name = "X"
dim = 2
kind = "exogenous"
layer = 0

[[nodes]]
id = 1
name = "Y"
dim = 2
kind = "terminal"
layer = 1

[[edges]]
from = 0
to = 1

[[channels]]
layer = 0
sources = [0]
targets = [1]
kind = "choi"
choi = [1.0, 0.0]
"#;
        match parse_model(text, Tolerances::default()) {
            Err(Error::ModelField { field, .. }) => {
                assert_eq!(field, "channels[0].choi");
            }
            other => panic!("expected field error, got {other:?}"),
        }
    }

    #[test]
    fn missing_layer_field_rejected_for_quantum() {
        let text = r#"
format_version = 1

[[nodes]]
id = 0
name = "X"
dim = 2
kind = "exogenous"
"#;
        match parse_model(text, Tolerances::default()) {
            Err(Error::ModelField { field, .. }) => assert!(field.contains("layer")),
            other => panic!("expected layer error, got {other:?}"),
        }
    }
}
