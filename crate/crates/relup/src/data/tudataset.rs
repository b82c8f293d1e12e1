//! Parser for the TUDataset on-disk format.
//!
//! A dataset `NAME` lives under `<root>/<NAME>/` as plain-text files:
//!
//! * `NAME_A.txt` — one directed edge per line, `u, v`, 1-based global node
//!   ids (undirected graphs store both directions);
//! * `NAME_graph_indicator.txt` — line `i` holds the 1-based graph id of
//!   node `i`;
//! * `NAME_graph_labels.txt` — line `g` holds the integer class label of
//!   graph `g` (arbitrary integers, remapped to dense 0-based);
//! * `NAME_node_labels.txt` (optional) — line `i` holds the integer node
//!   label of node `i`;
//! * `NAME_node_attributes.txt` (optional) — line `i` holds comma-separated
//!   real attributes of node `i`.
//!
//! Whitespace around commas and a trailing empty line are tolerated. Node
//! ids are converted to 0-based local indices once, at parse time. Exact
//! duplicate edge lines are dropped and any missing reverse direction is
//! added, so every stored graph satisfies the undirected convention.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::{DataError, Dataset, FeatureMatrix, Featurization, Graph, Result};

/// Parsed but not yet featurized dataset.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub name: String,
    pub graph_nodes: Vec<usize>,
    /// Per graph: local 0-based directed edges, mirrored, deduplicated, sorted.
    pub graph_edges: Vec<Vec<(usize, usize)>>,
    /// Dense 0-based class labels, one per graph.
    pub graph_labels: Vec<usize>,
    pub num_classes: usize,
    /// Dense 0-based node labels per graph, when the file exists.
    pub node_labels: Option<Vec<Vec<usize>>>,
    /// Real-valued node attributes per graph, when the file exists.
    pub node_attributes: Option<Vec<Vec<Vec<f64>>>>,
    pub num_node_labels: usize,
    pub attribute_dim: usize,
}

impl RawDataset {
    pub fn num_graphs(&self) -> usize {
        self.graph_nodes.len()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let content = fs::read_to_string(path).map_err(DataError::Io)?;
    let mut lines: Vec<String> = content.lines().map(|l| l.trim().to_string()).collect();
    while lines.last().is_some_and(String::is_empty) {
        lines.pop();
    }
    Ok(lines)
}

fn parse_int(file: &str, line_no: usize, token: &str) -> Result<i64> {
    token.trim().parse::<i64>().map_err(|_| DataError::Format {
        file: file.to_string(),
        line: line_no,
        msg: format!("expected an integer, got {:?}", token.trim()),
    })
}

fn parse_float(file: &str, line_no: usize, token: &str) -> Result<f64> {
    token.trim().parse::<f64>().map_err(|_| DataError::Format {
        file: file.to_string(),
        line: line_no,
        msg: format!("expected a real number, got {:?}", token.trim()),
    })
}

/// Remaps arbitrary integers to dense 0-based indices ordered by value.
fn dense_remap(values: &[i64]) -> (Vec<usize>, usize) {
    let distinct: BTreeSet<i64> = values.iter().copied().collect();
    let index: Vec<i64> = distinct.into_iter().collect();
    let mapped = values
        .iter()
        .map(|v| index.binary_search(v).expect("value present"))
        .collect();
    (mapped, index.len())
}

pub fn parse_tudataset(root_dir: &Path, name: &str) -> Result<RawDataset> {
    let dir = root_dir.join(name);
    let file_path = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    for required in ["A", "graph_indicator", "graph_labels"] {
        let p = file_path(required);
        if !p.is_file() {
            return Err(DataError::MissingFile(p));
        }
    }

    // Node -> graph assignment. Indicators must be contiguous and
    // non-decreasing, which fixes each graph's node offset.
    let ind_name = format!("{name}_graph_indicator.txt");
    let ind_lines = read_lines(&file_path("graph_indicator"))?;
    let mut node_graph = Vec::with_capacity(ind_lines.len());
    for (i, l) in ind_lines.iter().enumerate() {
        let g = parse_int(&ind_name, i + 1, l)?;
        if g < 1 {
            return Err(DataError::Format {
                file: ind_name.clone(),
                line: i + 1,
                msg: format!("graph ids are 1-based, got {g}"),
            });
        }
        let g = (g - 1) as usize;
        if let Some(&prev) = node_graph.last() {
            if g < prev || g > prev + 1 {
                return Err(DataError::Format {
                    file: ind_name.clone(),
                    line: i + 1,
                    msg: format!("graph indicator must be non-decreasing and contiguous, got {} after {}", g + 1, prev + 1),
                });
            }
        } else if g != 0 {
            return Err(DataError::Format {
                file: ind_name.clone(),
                line: i + 1,
                msg: format!("first node must belong to graph 1, got {}", g + 1),
            });
        }
        node_graph.push(g);
    }
    let num_nodes = node_graph.len();
    let num_graphs = node_graph.last().map_or(0, |&g| g + 1);
    if num_graphs == 0 {
        return Err(DataError::Format {
            file: ind_name,
            line: 0,
            msg: "empty graph indicator".into(),
        });
    }
    let mut graph_nodes = vec![0usize; num_graphs];
    for &g in &node_graph {
        graph_nodes[g] += 1;
    }
    let mut offsets = vec![0usize; num_graphs];
    for g in 1..num_graphs {
        offsets[g] = offsets[g - 1] + graph_nodes[g - 1];
    }

    // Edges: global 1-based pairs, assigned to the graph of both endpoints.
    let a_name = format!("{name}_A.txt");
    let a_lines = read_lines(&file_path("A"))?;
    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    for (i, l) in a_lines.iter().enumerate() {
        if l.is_empty() {
            continue;
        }
        let mut it = l.split(',');
        let (u_tok, v_tok) = match (it.next(), it.next(), it.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => {
                return Err(DataError::Format {
                    file: a_name.clone(),
                    line: i + 1,
                    msg: format!("expected \"u, v\", got {:?}", l),
                })
            }
        };
        let u = parse_int(&a_name, i + 1, u_tok)?;
        let v = parse_int(&a_name, i + 1, v_tok)?;
        if u < 1 || v < 1 || u as usize > num_nodes || v as usize > num_nodes {
            return Err(DataError::Format {
                file: a_name.clone(),
                line: i + 1,
                msg: format!("node id out of range in edge ({u}, {v}); {num_nodes} nodes total"),
            });
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        let g = node_graph[u];
        if node_graph[v] != g {
            return Err(DataError::Format {
                file: a_name.clone(),
                line: i + 1,
                msg: format!(
                    "edge ({}, {}) crosses graphs {} and {}",
                    u + 1,
                    v + 1,
                    g + 1,
                    node_graph[v] + 1
                ),
            });
        }
        edge_sets[g].insert((u - offsets[g], v - offsets[g]));
    }
    let graph_edges: Vec<Vec<(usize, usize)>> = edge_sets
        .into_iter()
        .map(|set| {
            let mut full = set.clone();
            full.extend(set.iter().map(|&(u, v)| (v, u)));
            full.into_iter().collect()
        })
        .collect();

    // Graph labels, remapped to a dense 0-based range.
    let gl_name = format!("{name}_graph_labels.txt");
    let gl_lines = read_lines(&file_path("graph_labels"))?;
    if gl_lines.len() != num_graphs {
        return Err(DataError::Format {
            file: gl_name.clone(),
            line: gl_lines.len(),
            msg: format!("{} labels for {} graphs", gl_lines.len(), num_graphs),
        });
    }
    let raw_labels = gl_lines
        .iter()
        .enumerate()
        .map(|(i, l)| parse_int(&gl_name, i + 1, l))
        .collect::<Result<Vec<_>>>()?;
    let (graph_labels, num_classes) = dense_remap(&raw_labels);

    // Optional node labels.
    let nl_path = file_path("node_labels");
    let (node_labels, num_node_labels) = if nl_path.is_file() {
        let nl_name = format!("{name}_node_labels.txt");
        let lines = read_lines(&nl_path)?;
        if lines.len() != num_nodes {
            return Err(DataError::Format {
                file: nl_name.clone(),
                line: lines.len(),
                msg: format!("{} node labels for {} nodes", lines.len(), num_nodes),
            });
        }
        let raw = lines
            .iter()
            .enumerate()
            .map(|(i, l)| parse_int(&nl_name, i + 1, l))
            .collect::<Result<Vec<_>>>()?;
        let (mapped, count) = dense_remap(&raw);
        let mut per_graph: Vec<Vec<usize>> = graph_nodes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for (node, label) in mapped.into_iter().enumerate() {
            per_graph[node_graph[node]].push(label);
        }
        (Some(per_graph), count)
    } else {
        (None, 0)
    };

    // Optional node attributes.
    let na_path = file_path("node_attributes");
    let (node_attributes, attribute_dim) = if na_path.is_file() {
        let na_name = format!("{name}_node_attributes.txt");
        let lines = read_lines(&na_path)?;
        if lines.len() != num_nodes {
            return Err(DataError::Format {
                file: na_name.clone(),
                line: lines.len(),
                msg: format!("{} attribute rows for {} nodes", lines.len(), num_nodes),
            });
        }
        let mut dim = 0usize;
        let mut per_graph: Vec<Vec<Vec<f64>>> = graph_nodes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for (i, l) in lines.iter().enumerate() {
            let row = l
                .split(',')
                .map(|tok| parse_float(&na_name, i + 1, tok))
                .collect::<Result<Vec<_>>>()?;
            if i == 0 {
                dim = row.len();
            } else if row.len() != dim {
                return Err(DataError::Format {
                    file: na_name.clone(),
                    line: i + 1,
                    msg: format!("expected {} attributes, got {}", dim, row.len()),
                });
            }
            per_graph[node_graph[i]].push(row);
        }
        (Some(per_graph), dim)
    } else {
        (None, 0)
    };

    Ok(RawDataset {
        name: name.to_string(),
        graph_nodes,
        graph_edges,
        graph_labels,
        num_classes,
        node_labels,
        node_attributes,
        num_node_labels,
        attribute_dim,
    })
}

/// Default featurization: node labels when present, then node attributes,
/// otherwise a structural fallback (uniform for REDDIT-style datasets,
/// degree one-hot elsewhere).
pub fn default_policy(raw: &RawDataset) -> Featurization {
    if raw.node_labels.is_some() {
        Featurization::NodeLabelOneHot
    } else if raw.node_attributes.is_some() {
        Featurization::NodeAttributes
    } else if raw.name.to_uppercase().starts_with("REDDIT") {
        Featurization::UniformConstant
    } else {
        Featurization::DegreeOneHot
    }
}

/// Builds node-feature matrices according to `policy`.
pub fn featurize(raw: &RawDataset, policy: Featurization) -> Result<Dataset> {
    let feature_dim = match policy {
        Featurization::NodeLabelOneHot => {
            if raw.node_labels.is_none() {
                return Err(DataError::Config(format!(
                    "{}: node-label-one-hot requested but {}_node_labels.txt is absent",
                    raw.name, raw.name
                )));
            }
            raw.num_node_labels
        }
        Featurization::NodeAttributes => {
            if raw.node_attributes.is_none() {
                return Err(DataError::Config(format!(
                    "{}: node-attributes requested but {}_node_attributes.txt is absent",
                    raw.name, raw.name
                )));
            }
            raw.attribute_dim
        }
        Featurization::DegreeOneHot => {
            let max_degree = (0..raw.num_graphs())
                .flat_map(|g| degrees(raw.graph_nodes[g], &raw.graph_edges[g]))
                .max()
                .unwrap_or(0);
            max_degree + 1
        }
        Featurization::UniformConstant => 1,
    };

    let mut graphs = Vec::with_capacity(raw.num_graphs());
    for g in 0..raw.num_graphs() {
        let n = raw.graph_nodes[g];
        let mut data = vec![0.0; n * feature_dim];
        match policy {
            Featurization::NodeLabelOneHot => {
                let labels = &raw.node_labels.as_ref().unwrap()[g];
                for (v, &l) in labels.iter().enumerate() {
                    data[v * feature_dim + l] = 1.0;
                }
            }
            Featurization::NodeAttributes => {
                let attrs = &raw.node_attributes.as_ref().unwrap()[g];
                for (v, row) in attrs.iter().enumerate() {
                    data[v * feature_dim..(v + 1) * feature_dim].copy_from_slice(row);
                }
            }
            Featurization::DegreeOneHot => {
                for (v, d) in degrees(n, &raw.graph_edges[g]).into_iter().enumerate() {
                    data[v * feature_dim + d] = 1.0;
                }
            }
            Featurization::UniformConstant => data.fill(1.0),
        }
        graphs.push(Graph::new(
            n,
            raw.graph_edges[g].clone(),
            FeatureMatrix::new(feature_dim, data),
            raw.graph_labels[g],
        )?);
    }

    Ok(Dataset {
        name: raw.name.clone(),
        graphs,
        num_classes: raw.num_classes,
        feature_dim,
        featurization: policy,
    })
}

/// Parses and featurizes in one step, choosing [`default_policy`] when no
/// explicit policy is given.
pub fn load_tudataset(root_dir: &Path, name: &str, policy: Option<Featurization>) -> Result<Dataset> {
    let raw = parse_tudataset(root_dir, name)?;
    let policy = policy.unwrap_or_else(|| default_policy(&raw));
    featurize(&raw, policy)
}

fn degrees(num_nodes: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut deg = vec![0usize; num_nodes];
    for &(u, _) in edges {
        deg[u] += 1;
    }
    deg
}
