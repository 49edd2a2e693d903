//! Human-skeleton graph: topology presets, the four-category decomposition
//! of 1-hop neighborhoods, and the symmetric-normalized adjacency constants
//! every GCN block consumes.
//!
//! Categories follow the semantic split of skeleton joints: the joint
//! itself, the neighbor closer to the root (its parent), neighbors farther
//! from the root (its children), and the symmetric counterpart on the other
//! body side.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Element, Tensor};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("unknown topology preset '{0}'")]
    UnknownPreset(String),
    #[error("malformed topology file: {0}")]
    Malformed(String),
    #[error("cyclic topology")]
    Cyclic,
    #[error("topology must have exactly one root; found {0}")]
    RootCount(usize),
    #[error("root field {root} disagrees with the parentless joint {actual}")]
    RootMismatch { root: usize, actual: usize },
    #[error("joint index {0} out of range for {1} joints")]
    IndexOutOfRange(usize, usize),
    #[error("joint {0} appears in more than one symmetric pair")]
    DuplicatePair(usize),
    #[error("joint {0} is paired with itself")]
    SelfPair(usize),
    #[error("joint axis mismatch: pose has {pose} joints, topology has {topo}")]
    JointAxisMismatch { pose: usize, topo: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The four 1-hop neighbor categories, in canonical order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyCategory {
    SelfLoop,
    TowardRoot,
    AwayFromRoot,
    Symmetric,
}

impl AdjacencyCategory {
    pub const ALL: [AdjacencyCategory; 4] = [
        AdjacencyCategory::SelfLoop,
        AdjacencyCategory::TowardRoot,
        AdjacencyCategory::AwayFromRoot,
        AdjacencyCategory::Symmetric,
    ];
}

/// Rooted joint tree plus left/right symmetric pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub names: Vec<String>,
    /// Per-joint parent index; `None` exactly for the root.
    pub parents: Vec<Option<usize>>,
    pub root: usize,
    pub symmetric_pairs: Vec<(usize, usize)>,
}

impl SkeletonTopology {
    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn children(&self, joint: usize) -> Vec<usize> {
        (0..self.joint_count())
            .filter(|&j| self.parents[j] == Some(joint))
            .collect()
    }

    pub fn symmetric_partner(&self, joint: usize) -> Option<usize> {
        for &(a, b) in &self.symmetric_pairs {
            if a == joint {
                return Some(b);
            }
            if b == joint {
                return Some(a);
            }
        }
        None
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let n = self.joint_count();
        if self.names.len() != n {
            return Err(TopologyError::Malformed(format!(
                "{} names for {n} joints",
                self.names.len()
            )));
        }
        let roots: Vec<usize> = (0..n).filter(|&j| self.parents[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(TopologyError::RootCount(roots.len()));
        }
        if roots[0] != self.root {
            return Err(TopologyError::RootMismatch {
                root: self.root,
                actual: roots[0],
            });
        }
        for j in 0..n {
            if let Some(p) = self.parents[j] {
                if p >= n {
                    return Err(TopologyError::IndexOutOfRange(p, n));
                }
            }
            // Walk to the root; more than n hops means a cycle.
            let mut cur = j;
            let mut hops = 0;
            while let Some(p) = self.parents[cur] {
                cur = p;
                hops += 1;
                if hops > n {
                    return Err(TopologyError::Cyclic);
                }
            }
        }
        let mut seen = vec![false; n];
        for &(a, b) in &self.symmetric_pairs {
            if a >= n {
                return Err(TopologyError::IndexOutOfRange(a, n));
            }
            if b >= n {
                return Err(TopologyError::IndexOutOfRange(b, n));
            }
            if a == b {
                return Err(TopologyError::SelfPair(a));
            }
            for j in [a, b] {
                if seen[j] {
                    return Err(TopologyError::DuplicatePair(j));
                }
                seen[j] = true;
            }
        }
        Ok(())
    }

    /// Canonical 17-joint skeleton: pelvis root, right/left legs, spine
    /// chain, left/right arms.
    pub fn h36m17() -> Self {
        let names = [
            "Pelvis", "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "Spine", "Thorax",
            "Neck", "Head", "LShoulder", "LElbow", "LWrist", "RShoulder", "RElbow", "RWrist",
        ];
        let parents = [
            None,
            Some(0),
            Some(1),
            Some(2),
            Some(0),
            Some(4),
            Some(5),
            Some(0),
            Some(7),
            Some(8),
            Some(9),
            Some(8),
            Some(11),
            Some(12),
            Some(8),
            Some(14),
            Some(15),
        ];
        let topo = Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            parents: parents.to_vec(),
            root: 0,
            symmetric_pairs: vec![(1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16)],
        };
        debug_assert!(topo.validate().is_ok());
        topo
    }

    pub fn from_file(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)?;
        let topo: SkeletonTopology =
            serde_json::from_str(&text).map_err(|e| TopologyError::Malformed(e.to_string()))?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }
}

/// Resolves a preset name ("h36m17") or a path to a topology JSON file.
pub fn build_topology(preset_name: &str) -> Result<SkeletonTopology, TopologyError> {
    match preset_name {
        "h36m17" => Ok(SkeletonTopology::h36m17()),
        other if Path::new(other).exists() => SkeletonTopology::from_file(Path::new(other)),
        other => Err(TopologyError::UnknownPreset(other.to_string())),
    }
}

/// Dense square matrix over the joints, row-major `f64`.
pub type JointMatrix = Vec<f64>;

/// The four raw category adjacencies and their symmetric-normalized forms,
/// precomputed once per topology.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdjacencySet {
    pub joint_count: usize,
    /// Raw 0/1 category matrices, order per [`AdjacencyCategory::ALL`].
    pub raw: [JointMatrix; 4],
    /// `D_k^{-1/2} A_k D_k^{-1/2}` per category; zero-degree rows stay zero.
    pub normalized: [JointMatrix; 4],
}

impl AdjacencySet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("adjacency serializes")
    }

    /// Normalized category matrices as tensors of the model's element type.
    pub fn normalized_tensors<E: Element>(&self) -> [Tensor<E>; 4] {
        let n = self.joint_count;
        AdjacencyCategory::ALL
            .map(|c| Tensor::from_f64(&[n, n], &self.normalized[c as usize]))
    }
}

/// Symmetric normalization with the zero-degree convention: rows (and
/// columns) of degree zero contribute nothing instead of dividing by zero.
///
/// The left factor uses out-degrees (row sums), the right factor in-degrees
/// (column sums); for the undirected categories the two coincide, and for
/// the directed parent/child categories this keeps every edge "degree 1
/// each side" normalized by the degrees that actually exist.
pub fn normalize_adjacency(raw: &[f64], n: usize) -> JointMatrix {
    let mut inv_sqrt_out = vec![0.0f64; n];
    let mut inv_sqrt_in = vec![0.0f64; n];
    for i in 0..n {
        let out_deg: f64 = raw[i * n..(i + 1) * n].iter().sum();
        if out_deg > 0.0 {
            inv_sqrt_out[i] = 1.0 / out_deg.sqrt();
        }
        let in_deg: f64 = (0..n).map(|r| raw[r * n + i]).sum();
        if in_deg > 0.0 {
            inv_sqrt_in[i] = 1.0 / in_deg.sqrt();
        }
    }
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv_sqrt_out[i] * raw[i * n + j] * inv_sqrt_in[j];
        }
    }
    out
}

/// Builds the raw category adjacencies and normalizes each one.
pub fn decompose_adjacency(topo: &SkeletonTopology) -> Result<AdjacencySet, TopologyError> {
    topo.validate()?;
    let n = topo.joint_count();
    let mut raw = [
        vec![0.0f64; n * n],
        vec![0.0f64; n * n],
        vec![0.0f64; n * n],
        vec![0.0f64; n * n],
    ];
    for i in 0..n {
        raw[AdjacencyCategory::SelfLoop as usize][i * n + i] = 1.0;
        if let Some(p) = topo.parents[i] {
            raw[AdjacencyCategory::TowardRoot as usize][i * n + p] = 1.0;
            raw[AdjacencyCategory::AwayFromRoot as usize][p * n + i] = 1.0;
        }
    }
    for &(a, b) in &topo.symmetric_pairs {
        raw[AdjacencyCategory::Symmetric as usize][a * n + b] = 1.0;
        raw[AdjacencyCategory::Symmetric as usize][b * n + a] = 1.0;
    }
    let normalized = [
        normalize_adjacency(&raw[0], n),
        normalize_adjacency(&raw[1], n),
        normalize_adjacency(&raw[2], n),
        normalize_adjacency(&raw[3], n),
    ];
    Ok(AdjacencySet {
        joint_count: n,
        raw,
        normalized,
    })
}

/// Union of the four raw categories (self-loops included), normalized once.
/// This is the single-matrix propagation the categories decompose.
pub fn merged_normalized(adj: &AdjacencySet) -> JointMatrix {
    let n = adj.joint_count;
    let mut union = vec![0.0f64; n * n];
    for raw in &adj.raw {
        for (u, &r) in union.iter_mut().zip(raw.iter()) {
            if r != 0.0 {
                *u = 1.0;
            }
        }
    }
    normalize_adjacency(&union, n)
}

/// Negates the x coordinate and swaps each symmetric joint pair's rows.
/// The trailing two axes must be `[N, D]` with `D >= 1`. An involution.
pub fn flip_pose<E: Element>(
    pose: &Tensor<E>,
    topo: &SkeletonTopology,
) -> Result<Tensor<E>, TopologyError> {
    let n = topo.joint_count();
    let shape = pose.shape();
    if shape.len() < 2 || shape[shape.len() - 2] != n || shape[shape.len() - 1] == 0 {
        return Err(TopologyError::JointAxisMismatch {
            pose: if shape.len() < 2 {
                0
            } else {
                shape[shape.len() - 2]
            },
            topo: n,
        });
    }
    let d = shape[shape.len() - 1];
    let mut out = pose.clone();
    flip_pose_in_place(out.data_mut(), d, topo);
    Ok(out)
}

/// Slice form of [`flip_pose`]: `data` is `[.., N, dims]` flattened, its
/// length a multiple of `N * dims`.
pub fn flip_pose_in_place<E: Element>(data: &mut [E], dims: usize, topo: &SkeletonTopology) {
    let n = topo.joint_count();
    let span = n * dims;
    assert!(span > 0 && data.len() % span == 0, "pose length mismatch");
    let mut scratch = vec![E::ZERO; span];
    for frame in data.chunks_mut(span) {
        scratch.copy_from_slice(frame);
        for j in 0..n {
            let s = topo.symmetric_partner(j).unwrap_or(j);
            for k in 0..dims {
                let v = scratch[s * dims + k];
                frame[j * dims + k] = if k == 0 { -v } else { v };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h36m17_preset() {
        let topo = build_topology("h36m17").unwrap();
        assert_eq!(topo.joint_count(), 17);
        assert_eq!(topo.root, 0);
        // Right elbow: symmetric partner LElbow, parent RShoulder, child RWrist.
        assert_eq!(topo.symmetric_partner(15), Some(12));
        assert_eq!(topo.parents[15], Some(14));
        assert_eq!(topo.children(15), vec![16]);
    }

    #[test]
    fn unknown_preset_errors() {
        assert!(matches!(
            build_topology("nope42"),
            Err(TopologyError::UnknownPreset(_))
        ));
    }

    #[test]
    fn cyclic_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cyclic.json");
        std::fs::write(
            &path,
            r#"{"names":["a","b","c"],"parents":[null,2,1],"root":0,"symmetric_pairs":[]}"#,
        )
        .unwrap();
        assert!(matches!(
            build_topology(path.to_str().unwrap()),
            Err(TopologyError::Cyclic)
        ));
    }

    #[test]
    fn topology_file_round_trip() {
        let topo = SkeletonTopology::h36m17();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topo.json");
        std::fs::write(&path, topo.to_json()).unwrap();
        let loaded = build_topology(path.to_str().unwrap()).unwrap();
        assert_eq!(loaded, topo);
    }

    #[test]
    fn single_joint_decomposition() {
        let topo = SkeletonTopology {
            names: vec!["only".into()],
            parents: vec![None],
            root: 0,
            symmetric_pairs: vec![],
        };
        let adj = decompose_adjacency(&topo).unwrap();
        assert_eq!(adj.normalized[AdjacencyCategory::SelfLoop as usize], vec![1.0]);
        for cat in [
            AdjacencyCategory::TowardRoot,
            AdjacencyCategory::AwayFromRoot,
            AdjacencyCategory::Symmetric,
        ] {
            assert_eq!(adj.normalized[cat as usize], vec![0.0]);
        }
    }

    #[test]
    fn two_joint_chain_toward_root_entry() {
        let topo = SkeletonTopology {
            names: vec!["root".into(), "child".into()],
            parents: vec![None, Some(0)],
            root: 0,
            symmetric_pairs: vec![],
        };
        let adj = decompose_adjacency(&topo).unwrap();
        let toward = &adj.normalized[AdjacencyCategory::TowardRoot as usize];
        // Hand evaluation: single edge (1,0), degree 1 on both sides.
        assert_eq!(toward.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_degree_rows_stay_zero() {
        let topo = SkeletonTopology::h36m17();
        let adj = decompose_adjacency(&topo).unwrap();
        let n = 17;
        let toward = &adj.normalized[AdjacencyCategory::TowardRoot as usize];
        assert!(toward[..n].iter().all(|&v| v == 0.0), "root has no parent");
        let sym = &adj.normalized[AdjacencyCategory::Symmetric as usize];
        for row in [0usize, 7, 8, 9, 10] {
            assert!(
                sym[row * n..(row + 1) * n].iter().all(|&v| v == 0.0),
                "spine joint {row} is unpaired"
            );
        }
    }

    #[test]
    fn decompose_is_deterministic() {
        let topo = SkeletonTopology::h36m17();
        let a = decompose_adjacency(&topo).unwrap();
        let b = decompose_adjacency(&topo).unwrap();
        for c in 0..4 {
            assert_eq!(a.normalized[c], b.normalized[c]);
        }
    }

    #[test]
    fn flip_swaps_and_negates() {
        let topo = SkeletonTopology::h36m17();
        let mut data = vec![0.0f64; 17 * 3];
        // RWrist = joint 16, LWrist = joint 13.
        data[16 * 3..16 * 3 + 3].copy_from_slice(&[1.0, 2.0, 3.0]);
        data[13 * 3..13 * 3 + 3].copy_from_slice(&[4.0, 5.0, 6.0]);
        let pose = Tensor::<f64>::from_f64(&[17, 3], &data);
        let flipped = flip_pose(&pose, &topo).unwrap();
        assert_eq!(&flipped.data()[16 * 3..16 * 3 + 3], &[-4.0, 5.0, 6.0]);
        assert_eq!(&flipped.data()[13 * 3..13 * 3 + 3], &[-1.0, 2.0, 3.0]);
    }

    #[test]
    fn flip_fixed_point() {
        // All x = 0 and left/right joints equal: flipping changes nothing.
        let topo = SkeletonTopology::h36m17();
        let mut data = vec![0.0f64; 17 * 2];
        for j in 0..17 {
            let s = topo.symmetric_partner(j).unwrap_or(j);
            let v = (j.min(s) + 1) as f64;
            data[j * 2 + 1] = v;
        }
        let pose = Tensor::<f64>::from_f64(&[17, 2], &data);
        let flipped = flip_pose(&pose, &topo).unwrap();
        assert_eq!(flipped.data(), pose.data());
    }

    #[test]
    fn flip_rejects_wrong_joint_axis() {
        let topo = SkeletonTopology::h36m17();
        let pose = Tensor::<f64>::zeros(&[16, 2]);
        assert!(matches!(
            flip_pose(&pose, &topo),
            Err(TopologyError::JointAxisMismatch { pose: 16, topo: 17 })
        ));
    }
}
