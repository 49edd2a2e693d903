//! Dataset schema, line-delimited JSON loading/saving, input normalization
//! and batching.
//!
//! A record holds normalized 2D input coordinates (`[N, 2]` or `[T, N, 2]`)
//! and a root-relative 3D target in millimeters. The 3D root joint is
//! exactly (0, 0, 0) for every loaded or generated sample.

mod synth;

pub use synth::{synth_generate, SynthOptions};

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::SkeletonTopology;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: record has {got} joints, topology has {expected}")]
    JointCount {
        line: usize,
        got: usize,
        expected: usize,
    },
    #[error("line {line}: record has {got} frames, dataset has {expected}")]
    FrameCount {
        line: usize,
        got: usize,
        expected: usize,
    },
    #[error("dataset is empty where samples are required")]
    Empty,
}

/// Pinhole camera used to produce a synthetic sample; kept so the 2D input
/// can be re-derived from the 3D target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeRecord {
    pub focal: f64,
    pub center: [f64; 2],
    pub image_size: [f64; 2],
    /// World position of the root joint (camera frame, millimeters).
    pub root_world_mm: [f64; 3],
}

/// One training/evaluation record.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    /// Flat `[T * N * 2]` normalized image coordinates (T = 1 when single
    /// frame).
    pub input2d: Vec<f64>,
    /// Flat `[N * 3]` root-relative millimeters.
    pub target3d_mm: Vec<f64>,
    pub action: Option<String>,
    pub subject: Option<String>,
    pub camera: Option<PinholeRecord>,
}

/// Ordered collection of samples with uniform arity. Iteration order is
/// file order; seeded shuffling in the training loop is the only
/// reordering path.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<PoseSample>,
    pub joints: usize,
    pub frames: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Assembles `[B, N, 2]` (or `[B, T, N, 2]`) inputs and `[B, N, 3]`
    /// targets for the given sample indices.
    pub fn batch<E: Element>(&self, indices: &[usize]) -> (Tensor<E>, Tensor<E>) {
        let b = indices.len();
        let in_span = self.frames * self.joints * 2;
        let tgt_span = self.joints * 3;
        let mut input = Vec::with_capacity(b * in_span);
        let mut target = Vec::with_capacity(b * tgt_span);
        for &i in indices {
            input.extend(self.samples[i].input2d.iter().map(|&v| E::from_f64(v)));
            target.extend(self.samples[i].target3d_mm.iter().map(|&v| E::from_f64(v)));
        }
        let input_shape: Vec<usize> = if self.frames == 1 {
            vec![b, self.joints, 2]
        } else {
            vec![b, self.frames, self.joints, 2]
        };
        (
            Tensor::new(&input_shape, input),
            Tensor::new(&[b, self.joints, 3], target),
        )
    }

    /// Flat `[B * N * 3]` f64 targets, for the metrics functions.
    pub fn targets_f64(&self) -> Vec<f64> {
        self.samples
            .iter()
            .flat_map(|s| s.target3d_mm.iter().copied())
            .collect()
    }

    pub fn actions(&self) -> Option<Vec<String>> {
        if self.samples.iter().any(|s| s.action.is_some()) {
            Some(
                self.samples
                    .iter()
                    .map(|s| s.action.clone().unwrap_or_else(|| "unknown".into()))
                    .collect(),
            )
        } else {
            None
        }
    }
}

/// On-disk record: nested arrays for readability.
#[derive(Serialize, Deserialize)]
struct RawRecord {
    input2d: Input2d,
    target3d_mm: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera: Option<PinholeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Input2d {
    Single(Vec<[f64; 2]>),
    Sequence(Vec<Vec<[f64; 2]>>),
}

/// Parses a line-delimited JSON dataset, validating every record against
/// the topology. A nonzero 3D root is re-centered with a warning.
pub fn load_dataset(path: &Path, topo: &SkeletonTopology) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let n = topo.joint_count();
    let mut samples = Vec::new();
    let mut frames: Option<usize> = None;
    let mut recentered = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&text).map_err(|e| DataError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        let (t, flat2d) = match raw.input2d {
            Input2d::Single(rows) => {
                if rows.len() != n {
                    return Err(DataError::JointCount {
                        line: line_no,
                        got: rows.len(),
                        expected: n,
                    });
                }
                (1usize, rows.iter().flatten().copied().collect::<Vec<f64>>())
            }
            Input2d::Sequence(framed) => {
                let t = framed.len();
                if t == 0 {
                    return Err(DataError::Schema {
                        line: line_no,
                        message: "empty frame sequence".into(),
                    });
                }
                let mut flat = Vec::with_capacity(t * n * 2);
                for rows in &framed {
                    if rows.len() != n {
                        return Err(DataError::JointCount {
                            line: line_no,
                            got: rows.len(),
                            expected: n,
                        });
                    }
                    flat.extend(rows.iter().flatten().copied());
                }
                (t, flat)
            }
        };
        match frames {
            None => frames = Some(t),
            Some(expected) if expected != t => {
                return Err(DataError::FrameCount {
                    line: line_no,
                    got: t,
                    expected,
                });
            }
            _ => {}
        }
        if raw.target3d_mm.len() != n {
            return Err(DataError::JointCount {
                line: line_no,
                got: raw.target3d_mm.len(),
                expected: n,
            });
        }
        if !flat2d.iter().all(|v| v.is_finite())
            || !raw.target3d_mm.iter().flatten().all(|v| v.is_finite())
        {
            return Err(DataError::Schema {
                line: line_no,
                message: "non-finite coordinate".into(),
            });
        }
        let mut target: Vec<f64> = raw.target3d_mm.iter().flatten().copied().collect();
        let root = [
            target[topo.root * 3],
            target[topo.root * 3 + 1],
            target[topo.root * 3 + 2],
        ];
        if root != [0.0, 0.0, 0.0] {
            recentered += 1;
            for j in 0..n {
                for k in 0..3 {
                    target[j * 3 + k] -= root[k];
                }
            }
        }
        samples.push(PoseSample {
            input2d: flat2d,
            target3d_mm: target,
            action: raw.action,
            subject: raw.subject,
            camera: raw.camera,
        });
    }
    if recentered > 0 {
        eprintln!("warning: re-centered {recentered} records whose 3D root was nonzero");
    }
    Ok(Dataset {
        samples,
        joints: n,
        frames: frames.unwrap_or(1),
    })
}

/// Writes a dataset as line-delimited JSON, one record per line.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in &dataset.samples {
        let n = dataset.joints;
        let input2d = if dataset.frames == 1 {
            Input2d::Single((0..n).map(|j| [s.input2d[j * 2], s.input2d[j * 2 + 1]]).collect())
        } else {
            Input2d::Sequence(
                (0..dataset.frames)
                    .map(|t| {
                        (0..n)
                            .map(|j| {
                                let base = (t * n + j) * 2;
                                [s.input2d[base], s.input2d[base + 1]]
                            })
                            .collect()
                    })
                    .collect(),
            )
        };
        let raw = RawRecord {
            input2d,
            target3d_mm: (0..n)
                .map(|j| {
                    [
                        s.target3d_mm[j * 3],
                        s.target3d_mm[j * 3 + 1],
                        s.target3d_mm[j * 3 + 2],
                    ]
                })
                .collect(),
            action: s.action.clone(),
            subject: s.subject.clone(),
            camera: s.camera.clone(),
        };
        serde_json::to_writer(&mut file, &raw).map_err(|e| DataError::Schema {
            line: 0,
            message: e.to_string(),
        })?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Pixel coordinates to image-anchored units: `x' = (2x - w) / w`,
/// `y' = (2y - h) / w` (the shared `w` denominator preserves aspect).
pub fn normalize_2d(pixels: &mut [f64], width: f64, height: f64) {
    assert!(width > 0.0 && height > 0.0, "image extents must be positive");
    for p in pixels.chunks_mut(2) {
        p[0] = (2.0 * p[0] - width) / width;
        p[1] = (2.0 * p[1] - height) / width;
    }
}

/// Inverse of [`normalize_2d`].
pub fn denormalize_2d(coords: &mut [f64], width: f64, height: f64) {
    assert!(width > 0.0 && height > 0.0, "image extents must be positive");
    for p in coords.chunks_mut(2) {
        p[0] = (p[0] * width + width) / 2.0;
        p[1] = (p[1] * width + height) / 2.0;
    }
}
