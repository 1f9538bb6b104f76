//! Skeleton sequences, temporal chunking and a synthetic action generator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::gcn::GraphSample;
use crate::math;
use crate::tensor::Tensor;

/// One timestamped joint position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// A labelled sequence of joint trajectories on a fixed skeleton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    /// One trajectory per joint, all with the same frame count.
    pub joints: Vec<Vec<Frame>>,
    pub edges: Vec<(usize, usize)>,
    pub label: usize,
}

impl SkeletonSequence {
    pub fn new(joints: Vec<Vec<Frame>>, edges: Vec<(usize, usize)>, label: usize) -> Result<Self> {
        let s = Self { joints, edges, label };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::Contract("sequence has no joints".into()));
        }
        let frames = self.joints[0].len();
        if frames == 0 {
            return Err(Error::Contract("sequence has no frames".into()));
        }
        if let Some(j) = self.joints.iter().position(|t| t.len() != frames) {
            return Err(Error::Contract(format!(
                "joint {j} has {} frames, joint 0 has {frames}",
                self.joints[j].len()
            )));
        }
        let n = self.joints.len();
        if let Some(&(a, b)) = self.edges.iter().find(|(a, b)| *a >= n || *b >= n) {
            return Err(Error::Contract(format!("edge ({a}, {b}) references a joint outside 0..{n}")));
        }
        if self.joints.iter().flatten().any(|f| !(f.t.is_finite() && f.x.is_finite() && f.y.is_finite() && f.z.is_finite())) {
            return Err(Error::Contract("non-finite coordinate".into()));
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn frame_count(&self) -> usize {
        self.joints.first().map_or(0, |j| j.len())
    }
}

/// Frame index range `[⌊iT/M⌋, ⌊(i+1)T/M⌋)` of each of the `chunks` chunks.
pub fn chunk_bounds(frames: usize, chunks: usize) -> Vec<(usize, usize)> {
    (0..chunks).map(|i| (i * frames / chunks, (i + 1) * frames / chunks)).collect()
}

/// Node signal of a sequence: per joint, the (x, y, z) mean of each of the
/// `chunks` temporal chunks, concatenated chunk by chunk into a `3·chunks`
/// column. An empty chunk repeats the previous non-empty chunk's mean (or
/// the next one, for leading empties).
pub fn temporal_chunking(seq: &SkeletonSequence, chunks: usize) -> Result<Tensor> {
    if seq.joints.is_empty() {
        return Err(Error::Contract("temporal chunking of a sequence without joints".into()));
    }
    if chunks == 0 {
        return Err(Error::Contract("chunk count must be positive".into()));
    }
    let frames = seq.frame_count();
    if frames == 0 {
        return Err(Error::Contract("temporal chunking of an empty sequence".into()));
    }
    let n = seq.joint_count();
    let s = 3 * chunks;
    let bounds = chunk_bounds(frames, chunks);
    let mut out = vec![0.0; s * n];
    for (j, traj) in seq.joints.iter().enumerate() {
        if traj.len() != frames {
            return Err(Error::Contract(format!("joint {j} has {} frames, expected {frames}", traj.len())));
        }
        let mut means: Vec<Option<[f64; 3]>> = bounds
            .iter()
            .map(|&(lo, hi)| {
                (hi > lo).then(|| {
                    let mut acc = [0.0; 3];
                    for f in &traj[lo..hi] {
                        acc[0] += f.x;
                        acc[1] += f.y;
                        acc[2] += f.z;
                    }
                    let k = (hi - lo) as f64;
                    [acc[0] / k, acc[1] / k, acc[2] / k]
                })
            })
            .collect();
        let first = means.iter().flatten().next().copied().expect("frames >= 1 fills a chunk");
        let mut last = first;
        for m in means.iter_mut() {
            match m {
                Some(v) => last = *v,
                None => *m = Some(last),
            }
        }
        for (c, m) in means.iter().enumerate() {
            let m = m.expect("filled");
            for d in 0..3 {
                out[(3 * c + d) * n + j] = m[d];
            }
        }
    }
    Tensor::new(vec![s, n], out)
}

/// Per-axis zero mean and unit variance over all joints and frames.
pub fn standardize(seq: &SkeletonSequence) -> SkeletonSequence {
    let count = seq.joints.iter().map(|t| t.len()).sum::<usize>().max(1) as f64;
    let mut mean = [0.0; 3];
    for f in seq.joints.iter().flatten() {
        mean[0] += f.x;
        mean[1] += f.y;
        mean[2] += f.z;
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = [0.0; 3];
    for f in seq.joints.iter().flatten() {
        var[0] += (f.x - mean[0]) * (f.x - mean[0]);
        var[1] += (f.y - mean[1]) * (f.y - mean[1]);
        var[2] += (f.z - mean[2]) * (f.z - mean[2]);
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let sd = math::sqrt(v / count);
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let joints = seq
        .joints
        .iter()
        .map(|traj| {
            traj.iter()
                .map(|f| Frame {
                    t: f.t,
                    x: (f.x - mean[0]) * scale[0],
                    y: (f.y - mean[1]) * scale[1],
                    z: (f.z - mean[2]) * scale[2],
                })
                .collect()
        })
        .collect();
    SkeletonSequence { joints, edges: seq.edges.clone(), label: seq.label }
}

/// Row-normalized adjacency of the skeleton edges (both directions) plus
/// self-loops.
pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Contract("adjacency of an empty graph".into()));
    }
    let mut a = Tensor::identity(n);
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::Contract(format!("edge ({i}, {j}) outside 0..{n}")));
        }
        a.data_mut()[i * n + j] = 1.0;
        a.data_mut()[j * n + i] = 1.0;
    }
    for i in 0..n {
        let row = &mut a.data_mut()[i * n..(i + 1) * n];
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(a)
}

/// Standardizes and chunks a sequence into a classifier input.
pub fn to_sample(seq: &SkeletonSequence, chunks: usize) -> Result<GraphSample> {
    seq.validate()?;
    Ok(GraphSample { node_signal: temporal_chunking(&standardize(seq), chunks)?, label: seq.label })
}

/// Which side of the train/test protocol a sequence belongs to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<GraphSample>,
    pub test: Vec<GraphSample>,
    pub adjacency: Tensor,
    pub class_names: Vec<String>,
    pub chunks: usize,
}

impl Dataset {
    /// Chunks every sequence and builds the shared adjacency from the first
    /// sequence's skeleton.
    pub fn from_sequences(seqs: &[(SkeletonSequence, Split)], chunks: usize, class_names: Vec<String>) -> Result<Self> {
        let Some((first, _)) = seqs.first() else {
            return Err(Error::Contract("dataset has no sequences".into()));
        };
        let n = first.joint_count();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, (seq, split)) in seqs.iter().enumerate() {
            if seq.joint_count() != n {
                return Err(Error::Contract(format!("sequence {i} has {} joints, expected {n}", seq.joint_count())));
            }
            if seq.label >= class_names.len() {
                return Err(Error::Contract(format!(
                    "sequence {i} has label {} but only {} classes",
                    seq.label,
                    class_names.len()
                )));
            }
            let sample = to_sample(seq, chunks)?;
            match split {
                Split::Train => train.push(sample),
                Split::Test => test.push(sample),
            }
        }
        let adjacency = adjacency(n, &first.edges)?;
        Ok(Self { train, test, adjacency, class_names, chunks })
    }

    pub fn nodes(&self) -> usize {
        self.adjacency.shape()[0]
    }

    pub fn raw_dim(&self) -> usize {
        3 * self.chunks
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// Row-stochastic adjacency within `tol`.
    pub fn adjacency_is_stochastic(&self, tol: f64) -> bool {
        let n = self.nodes();
        (0..n).all(|i| ((0..n).map(|j| self.adjacency.at(i, j)).sum::<f64>() - 1.0).abs() <= tol)
    }
}

/// Parameters of the synthetic skeleton-action generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub joints: usize,
    pub classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default = "default_chunks")]
    pub chunks: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_chunks() -> usize {
    32
}

fn default_test_fraction() -> f64 {
    0.5
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            joints: 14,
            classes: 5,
            per_class: 60,
            frames: 64,
            noise_std: 0.01,
            seed: 0,
            chunks: default_chunks(),
            test_fraction: default_test_fraction(),
        }
    }
}

/// Chain-plus-branches skeleton: joint 0 is the root and the other joints
/// form branches of three, each attached to the root.
pub fn skeleton_edges(joints: usize) -> Vec<(usize, usize)> {
    (1..joints).map(|j| if (j - 1) % 3 == 0 { (0, j) } else { (j - 1, j) }).collect()
}

struct Prototype {
    // [joint][axis] -> (amplitude, cycles, phase)
    motion: Vec<[(f64, f64, f64); 3]>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.classes == 0 || self.per_class == 0 || self.frames == 0 || self.chunks == 0 {
            return Err(Error::Contract("synthetic dataset counts must be positive".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Contract(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Contract(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction)));
        }
        Ok(())
    }

    /// Deterministic sequences with their split assignment.
    ///
    /// Each class has a smooth per-joint motion prototype (sinusoids with
    /// class-specific amplitudes, frequencies and phases around a rest pose);
    /// samples are the prototype plus i.i.d. Gaussian coordinate noise. The
    /// first `per_class · (1 − test_fraction)` samples of a class are training
    /// samples.
    pub fn sequences(&self) -> Result<Vec<(SkeletonSequence, Split)>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let edges = skeleton_edges(self.joints);
        let rest: Vec<[f64; 3]> = (0..self.joints)
            .map(|j| {
                if j == 0 {
                    return [0.0; 3];
                }
                let branch = (j - 1) / 3;
                let depth = ((j - 1) % 3 + 1) as f64;
                let angle = 0.6 * branch as f64;
                [depth * libm::cos(angle), depth * libm::sin(angle), 0.1 * branch as f64]
            })
            .collect();
        let prototypes: Vec<Prototype> = (0..self.classes)
            .map(|_| Prototype {
                motion: (0..self.joints)
                    .map(|_| {
                        core::array::from_fn(|_| {
                            (
                                rng.random_range(0.2..0.6),
                                rng.random_range(0.5..3.0),
                                rng.random_range(0.0..core::f64::consts::TAU),
                            )
                        })
                    })
                    .collect(),
            })
            .collect();
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::Contract(format!("{e}")))?;
        let n_test = math::floor(self.per_class as f64 * self.test_fraction) as usize;
        let n_train = self.per_class - n_test;
        let mut out = Vec::with_capacity(self.classes * self.per_class);
        for (label, proto) in prototypes.iter().enumerate() {
            for i in 0..self.per_class {
                let joints = (0..self.joints)
                    .map(|j| {
                        (0..self.frames)
                            .map(|f| {
                                let t = f as f64 / self.frames as f64;
                                let mut p = [0.0; 3];
                                for d in 0..3 {
                                    let (amp, cyc, phase) = proto.motion[j][d];
                                    let clean = rest[j][d] + amp * libm::sin(core::f64::consts::TAU * cyc * t + phase);
                                    p[d] = clean + if self.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                                }
                                Frame { t, x: p[0], y: p[1], z: p[2] }
                            })
                            .collect()
                    })
                    .collect();
                let split = if i < n_train { Split::Train } else { Split::Test };
                out.push((SkeletonSequence { joints, edges: edges.clone(), label }, split));
            }
        }
        Ok(out)
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("class{c}")).collect()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_sequences(&self.sequences()?, self.chunks, self.class_names())
    }
}

/// Convenience wrapper over [`SynthSpec::dataset`].
pub fn synth_dataset(joints: usize, classes: usize, per_class: usize, frames: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    SynthSpec { joints, classes, per_class, frames, noise_std, seed, ..SynthSpec::default() }.dataset()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_sequence(frames: usize, joints: usize, c: [f64; 3]) -> SkeletonSequence {
        let traj: Vec<Frame> = (0..frames).map(|f| Frame { t: f as f64, x: c[0], y: c[1], z: c[2] }).collect();
        SkeletonSequence::new(vec![traj; joints], vec![], 0).unwrap()
    }

    #[test]
    fn constant_trajectory_repeats() {
        let seq = constant_sequence(17, 2, [0.5, -1.0, 2.0]);
        let u = temporal_chunking(&seq, 5).unwrap();
        assert_eq!(u.shape(), &[15, 2]);
        for c in 0..5 {
            for j in 0..2 {
                assert_eq!(u.at(3 * c, j), 0.5);
                assert_eq!(u.at(3 * c + 1, j), -1.0);
                assert_eq!(u.at(3 * c + 2, j), 2.0);
            }
        }
    }

    #[test]
    fn sixty_four_frames_into_thirty_two_chunks() {
        let traj: Vec<Frame> = (0..64).map(|f| Frame { t: f as f64, x: f as f64, y: 0.0, z: 0.0 }).collect();
        let seq = SkeletonSequence::new(vec![traj], vec![], 0).unwrap();
        assert!(chunk_bounds(64, 32).iter().all(|(lo, hi)| hi - lo == 2));
        let u = temporal_chunking(&seq, 32).unwrap();
        for c in 0..32 {
            assert_eq!(u.at(3 * c, 0), (2 * c) as f64 + 0.5);
        }
    }

    #[test]
    fn single_frame_fills_every_chunk() {
        let traj = vec![Frame { t: 0.0, x: 1.0, y: 2.0, z: 3.0 }];
        let seq = SkeletonSequence::new(vec![traj], vec![], 0).unwrap();
        let u = temporal_chunking(&seq, 4).unwrap();
        assert_eq!(u.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn invalid_sequences() {
        assert!(SkeletonSequence::new(vec![], vec![], 0).is_err());
        let f = Frame { t: 0.0, x: 0.0, y: 0.0, z: 0.0 };
        assert!(SkeletonSequence::new(vec![vec![f], vec![f, f]], vec![], 0).is_err());
        assert!(SkeletonSequence::new(vec![vec![f]], vec![(0, 1)], 0).is_err());
        let empty = SkeletonSequence { joints: vec![], edges: vec![], label: 0 };
        assert!(temporal_chunking(&empty, 4).is_err());
    }

    #[test]
    fn adjacency_is_row_stochastic() {
        let a = adjacency(5, &skeleton_edges(5)).unwrap();
        for i in 0..5 {
            let s: f64 = (0..5).map(|j| a.at(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(adjacency(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn standardized_coordinates() {
        let spec = SynthSpec { per_class: 1, classes: 1, ..SynthSpec::default() };
        let (seq, _) = &spec.sequences().unwrap()[0];
        let s = standardize(seq);
        let xs: Vec<f64> = s.joints.iter().flatten().map(|f| f.x).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec { per_class: 4, classes: 2, ..SynthSpec::default() };
        assert_eq!(spec.dataset().unwrap(), spec.dataset().unwrap());
        let d = spec.dataset().unwrap();
        assert_eq!(d.train.len(), 4);
        assert_eq!(d.test.len(), 4);
        assert_eq!(d.nodes(), 14);
        assert_eq!(d.train[0].node_signal.shape(), &[96, 14]);
        assert!(d.adjacency_is_stochastic(1e-9));
    }

    #[test]
    fn noiseless_class_members_are_identical() {
        let spec = SynthSpec { per_class: 3, classes: 2, noise_std: 0.0, ..SynthSpec::default() };
        let d = spec.dataset().unwrap();
        let class0: Vec<&GraphSample> = d.train.iter().chain(&d.test).filter(|s| s.label == 0).collect();
        assert!(class0.windows(2).all(|w| w[0] == w[1]));
        let class1 = d.train.iter().chain(&d.test).find(|s| s.label == 1).unwrap();
        assert_ne!(class0[0], class1);
    }

    #[test]
    fn skeleton_edges_shape() {
        assert_eq!(skeleton_edges(7), vec![(0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 6)]);
    }
}
