//! Leaf-ordering contract shared by worker and monitor.
//!
//! Every committed structure is identified by a [`TreeId`]; the functions on
//! [`Geometry`] map structured coordinates to leaf ordinals and give the
//! expected leaf count and group length, so both sides agree on exactly what a
//! leaf holds. All orderings are row-major in the listed coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{contributing_outputs, split_near_sqrt, ConvSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeId {
    /// Per-record tree: `x` elements then `y` elements.
    RecordVector,
    /// Landmark blocks `(bi, bj)` of the conv input.
    ConvXLandmark,
    /// Conv output rows `(t, r)`.
    ConvYRows,
    /// Activation outputs, one per element.
    ActFwdOut,
    /// FC input sub-vectors `j`.
    FcXSub,
    /// Partial-sum rows `i` of `Y'`.
    FcYPrimeRows,
    /// Weight groups `(i, j)`: column `i`, rows of sub-vector `j`.
    FcThetaGroups,
    /// Loss gradient, one per element.
    LossGrad,
    /// Backward partial-sum rows `j` of `∇X'`.
    FcBwdGradXPrimeRows,
    /// Output-gradient sub-vectors `k`.
    FcBwdGradYSub,
    /// Weight groups `(j, k)`: row `j`, columns of sub-vector `k`.
    FcBwdThetaGroups,
    /// Weight updates `(j, i)`, one per element.
    FcGradTheta,
    /// Activation input gradients, one per element.
    ActBwdOut,
    /// Per input site `(i, j)`: the `n_F` per-filter gradients.
    ConvGradX,
    /// Conv output-gradient rows `(t, u)`.
    ConvGradYRows,
    /// Expanded filter-gradient vectors `(t, i, j)`.
    ConvGradF,
    /// Strided input groups `(i, j, u)`.
    ConvXGroups,
    /// Generic elementwise stage input.
    SimdInput,
    /// Generic elementwise stage output.
    SimdOutput,
}

/// Derived sizes of the audited network: conv layer, activation, FC layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub n_filters: usize,
    pub input_side: usize,
    pub filter_side: usize,
    pub stride: usize,
    pub out_side: usize,
    pub landmark_side: usize,
    pub blocks_per_side: usize,
    /// FC input length, `n_filters * out_side^2`.
    pub l_x: usize,
    pub l_y: usize,
    /// Forward split of the FC input: `n_x` sub-vectors of `s_x`.
    pub n_x: usize,
    pub s_x: usize,
    /// Backward split of the FC output gradient: `n_yb` sub-vectors of `s_y`.
    pub n_yb: usize,
    pub s_y: usize,
}

impl Geometry {
    pub fn new(conv: &ConvSpec, l_y: usize) -> Result<Self> {
        let out_side = conv.output_side()?;
        if l_y == 0 {
            return Err(Error::InvalidSpec("FC output must be non-empty".into()));
        }
        let landmark_side = conv.landmark_side();
        let l_x = conv.n_filters * out_side * out_side;
        let (n_x, s_x) = split_near_sqrt(l_x);
        let (n_yb, s_y) = split_near_sqrt(l_y);
        Ok(Geometry {
            n_filters: conv.n_filters,
            input_side: conv.input_side,
            filter_side: conv.filter_side,
            stride: conv.stride,
            out_side,
            landmark_side,
            blocks_per_side: conv.input_side.div_ceil(landmark_side),
            l_x,
            l_y,
            n_x,
            s_x,
            n_yb,
            s_y,
        })
    }

    /// Record-vector length: flattened input then target.
    pub fn record_len(&self) -> usize {
        self.input_side * self.input_side + self.l_y
    }

    pub fn leaf_count(&self, tree: TreeId) -> usize {
        let (a, fs, out, nf) = (self.input_side, self.filter_side, self.out_side, self.n_filters);
        match tree {
            TreeId::RecordVector => self.record_len(),
            TreeId::ConvXLandmark => self.blocks_per_side * self.blocks_per_side,
            TreeId::ConvYRows | TreeId::ConvGradYRows => nf * out,
            TreeId::ActFwdOut | TreeId::ActBwdOut => self.l_x,
            TreeId::FcXSub => self.n_x,
            TreeId::FcYPrimeRows => self.l_y,
            TreeId::FcThetaGroups => self.n_x * self.l_y,
            TreeId::LossGrad => self.l_y,
            TreeId::FcBwdGradXPrimeRows => self.l_x,
            TreeId::FcBwdGradYSub => self.n_yb,
            TreeId::FcBwdThetaGroups => self.l_x * self.n_yb,
            TreeId::FcGradTheta => self.l_x * self.l_y,
            TreeId::ConvGradX => a * a,
            TreeId::ConvGradF => nf * fs * fs,
            TreeId::ConvXGroups => fs * fs * out,
            TreeId::SimdInput | TreeId::SimdOutput => 0,
        }
    }

    /// Number of values hashed into leaf `index` of `tree`.
    pub fn group_len(&self, tree: TreeId, index: usize) -> usize {
        match tree {
            TreeId::RecordVector
            | TreeId::ActFwdOut
            | TreeId::ActBwdOut
            | TreeId::LossGrad
            | TreeId::FcGradTheta
            | TreeId::SimdInput
            | TreeId::SimdOutput => 1,
            TreeId::ConvXLandmark => {
                let (r0, r1, c0, c1) = self.block_bounds(index);
                (r1 - r0) * (c1 - c0)
            }
            TreeId::ConvYRows
            | TreeId::ConvGradYRows
            | TreeId::ConvGradF
            | TreeId::ConvXGroups => self.out_side,
            TreeId::FcXSub | TreeId::FcThetaGroups => self.s_x,
            TreeId::FcYPrimeRows => self.n_x,
            TreeId::FcBwdGradXPrimeRows => self.n_yb,
            TreeId::FcBwdGradYSub | TreeId::FcBwdThetaGroups => self.s_y,
            TreeId::ConvGradX => self.n_filters,
        }
    }

    /// Half-open `(row_lo, row_hi, col_lo, col_hi)` of landmark block `b`;
    /// blocks on the far edges are clipped to the input.
    pub fn block_bounds(&self, b: usize) -> (usize, usize, usize, usize) {
        let (bi, bj) = (b / self.blocks_per_side, b % self.blocks_per_side);
        let lm = self.landmark_side;
        let a = self.input_side;
        (bi * lm, ((bi + 1) * lm).min(a), bj * lm, ((bj + 1) * lm).min(a))
    }

    /// Landmark blocks intersecting the receptive field of output `(r, c)`,
    /// ascending. At most four, since the field is no wider than a block.
    pub fn covering_blocks(&self, r: usize, c: usize) -> Vec<usize> {
        let lm = self.landmark_side;
        let span = |o: usize| {
            let lo = o * self.stride;
            lo / lm..=(lo + self.filter_side - 1) / lm
        };
        let mut out = Vec::with_capacity(4);
        for bi in span(r) {
            for bj in span(c) {
                out.push(bi * self.blocks_per_side + bj);
            }
        }
        out
    }

    /// Output-gradient rows `u` read when auditing `∇X^(t)[i, *]`.
    pub fn grad_rows_for(&self, i: usize) -> std::ops::Range<usize> {
        contributing_outputs(i, self.stride, self.filter_side, self.out_side)
    }

    /// Record-vector index of input element `(r, c)`.
    pub fn x_index(&self, r: usize, c: usize) -> usize {
        r * self.input_side + c
    }

    /// Record-vector index of target element `k`.
    pub fn y_index(&self, k: usize) -> usize {
        self.input_side * self.input_side + k
    }
}

/// The ordered stages of one training round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    ConvForward,
    ActForward,
    FcForward,
    Loss,
    FcBackwardInput,
    FcBackwardWeights,
    ActBackward,
    ConvBackwardInput,
    ConvBackwardFilters,
    /// Stand-alone elementwise stage, outside the network pipeline.
    Simd,
}

impl StageId {
    pub const PIPELINE: [StageId; 9] = [
        StageId::ConvForward,
        StageId::ActForward,
        StageId::FcForward,
        StageId::Loss,
        StageId::FcBackwardInput,
        StageId::FcBackwardWeights,
        StageId::ActBackward,
        StageId::ConvBackwardInput,
        StageId::ConvBackwardFilters,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageId::ConvForward => "conv_forward",
            StageId::ActForward => "act_forward",
            StageId::FcForward => "fc_forward",
            StageId::Loss => "loss",
            StageId::FcBackwardInput => "fc_backward_input",
            StageId::FcBackwardWeights => "fc_backward_weights",
            StageId::ActBackward => "act_backward",
            StageId::ConvBackwardInput => "conv_backward_input",
            StageId::ConvBackwardFilters => "conv_backward_filters",
            StageId::Simd => "simd",
        }
    }

    pub fn parse(s: &str) -> Option<StageId> {
        StageId::PIPELINE
            .into_iter()
            .chain([StageId::Simd])
            .find(|st| st.name() == s)
    }

    /// Stage that must be committed before this one runs.
    pub fn prerequisite(self) -> Option<StageId> {
        let pos = StageId::PIPELINE.iter().position(|&s| s == self)?;
        pos.checked_sub(1).map(|p| StageId::PIPELINE[p])
    }

    /// Trees whose roots this stage commits.
    pub fn trees(self) -> &'static [TreeId] {
        match self {
            StageId::ConvForward => &[TreeId::ConvXLandmark, TreeId::ConvYRows],
            StageId::ActForward => &[TreeId::ActFwdOut],
            StageId::FcForward => &[TreeId::FcXSub, TreeId::FcYPrimeRows, TreeId::FcThetaGroups],
            StageId::Loss => &[TreeId::LossGrad],
            StageId::FcBackwardInput => &[
                TreeId::FcBwdGradYSub,
                TreeId::FcBwdGradXPrimeRows,
                TreeId::FcBwdThetaGroups,
            ],
            StageId::FcBackwardWeights => &[TreeId::FcGradTheta],
            StageId::ActBackward => &[TreeId::ActBwdOut],
            StageId::ConvBackwardInput => &[TreeId::ConvGradYRows, TreeId::ConvGradX],
            StageId::ConvBackwardFilters => &[TreeId::ConvXGroups, TreeId::ConvGradF],
            StageId::Simd => &[TreeId::SimdInput, TreeId::SimdOutput],
        }
    }
}

impl std::fmt::Display for StageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl Geometry {
    /// Number of individually auditable computations in a stage.
    pub fn computations(&self, stage: StageId) -> usize {
        let (a, fs, out, nf) = (self.input_side, self.filter_side, self.out_side, self.n_filters);
        match stage {
            StageId::ConvForward => nf * out * out,
            StageId::ActForward | StageId::ActBackward => self.l_x,
            StageId::FcForward => self.l_y * self.n_x,
            StageId::Loss => self.l_y,
            StageId::FcBackwardInput => self.l_x * self.n_yb,
            StageId::FcBackwardWeights => self.l_x * self.l_y,
            StageId::ConvBackwardInput => nf * a * a,
            StageId::ConvBackwardFilters => nf * fs * fs * out,
            StageId::Simd => 0,
        }
    }

    /// Structured coordinates of computation `k` of a stage.
    pub fn coords(&self, stage: StageId, k: usize) -> Vec<usize> {
        let (a, fs, out) = (self.input_side, self.filter_side, self.out_side);
        match stage {
            StageId::ConvForward => vec![k / (out * out), k / out % out, k % out],
            StageId::FcForward => vec![k / self.n_x, k % self.n_x],
            StageId::FcBackwardInput => vec![k / self.n_yb, k % self.n_yb],
            StageId::FcBackwardWeights => vec![k / self.l_y, k % self.l_y],
            StageId::ConvBackwardInput => vec![k / (a * a), k / a % a, k % a],
            StageId::ConvBackwardFilters => {
                let u = k % out;
                let rest = k / out;
                vec![rest / (fs * fs), rest / fs % fs, rest % fs, u]
            }
            StageId::ActForward | StageId::ActBackward | StageId::Loss | StageId::Simd => vec![k],
        }
    }
}
