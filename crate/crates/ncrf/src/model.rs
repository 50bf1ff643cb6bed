//! Model parameters: three-stage conv extractor, unary head, and the
//! optional CRF coupling weights (one per unordered grid pair).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NcrfError, Result};
use crate::numerics::{NodeId, Scalar, Tape, Tensor};
use crate::crf::pair_count;

pub const CONV_STAGES: usize = 3;
pub const KERNEL: usize = 3;
/// Two labels: normal / tumor.
pub const N_CLASSES: usize = 2;

/// Architecture geometry. The embedding dimension equals the last conv
/// channel count because the embedding is the global average pool of the
/// final feature map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLayout {
    pub grid_side: usize,
    pub patch_size: usize,
    pub channels: [usize; CONV_STAGES],
    pub crf: bool,
}

impl ModelLayout {
    pub fn validate(&self) -> Result<()> {
        if self.grid_side == 0 {
            return Err(NcrfError::Config("grid side must be >= 1".into()));
        }
        if self.patch_size < 4 || self.patch_size % 4 != 0 {
            return Err(NcrfError::Config(format!(
                "patch size {} must be a positive multiple of 4 (two 2x2 poolings)",
                self.patch_size
            )));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(NcrfError::Config("conv channel counts must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn embedding_dim(&self) -> usize {
        self.channels[CONV_STAGES - 1]
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.grid_side * self.grid_side
    }

    #[inline]
    pub fn super_patch_side(&self) -> usize {
        self.grid_side * self.patch_size
    }

    #[inline]
    pub fn pair_weights(&self) -> usize {
        pair_count(self.sites())
    }

    /// Parameter groups in canonical order: name and shape.
    pub fn group_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut in_ch = 1;
        for (i, &out_ch) in self.channels.iter().enumerate() {
            specs.push((format!("conv{}.weight", i + 1), vec![out_ch, in_ch, KERNEL, KERNEL]));
            specs.push((format!("conv{}.bias", i + 1), vec![out_ch]));
            in_ch = out_ch;
        }
        specs.push(("head.weight".into(), vec![N_CLASSES, self.embedding_dim()]));
        specs.push(("head.bias".into(), vec![N_CLASSES]));
        if self.crf {
            specs.push(("crf.w".into(), vec![self.pair_weights()]));
        }
        specs
    }
}

/// Parameter nodes registered on a tape, grouped by role.
pub struct ModelNodes {
    pub conv: Vec<(NodeId, NodeId)>,
    pub head: (NodeId, NodeId),
    pub coupling: Option<NodeId>,
    /// Same nodes in canonical group order.
    pub all: Vec<NodeId>,
}

/// Trainable parameters in canonical group order.
#[derive(Debug, Clone)]
pub struct ModelParams<F: Scalar> {
    layout: ModelLayout,
    groups: Vec<Tensor<F>>,
}

impl<F: Scalar> ModelParams<F> {
    /// Seeded initialization: uniform in `[-s, s]` with `s = 1/sqrt(fan_in)`
    /// for extractor and head; coupling weights start at exactly zero so an
    /// untrained CRF model predicts identically to the baseline.
    ///
    /// The coupling group consumes no RNG draws, so matched seeds give
    /// bit-identical extractors with and without the CRF.
    pub fn init(layout: ModelLayout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups = Vec::new();
        for (name, shape) in layout.group_specs() {
            let numel: usize = shape.iter().product();
            let tensor = if name == "crf.w" {
                Tensor::zeros(shape)
            } else {
                let fan_in = if shape.len() == 4 {
                    shape[1] * shape[2] * shape[3]
                } else if shape.len() == 2 {
                    shape[1]
                } else {
                    // bias: same bound as its weight's fan-in
                    fan_in_for_bias(&layout, &name)
                };
                let s = 1.0 / (fan_in as f64).sqrt();
                let data: Vec<F> = (0..numel)
                    .map(|_| F::from_f64(rng.gen_range(-s..s)))
                    .collect();
                Tensor::new(shape, data)?
            };
            groups.push(tensor);
        }
        Ok(ModelParams { layout, groups })
    }

    /// Wrap already-materialized groups (checkpoint load); shapes must match
    /// the layout exactly.
    pub fn from_groups(layout: ModelLayout, groups: Vec<Tensor<F>>) -> Result<Self> {
        layout.validate()?;
        let specs = layout.group_specs();
        if specs.len() != groups.len() {
            return Err(NcrfError::Contract(format!(
                "expected {} parameter groups, got {}",
                specs.len(),
                groups.len()
            )));
        }
        for ((name, shape), tensor) in specs.iter().zip(&groups) {
            if tensor.shape() != shape.as_slice() {
                return Err(NcrfError::Contract(format!(
                    "group {name}: shape {:?}, expected {:?}",
                    tensor.shape(),
                    shape
                )));
            }
        }
        Ok(ModelParams { layout, groups })
    }

    #[inline]
    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn group_names(&self) -> Vec<String> {
        self.layout.group_specs().into_iter().map(|(n, _)| n).collect()
    }

    #[inline]
    pub fn groups(&self) -> &[Tensor<F>] {
        &self.groups
    }

    #[inline]
    pub fn groups_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.groups
    }

    pub fn group(&self, name: &str) -> Option<&Tensor<F>> {
        self.group_names().iter().position(|n| n == name).map(|i| &self.groups[i])
    }

    pub fn coupling(&self) -> Option<&Tensor<F>> {
        self.layout.crf.then(|| self.groups.last().expect("crf group"))
    }

    pub fn coupling_mut(&mut self) -> Option<&mut Tensor<F>> {
        self.layout.crf.then(|| self.groups.last_mut().expect("crf group"))
    }

    /// Register every group on a tape (as trainable leaves or constants) and
    /// hand back role-structured node ids.
    pub fn register(&self, tape: &mut Tape<F>, trainable: bool) -> Result<ModelNodes> {
        let mut all = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let id = if trainable {
                tape.param(g.clone())?
            } else {
                tape.constant(g.clone())?
            };
            all.push(id);
        }
        let conv = (0..CONV_STAGES).map(|i| (all[2 * i], all[2 * i + 1])).collect();
        let head = (all[2 * CONV_STAGES], all[2 * CONV_STAGES + 1]);
        let coupling = self.layout.crf.then(|| *all.last().expect("crf group"));
        Ok(ModelNodes { conv, head, coupling, all })
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            layout: self.layout.clone(),
            groups: self.groups.iter().map(|t| t.cast()).collect(),
        }
    }
}

fn fan_in_for_bias(layout: &ModelLayout, name: &str) -> usize {
    if name == "head.bias" {
        return layout.embedding_dim();
    }
    // convN.bias: fan-in of the matching conv weight
    let stage: usize = name
        .trim_start_matches("conv")
        .trim_end_matches(".bias")
        .parse()
        .expect("bias group name");
    let in_ch = if stage == 1 { 1 } else { layout.channels[stage - 2] };
    in_ch * KERNEL * KERNEL
}
