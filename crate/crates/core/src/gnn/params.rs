use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Architecture of the edge GNN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnHyperparams {
    /// Number of message-passing layers.
    pub depth: usize,
    /// Width of vertex features and of the learned part of edge features.
    pub hidden: usize,
    pub slope: f64,
    pub tx_antennas: usize,
}

impl Default for GnnHyperparams {
    fn default() -> Self {
        GnnHyperparams {
            depth: 4,
            hidden: 256,
            slope: 0.1,
            tx_antennas: 8,
        }
    }
}

impl GnnHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("depth", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::config(
                "slope",
                format!("{} is not in (0, 1)", self.slope),
            ));
        }
        if self.tx_antennas == 0 {
            return Err(Error::config("N_t", "must be at least 1"));
        }
        Ok(())
    }

    /// Width of a stacked antenna vector.
    pub fn io_width(&self) -> usize {
        2 * self.tx_antennas
    }

    /// Edge width entering layer `l` (0-based).
    pub fn edge_width(&self, layer: usize) -> usize {
        if layer == 0 {
            self.io_width()
        } else {
            self.hidden + self.io_width()
        }
    }
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) const VERTEX_MAPS: [&str; 4] = ["ue_to_ap", "st_to_ap", "ue_to_ue", "st_to_st"];
pub(crate) const EDGE_MAPS: [&str; 2] = ["ap_ue", "ap_st"];

fn push_linear(out: &mut Vec<ParamSlot>, prefix: String, fan_in: usize, fan_out: usize) {
    out.push(ParamSlot {
        name: format!("{prefix}.weight"),
        shape: vec![fan_in, fan_out],
    });
    out.push(ParamSlot {
        name: format!("{prefix}.bias"),
        shape: vec![fan_out],
    });
}

/// Every parameter tensor in storage order.
///
/// Per layer: the four vertex maps, then the two edge maps; then the two
/// output heads. Each map is a `[fan_in, fan_out]` weight followed by its bias.
pub fn manifest(hyper: &GnnHyperparams) -> Vec<ParamSlot> {
    let h = hyper.hidden;
    let mut out = Vec::new();
    for l in 0..hyper.depth {
        let e = hyper.edge_width(l);
        for name in VERTEX_MAPS {
            push_linear(&mut out, format!("layer{l}.vertex.{name}"), e + h, h);
        }
        for name in EDGE_MAPS {
            push_linear(&mut out, format!("layer{l}.edge.{name}"), 2 * h + e, h);
        }
    }
    let e = hyper.edge_width(hyper.depth);
    for name in EDGE_MAPS {
        push_linear(&mut out, format!("head.{name}"), e, hyper.io_width());
    }
    out
}

/// Trainable weights of the GNN, in [`manifest`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParameters<T> {
    hyper: GnnHyperparams,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> GnnParameters<T> {
    pub fn from_tensors(hyper: GnnHyperparams, tensors: Vec<Tensor<T>>) -> Result<Self> {
        hyper.validate()?;
        let slots = manifest(&hyper);
        if slots.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.iter().zip(&tensors) {
            if slot.shape != t.shape() {
                return Err(Error::Shape(format!(
                    "{} has shape {:?}, expected {:?}",
                    slot.name,
                    t.shape(),
                    slot.shape
                )));
            }
        }
        Ok(GnnParameters { hyper, tensors })
    }

    pub fn zeros(hyper: GnnHyperparams) -> Result<Self> {
        let tensors = manifest(&hyper)
            .iter()
            .map(|s| Tensor::zeros(&s.shape))
            .collect();
        Self::from_tensors(hyper, tensors)
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(hyper: GnnHyperparams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = manifest(&hyper)
            .iter()
            .map(|slot| {
                if slot.shape.len() == 1 {
                    return Tensor::zeros(&slot.shape);
                }
                let bound = 1.0 / (slot.shape[0] as f64).sqrt();
                let data = (0..slot.len())
                    .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
                    .collect();
                Tensor::new(&slot.shape, data).expect("manifest shape")
            })
            .collect();
        Self::from_tensors(hyper, tensors)
    }

    pub fn hyper(&self) -> &GnnHyperparams {
        &self.hyper
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> GnnParameters<U> {
        GnnParameters {
            hyper: self.hyper,
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Registers every tensor as a tape parameter, in manifest order.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.param(t.clone())).collect();
        ParamVars::from_vars(&self.hyper, &vars).expect("manifest length")
    }
}

/// A weight/bias pair on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub ue_to_ap: Linear,
    pub st_to_ap: Linear,
    pub ue_to_ue: Linear,
    pub st_to_st: Linear,
    pub edge_ue: Linear,
    pub edge_st: Linear,
}

/// Tape handles of a registered [`GnnParameters`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<LayerVars>,
    pub head_ue: Linear,
    pub head_st: Linear,
}

impl ParamVars {
    /// Groups tape handles given in manifest order.
    pub fn from_vars(hyper: &GnnHyperparams, vars: &[Var]) -> Result<Self> {
        let expected = manifest(hyper).len();
        if vars.len() != expected {
            return Err(Error::Shape(format!(
                "{} parameter handles for an architecture with {expected} tensors",
                vars.len()
            )));
        }
        let mut it = vars
            .chunks(2)
            .map(|p| Linear {
                weight: p[0],
                bias: p[1],
            })
            .collect::<Vec<_>>()
            .into_iter();
        let mut next = || it.next().expect("manifest length");
        let layers = (0..hyper.depth)
            .map(|_| LayerVars {
                ue_to_ap: next(),
                st_to_ap: next(),
                ue_to_ue: next(),
                st_to_st: next(),
                edge_ue: next(),
                edge_st: next(),
            })
            .collect();
        let head_ue = next();
        let head_st = next();
        Ok(ParamVars {
            layers,
            head_ue,
            head_st,
        })
    }
}
