use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

/// Fully connected stack: `widths[0]` inputs, `widths.last()` outputs.
///
/// Hidden layers use ReLU; the last layer uses `final_activation`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
    final_activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, final_activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs an input and an output width, got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("zero width in MLP {widths:?}")));
        }
        Ok(MlpSpec {
            widths,
            final_activation,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn final_activation(&self) -> Activation {
        self.final_activation
    }

    /// `(fan_in, fan_out)` of each linear layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.widths.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|(i, o)| i * o + o).sum()
    }

    pub fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.layer{layer}.weight")
    }

    pub fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.layer{layer}.bias")
    }

    /// Applies the MLP row-wise to a `rows x input_width` matrix.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: shape.to_vec(),
                rhs: vec![self.input_width()],
            });
        }
        let mut h = x;
        for (l, (fan_in, fan_out)) in self.layers().enumerate() {
            let w = tape.param(params, &Self::weight_name(prefix, l))?;
            let b = tape.param(params, &Self::bias_name(prefix, l))?;
            if tape.shape(w) != [fan_in, fan_out] || tape.shape(b) != [fan_out] {
                return Err(Error::Shape {
                    op: "mlp_forward",
                    lhs: tape.shape(w).to_vec(),
                    rhs: vec![fan_in, fan_out],
                });
            }
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            let last = l + 1 == self.num_layers();
            if !last || self.final_activation == Activation::Relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}
