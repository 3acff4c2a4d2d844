use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Activation::Relu => y.max(0.0),
            Activation::Tanh => y.tanh(),
        }
    }

    /// First derivative. The relu derivative at the kink is taken to be 0.
    #[inline]
    pub fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = y.tanh();
                1.0 - t * t
            }
        }
    }

    #[inline]
    pub fn second_derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = y.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(ModelError::InvalidSpec(format!("unknown activation `{other}`"))),
        }
    }
}

/// Geometry of one dense layer.
///
/// The weight matrix has `outputs` rows and `inputs + 1` columns; the last
/// column multiplies a constant 1 and acts as the bias. The block is stored
/// column-major inside the flat parameter vector, so entry `(i, j)` lives at
/// `offset + j * outputs + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl LayerShape {
    /// Number of columns including the bias column.
    pub fn augmented_inputs(&self) -> usize {
        self.inputs + 1
    }

    pub fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Architecture of a multilayer perceptron: `[d, h1, ..., C]`.
///
/// Hidden layers apply the activation; the final layer emits logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct MlpSpec {
    layer_dims: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerShape>,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    layer_dims: Vec<usize>,
    activation: Activation,
}

impl TryFrom<RawSpec> for MlpSpec {
    type Error = ModelError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        MlpSpec::new(raw.layer_dims, raw.activation)
    }
}

impl From<MlpSpec> for RawSpec {
    fn from(spec: MlpSpec) -> Self {
        RawSpec {
            layer_dims: spec.layer_dims,
            activation: spec.activation,
        }
    }
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self, ModelError> {
        if layer_dims.len() < 2 {
            return Err(ModelError::InvalidSpec(
                "need at least an input and an output dimension".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(ModelError::InvalidSpec("layer dimensions must be positive".into()));
        }
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        let mut offset = 0;
        for w in layer_dims.windows(2) {
            let shape = LayerShape {
                inputs: w[0],
                outputs: w[1],
                offset,
            };
            offset += shape.len();
            layers.push(shape);
        }
        Ok(Self {
            layer_dims,
            activation,
            layers,
        })
    }

    /// A single affine layer followed by softmax (multinomial logistic regression).
    pub fn linear(inputs: usize, classes: usize) -> Result<Self, ModelError> {
        Self::new(vec![inputs, classes], Activation::Relu)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerShape::len).sum()
    }
}
