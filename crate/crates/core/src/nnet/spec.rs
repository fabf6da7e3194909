use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Lstm {
        units: usize,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
    Softmax {
        classes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Inverted dropout applied to the layer output in training mode.
    /// Only dense layers may drop.
    pub dropout: f64,
}

impl LayerSpec {
    pub fn lstm(units: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Lstm { units },
            dropout: 0.0,
        }
    }

    pub fn dense(units: usize, activation: Activation, dropout: f64) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { units, activation },
            dropout,
        }
    }

    pub fn softmax(classes: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Softmax { classes },
            dropout: 0.0,
        }
    }

    pub fn units(&self) -> usize {
        match self.kind {
            LayerKind::Lstm { units } | LayerKind::Dense { units, .. } => units,
            LayerKind::Softmax { classes } => classes,
        }
    }

    pub fn is_lstm(&self) -> bool {
        matches!(self.kind, LayerKind::Lstm { .. })
    }
}

/// Named architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Lstm,
    LightLstm,
    Mlp,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Lstm => "lstm",
            Architecture::LightLstm => "light-lstm",
            Architecture::Mlp => "mlp",
        }
    }

    pub fn is_temporal(self) -> bool {
        !matches!(self, Architecture::Mlp)
    }

    /// The architecture for `f` input features, `l` time steps, `k` classes.
    /// `l` is ignored for the MLP, which sees one row at a time.
    pub fn spec(self, f: usize, l: usize, k: usize) -> NetworkSpec {
        let relu = Activation::Relu;
        let (series_len, layers) = match self {
            Architecture::Lstm => (
                l,
                vec![
                    LayerSpec::lstm(128),
                    LayerSpec::lstm(256),
                    LayerSpec::dense(512, relu, 0.5),
                    LayerSpec::dense(128, relu, 0.5),
                    LayerSpec::softmax(k),
                ],
            ),
            Architecture::LightLstm => (
                l,
                vec![
                    LayerSpec::lstm(16),
                    LayerSpec::lstm(32),
                    LayerSpec::dense(256, relu, 0.5),
                    LayerSpec::softmax(k),
                ],
            ),
            Architecture::Mlp => (
                1,
                vec![
                    LayerSpec::dense(256, relu, 0.5),
                    LayerSpec::dense(512, relu, 0.5),
                    LayerSpec::dense(128, relu, 0.5),
                    LayerSpec::softmax(k),
                ],
            ),
        };
        NetworkSpec {
            input: f,
            series_len,
            layers,
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Architecture::Lstm),
            "light-lstm" | "light_lstm" | "lightlstm" => Ok(Architecture::LightLstm),
            "mlp" => Ok(Architecture::Mlp),
            other => Err(Error::Config(format!(
                "unknown network architecture {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input features per time step.
    pub input: usize,
    /// Time steps per sample; 1 for purely dense networks.
    pub series_len: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("invalid network: {msg}")));
        if self.input == 0 || self.series_len == 0 {
            return bad("input width and series length must be >= 1");
        }
        let Some((last, body)) = self.layers.split_last() else {
            return bad("no layers");
        };
        if !matches!(last.kind, LayerKind::Softmax { .. }) {
            return bad("last layer must be the softmax output");
        }
        if body
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Softmax { .. }))
        {
            return bad("exactly one softmax output is allowed");
        }
        if let Some(first_dense) = body.iter().position(|l| !l.is_lstm()) {
            if body[first_dense..].iter().any(LayerSpec::is_lstm) {
                return bad("recurrent layers must precede dense layers");
            }
        }
        if !self.layers.iter().any(LayerSpec::is_lstm) && self.series_len != 1 {
            return bad("a network without recurrent layers takes series length 1");
        }
        for l in &self.layers {
            if l.units() == 0 {
                return bad("layer width must be >= 1");
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return bad("dropout must lie in [0, 1)");
            }
            if l.dropout > 0.0 && !matches!(l.kind, LayerKind::Dense { .. }) {
                return bad("dropout applies to dense layers only");
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::units)
    }

    /// Shapes of every weight array in declaration order: `(W_x, W_h, b)`
    /// per recurrent layer (gates i, f, g, o side by side), `(W, b)` per
    /// dense layer. Biases are row vectors.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input;
        for l in &self.layers {
            let u = l.units();
            if l.is_lstm() {
                shapes.extend([(width, 4 * u), (u, 4 * u), (1, 4 * u)]);
            } else {
                shapes.extend([(width, u), (1, u)]);
            }
            width = u;
        }
        shapes
    }
}

/// Closed-form parameter count: `4 h (f_in + h + 1)` per recurrent layer,
/// `f_in u + u` per dense layer.
pub fn param_count(spec: &NetworkSpec) -> usize {
    let mut width = spec.input;
    let mut total = 0;
    for l in &spec.layers {
        let u = l.units();
        total += if l.is_lstm() {
            4 * u * (width + u + 1)
        } else {
            width * u + u
        };
        width = u;
    }
    total
}
