//! Model checkpoint container.
//!
//! ```text
//! magic    8 bytes  "CTXMODEL"
//! version  u32      1
//! name     u64 length + utf-8
//! input, series_len, layers   u64 x 3
//! per layer: kind u8 (0 lstm, 1 dense, 2 softmax), units u64,
//!            activation u8 (0 none, 1 relu), dropout f64
//! weights  f32, arrays in declaration order, row-major
//! features u64, then normalization stats block
//! epochs   u64, then per epoch: epoch u64, train loss/acc, val loss/acc, lr as f64
//! ```

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::network::Network;
use super::spec::{Activation, LayerKind, LayerSpec, NetworkSpec};
use super::train::{ClassifierModel, EpochRecord};
use crate::binio::{Reader, Writer};
use crate::dataset::{read_stats, write_stats};
use crate::error::Result;

const MAGIC: &[u8; 8] = b"CTXMODEL";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_LAYERS: u64 = 1024;

impl ClassifierModel {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, CHECKPOINT_VERSION);
        w.string(&self.name);
        let spec = self.network.spec();
        w.u64(spec.input as u64);
        w.u64(spec.series_len as u64);
        w.u64(spec.layers.len() as u64);
        for layer in &spec.layers {
            let (kind, units, act) = match layer.kind {
                LayerKind::Lstm { units } => (0, units, Activation::None),
                LayerKind::Dense { units, activation } => (1, units, activation),
                LayerKind::Softmax { classes } => (2, classes, Activation::None),
            };
            w.u8(kind);
            w.u64(units as u64);
            w.u8(matches!(act, Activation::Relu) as u8);
            w.f64(layer.dropout);
        }
        for p in self.network.params() {
            p.iter().for_each(|&v| w.f32(v));
        }
        let f = self.stats.as_ref().map_or(0, |s| s.mean.len());
        w.u64(f as u64);
        write_stats(&mut w, self.stats.as_ref());
        w.u64(self.history.len() as u64);
        for r in &self.history {
            w.u64(r.epoch as u64);
            for v in [r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr] {
                w.f64(v);
            }
        }
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open("model checkpoint", bytes, MAGIC)?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let name = r.string()?;
        let input = dim(&mut r)?;
        let series_len = dim(&mut r)?;
        let n_layers = r.u64()?;
        if n_layers > MAX_LAYERS {
            return Err(r.err(format!("{n_layers} layers")));
        }
        let mut layers = Vec::with_capacity(n_layers as usize);
        for _ in 0..n_layers {
            let kind = r.u8()?;
            let units = dim(&mut r)?;
            let activation = match r.u8()? {
                0 => Activation::None,
                1 => Activation::Relu,
                _ => return Err(r.err("bad activation tag")),
            };
            let dropout = r.f64()?;
            let kind = match kind {
                0 => LayerKind::Lstm { units },
                1 => LayerKind::Dense { units, activation },
                2 => LayerKind::Softmax { classes: units },
                _ => return Err(r.err("bad layer tag")),
            };
            layers.push(LayerSpec { kind, dropout });
        }
        let spec = NetworkSpec {
            input,
            series_len,
            layers,
        };
        spec.validate()
            .map_err(|e| r.err(format!("invalid network: {e}")))?;
        let mut params = Vec::new();
        for (rows, cols) in spec.param_shapes() {
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| r.err("weight array size overflows"))?;
            let data = r.f32_vec(n)?;
            params.push(Array2::from_shape_vec((rows, cols), data).expect("shape checked"));
        }
        let f = r.u64()?;
        let f = r.check_count(f, 17)?;
        let stats = read_stats(&mut r, f)?;
        let n_epochs = r.count(48)?;
        let mut history = Vec::with_capacity(n_epochs);
        for _ in 0..n_epochs {
            let epoch = r.u64()? as usize;
            let mut v = [0.0; 5];
            for x in &mut v {
                *x = r.f64()?;
            }
            history.push(EpochRecord {
                epoch,
                train_loss: v[0],
                train_acc: v[1],
                val_loss: v[2],
                val_acc: v[3],
                lr: v[4],
            });
        }
        r.finish()?;
        let network = Network::from_params(spec, params)?;
        Ok(ClassifierModel {
            name,
            network,
            stats,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::binio::read_file(path)?;
        Self::decode(&bytes).map_err(|e| e.context(format!("reading {}", path.display())))
    }
}

const MAX_DIM: u64 = 1 << 24;

fn dim(r: &mut Reader<'_>) -> Result<usize> {
    let v = r.u64()?;
    if v > MAX_DIM {
        return Err(r.err(format!("dimension {v} too large")));
    }
    Ok(v as usize)
}

/// Writes the training history as CSV.
pub fn write_history_csv(history: &[EpochRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "epoch",
        "train_loss",
        "train_acc",
        "val_loss",
        "val_acc",
        "lr",
    ])
    .map_err(csv_err)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.val_loss.to_string(),
            r.val_acc.to_string(),
            r.lr.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::format("history csv", e.to_string())
}
