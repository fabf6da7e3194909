//! Binary dataset container and delimited-text export.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CTXDSET\0"
//! version    u32      1
//! split      u32      0 train, 1 val, 2 test
//! n, l, f    u64 x 3
//! classes    u64
//! tensor     f32 x n*l*f, row-major (window, step, feature)
//! labels     u32 x n
//! starts     u64 x n
//! has_stats  u8; if 1: mean f64 x f, std f64 x f, degenerate u8 x f
//! provenance 32 bytes (SHA-256 of the provenance record)
//! ```

use std::io::Write;
use std::path::Path;

use super::{NormStats, SeriesDataset, Split};
use crate::binio::{Reader, Writer};
use crate::error::Result;

const MAGIC: &[u8; 8] = b"CTXDSET\0";
pub const DATASET_VERSION: u32 = 1;

pub(crate) fn write_stats(w: &mut Writer, stats: Option<&NormStats>) {
    match stats {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            s.mean.iter().for_each(|&v| w.f64(v));
            s.std.iter().for_each(|&v| w.f64(v));
            s.degenerate.iter().for_each(|&d| w.u8(d as u8));
        }
    }
}

pub(crate) fn read_stats(r: &mut Reader<'_>, f: usize) -> Result<Option<NormStats>> {
    match r.u8()? {
        0 => Ok(None),
        1 => {
            r.check_count(f as u64, 17)?;
            let mean = r.f64_vec(f)?;
            let std = r.f64_vec(f)?;
            let degenerate = (0..f)
                .map(|_| match r.u8()? {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(r.err("bad degenerate flag")),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(NormStats {
                mean,
                std,
                degenerate,
            }))
        }
        _ => Err(r.err("bad stats flag")),
    }
}

impl SeriesDataset {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, DATASET_VERSION);
        w.u32(self.split.tag());
        for v in [self.len(), self.l, self.f, self.n_classes] {
            w.u64(v as u64);
        }
        w.buf.reserve(self.data.len() * 4 + self.len() * 12);
        self.data.iter().for_each(|&v| w.f32(v));
        self.labels.iter().for_each(|&v| w.u32(v));
        self.starts.iter().for_each(|&v| w.u64(v));
        write_stats(&mut w, self.stats.as_ref());
        w.bytes(&self.provenance);
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open("dataset file", bytes, MAGIC)?;
        if version != DATASET_VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let split = Split::from_tag(r.u32()?).ok_or_else(|| r.err("unknown split tag"))?;
        let n = r.u64()?;
        let l = r.u64()?;
        let f = r.u64()?;
        let n_classes = r.u64()?;
        let values = n
            .checked_mul(l)
            .and_then(|x| x.checked_mul(f))
            .ok_or_else(|| r.err("tensor size overflows"))?;
        let values = r.check_count(values, 4)?;
        let n = r.check_count(n, 12)?;
        let n_classes = usize::try_from(n_classes).map_err(|_| r.err("class count overflows"))?;
        let (l, f) = (l as usize, f as usize);
        let data = r.f32_vec(values)?;
        let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let starts = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let stats = read_stats(&mut r, f)?;
        let provenance: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        r.finish()?;
        let ds = SeriesDataset {
            split,
            n_classes,
            l,
            f,
            data,
            labels,
            starts,
            stats,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&crate::binio::read_file(path)?)
            .map_err(|e| e.context(format!("loading {}", path.display())))
    }

    /// One line per window step: `window,step,label,start,<features>`.
    pub fn write_text<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        write!(w, "window,step,label,start")?;
        for k in 0..self.f {
            write!(w, ",f{k}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            let win = self.window(i);
            for step in 0..self.l {
                write!(
                    w,
                    "{i},{step},{},{}",
                    self.labels[i],
                    self.starts[i] + step as u64
                )?;
                for v in &win[step * self.f..(step + 1) * self.f] {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
