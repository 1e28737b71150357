//! Versioned binary container: named tensors, config text and optimizer
//! state. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use s2ut_core::graph::ParamStore;
use s2ut_core::model::{ModelConfig, S2UTModel, TrainState};
use s2ut_core::optim::{Adam, AdamConfig};
use s2ut_core::tensor::Mat;
use s2ut_core::vocoder::{DurationConfig, DurationModel};

use crate::error::{io_err, Error, Result};

const MAGIC: &[u8; 8] = b"S2UTCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// `s2ut` or `duration`.
    pub kind: String,
    pub config: String,
    pub params: ParamStore,
    pub adam: Option<Adam>,
    pub step: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn mat(&mut self, m: &Mat) {
        self.u64(m.rows as u64);
        self.u64(m.cols as u64);
        for &v in &m.data {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Data("checkpoint truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(Error::Data("checkpoint length field out of range".into()));
        }
        Ok(n as usize)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Data(format!("checkpoint string: {e}")))
    }
    fn mat(&mut self) -> Result<Mat> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows.checked_mul(cols).filter(|n| n.saturating_mul(8) <= self.buf.len() - self.pos);
        let n = n.ok_or_else(|| Error::Data("checkpoint tensor shape out of range".into()))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Mat::from_vec(rows, cols, data))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(VERSION);
        w.str(&self.kind);
        w.str(&self.config);
        w.u64(self.step);
        w.u64(self.params.len() as u64);
        for (_, name, m) in self.params.iter() {
            w.str(name);
            w.mat(m);
        }
        match &self.adam {
            None => w.u32(0),
            Some(a) => {
                w.u32(1);
                w.f64(a.config.beta1);
                w.f64(a.config.beta2);
                w.f64(a.config.eps);
                w.u64(a.step);
                for (m, v) in a.m.iter().zip(&a.v) {
                    w.mat(m);
                    w.mat(v);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Data("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let kind = r.str()?;
        let config = r.str()?;
        let step = r.u64()?;
        let n = r.u64()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.str()?;
            if params.find(&name).is_some() {
                return Err(Error::Data(format!("duplicate tensor {name}")));
            }
            params.add(name, r.mat()?);
        }
        let adam = match r.u32()? {
            0 => None,
            1 => {
                let config = AdamConfig { beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
                let step = r.u64()?;
                let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
                for _ in 0..n {
                    m.push(r.mat()?);
                    v.push(r.mat()?);
                }
                Some(Adam { config, step, m, v })
            }
            f => return Err(Error::Data(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Data("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { kind, config, params, adam, step })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }

    pub fn from_train_state(state: &TrainState) -> Self {
        Checkpoint {
            kind: "s2ut".into(),
            config: state.model.config.to_text(),
            params: state.model.params.clone(),
            adam: Some(state.adam.clone()),
            step: state.step,
        }
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Data(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn into_train_state(self, adam_config: AdamConfig) -> Result<TrainState> {
        self.expect_kind("s2ut")?;
        let config = ModelConfig::from_text(&self.config)?;
        let model = S2UTModel::from_params(config, self.params)?;
        let adam = self.adam.unwrap_or_else(|| Adam::new(adam_config, &model.params));
        Ok(TrainState { model, adam, step: self.step })
    }

    pub fn into_model(self) -> Result<S2UTModel> {
        self.expect_kind("s2ut")?;
        Ok(S2UTModel::from_params(ModelConfig::from_text(&self.config)?, self.params)?)
    }

    pub fn from_duration(model: &DurationModel) -> Result<Self> {
        Ok(Checkpoint {
            kind: "duration".into(),
            config: serde_json::to_string(&model.config).map_err(|e| Error::Data(e.to_string()))?,
            params: model.params.clone(),
            adam: None,
            step: 0,
        })
    }

    pub fn into_duration(self) -> Result<DurationModel> {
        self.expect_kind("duration")?;
        let config: DurationConfig = serde_json::from_str(&self.config).map_err(|e| Error::Data(e.to_string()))?;
        Ok(DurationModel::from_params(config, self.params)?)
    }
}
