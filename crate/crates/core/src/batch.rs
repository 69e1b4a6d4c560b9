//! Fixed-horizon labeled windows and their binary archive format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{FddError, Result};
use crate::tensor::Tensor2;

const MAGIC: &[u8; 8] = b"FDDWINDW";
const VERSION: u32 = 1;

/// Where a window was cut from: source record id and first sample index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub source: u32,
    pub start: usize,
}

/// `N` windows of `horizon × features` values, one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    horizon: usize,
    features: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
    origins: Vec<WindowOrigin>,
}

impl WindowBatch {
    pub fn empty(horizon: usize, features: usize) -> Self {
        Self {
            horizon,
            features,
            data: Vec::new(),
            labels: Vec::new(),
            origins: Vec::new(),
        }
    }

    pub fn new(
        horizon: usize,
        features: usize,
        data: Vec<f64>,
        labels: Vec<usize>,
        origins: Vec<WindowOrigin>,
    ) -> Result<Self> {
        let n = labels.len();
        if data.len() != n * horizon * features {
            return Err(FddError::dim(format!(
                "{} values for {n} windows of {horizon}x{features}",
                data.len()
            )));
        }
        if origins.len() != n {
            return Err(FddError::dim("one origin per window required"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(FddError::Numeric("window batch contains non-finite values".into()));
        }
        Ok(Self {
            horizon,
            features,
            data,
            labels,
            origins,
        })
    }

    /// Builds a batch from window tensors with synthetic origins `(0, i)`.
    pub fn from_windows(windows: &[Tensor2], labels: Vec<usize>) -> Result<Self> {
        let (h, d) = windows.first().map_or((0, 0), Tensor2::shape);
        let mut data = Vec::with_capacity(windows.len() * h * d);
        for w in windows {
            if w.shape() != (h, d) {
                return Err(FddError::dim("windows differ in shape"));
            }
            data.extend_from_slice(w.as_slice());
        }
        let origins = (0..windows.len())
            .map(|i| WindowOrigin { source: 0, start: i })
            .collect();
        Self::new(h, d, data, labels, origins)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn origins(&self) -> &[WindowOrigin] {
        &self.origins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn window_slice(&self, i: usize) -> &[f64] {
        let n = self.horizon * self.features;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn window(&self, i: usize) -> Tensor2 {
        Tensor2::from_vec(self.horizon, self.features, self.window_slice(i).to_vec())
            .expect("window slice has horizon*features values")
    }

    /// Labels must lie in `[0, classes)`.
    pub fn check_labels(&self, classes: usize) -> Result<()> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(FddError::Label(format!("label {bad} outside [0, {classes})")));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let n = self.horizon * self.features;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.window_slice(i));
        }
        Self {
            horizon: self.horizon,
            features: self.features,
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
        }
    }

    /// Windows whose label satisfies `keep`.
    pub fn filter_labels(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.subset(&idx)
    }

    pub fn relabel(&mut self, map: impl Fn(usize) -> usize) {
        self.labels.iter_mut().for_each(|l| *l = map(*l));
    }

    pub fn append(&mut self, other: &WindowBatch) -> Result<()> {
        if self.is_empty() && self.data.is_empty() {
            self.horizon = other.horizon;
            self.features = other.features;
        }
        if other.is_empty() {
            return Ok(());
        }
        if (self.horizon, self.features) != (other.horizon, other.features) {
            return Err(FddError::dim(format!(
                "cannot append {}x{} windows to {}x{} batch",
                other.horizon, other.features, self.horizon, self.features
            )));
        }
        self.data.extend_from_slice(&other.data);
        self.labels.extend_from_slice(&other.labels);
        self.origins.extend_from_slice(&other.origins);
        Ok(())
    }

    /// Applies `f` to every value of every window, column index supplied.
    pub fn map_values(&mut self, f: impl Fn(usize, f64) -> f64) {
        let d = self.features;
        for (k, v) in self.data.iter_mut().enumerate() {
            *v = f(k % d, *v);
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        out.write_all(&(self.horizon as u64).to_le_bytes())?;
        out.write_all(&(self.features as u64).to_le_bytes())?;
        for (l, o) in self.labels.iter().zip(&self.origins) {
            out.write_all(&(*l as u32).to_le_bytes())?;
            out.write_all(&o.source.to_le_bytes())?;
            out.write_all(&(o.start as u64).to_le_bytes())?;
        }
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(FddError::Input("not a window archive".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != VERSION {
            return Err(FddError::Input("unsupported window archive version".into()));
        }
        let mut next_u64 = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n = next_u64(&mut input)? as usize;
        let horizon = next_u64(&mut input)? as usize;
        let features = next_u64(&mut input)? as usize;
        let mut labels = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut b4)?;
            labels.push(u32::from_le_bytes(b4) as usize);
            input.read_exact(&mut b4)?;
            let source = u32::from_le_bytes(b4);
            let start = next_u64(&mut input)? as usize;
            origins.push(WindowOrigin { source, start });
        }
        let mut data = vec![0.0; n * horizon * features];
        for v in data.iter_mut() {
            input.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Self::new(horizon, features, data, labels, origins)
    }
}
