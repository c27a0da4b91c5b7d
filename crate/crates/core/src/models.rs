//! Softmax classifiers: a ReLU MLP whose degenerate form (no hidden layer)
//! is multinomial logistic regression, with an optional EMA teacher.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Parameters, Tensor, Var};
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// U(±sqrt(6 / (fan_in + fan_out))) weights, zero biases.
    #[default]
    XavierUniform,
    /// As `XavierUniform`, but the output layer starts at zero.
    ZeroHead,
    Zero,
    /// U(±1/sqrt(fan_in)) for weights and biases alike.
    FanInUniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    /// Input width, hidden widths, number of classes.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default)]
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn mlp(widths: &[usize], seed: u64) -> Self {
        ClassifierSpec {
            widths: widths.to_vec(),
            init: InitScheme::XavierUniform,
            seed,
        }
    }

    pub fn logistic(d: usize, c: usize) -> Self {
        ClassifierSpec {
            widths: vec![d, c],
            init: InitScheme::Zero,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::config("a classifier needs at least input and output widths"));
        }
        if self.widths[0] == 0 {
            return Err(Error::config("input width must be at least 1"));
        }
        if *self.widths.last().unwrap_or(&0) < 2 {
            return Err(Error::config("output width (class count) must be at least 2"));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    spec: ClassifierSpec,
    params: Parameters,
    teacher: Option<Vec<Tensor>>,
}

const PREDICT_CHUNK: usize = 4096;

impl Classifier {
    pub fn new(spec: ClassifierSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(spec.seed, Purpose::Init, 0);
        let layers = spec.n_layers();
        let mut named = Vec::with_capacity(2 * layers);
        for k in 0..layers {
            let (fan_in, fan_out) = (spec.widths[k], spec.widths[k + 1]);
            let zero = match spec.init {
                InitScheme::Zero => true,
                InitScheme::ZeroHead => k + 1 == layers,
                InitScheme::XavierUniform | InitScheme::FanInUniform => false,
            };
            let limit = match spec.init {
                InitScheme::FanInUniform => 1.0 / (fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| if zero { 0.0 } else { rng.random_range(-limit..limit) })
                .collect();
            let b: Vec<f64> = (0..fan_out)
                .map(|_| match spec.init {
                    InitScheme::FanInUniform => rng.random_range(-limit..limit),
                    _ => 0.0,
                })
                .collect();
            named.push((format!("layer{k}.weight"), Tensor::matrix(fan_in, fan_out, w)?));
            named.push((format!("layer{k}.bias"), Tensor::vector(b)));
        }
        Ok(Classifier {
            spec,
            params: Parameters::new(named),
            teacher: None,
        })
    }

    /// Classifier with the given weights for a known architecture.
    pub fn from_values(spec: ClassifierSpec, values: Vec<Tensor>) -> Result<Self> {
        let mut c = Classifier::new(ClassifierSpec {
            init: InitScheme::Zero,
            ..spec.clone()
        })?;
        c.params.assign(values)?;
        c.spec = spec;
        Ok(c)
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes()
    }

    pub fn bind(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.params.bind(g)
    }

    pub fn bind_snapshot(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.params.bind_snapshot(g)
    }

    pub fn bind_teacher(&self, g: &mut Graph) -> Result<Vec<Var>> {
        let t = self
            .teacher
            .as_ref()
            .ok_or_else(|| Error::usage("the classifier has no teacher"))?;
        t.iter().map(|v| g.constant(v.clone())).collect()
    }

    /// n × C log-probabilities of `x` under the bound weights.
    pub fn log_probs(&self, g: &mut Graph, weights: &[Var], x: Var) -> Result<Var> {
        let xs = g.value(x).shape();
        if xs.len() != 2 || xs[1] != self.input_dim() {
            return Err(Error::usage(format!(
                "features of shape {xs:?} do not match input width {}",
                self.input_dim()
            )));
        }
        if weights.len() != 2 * self.spec.n_layers() {
            return Err(Error::usage("wrong number of bound weights"));
        }
        let mut h = x;
        let layers = self.spec.n_layers();
        for k in 0..layers {
            h = g.affine(h, weights[2 * k], weights[2 * k + 1])?;
            if k + 1 < layers {
                h = g.relu(h)?;
            }
        }
        g.log_softmax(h)
    }

    /// Detached log-probabilities from the live weights or the teacher.
    pub fn predict_log_probs(&self, features: &Tensor, use_teacher: bool) -> Result<Tensor> {
        if features.rank() != 2 || features.cols() != self.input_dim() {
            return Err(Error::usage(format!(
                "features of shape {:?} do not match input width {}",
                features.shape(),
                self.input_dim()
            )));
        }
        let n = features.rows();
        let c = self.n_classes();
        let mut out = Vec::with_capacity(n * c);
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut g = Graph::new();
            let w = if use_teacher {
                self.bind_teacher(&mut g)?
            } else {
                self.bind_frozen(&mut g)?
            };
            let x = g.constant(features.select_rows(&idx))?;
            let lp = self.log_probs(&mut g, &w, x)?;
            out.extend_from_slice(g.value(lp).data());
            start = end;
        }
        Tensor::new(vec![n, c], out)
    }

    /// Binds the live weights as constants.
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.params.values().iter().map(|t| g.constant(t.clone())).collect()
    }

    /// p(1|x) for a 1-D binary model evaluated on a grid.
    pub fn posterior_curve(&self, xs: &[f64], class: usize) -> Result<Vec<f64>> {
        let feats = Tensor::matrix(xs.len(), 1, xs.to_vec())?;
        let lp = self.predict_log_probs(&feats, false)?;
        let c = self.n_classes();
        Ok((0..xs.len()).map(|i| lp.data()[i * c + class].exp()).collect())
    }

    pub fn has_teacher(&self) -> bool {
        self.teacher.is_some()
    }

    pub fn teacher(&self) -> Option<&[Tensor]> {
        self.teacher.as_deref()
    }

    /// Starts a teacher as a copy of the current weights.
    pub fn enable_teacher(&mut self) {
        self.teacher = Some(self.params.values().to_vec());
    }

    /// teacher ← α·teacher + (1 − α)·weights
    pub fn ema_update(&mut self, alpha: f64) -> Result<()> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::config(format!("EMA decay must lie in [0, 1), got {alpha}")));
        }
        let t = self
            .teacher
            .as_mut()
            .ok_or_else(|| Error::usage("ema_update without a teacher"))?;
        for (tv, pv) in t.iter_mut().zip(self.params.values()) {
            for (a, &b) in tv.data_mut().iter_mut().zip(pv.data()) {
                *a = alpha * *a + (1.0 - alpha) * b;
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        save_arrays(dir, stem, &self.spec, self.params.names(), self.params.values())
    }

    pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<Self> {
        let (spec, values) = load_arrays(dir, stem)?;
        Classifier::from_values(spec, values)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the binary file.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: ClassifierSpec,
    dtype: String,
    arrays: Vec<ArrayEntry>,
}

/// Writes `<stem>.bin` (little-endian f64) and `<stem>.json` (shapes).
pub fn save_arrays(
    dir: &Path,
    stem: &str,
    spec: &ClassifierSpec,
    names: &[String],
    values: &[Tensor],
) -> Result<(PathBuf, PathBuf)> {
    let mut bytes = Vec::new();
    let mut arrays = Vec::new();
    for (name, t) in names.iter().zip(values) {
        arrays.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: bytes.len(),
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    crate::report::write_atomic(&bin, &bytes)?;
    crate::report::write_json(
        &json,
        &Manifest {
            spec: spec.clone(),
            dtype: "f64-le".into(),
            arrays,
        },
    )?;
    Ok((bin, json))
}

fn load_arrays(dir: &Path, stem: &str) -> Result<(ClassifierSpec, Vec<Tensor>)> {
    let json = dir.join(format!("{stem}.json"));
    let bin = dir.join(format!("{stem}.bin"));
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut values = Vec::with_capacity(manifest.arrays.len());
    for a in &manifest.arrays {
        let n: usize = a.shape.iter().product();
        let end = a.offset + 8 * n;
        if end > bytes.len() {
            return Err(Error::usage(format!("checkpoint array {} runs past the file end", a.name)));
        }
        let data = bytes[a.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        values.push(Tensor::new(a.shape.clone(), data)?);
    }
    Ok((manifest.spec, values))
}
