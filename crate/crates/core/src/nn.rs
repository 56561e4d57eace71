//! Parameter storage, initialization, the Adam optimizer and a small binary
//! tensor format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand_distr::{Distribution, Normal};

use crate::autograd::Var;
use crate::rng::Rng;
use crate::{Error, Result};

/// Named trainable tensors in a fixed order.
#[derive(Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> usize {
        self.names.push(name.into());
        self.vars.push(Var::param(value));
        self.vars.len() - 1
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn var(&self, i: usize) -> &Var {
        &self.vars[i]
    }

    pub fn vars(&self) -> Vec<&Var> {
        self.vars.iter().collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> Vec<&ArrayD<f64>> {
        self.vars.iter().map(Var::value).collect()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.vars.iter().map(|v| v.value().len()).sum()
    }

    /// Replaces every tensor, keeping names and shapes.
    pub fn set_values(&mut self, values: Vec<ArrayD<f64>>) -> Result<()> {
        if values.len() != self.vars.len() {
            return Err(Error::Incompatible(format!(
                "expected {} tensors, got {}",
                self.vars.len(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.shape() != self.vars[i].shape() {
                return Err(Error::Incompatible(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    self.names[i],
                    v.shape(),
                    self.vars[i].shape()
                )));
            }
        }
        self.vars = values.into_iter().map(Var::param).collect();
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(&str, &ArrayD<f64>)> =
            self.names.iter().map(String::as_str).zip(self.values()).collect();
        write_tensors(path, &entries)
    }

    /// Loads tensors written by [`ParamSet::save`]; names and shapes must
    /// match this set exactly.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let loaded = read_tensors(path)?;
        if loaded.len() != self.names.len() {
            return Err(Error::Incompatible(format!(
                "{} holds {} tensors, the model has {}",
                path.display(),
                loaded.len(),
                self.names.len()
            )));
        }
        let mut values = Vec::with_capacity(loaded.len());
        for ((name, value), expected) in loaded.into_iter().zip(&self.names) {
            if &name != expected {
                return Err(Error::Incompatible(format!(
                    "{}: found tensor {name}, expected {expected}",
                    path.display()
                )));
            }
            values.push(value);
        }
        self.set_values(values)
    }
}

/// Normal weights with standard deviation `gain / sqrt(fan_in)`, where the
/// fan-in is the product of all but the last axis.
pub fn kaiming_normal(shape: &[usize], gain: f64, rng: &mut Rng) -> ArrayD<f64> {
    let fan_in: usize = shape[..shape.len() - 1].iter().product();
    let std = gain / (fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || normal.sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.values().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|a| a.fill(0.0));
        self.v.iter_mut().for_each(|a| a.fill(0.0));
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Var]) -> Result<()> {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let mut next = Vec::with_capacity(params.len());
        for (i, g) in grads.iter().enumerate() {
            let g = g.value();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            });
            let mut p = params.var(i).value().clone();
            ndarray::Zip::from(&mut p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= c.lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
            });
            next.push(p);
        }
        params.set_values(next)
    }

    pub fn save(&self, path: &Path, names: &[String]) -> Result<()> {
        let step = ArrayD::from_elem(IxDyn(&[]), self.step as f64);
        let m_names: Vec<String> = names.iter().map(|n| format!("m.{n}")).collect();
        let v_names: Vec<String> = names.iter().map(|n| format!("v.{n}")).collect();
        let mut entries: Vec<(&str, &ArrayD<f64>)> = vec![("step", &step)];
        entries.extend(m_names.iter().map(String::as_str).zip(self.m.iter()));
        entries.extend(v_names.iter().map(String::as_str).zip(self.v.iter()));
        write_tensors(path, &entries)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let loaded = read_tensors(path)?;
        let n = self.m.len();
        if loaded.len() != 1 + 2 * n || loaded[0].0 != "step" {
            return Err(Error::Incompatible(format!(
                "{} does not hold optimizer state for {n} tensors",
                path.display()
            )));
        }
        let mut it = loaded.into_iter();
        let step = it.next().unwrap().1;
        let rest: Vec<ArrayD<f64>> = it.map(|(_, a)| a).collect();
        for (i, a) in rest.iter().enumerate() {
            if a.shape() != self.m[i % n].shape() {
                return Err(Error::Incompatible(format!(
                    "optimizer tensor {i} in {} has the wrong shape",
                    path.display()
                )));
            }
        }
        self.step = step.iter().next().copied().unwrap_or(0.0) as u64;
        let (m, v) = rest.split_at(n);
        self.m = m.to_vec();
        self.v = v.to_vec();
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"INNTENS1";

/// Writes named tensors as little-endian binary: a magic tag, the tensor
/// count, then per tensor its name, rank, dimensions and `f64` data.
pub fn write_tensors(path: &Path, tensors: &[(&str, &ArrayD<f64>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        put(&(name.len() as u64).to_le_bytes())?;
        put(name.as_bytes())?;
        put(&(t.ndim() as u64).to_le_bytes())?;
        for &d in t.shape() {
            put(&(d as u64).to_le_bytes())?;
        }
        for &x in t.iter() {
            put(&x.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::format(path, reason);
    let read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| bad("truncated tensor file"))?;
        Ok(u64::from_le_bytes(b))
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated tensor file"))?;
    if &magic != MAGIC {
        return Err(bad("not a tensor file"));
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u64(&mut r)? as usize;
        if len > 4096 {
            return Err(bad("tensor name too long"));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| bad("truncated tensor file"))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let ndim = read_u64(&mut r)? as usize;
        if ndim > 8 {
            return Err(bad("tensor rank too large"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(|_| bad("truncated tensor data"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap()));
    }
    Ok(out)
}
