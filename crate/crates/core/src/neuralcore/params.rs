//! Trainable parameters partitioned into feature extractor (f), label
//! predictor (y) and domain classifier (d), plus the update rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    #[serde(rename = "f")]
    Feature,
    #[serde(rename = "y")]
    Label,
    #[serde(rename = "d")]
    Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub partition: Partition,
    pub value: Tensor,
}

/// Named tensors, each in exactly one partition, plus the learning rate and
/// reversal coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    pub learning_rate: f64,
    pub lambda: f64,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new(0.05, 1.0)
    }
}

impl ParamSet {
    pub fn new(learning_rate: f64, lambda: f64) -> Self {
        Self {
            params: Vec::new(),
            learning_rate,
            lambda,
        }
    }

    pub fn add(&mut self, name: &str, partition: Partition, value: Tensor) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Param {
            name: name.to_string(),
            partition,
            value,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Glorot-uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: &str,
        partition: Partition,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, partition, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_in(&self, partition: Partition) -> usize {
        self.params
            .iter()
            .filter(|p| p.partition == partition)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads(
            self.params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        )
    }

    pub fn to_entries(&self) -> Vec<Param> {
        self.params.clone()
    }

    pub fn from_entries(params: Vec<Param>, learning_rate: f64, lambda: f64) -> Result<Self> {
        let mut set = Self::new(learning_rate, lambda);
        for p in params {
            p.value.ensure_finite(&p.name)?;
            set.add(&p.name, p.partition, p.value)?;
        }
        Ok(set)
    }

    /// True when every value matches `other` bit for bit.
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// One gradient tensor per parameter, aligned with `ParamSet` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Tensor>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.0[id.0]
    }

    pub fn norm_in(&self, params: &ParamSet, partitions: &[Partition]) -> f64 {
        self.0
            .iter()
            .zip(params.iter())
            .filter(|(_, p)| partitions.contains(&p.partition))
            .flat_map(|(g, _)| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales the gradients of `partitions` so their joint L2 norm is at
    /// most `max_norm`. Returns the norm before clipping.
    pub fn clip_norm(&mut self, params: &ParamSet, partitions: &[Partition], max_norm: f64) -> f64 {
        let norm = self.norm_in(params, partitions);
        if norm > max_norm {
            let scale = max_norm / norm;
            for (g, p) in self.0.iter_mut().zip(params.iter()) {
                if partitions.contains(&p.partition) {
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(Tensor::all_finite)
    }
}

fn check_shapes(params: &ParamSet, grads: &ParamGrads) -> Result<()> {
    if grads.0.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.0.len(),
            params.len()
        )));
    }
    for (g, p) in grads.0.iter().zip(params.iter()) {
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!(
                "gradient for `{}` has shape {:?}, parameter has {:?}",
                p.name,
                g.shape(),
                p.value.shape()
            )));
        }
    }
    Ok(())
}

/// Plain SGD: `θ ← θ − lr·g` for every parameter. With gradients taken from
/// a tape whose domain branch passes through a reversal layer, this realizes
/// the adversarial feature update.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamGrads, learning_rate: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.params.iter_mut().zip(&grads.0) {
        for (w, d) in p.value.data_mut().iter_mut().zip(g.data()) {
            *w -= learning_rate * d;
        }
    }
    Ok(())
}

/// Explicit adversarial update from separately computed label-loss and
/// domain-loss gradients (no reversal layer involved):
///
/// * feature: `θ_f ← θ_f − lr·(∂L_y/∂θ_f − λ·∂L_d/∂θ_f)`
/// * label:   `θ_y ← θ_y − lr·∂L_y/∂θ_y`
/// * domain:  `θ_d ← θ_d − lr·∂L_d/∂θ_d`
pub fn adversarial_update(
    params: &mut ParamSet,
    label_grads: &ParamGrads,
    domain_grads: &ParamGrads,
    learning_rate: f64,
    lambda: f64,
) -> Result<()> {
    check_shapes(params, label_grads)?;
    check_shapes(params, domain_grads)?;
    for ((p, gy), gd) in params
        .params
        .iter_mut()
        .zip(&label_grads.0)
        .zip(&domain_grads.0)
    {
        let partition = p.partition;
        for ((w, &dy), &dd) in p.value.data_mut().iter_mut().zip(gy.data()).zip(gd.data()) {
            let step = match partition {
                Partition::Feature => dy - lambda * dd,
                Partition::Label => dy,
                Partition::Domain => dd,
            };
            *w -= learning_rate * step;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(partition: Partition, v: f64) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new(0.1, 1.0);
        let id = ps.add("w", partition, Tensor::scalar(v)).unwrap();
        (ps, id)
    }

    fn g(v: f64) -> ParamGrads {
        ParamGrads(vec![Tensor::scalar(v)])
    }

    #[test]
    fn adversarial_update_substitution() {
        let (mut ps, id) = one(Partition::Feature, 1.0);
        adversarial_update(&mut ps, &g(0.2), &g(0.5), 0.1, 1.0).unwrap();
        assert!((ps.value(id).item() - 1.03).abs() < 1e-15);

        let (mut ps, id) = one(Partition::Feature, 1.0);
        adversarial_update(&mut ps, &g(0.2), &g(0.5), 0.1, 0.0).unwrap();
        assert!((ps.value(id).item() - 0.98).abs() < 1e-15);

        let (mut ps, id) = one(Partition::Feature, 1.0);
        adversarial_update(&mut ps, &g(0.0), &g(0.0), 0.1, 1.0).unwrap();
        assert_eq!(ps.value(id).item(), 1.0);
    }

    #[test]
    fn heads_use_their_own_loss() {
        let (mut ps, id) = one(Partition::Label, 1.0);
        adversarial_update(&mut ps, &g(0.2), &g(0.5), 0.1, 1.0).unwrap();
        assert!((ps.value(id).item() - 0.98).abs() < 1e-15);
        let (mut ps, id) = one(Partition::Domain, 1.0);
        adversarial_update(&mut ps, &g(0.2), &g(0.5), 0.1, 1.0).unwrap();
        assert!((ps.value(id).item() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_grads_identity_and_shape_errors() {
        let (mut ps, id) = one(Partition::Feature, 1.5);
        sgd_step(&mut ps, &g(0.0), 0.1).unwrap();
        assert_eq!(ps.value(id).item(), 1.5);
        let bad = ParamGrads(vec![Tensor::zeros(&[2])]);
        assert!(sgd_step(&mut ps, &bad, 0.1).is_err());
    }

    #[test]
    fn clipping() {
        let mut ps = ParamSet::new(0.1, 1.0);
        ps.add("a", Partition::Feature, Tensor::zeros(&[2])).unwrap();
        ps.add("b", Partition::Domain, Tensor::zeros(&[1])).unwrap();
        let mut grads = ParamGrads(vec![Tensor::vector(vec![3.0, 4.0]), Tensor::scalar(100.0)]);
        let before = grads.clip_norm(&ps, &[Partition::Feature, Partition::Label], 1.0);
        assert_eq!(before, 5.0);
        assert!((grads.0[0].data()[0] - 0.6).abs() < 1e-15);
        assert_eq!(grads.0[1].item(), 100.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::default();
        ps.add("x", Partition::Label, Tensor::scalar(0.0)).unwrap();
        assert!(ps.add("x", Partition::Domain, Tensor::scalar(0.0)).is_err());
    }
}
