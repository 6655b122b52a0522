use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor plus its Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<F: Real = f32> {
    pub name: String,
    pub value: Tensor<F>,
    pub(crate) first_moment: Tensor<F>,
    pub(crate) second_moment: Tensor<F>,
}

/// Ordered collection of named parameters. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Real = f32> {
    params: Vec<Parameter<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let zeros = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name,
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
        });
        ParamId(self.params.len() - 1)
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

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub(crate) fn param_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces every value from `other`, matching by name and shape.
    pub fn load_values_from(&mut self, other: &ParamStore<F>) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .find(&p.name)
                .ok_or_else(|| Error::Mismatch(format!("missing parameter {}", p.name)))?;
            let src = other.value(src);
            if src.shape() != p.value.shape() {
                return Err(Error::Mismatch(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    src.shape()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.add(p.name.clone(), p.value.cast());
        }
        out
    }
}

/// Gradients indexed by [`ParamId`]; absent entries are zero.
#[derive(Clone, Debug)]
pub struct Gradients<F: Real = f32> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Tensor<F>>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn accumulate(&mut self, other: &Gradients<F>) -> Result<()> {
        if other.grads.len() != self.grads.len() {
            return Err(Error::Shape("gradient sets cover different stores".into()));
        }
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => d.add_assign(s)?,
                (None, Some(s)) => *dst = Some(s.clone()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: F) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        for g in self.grads.iter().flatten() {
            g.check_finite("gradient")?;
        }
        Ok(())
    }
}
