use super::matrix::Matrix;
use crate::error::{Error, Result};
use indexmap::IndexMap;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub tensor: Matrix,
    pub trainable: bool,
}

/// Named parameter tensors in insertion order, each with a freeze flag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

/// Gradients keyed by parameter name, in store order.
pub type Grads = IndexMap<String, Matrix>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Matrix, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, Param { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|p| p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.params
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {name}")))
    }

    /// Marks exactly the listed names trainable and everything else frozen.
    pub fn set_trainable_set<S: AsRef<str>>(&mut self, names: &[S]) -> Result<()> {
        for n in names {
            if !self.contains(n.as_ref()) {
                return Err(Error::Argument(format!("unknown parameter {}", n.as_ref())));
            }
        }
        for (name, p) in self.params.iter_mut() {
            p.trainable = names.iter().any(|n| n.as_ref() == name);
        }
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.shift_remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.values().map(|p| p.tensor.len()).sum()
    }
}

/// `acc[name] += g`, inserting when absent.
pub(crate) fn accumulate(acc: &mut Grads, name: &str, g: Matrix) -> Result<()> {
    match acc.get_mut(name) {
        Some(existing) => existing.axpy(1.0, &g),
        None => {
            acc.insert(name.to_string(), g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut s = ParamStore::new();
        s.insert("b", Matrix::zeros(1, 2), true).unwrap();
        s.insert("a", Matrix::zeros(3, 1), false).unwrap();
        assert!(s.insert("a", Matrix::zeros(1, 1), true).is_err());
        assert_eq!(s.names().collect::<Vec<_>>(), ["b", "a"]);
        assert_eq!(s.trainable_count(), 2);
        assert_eq!(s.total_count(), 5);
    }

    #[test]
    fn trainable_set_replaces_flags() {
        let mut s = ParamStore::new();
        s.insert("a", Matrix::zeros(1, 1), true).unwrap();
        s.insert("b", Matrix::zeros(1, 1), false).unwrap();
        s.set_trainable_set(&["b"]).unwrap();
        assert_eq!(s.trainable_names(), vec!["b".to_string()]);
        assert!(s.set_trainable_set(&["zzz"]).is_err());
    }
}
