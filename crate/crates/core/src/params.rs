//! Named dense parameter arrays shared by both model families.

use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    arrays: BTreeMap<String, ArrayD<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, array: ArrayD<f64>) {
        self.arrays.insert(name.into(), array);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.arrays.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<ArrayD<f64>> {
        self.arrays.remove(name)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.arrays.iter_mut()
    }

    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.arrays
            .iter()
            .map(|(k, v)| (k.clone(), v.shape().to_vec()))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    // Shape-checked accessors. Callers validate shapes once up front, so a
    // missing or mis-ranked array here is a programming error.

    pub(crate) fn mat(&self, name: &str) -> ArrayView2<'_, f64> {
        self.arrays[name]
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap_or_else(|_| panic!("`{name}` is not a matrix"))
    }

    pub(crate) fn vector(&self, name: &str) -> ArrayView1<'_, f64> {
        self.arrays[name]
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap_or_else(|_| panic!("`{name}` is not a vector"))
    }

    pub(crate) fn mat_mut(&mut self, name: &str) -> ArrayViewMut2<'_, f64> {
        self.arrays
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing `{name}`"))
            .view_mut()
            .into_dimensionality::<Ix2>()
            .unwrap_or_else(|_| panic!("`{name}` is not a matrix"))
    }

    pub(crate) fn vector_mut(&mut self, name: &str) -> ArrayViewMut1<'_, f64> {
        self.arrays
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing `{name}`"))
            .view_mut()
            .into_dimensionality::<Ix1>()
            .unwrap_or_else(|_| panic!("`{name}` is not a vector"))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(IxDyn(v.shape()))))
                .collect(),
        }
    }

    /// `self += alpha * other`, matched by name.
    pub fn scaled_add(&mut self, alpha: f64, other: &ParamSet) {
        for (name, a) in self.arrays.iter_mut() {
            if let Some(b) = other.arrays.get(name) {
                a.scaled_add(alpha, b);
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.arrays.values_mut() {
            a.mapv_inplace(|x| x * alpha);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.arrays
            .values()
            .flat_map(|a| a.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays
            .values()
            .all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// Rounds every value to the nearest `f32`, the precision checkpoints store.
    pub fn round_to_f32(&mut self) {
        for a in self.arrays.values_mut() {
            a.mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// Names whose shapes differ from `expected`, plus missing and unexpected names.
    pub fn shape_mismatches(&self, expected: &BTreeMap<String, Vec<usize>>) -> Vec<String> {
        let mut bad: Vec<String> = expected
            .iter()
            .filter(|(name, shape)| {
                self.arrays.get(*name).map(|a| a.shape()) != Some(shape.as_slice())
            })
            .map(|(name, _)| name.clone())
            .collect();
        bad.extend(
            self.arrays
                .keys()
                .filter(|k| !expected.contains_key(*k))
                .cloned(),
        );
        bad.sort();
        bad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatches_report_missing_extra_and_wrong_shapes() {
        let mut p = ParamSet::new();
        p.insert("a", ArrayD::zeros(IxDyn(&[2, 3])));
        p.insert("b", ArrayD::zeros(IxDyn(&[4])));
        p.insert("extra", ArrayD::zeros(IxDyn(&[1])));
        let expected = BTreeMap::from([
            ("a".to_string(), vec![2, 3]),
            ("b".to_string(), vec![5]),
            ("c".to_string(), vec![1]),
        ]);
        assert_eq!(p.shape_mismatches(&expected), ["b", "c", "extra"]);
    }

    #[test]
    fn scaled_add_by_name() {
        let mut p = ParamSet::new();
        p.insert("w", ArrayD::from_elem(IxDyn(&[2]), 1.0));
        let mut g = p.zeros_like();
        g.vector_mut("w")[1] = 2.0;
        p.scaled_add(-0.5, &g);
        assert_eq!(p.vector("w").to_vec(), vec![1.0, 0.0]);
    }
}
