//! Named parameter groups.
//!
//! Every trainable structure exposes its flat parameter arrays under stable
//! dotted names (`encoder.gru.w_z`, `head.b`, ...). Optimizers, gradient
//! checks and checkpoints all address parameters through these names.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

pub trait ParamGroups {
    /// Calls `f(name, shape, values)` for every parameter group, in a fixed order.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    /// Rounds every parameter to the nearest `f32`, so values survive a
    /// 32-bit serialization unchanged.
    fn round_to_f32(&mut self) {
        self.visit_mut("", &mut |_, _, v| {
            for x in v {
                *x = *x as f32 as f64;
            }
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

/// A copy of `params` with every entry set to zero, used as a gradient accumulator.
pub fn zeros_like<P: ParamGroups + Clone>(params: &P) -> P {
    let mut out = params.clone();
    out.visit_mut("", &mut |_, _, v| v.fill(0.0));
    out
}

/// Joins a prefix and a local name with a dot; an empty prefix yields the bare name.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        let mut s = String::with_capacity(prefix.len() + 1 + name.len());
        s.push_str(prefix);
        s.push('.');
        s.push_str(name);
        s
    }
}

/// Gradients keyed by parameter-group name. Frozen groups have no entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    groups: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, grad: Vec<f64>) {
        self.groups.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.groups.get(name).map(Vec::as_slice)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.groups.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Euclidean norm over all groups.
    pub fn norm(&self) -> f64 {
        crate::math::sqrt(
            self.groups
                .values()
                .flat_map(|g| g.iter())
                .map(|x| x * x)
                .sum(),
        )
    }

    /// Name of the first group holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, g)| g.iter().any(|x| !x.is_finite()))
            .map(|(k, _)| k.as_str())
    }

    /// Collects all groups of `source` whose name passes `keep`.
    pub fn collect<P: ParamGroups + ?Sized>(
        source: &P,
        prefix: &str,
        keep: &dyn Fn(&str) -> bool,
    ) -> Self {
        let mut out = Gradients::new();
        source.visit(prefix, &mut |name, _, values| {
            if keep(name) {
                out.insert(String::from(name), values.to_vec());
            }
        });
        out
    }
}
