//! Named parameter traversal shared by every trainable component.
//!
//! A module exposes its tensors under stable dotted names. Tensors created
//! with [`Tensor::requires_grad`] are trainable parameters; untracked
//! tensors are buffers (permutations, sign vectors, init flags) that are
//! persisted in checkpoints but never updated by the optimizer.

use crate::tensor::Tensor;

pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Module for Tensor {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(prefix, self)
    }
}

impl<T: Module> Module for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: Module + ?Sized> Module for Box<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        (**self).visit(prefix, f)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        (**self).visit_mut(prefix, f)
    }
}

impl<T: Module> Module for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(m) = self {
            m.visit(prefix, f)
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(m) = self {
            m.visit_mut(prefix, f)
        }
    }
}

/// Implements [`Module`] by visiting the listed fields under their own names.
#[macro_export]
macro_rules! impl_module {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::module::Module for $ty {
            #[allow(unused_variables)]
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &$crate::Tensor)) {
                $( $crate::module::Module::visit(&self.$field, &$crate::module::join(prefix, stringify!($field)), f); )*
            }

            #[allow(unused_variables)]
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut $crate::Tensor)) {
                $( $crate::module::Module::visit_mut(&mut self.$field, &$crate::module::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}

/// Every stored tensor, trainable or not, in traversal order.
pub fn named_tensors(m: &dyn Module) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

pub fn trainable_parameters(m: &dyn Module) -> Vec<(String, Tensor)> {
    named_tensors(m)
        .into_iter()
        .filter(|(_, t)| t.is_tracked())
        .collect()
}

pub fn parameter_count(m: &dyn Module) -> usize {
    trainable_parameters(m).iter().map(|(_, t)| t.numel()).sum()
}

/// Order-sensitive FNV-1a digest over names, shapes and bit patterns.
pub fn checksum(m: &dyn Module) -> u64 {
    checksum_prefix(m, "")
}

/// [`checksum`] restricted to tensors whose names start with `prefix`.
pub fn checksum_prefix(m: &dyn Module, prefix: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    m.visit("", &mut |name, t| {
        if !name.starts_with(prefix) {
            return;
        }
        eat(name.as_bytes());
        for &d in t.shape() {
            eat(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    });
    h
}
