//! Named parameter trees.
//!
//! Every weight struct is generic over its leaf type: `Array2<F>` for stored
//! weights, [`Var`](super::Var) once bound into a graph, gradients or
//! optimizer moments for training. Leaves are visited in declaration order,
//! which fixes the parameter order of checkpoints and optimizers.

/// A tree of leaves of type `T` with dotted path names.
pub trait ParamTree<T> {
    type With<U>;

    fn map_with<U>(&self, path: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Self::With<U>;

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T));

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T));

    fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Self::With<U> {
        self.map_with("", &mut f)
    }

    /// `(path, leaf)` pairs in visiting order.
    fn leaves(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, leaf| out.push((name.to_string(), leaf)));
        out
    }

    fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _| n += 1);
        n
    }
}

pub(crate) fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

impl<T, S: ParamTree<T>> ParamTree<T> for Vec<S> {
    type With<U> = Vec<S::With<U>>;

    fn map_with<U>(&self, path: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Vec<S::With<U>> {
        self.iter()
            .enumerate()
            .map(|(i, s)| s.map_with(&join(path, &i.to_string()), f))
            .collect()
    }

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T)) {
        for (i, s) in self.iter().enumerate() {
            s.visit(&join(path, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T)) {
        for (i, s) in self.iter_mut().enumerate() {
            s.visit_mut(&join(path, &i.to_string()), f);
        }
    }
}

/// Declares a parameter struct generic over its leaf type. Fields marked
/// `leaf` hold a `T`; fields marked `tree` hold another [`ParamTree`].
macro_rules! param_tree {
    (
        $(#[$meta:meta])*
        pub struct $name:ident<T> {
            $( $(#[$fmeta:meta])* $field:ident : $fty:ty => $kind:ident ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            $( $(#[$fmeta])* pub $field: $fty ),*
        }

        impl<T> $crate::attention::ParamTree<T> for $name<T> {
            type With<U> = $name<U>;

            fn map_with<U>(&self, path: &str, f: &mut dyn FnMut(&str, &T) -> U) -> $name<U> {
                $name {
                    $( $field: param_tree!(@map $kind, self.$field, path, stringify!($field), f) ),*
                }
            }

            fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T)) {
                $( param_tree!(@visit $kind, self.$field, path, stringify!($field), f); )*
            }

            fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T)) {
                $( param_tree!(@visit_mut $kind, self.$field, path, stringify!($field), f); )*
            }
        }
    };
    (@map leaf, $v:expr, $path:expr, $name:expr, $f:expr) => {
        $f(&$crate::attention::params::join($path, $name), &$v)
    };
    (@map tree, $v:expr, $path:expr, $name:expr, $f:expr) => {
        $crate::attention::ParamTree::map_with(&$v, &$crate::attention::params::join($path, $name), $f)
    };
    (@visit leaf, $v:expr, $path:expr, $name:expr, $f:expr) => {
        $f(&$crate::attention::params::join($path, $name), &$v)
    };
    (@visit tree, $v:expr, $path:expr, $name:expr, $f:expr) => {
        $crate::attention::ParamTree::visit(&$v, &$crate::attention::params::join($path, $name), $f)
    };
    (@visit_mut leaf, $v:expr, $path:expr, $name:expr, $f:expr) => {
        $f(&$crate::attention::params::join($path, $name), &mut $v)
    };
    (@visit_mut tree, $v:expr, $path:expr, $name:expr, $f:expr) => {
        $crate::attention::ParamTree::visit_mut(&mut $v, &$crate::attention::params::join($path, $name), $f)
    };
}
pub(crate) use param_tree;

param_tree! {
    /// `y = x W + b` with `W: in x out`, `b: 1 x out`.
    pub struct Linear<T> {
        weight: T => leaf,
        bias: T => leaf,
    }
}

param_tree! {
    pub struct LayerNorm<T> {
        gamma: T => leaf,
        beta: T => leaf,
    }
}

param_tree! {
    pub struct AttentionWeights<T> {
        query: Linear<T> => tree,
        key: Linear<T> => tree,
        value: Linear<T> => tree,
        output: Linear<T> => tree,
    }
}

param_tree! {
    /// Pre-norm attention sub-layer followed by a pre-norm feed-forward one.
    pub struct BlockWeights<T> {
        norm1: LayerNorm<T> => tree,
        attn: AttentionWeights<T> => tree,
        norm2: LayerNorm<T> => tree,
        ff_in: Linear<T> => tree,
        ff_out: Linear<T> => tree,
    }
}
