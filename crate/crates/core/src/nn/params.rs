use ndarray::{Array1, Array2};

/// Read-only view of one named parameter array.
pub struct ParamView<'a> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub data: &'a [f64],
}

/// Uniform access to every trainable array of a model, in a fixed order.
///
/// Gradients are stored in a value of the same type, so optimizers and the
/// finite-difference checker can walk parameters and gradients in lockstep.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    /// A copy with every entry set to zero, shaped like `self`.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, d| d.fill(0.0));
        z
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut("", &mut |_, d| d.iter_mut().for_each(|x| *x *= factor));
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |p| n += p.data.len());
        n
    }

    /// Parameter slices in visiting order.
    fn flatten(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        self.visit("", &mut |p| out.push(p.data.to_vec()));
        out
    }

    /// Adds `other` entry-wise; `other` must share the layout.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.flatten();
        let mut i = 0;
        self.visit_mut("", &mut |_, d| {
            d.iter_mut().zip(&src[i]).for_each(|(a, b)| *a += b);
            i += 1;
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Params for Array2<f64> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        f(ParamView {
            name: prefix,
            shape: self.shape(),
            data: self.as_slice().expect("standard layout"),
        })
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(prefix, self.as_slice_mut().expect("standard layout"))
    }
}

impl Params for Array1<f64> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        f(ParamView {
            name: prefix,
            shape: self.shape(),
            data: self.as_slice().expect("standard layout"),
        })
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(prefix, self.as_slice_mut().expect("standard layout"))
    }
}

impl<P: Params> Params for Option<P> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamView<'_>)) {
        if let Some(p) = self {
            p.visit(prefix, f)
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        if let Some(p) = self {
            p.visit_mut(prefix, f)
        }
    }
}
