//! Attentive relevance scoring head.
//!
//! ```text
//! h_q = W_q q        h_p = W_p p
//! z   = h_q ⊙ h_p    a   = tanh(z)
//! s   = w_aᵀ a       r   = σ(s)
//! ```
//!
//! The backward pass is derived by hand; see [`ars_backward`] for the chain.

use rayon::prelude::*;

use crate::encoder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::numerics::{
    dot_slices, matvec_into, sigmoid, tanh, transpose_matvec_into, Matrix, Rng, Vector,
};

/// Trainable parameters of the head: `W_q, W_p ∈ R^{h×d}`, `w_a ∈ R^h`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArsParameters {
    pub w_q: Matrix,
    pub w_p: Matrix,
    pub w_a: Vector,
}

impl ArsParameters {
    pub fn new(w_q: Matrix, w_p: Matrix, w_a: Vector) -> Result<Self> {
        if w_q.shape() != w_p.shape() {
            return Err(Error::Config(format!(
                "W_q {:?} and W_p {:?} differ in shape",
                w_q.shape(),
                w_p.shape()
            )));
        }
        if w_a.len() != w_q.rows() {
            return Err(Error::dims(w_q.rows(), w_a.len()));
        }
        if w_q.cols() < 2 {
            return Err(Error::Config("embedding dim must be at least 2".into()));
        }
        Ok(ArsParameters { w_q, w_p, w_a })
    }

    /// `W_q, W_p ~ U[-1/√d, 1/√d]`, `w_a ~ U[-1/√h, 1/√h]`, drawn in that order.
    pub fn init(d: usize, h: usize, rng: &mut Rng) -> Result<Self> {
        if d < 2 || h < 1 {
            return Err(Error::Config(format!("invalid head dims d={d}, h={h}")));
        }
        let bd = 1.0 / (d as f64).sqrt();
        let bh = 1.0 / (h as f64).sqrt();
        let w_q = Matrix::uniform(h, d, bd, rng);
        let w_p = Matrix::uniform(h, d, bd, rng);
        let w_a = Vector::from_raw((0..h).map(|_| rng.uniform(-bh, bh)).collect());
        ArsParameters::new(w_q, w_p, w_a)
    }

    pub fn embed_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn param_count(&self) -> usize {
        2 * self.hidden_dim() * self.embed_dim() + self.hidden_dim()
    }

    /// `W_q q`, reusable across many passages.
    pub fn project_query(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.project(&self.w_q, q)
    }

    /// `W_p p`; depends only on the passage, so it can be cached per index.
    pub fn project_passage(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.project(&self.w_p, p)
    }

    fn project(&self, w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.embed_dim() {
            return Err(Error::dims(self.embed_dim(), x.len()));
        }
        let mut out = vec![0.0; self.hidden_dim()];
        matvec_into(w, x, &mut out);
        Ok(out)
    }

    /// `s = w_aᵀ tanh(h_q ⊙ h_p)` on pre-projected inputs.
    #[inline]
    pub fn logit_projected(&self, h_q: &[f64], h_p: &[f64]) -> f64 {
        let mut out = [0.0];
        logits_rows_generic(self.w_a.as_slice(), h_q, h_p, &mut out);
        out[0]
    }

    /// Logits of one projected query against row-major projected passages,
    /// `h` values per row. Every row gives the same bits as
    /// [`logit_projected`](Self::logit_projected), whichever CPU path runs.
    pub fn logits_projected_rows(
        &self,
        h_q: &[f64],
        h_p_rows: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let h = self.hidden_dim();
        if h_q.len() != h {
            return Err(Error::dims(h, h_q.len()));
        }
        if h_p_rows.len() != h * out.len() {
            return Err(Error::dims(h * out.len(), h_p_rows.len()));
        }
        logits_rows(self.w_a.as_slice(), h_q, h_p_rows, out);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArsForwardTrace {
    pub h_q: Vec<f64>,
    pub h_p: Vec<f64>,
    /// `h_q ⊙ h_p` before the tanh.
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub s: f64,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArsGradients {
    pub d_w_q: Matrix,
    pub d_w_p: Matrix,
    pub d_w_a: Vec<f64>,
    pub d_q: Vec<f64>,
    pub d_p: Vec<f64>,
}

impl ArsGradients {
    pub fn zeros(d: usize, h: usize) -> Self {
        ArsGradients {
            d_w_q: Matrix::zeros(h, d),
            d_w_p: Matrix::zeros(h, d),
            d_w_a: vec![0.0; h],
            d_q: vec![0.0; d],
            d_p: vec![0.0; d],
        }
    }
}

/// Which quantity the upstream gradient is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Upstream {
    /// `dL/dr`
    Relevance(f64),
    /// `dL/ds`
    Logit(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArsScore {
    pub s: f64,
    pub r: f64,
}

// The same loop compiled for wider vector units. No fused multiply-add is
// enabled, so all variants round identically.
fn logits_rows(w_a: &[f64], h_q: &[f64], rows: &[f64], out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { logits_rows_avx512(w_a, h_q, rows, out) };
        }
        if is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { logits_rows_avx2(w_a, h_q, rows, out) };
        }
    }
    logits_rows_generic(w_a, h_q, rows, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn logits_rows_avx512(w_a: &[f64], h_q: &[f64], rows: &[f64], out: &mut [f64]) {
    logits_rows_generic(w_a, h_q, rows, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn logits_rows_avx2(w_a: &[f64], h_q: &[f64], rows: &[f64], out: &mut [f64]) {
    logits_rows_generic(w_a, h_q, rows, out)
}

#[inline(always)]
fn logits_rows_generic(w_a: &[f64], h_q: &[f64], rows: &[f64], out: &mut [f64]) {
    let h = w_a.len();
    let mut a = vec![0.0; h];
    for (row, o) in rows.chunks_exact(h).zip(out.iter_mut()) {
        for ((ak, x), y) in a.iter_mut().zip(h_q).zip(row) {
            *ak = tanh(x * y);
        }
        let mut s = 0.0;
        for (w, ak) in w_a.iter().zip(&a) {
            s += w * ak;
        }
        *o = s;
    }
}

pub(crate) fn forward_slices(
    q: &[f64],
    p: &[f64],
    params: &ArsParameters,
) -> Result<ArsForwardTrace> {
    let h_q = params.project_query(q)?;
    let h_p = params.project_passage(p)?;
    let z: Vec<f64> = h_q.iter().zip(&h_p).map(|(x, y)| x * y).collect();
    let a: Vec<f64> = z.iter().map(|&v| tanh(v)).collect();
    let s = dot_slices(params.w_a.as_slice(), &a);
    let r = sigmoid(s);
    Ok(ArsForwardTrace {
        h_q,
        h_p,
        z,
        a,
        s,
        r,
    })
}

pub fn ars_forward(
    q: &EmbeddingVector,
    p: &EmbeddingVector,
    params: &ArsParameters,
) -> Result<ArsForwardTrace> {
    forward_slices(q.as_slice(), p.as_slice(), params)
}

pub(crate) fn backward_slices(
    trace: &ArsForwardTrace,
    q: &[f64],
    p: &[f64],
    params: &ArsParameters,
    upstream: Upstream,
) -> Result<ArsGradients> {
    let (d, h) = (params.embed_dim(), params.hidden_dim());
    if q.len() != d {
        return Err(Error::dims(d, q.len()));
    }
    if p.len() != d {
        return Err(Error::dims(d, p.len()));
    }
    if trace.a.len() != h {
        return Err(Error::dims(h, trace.a.len()));
    }
    let ds = match upstream {
        Upstream::Logit(g) => g,
        Upstream::Relevance(g) => g * trace.r * (1.0 - trace.r),
    };
    if !ds.is_finite() {
        return Err(Error::NonFiniteGradient {
            group: "upstream".into(),
        });
    }
    let mut grads = ArsGradients::zeros(d, h);
    if ds == 0.0 {
        return Ok(grads);
    }
    let w_a = params.w_a.as_slice();
    // ds/dw_a = a;  ds/dz = w_a ⊙ (1 - a²)
    let mut dh_q = vec![0.0; h];
    let mut dh_p = vec![0.0; h];
    for k in 0..h {
        grads.d_w_a[k] = ds * trace.a[k];
        let dz = ds * w_a[k] * (1.0 - trace.a[k] * trace.a[k]);
        dh_q[k] = dz * trace.h_p[k];
        dh_p[k] = dz * trace.h_q[k];
    }
    grads.d_w_q.add_outer(&dh_q, q);
    grads.d_w_p.add_outer(&dh_p, p);
    transpose_matvec_into(&params.w_q, &dh_q, &mut grads.d_q);
    transpose_matvec_into(&params.w_p, &dh_p, &mut grads.d_p);

    let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
    for (name, ok) in [
        ("W_q", finite(grads.d_w_q.as_slice())),
        ("W_p", finite(grads.d_w_p.as_slice())),
        ("w_a", finite(&grads.d_w_a)),
        ("q", finite(&grads.d_q)),
        ("p", finite(&grads.d_p)),
    ] {
        if !ok {
            return Err(Error::NonFiniteGradient { group: name.into() });
        }
    }
    Ok(grads)
}

/// Gradients of the upstream loss through one forward trace.
pub fn ars_backward(
    trace: &ArsForwardTrace,
    q: &EmbeddingVector,
    p: &EmbeddingVector,
    params: &ArsParameters,
    upstream: Upstream,
) -> Result<ArsGradients> {
    backward_slices(trace, q.as_slice(), p.as_slice(), params, upstream)
}

/// Scores one query against many passages, projecting the query once.
pub fn ars_score_many(
    q: &EmbeddingVector,
    passages: &[EmbeddingVector],
    params: &ArsParameters,
) -> Result<Vec<ArsScore>> {
    let h_q = params.project_query(q.as_slice())?;
    passages
        .par_iter()
        .map(|p| {
            let h_p = params.project_passage(p.as_slice())?;
            let s = params.logit_projected(&h_q, &h_p);
            Ok(ArsScore { s, r: sigmoid(s) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_normalize;

    fn emb(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::from_unit(Vector::new(xs.to_vec()).unwrap())
    }

    fn random_unit(d: usize, rng: &mut Rng) -> EmbeddingVector {
        let raw = Vector::new((0..d).map(|_| rng.normal()).collect()).unwrap();
        EmbeddingVector::from_unit(l2_normalize(&raw).unwrap())
    }

    #[test]
    fn worked_example() {
        let params = ArsParameters::new(
            Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap(),
            Vector::new(vec![2.0]).unwrap(),
        )
        .unwrap();
        let t = ars_forward(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0]), &params).unwrap();
        assert_eq!(t.z, vec![1.0]);
        assert!((t.a[0] - 0.761594).abs() < 1e-6);
        assert!((t.s - 1.523188).abs() < 1e-6);
        // σ(2·tanh 1) = 0.82100750 (independent scalar evaluation)
        assert!((t.r - 0.8210075).abs() < 1e-5);
        assert_eq!(t.r, sigmoid(t.s));
    }

    #[test]
    fn zero_attention_and_annihilation() {
        let mut rng = Rng::new(5);
        let mut params = ArsParameters::init(6, 3, &mut rng).unwrap();
        let (q, p) = (random_unit(6, &mut rng), random_unit(6, &mut rng));
        let zero_a = ArsParameters {
            w_a: Vector::zeros(3),
            ..params.clone()
        };
        let t = ars_forward(&q, &p, &zero_a).unwrap();
        assert_eq!((t.s, t.r), (0.0, 0.5));

        params.w_p = Matrix::zeros(3, 6);
        let t = ars_forward(&q, &p, &params).unwrap();
        assert!(t.z.iter().chain(&t.a).all(|&x| x == 0.0));
        assert_eq!((t.s, t.r), (0.0, 0.5));
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = Rng::new(5);
        let params = ArsParameters::init(4, 2, &mut rng).unwrap();
        let q = random_unit(4, &mut rng);
        let p = random_unit(3, &mut rng);
        assert!(matches!(
            ars_forward(&q, &p, &params),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ars_score_many(&q, &[p], &params).is_err());
    }

    #[test]
    fn backward_trivial_cases() {
        let mut rng = Rng::new(11);
        let params = ArsParameters::init(5, 3, &mut rng).unwrap();
        let (q, p) = (random_unit(5, &mut rng), random_unit(5, &mut rng));
        let t = ars_forward(&q, &p, &params).unwrap();
        let g = ars_backward(&t, &q, &p, &params, Upstream::Relevance(0.0)).unwrap();
        assert_eq!(g, ArsGradients::zeros(5, 3));

        let zero_a = ArsParameters {
            w_a: Vector::zeros(3),
            ..params
        };
        let t = ars_forward(&q, &p, &zero_a).unwrap();
        let g = ars_backward(&t, &q, &p, &zero_a, Upstream::Logit(1.0)).unwrap();
        assert_eq!(g.d_w_a, t.a);
        assert!(g.d_w_q.as_slice().iter().all(|&x| x == 0.0));
        assert!(g.d_w_p.as_slice().iter().all(|&x| x == 0.0));
        assert!(g.d_q.iter().chain(&g.d_p).all(|&x| x == 0.0));
    }

    #[test]
    fn backward_rejects_non_finite_upstream() {
        let mut rng = Rng::new(2);
        let params = ArsParameters::init(4, 2, &mut rng).unwrap();
        let (q, p) = (random_unit(4, &mut rng), random_unit(4, &mut rng));
        let t = ars_forward(&q, &p, &params).unwrap();
        assert!(matches!(
            ars_backward(&t, &q, &p, &params, Upstream::Logit(f64::NAN)),
            Err(Error::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn init_contract() {
        let a = ArsParameters::init(64, 32, &mut Rng::new(1)).unwrap();
        let b = ArsParameters::init(64, 32, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.w_q.shape(), (32, 64));
        assert_eq!(a.w_p.shape(), (32, 64));
        assert_eq!(a.w_a.len(), 32);
        let bound = 1.0 / 8.0;
        assert!(a.w_q.as_slice().iter().all(|x| x.abs() <= bound));
        assert!(a
            .w_a
            .as_slice()
            .iter()
            .all(|x| x.abs() <= 1.0 / 32f64.sqrt()));
    }

    #[test]
    fn init_entries_have_zero_mean() {
        // U[-b, b] has std b/√3; the sample mean of n draws has std error b/√(3n).
        let d = 100;
        let h = 500;
        let params = ArsParameters::init(d, h, &mut Rng::new(77)).unwrap();
        let xs = params.w_q.as_slice();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = (1.0 / (d as f64).sqrt()) / (3.0 * n).sqrt();
        assert!(n >= 1e4);
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn score_many_matches_pairwise_loop() {
        let mut rng = Rng::new(21);
        let params = ArsParameters::init(16, 8, &mut rng).unwrap();
        let q = random_unit(16, &mut rng);
        let passages: Vec<_> = (0..1000).map(|_| random_unit(16, &mut rng)).collect();
        let many = ars_score_many(&q, &passages, &params).unwrap();
        assert_eq!(many.len(), 1000);
        for (p, sc) in passages.iter().zip(&many) {
            let t = ars_forward(&q, p, &params).unwrap();
            assert!((t.s - sc.s).abs() <= 1e-12);
            assert!((t.r - sc.r).abs() <= 1e-12);
        }
        let same = ars_score_many(&q, &vec![passages[0].clone(); 4], &params).unwrap();
        assert!(same.windows(2).all(|w| w[0] == w[1]));
    }
}
