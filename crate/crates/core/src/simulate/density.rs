//! Density estimators for F + alpha.

use crate::chaos::{ChaosVector, CompiledChaos, EvalScratch};
use crate::error::{Error, Result};
use crate::jet::{JetProgram, JetSpace};
use crate::simulate::mc::{run, McConfig, McEstimate};

/// Gradient norms below this are treated as degenerate and the draw is rejected.
pub const MIN_GRAD_NORM_SQ: f64 = 1e-12;

/// Pointwise evaluator of the iterated Skorohod weights G_1, ..., G_{k+1}.
///
/// G_0 = 1 and G_{s+1} = delta(G_s DF / ||DF||^2), so that
/// p^(k)(x) = (-1)^k E[1{F > x} G_{k+1}].
pub struct MalliavinSampler {
    compiled: CompiledChaos,
    k: usize,
    jets: Option<(JetSpace, JetProgram)>,
}

pub struct SamplerState {
    pub z: Vec<f64>,
    scratch: EvalScratch,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl MalliavinSampler {
    pub const MAX_K: usize = 2;

    pub fn new(f: &ChaosVector, k: usize) -> Result<Self> {
        if k > Self::MAX_K {
            return Err(Error::invalid(format!("derivative order {k} exceeds the supported maximum {}", Self::MAX_K)));
        }
        if f.max_chaos_order() == 0 {
            return Err(Error::domain("a constant has no density"));
        }
        let compiled = f.compile();
        let jets = (k > 0).then(|| {
            let space = JetSpace::new(f.dim(), k + 2);
            let prog = JetProgram::new(&compiled, &space);
            (space, prog)
        });
        Ok(MalliavinSampler { compiled, k, jets })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn state(&self) -> SamplerState {
        let d = self.compiled.dim();
        SamplerState { z: vec![0.0; d], scratch: EvalScratch::default(), grad: vec![0.0; d], hess: vec![0.0; d * d] }
    }

    /// (F(z), G_{k+1}(z)) at st.z, or None when ||DF||^2 is degenerate.
    pub fn weight(&self, st: &mut SamplerState) -> Option<(f64, f64)> {
        match &self.jets {
            None => self.first_weight(st),
            Some((space, prog)) => {
                let d = space.dim();
                let fj = prog.eval_with(space, &st.z, &mut st.scratch);
                let grads: Vec<_> = (0..d).map(|j| space.deriv(&fj, j)).collect();
                let mut w = space.mul(&grads[0], &grads[0]);
                for g in &grads[1..] {
                    w = space.axpy(&w, 1.0, &space.mul(g, g));
                }
                if !(w.value() >= MIN_GRAD_NORM_SQ) {
                    return None;
                }
                let r = space.recip(&w);
                let u: Vec<_> = grads.iter().map(|g| space.mul(g, &r)).collect();
                let mut g = space.constant(1.0, self.k + 1);
                for _ in 0..=self.k {
                    let mut next: Option<crate::jet::Jet> = None;
                    for (j, uj) in u.iter().enumerate() {
                        let gu = space.mul(&g, uj);
                        let term = space.axpy(&space.mul_coordinate(&gu, j, st.z[j]), -1.0, &space.deriv(&gu, j));
                        next = Some(match next {
                            None => term,
                            Some(acc) => space.axpy(&acc, 1.0, &term),
                        });
                    }
                    g = next.expect("dimension is positive");
                }
                Some((fj.value(), g.value()))
            }
        }
    }

    fn first_weight(&self, st: &mut SamplerState) -> Option<(f64, f64)> {
        let d = st.z.len();
        let v = self.compiled.value_grad_hess(&st.z, &mut st.scratch, &mut st.grad, &mut st.hess);
        let w: f64 = st.grad.iter().map(|g| g * g).sum();
        if !(w >= MIN_GRAD_NORM_SQ) {
            return None;
        }
        let mut gz = 0.0;
        let mut lap = 0.0;
        let mut ghg = 0.0;
        for i in 0..d {
            gz += st.grad[i] * st.z[i];
            lap += st.hess[i * d + i];
            let row: f64 = (0..d).map(|j| st.hess[i * d + j] * st.grad[j]).sum();
            ghg += st.grad[i] * row;
        }
        Some((v, (gz - lap) / w + 2.0 * ghg / (w * w)))
    }
}

/// Estimates p^(k)(x) for F + alpha at each x by the Malliavin weight representation.
pub fn density_malliavin(f: &ChaosVector, alpha: f64, k: usize, xs: &[f64], cfg: &McConfig) -> Result<Vec<McEstimate>> {
    let sampler = MalliavinSampler::new(f, k)?;
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    run(cfg, xs.len(), || sampler.state(), |st, s, out| {
        s.normals(&mut st.z);
        match sampler.weight(st) {
            None => false,
            Some((v, g)) => {
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = if v + alpha > x { sign * g } else { 0.0 };
                }
                true
            }
        }
    })
}

/// Gaussian kernel density estimate of F + alpha with bandwidth h.
pub fn density_kde(f: &ChaosVector, alpha: f64, xs: &[f64], h: f64, cfg: &McConfig) -> Result<Vec<McEstimate>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    let compiled = f.compile();
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    run(
        cfg,
        xs.len(),
        || (vec![0.0; compiled.dim()], EvalScratch::default()),
        |(z, scratch), s, out| {
            s.normals(z);
            let v = compiled.value(z, scratch) + alpha;
            for (o, &x) in out.iter_mut().zip(xs) {
                let u = (v - x) / h;
                *o = norm * (-0.5 * u * u).exp();
            }
            true
        },
    )
}
