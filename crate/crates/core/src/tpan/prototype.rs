use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One text prototype per training identity, refreshed by exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeTable {
    rows: Vec<f64>,
    initialized: Vec<bool>,
    dim: usize,
    lambda: f64,
}

impl PrototypeTable {
    pub fn new(num_identities: usize, dim: usize, lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::Invalid(format!("update ratio {lambda} outside [0, 1)")));
        }
        Ok(Self {
            rows: vec![0.0; num_identities * dim],
            initialized: vec![false; num_identities],
            dim,
            lambda,
        })
    }

    /// Rebuilds a table from stored rows and flags.
    pub fn from_parts(
        rows: Vec<f64>,
        initialized: Vec<bool>,
        dim: usize,
        lambda: f64,
    ) -> Result<Self> {
        let mut t = Self::new(initialized.len(), dim, lambda)?;
        if rows.len() != t.rows.len() {
            return Err(Error::shape(
                "PrototypeTable",
                format!("{} values for {}x{dim}", rows.len(), initialized.len()),
            ));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prototype table".into()));
        }
        t.rows = rows;
        t.initialized = initialized;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.initialized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initialized.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn initialized(&self) -> &[bool] {
        &self.initialized
    }

    pub fn is_initialized(&self, k: usize) -> bool {
        self.initialized.get(k).copied().unwrap_or(false)
    }

    /// The stored prototype, or `None` before the identity's first update.
    pub fn row(&self, k: usize) -> Option<&[f64]> {
        self.is_initialized(k)
            .then(|| &self.rows[k * self.dim..(k + 1) * self.dim])
    }

    /// Overwrites row `k` directly and marks it initialized.
    pub fn set_row(&mut self, k: usize, value: &[f64]) -> Result<()> {
        self.check(k, value)?;
        self.rows[k * self.dim..(k + 1) * self.dim].copy_from_slice(value);
        self.initialized[k] = true;
        Ok(())
    }

    /// `P_k <- λ P_k + (1 - λ) f_t`, or `P_k <- f_t` on first sight of `k`.
    pub fn update(&mut self, k: usize, f_t: &[f64]) -> Result<()> {
        self.check(k, f_t)?;
        if !self.initialized[k] {
            return self.set_row(k, f_t);
        }
        let lambda = self.lambda;
        for (p, &f) in self.rows[k * self.dim..(k + 1) * self.dim].iter_mut().zip(f_t) {
            *p = lambda * *p + (1.0 - lambda) * f;
        }
        Ok(())
    }

    fn check(&self, k: usize, v: &[f64]) -> Result<()> {
        if k >= self.len() {
            return Err(Error::IdentityOutOfRange {
                index: k,
                len: self.len(),
            });
        }
        if v.len() != self.dim {
            return Err(Error::shape(
                "update_prototype",
                format!("feature of length {} for dimension {}", v.len(), self.dim),
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("prototype update".into()));
        }
        Ok(())
    }
}

pub fn update_prototype(tbl: &mut PrototypeTable, k: usize, f_t: &[f64]) -> Result<()> {
    tbl.update(k, f_t)
}

/// `A_target[h,w] = max(0, cos(p, F_c[:,h,w]))`, zero where the feature vanishes.
///
/// The result is a plain value: callers never propagate into it.
pub fn target_map(p: &[f64], f_c: &Tensor) -> Result<Tensor> {
    let &[d, h, w] = f_c.shape() else {
        return Err(Error::shape("target_map", format!("map {:?}", f_c.shape())));
    };
    if p.len() != d {
        return Err(Error::shape(
            "target_map",
            format!("prototype of length {} against {d} channels", p.len()),
        ));
    }
    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if p_norm < 1e-12 {
        return Err(Error::Invalid("target_map: zero prototype".into()));
    }
    let hw = h * w;
    let fd = f_c.data();
    let out = (0..hw)
        .map(|j| {
            let (mut dot, mut sq) = (0.0, 0.0);
            for (ci, pv) in p.iter().enumerate() {
                let v = fd[ci * hw + j];
                dot += pv * v;
                sq += v * v;
            }
            let n = sq.sqrt();
            if n < 1e-12 {
                0.0
            } else {
                (dot / (p_norm * n)).clamp(-1.0, 1.0).max(0.0)
            }
        })
        .collect();
    Tensor::new(vec![h, w], out)
}

/// Sum of squared differences; returns the loss and `∂/∂A` (nothing flows into the target).
pub fn guidance_loss(target: &Tensor, a: &Tensor) -> Result<(f64, Vec<f64>)> {
    if target.shape() != a.shape() {
        return Err(Error::shape(
            "guidance_loss",
            format!("{:?} vs {:?}", target.shape(), a.shape()),
        ));
    }
    let mut loss = 0.0;
    let grad = a
        .data()
        .iter()
        .zip(target.data())
        .map(|(&av, &tv)| {
            let r = av - tv;
            loss += r * r;
            2.0 * r
        })
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct PoolTrace {
    weighted: Vec<f64>,
    weight_sum: f64,
    norm: f64,
}

/// `e = normalize(Σ_hw A[h,w] F̂[:,h,w] / Σ A)`
pub fn attend_pool(f_hat: &Tensor, a: &Tensor) -> Result<(Tensor, PoolTrace)> {
    let (d, hw) = pool_dims(f_hat, a)?;
    let weight_sum: f64 = a.data().iter().sum();
    if weight_sum.abs() < 1e-12 {
        return Err(Error::Invalid("attend_pool: attention sums to zero".into()));
    }
    let fd = f_hat.data();
    let weighted: Vec<f64> = (0..d)
        .map(|ci| {
            fd[ci * hw..(ci + 1) * hw]
                .iter()
                .zip(a.data())
                .map(|(f, w)| f * w)
                .sum::<f64>()
                / weight_sum
        })
        .collect();
    let norm = weighted.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::Invalid("attend_pool: pooled feature has zero norm".into()));
    }
    let e = Tensor::vector(weighted.iter().map(|v| v / norm).collect());
    Ok((
        e,
        PoolTrace {
            weighted,
            weight_sum,
            norm,
        },
    ))
}

/// Returns `(∂/∂F̂, ∂/∂A)` given `∂/∂e`.
pub fn attend_pool_backward(
    f_hat: &Tensor,
    a: &Tensor,
    trace: &PoolTrace,
    grad_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d, hw) = pool_dims(f_hat, a)?;
    if grad_out.len() != d {
        return Err(Error::shape("attend_pool", "upstream gradient length"));
    }
    // through the normalisation: g_v = (g - e (e·g)) / ‖v‖
    let e: Vec<f64> = trace.weighted.iter().map(|v| v / trace.norm).collect();
    let eg: f64 = e.iter().zip(grad_out).map(|(a, b)| a * b).sum();
    let g_v: Vec<f64> = e
        .iter()
        .zip(grad_out)
        .map(|(ei, gi)| (gi - ei * eg) / trace.norm)
        .collect();
    let s = trace.weight_sum;
    let fd = f_hat.data();
    let mut g_f = vec![0.0; d * hw];
    let mut g_a = vec![0.0; hw];
    for ci in 0..d {
        for j in 0..hw {
            g_f[ci * hw + j] = a.data()[j] / s * g_v[ci];
            g_a[j] += g_v[ci] * (fd[ci * hw + j] - trace.weighted[ci]) / s;
        }
    }
    Ok((g_f, g_a))
}

fn pool_dims(f_hat: &Tensor, a: &Tensor) -> Result<(usize, usize)> {
    let &[d, h, w] = f_hat.shape() else {
        return Err(Error::shape("attend_pool", format!("map {:?}", f_hat.shape())));
    };
    if a.len() != h * w {
        return Err(Error::shape(
            "attend_pool",
            format!("attention {:?} against {h}x{w}", a.shape()),
        ));
    }
    Ok((d, h * w))
}
