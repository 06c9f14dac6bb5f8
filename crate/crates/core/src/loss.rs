//! Contrastive loss families and their analytic gradients.
//!
//! Two generic forms are supported, both evaluated on an index set `I` of
//! instances:
//!
//! * **InfoNCE-shaped** (symmetric): `1/2 L_info(U, V) + 1/2 L_info(V, U)` with
//!   `L_info(U, V) = 1/|I| sum_i psi(c1 sum_{j != i} phi((v_j - v_i).u_i) +
//!   c2 sum_{j != i} phi((u_j - v_i).u_i))`.
//!   InfoNCE, SimCLR, DCL and DHEL use `phi(x) = exp(x/t)` and are evaluated as
//!   max-shifted log-sum-exp.
//! * **Independently additive**: `-1/|I| sum_i phi(u_i.v_i) +
//!   c1/(|I|(|I|-1)) sum_{i != j} psi(u_i.v_j) +
//!   c2/(2|I|(|I|-1)) sum_{i != j} (psi(u_i.u_j) + psi(v_i.v_j))`.
//!   SigLIP and the spectral loss are the named members.
//!
//! Every loss is computed from the similarity blocks `S_uv`, `S_uu`, `S_vv`
//! of the index set. Gradients are first taken with respect to those blocks
//! ([`SimilarityGrad`]) and then pushed to the vectors by the chain rule.
//! Vector gradients are ambient (not projected onto the sphere's tangent space).

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::geometry::EmbeddingSet;
use crate::math;
use crate::matrix::Matrix;

/// A differentiable scalar map used as `phi` or `psi` in a generic family.
///
/// Convexity and monotonicity requirements of the two loss forms are not
/// checked at runtime.
pub trait ScalarMap: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

/// `exp(x / t)`.
#[derive(Debug, Clone, Copy)]
pub struct ExpScaled(pub f64);

impl ScalarMap for ExpScaled {
    fn value(&self, x: f64) -> f64 {
        math::exp(x / self.0)
    }
    fn derivative(&self, x: f64) -> f64 {
        math::exp(x / self.0) / self.0
    }
}

/// `log(1 + x)`.
#[derive(Debug, Clone, Copy)]
pub struct Log1p;

impl ScalarMap for Log1p {
    fn value(&self, x: f64) -> f64 {
        math::ln_1p(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        1.0 / (1.0 + x)
    }
}

/// `log(x)`.
#[derive(Debug, Clone, Copy)]
pub struct Log;

impl ScalarMap for Log {
    fn value(&self, x: f64) -> f64 {
        math::ln(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        1.0 / x
    }
}

/// `x`.
#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl ScalarMap for Identity {
    fn value(&self, x: f64) -> f64 {
        x
    }
    fn derivative(&self, _x: f64) -> f64 {
        1.0
    }
}

/// `x^2`.
#[derive(Debug, Clone, Copy)]
pub struct Square;

impl ScalarMap for Square {
    fn value(&self, x: f64) -> f64 {
        x * x
    }
    fn derivative(&self, x: f64) -> f64 {
        2.0 * x
    }
}

/// SigLIP positive map `-log(1 + exp(-t x + b))`.
#[derive(Debug, Clone, Copy)]
pub struct NegSoftplus {
    pub t: f64,
    pub b: f64,
}

impl ScalarMap for NegSoftplus {
    fn value(&self, x: f64) -> f64 {
        -math::softplus(-self.t * x + self.b)
    }
    fn derivative(&self, x: f64) -> f64 {
        self.t * math::sigmoid(-self.t * x + self.b)
    }
}

/// SigLIP negative map `w log(1 + exp(t x - b))`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledSoftplus {
    pub w: f64,
    pub t: f64,
    pub b: f64,
}

impl ScalarMap for ScaledSoftplus {
    fn value(&self, x: f64) -> f64 {
        self.w * math::softplus(self.t * x - self.b)
    }
    fn derivative(&self, x: f64) -> f64 {
        self.w * self.t * math::sigmoid(self.t * x - self.b)
    }
}

/// Which of the two generic loss forms a family belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossForm {
    InfoSym,
    IndAdd,
}

#[derive(Clone)]
pub enum LossFamily {
    InfoNce,
    SimClr,
    Dcl,
    Dhel,
    SigLip,
    Spectral,
    GenericInfo { phi: Arc<dyn ScalarMap>, psi: Arc<dyn ScalarMap> },
    GenericIndAdd { phi: Arc<dyn ScalarMap>, psi: Arc<dyn ScalarMap> },
}

impl fmt::Debug for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl LossFamily {
    pub const NAMED: [LossFamily; 6] = [
        LossFamily::InfoNce,
        LossFamily::SimClr,
        LossFamily::Dcl,
        LossFamily::Dhel,
        LossFamily::SigLip,
        LossFamily::Spectral,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossFamily::InfoNce => "info-nce",
            LossFamily::SimClr => "simclr",
            LossFamily::Dcl => "dcl",
            LossFamily::Dhel => "dhel",
            LossFamily::SigLip => "siglip",
            LossFamily::Spectral => "spectral",
            LossFamily::GenericInfo { .. } => "generic-info",
            LossFamily::GenericIndAdd { .. } => "generic-ind-add",
        }
    }

    /// Named family by its identifier (generic families carry maps and have no name lookup).
    pub fn from_name(name: &str) -> Option<LossFamily> {
        Self::NAMED.iter().find(|f| f.name() == name).cloned()
    }

    pub fn form(&self) -> LossForm {
        match self {
            LossFamily::InfoNce
            | LossFamily::SimClr
            | LossFamily::Dcl
            | LossFamily::Dhel
            | LossFamily::GenericInfo { .. } => LossForm::InfoSym,
            LossFamily::SigLip | LossFamily::Spectral | LossFamily::GenericIndAdd { .. } => LossForm::IndAdd,
        }
    }

    /// `(c1, c2)` fixed by a named family.
    pub fn pinned_selectors(&self) -> Option<(bool, bool)> {
        match self {
            LossFamily::InfoNce => Some((true, false)),
            LossFamily::SimClr => Some((true, true)),
            LossFamily::Dcl => Some((true, true)),
            LossFamily::Dhel => Some((false, true)),
            LossFamily::SigLip => Some((true, false)),
            LossFamily::Spectral => Some((true, false)),
            LossFamily::GenericInfo { .. } | LossFamily::GenericIndAdd { .. } => None,
        }
    }

    fn uses_bias(&self) -> bool {
        matches!(self, LossFamily::SigLip)
    }
}

/// How the `(n - 1)` weight inside SigLIP's negative map is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SiglipWeight {
    /// `n_global - 1`, matching the per-batch sigmoid loss with global prefactors.
    #[default]
    GlobalSize,
    /// `|I| - 1`.
    BatchSize,
}

#[derive(Debug, Clone)]
pub struct LossSpec {
    family: LossFamily,
    c1: bool,
    c2: bool,
    temperature: f64,
    bias: f64,
    vrns_lambda: f64,
    n_global: usize,
    siglip_weight: SiglipWeight,
}

impl LossSpec {
    /// Named families get their pinned `(c1, c2)`; generic families default to `(1, 0)`.
    pub fn new(family: LossFamily, temperature: f64, n_global: usize) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "loss.temperature",
                reason: format!("must be positive and finite, got {temperature}"),
            });
        }
        if n_global == 0 {
            return Err(Error::InvalidParameter { name: "loss.n_global", reason: "must be positive".into() });
        }
        let (c1, c2) = family.pinned_selectors().unwrap_or((true, false));
        Ok(Self {
            family,
            c1,
            c2,
            temperature,
            bias: 0.0,
            vrns_lambda: 0.0,
            n_global,
            siglip_weight: SiglipWeight::GlobalSize,
        })
    }

    /// Sets the negative-pair selectors. Named families reject any pair other than their own.
    pub fn with_selectors(mut self, c1: bool, c2: bool) -> Result<Self> {
        let invalid = Error::Selectors { family: self.family.name(), c1: c1 as u8, c2: c2 as u8 };
        if !c1 && !c2 {
            return Err(invalid);
        }
        if let Some(pinned) = self.family.pinned_selectors() {
            if pinned != (c1, c2) {
                return Err(invalid);
            }
        }
        self.c1 = c1;
        self.c2 = c2;
        Ok(self)
    }

    pub fn with_bias(mut self, bias: f64) -> Result<Self> {
        if !bias.is_finite() {
            return Err(Error::InvalidParameter { name: "loss.bias", reason: format!("must be finite, got {bias}") });
        }
        self.bias = bias;
        Ok(self)
    }

    pub fn with_vrns(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "loss.vrns_lambda",
                reason: format!("must be nonnegative and finite, got {lambda}"),
            });
        }
        self.vrns_lambda = lambda;
        Ok(self)
    }

    pub fn with_siglip_weight(mut self, weight: SiglipWeight) -> Self {
        self.siglip_weight = weight;
        self
    }

    pub fn family(&self) -> &LossFamily {
        &self.family
    }
    pub fn selectors(&self) -> (bool, bool) {
        (self.c1, self.c2)
    }
    pub fn temperature(&self) -> f64 {
        self.temperature
    }
    pub fn bias(&self) -> f64 {
        self.bias
    }
    pub fn vrns_lambda(&self) -> f64 {
        self.vrns_lambda
    }
    pub fn n_global(&self) -> usize {
        self.n_global
    }
    pub fn siglip_weight(&self) -> SiglipWeight {
        self.siglip_weight
    }
    pub fn uses_bias(&self) -> bool {
        self.family.uses_bias()
    }
}

/// Ambient gradient with respect to every vector of an index set, rows in index-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair {
    pub d_u: Matrix,
    pub d_v: Matrix,
}

impl GradPair {
    /// Removes from row `i` its component along the matching embedding vector.
    pub fn project_tangent(&mut self, u: &Matrix, v: &Matrix) {
        for (g, x) in [(&mut self.d_u, u), (&mut self.d_v, v)] {
            for i in 0..g.rows() {
                let radial = math::dot(g.row(i), x.row(i));
                for (gk, xk) in g.row_mut(i).iter_mut().zip(x.row(i)) {
                    *gk -= radial * xk;
                }
            }
        }
    }

    /// Frobenius norm over both views.
    pub fn norm(&self) -> f64 {
        let a = self.d_u.frobenius_norm();
        let b = self.d_v.frobenius_norm();
        math::sqrt(a * a + b * b)
    }

    pub fn is_finite(&self) -> bool {
        self.d_u.is_finite() && self.d_v.is_finite()
    }
}

/// Loss derivatives with respect to the similarity blocks of an index set.
///
/// `uv[(i, j)]` is the derivative with respect to `u_i . v_j`; `uu[(i, j)]` and
/// `vv[(i, j)]` treat the ordered within-view entries `(i, j)` and `(j, i)` as
/// separate variables. Diagonals of `uu` and `vv` are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrad {
    pub uv: Matrix,
    pub uu: Matrix,
    pub vv: Matrix,
}

impl SimilarityGrad {
    fn zeros(m: usize) -> Self {
        Self { uv: Matrix::zeros(m, m), uu: Matrix::zeros(m, m), vv: Matrix::zeros(m, m) }
    }

    fn add(&mut self, block: Block, i: usize, j: usize, value: f64) {
        let target = match block {
            Block::Uv => &mut self.uv,
            Block::Uu => &mut self.uu,
            Block::Vv => &mut self.vv,
        };
        let cur = target.get(i, j);
        target.set(i, j, cur + value);
    }

    /// Chain rule from similarities to the vectors of `block`.
    pub fn to_vectors(&self, block: &EmbeddingSet) -> GradPair {
        let (u, v) = (block.u(), block.v());
        let m = u.rows();
        let d = u.cols();
        let mut d_u = Matrix::zeros(m, d);
        let mut d_v = Matrix::zeros(m, d);
        for a in 0..m {
            for b in 0..m {
                let g_uv = self.uv.get(a, b);
                let g_uu = self.uu.get(a, b) + self.uu.get(b, a);
                let g_vv = self.vv.get(a, b) + self.vv.get(b, a);
                let g_vu = self.uv.get(b, a);
                let du = d_u.row_mut(a);
                for k in 0..d {
                    du[k] += g_uv * v.get(b, k) + g_uu * u.get(b, k);
                }
                let dv = d_v.row_mut(a);
                for k in 0..d {
                    dv[k] += g_vu * u.get(b, k) + g_vv * v.get(b, k);
                }
            }
        }
        GradPair { d_u, d_v }
    }
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Uv,
    Uu,
    Vv,
}

struct Sims {
    uv: Matrix,
    uu: Matrix,
    vv: Matrix,
}

impl Sims {
    fn of(block: &EmbeddingSet) -> Self {
        Self {
            uv: block.u().mul_transpose(block.v()),
            uu: block.u().mul_transpose(block.u()),
            vv: block.v().mul_transpose(block.v()),
        }
    }
}

/// One negative term inside `psi(.)`: raw argument and where its derivative goes.
#[derive(Clone, Copy)]
struct Term {
    arg: f64,
    block: Block,
    i: usize,
    j: usize,
}

/// Negative terms for anchor `i` in direction `forward` (`L_info(U, V)`) or
/// reverse (`L_info(V, U)`), with the index of the positive similarity.
fn anchor_terms(s: &Sims, c1: bool, c2: bool, i: usize, forward: bool, out: &mut Vec<Term>) {
    let m = s.uv.rows();
    let pos = s.uv.get(i, i);
    out.clear();
    for j in (0..m).filter(|&j| j != i) {
        if c1 {
            // forward: (v_j - v_i).u_i; reverse: (u_j - u_i).v_i
            let (a, b) = if forward { (i, j) } else { (j, i) };
            out.push(Term { arg: s.uv.get(a, b) - pos, block: Block::Uv, i: a, j: b });
        }
        if c2 {
            // forward: (u_j - v_i).u_i; reverse: (v_j - u_i).v_i
            let (block, val) = if forward { (Block::Uu, s.uu.get(i, j)) } else { (Block::Vv, s.vv.get(i, j)) };
            out.push(Term { arg: val - pos, block, i, j });
        }
    }
}

fn info_sym(spec: &LossSpec, s: &Sims, mut grad: Option<&mut SimilarityGrad>) -> Result<f64> {
    let m = s.uv.rows();
    let t = spec.temperature;
    let scale = 0.5 / m as f64;
    let mut terms = Vec::with_capacity(2 * m);
    let mut weights = Vec::with_capacity(2 * m);
    let mut total = 0.0;
    for forward in [true, false] {
        for i in 0..m {
            anchor_terms(s, spec.c1, spec.c2, i, forward, &mut terms);
            weights.clear();
            let value = match &spec.family {
                LossFamily::GenericInfo { phi, psi } => {
                    let inner: f64 = terms.iter().map(|tm| phi.value(tm.arg)).sum();
                    let outer = psi.derivative(inner);
                    weights.extend(terms.iter().map(|tm| outer * phi.derivative(tm.arg)));
                    psi.value(inner)
                }
                family => {
                    let with_one = matches!(family, LossFamily::InfoNce | LossFamily::SimClr);
                    let max = terms
                        .iter()
                        .map(|tm| tm.arg / t)
                        .fold(if with_one { 0.0 } else { f64::NEG_INFINITY }, f64::max);
                    if max == f64::NEG_INFINITY {
                        return Err(Error::Domain(0.0));
                    }
                    let mut sum = if with_one { math::exp(-max) } else { 0.0 };
                    for tm in &terms {
                        let e = math::exp(tm.arg / t - max);
                        weights.push(e);
                        sum += e;
                    }
                    weights.iter_mut().for_each(|w| *w /= sum * t);
                    max + math::ln(sum)
                }
            };
            total += scale * value;
            if let Some(g) = grad.as_deref_mut() {
                for (tm, w) in terms.iter().zip(&weights) {
                    g.add(tm.block, tm.i, tm.j, scale * w);
                    g.add(Block::Uv, i, i, -scale * w);
                }
            }
        }
    }
    Ok(total)
}

fn ind_add(spec: &LossSpec, s: &Sims, mut grad: Option<&mut SimilarityGrad>) -> f64 {
    let m = s.uv.rows();
    let (t, b) = (spec.temperature, spec.bias);
    let siglip_w = match spec.siglip_weight {
        SiglipWeight::GlobalSize => spec.n_global as f64 - 1.0,
        SiglipWeight::BatchSize => m as f64 - 1.0,
    };
    let (phi, psi): (&dyn ScalarMap, &dyn ScalarMap) = match &spec.family {
        LossFamily::SigLip => (&NegSoftplus { t, b }, &ScaledSoftplus { w: siglip_w, t, b }),
        LossFamily::Spectral => (&Identity, &Square),
        LossFamily::GenericIndAdd { phi, psi } => (phi.as_ref(), psi.as_ref()),
        _ => unreachable!("form checked by caller"),
    };
    let pos_scale = 1.0 / m as f64;
    let mut total = 0.0;
    for i in 0..m {
        let x = s.uv.get(i, i);
        total -= pos_scale * phi.value(x);
        if let Some(g) = grad.as_deref_mut() {
            g.add(Block::Uv, i, i, -pos_scale * phi.derivative(x));
        }
    }
    if m < 2 {
        return total;
    }
    let pairs = (m * (m - 1)) as f64;
    let mut blocks: Vec<(Block, &Matrix, f64)> = Vec::with_capacity(3);
    if spec.c1 {
        blocks.push((Block::Uv, &s.uv, 1.0 / pairs));
    }
    if spec.c2 {
        blocks.push((Block::Uu, &s.uu, 0.5 / pairs));
        blocks.push((Block::Vv, &s.vv, 0.5 / pairs));
    }
    for (block, sim, scale) in blocks {
        for i in 0..m {
            for j in (0..m).filter(|&j| j != i) {
                let x = sim.get(i, j);
                total += scale * psi.value(x);
                if let Some(g) = grad.as_deref_mut() {
                    g.add(block, i, j, scale * psi.derivative(x));
                }
            }
        }
    }
    total
}

fn vrns(s: &Sims, n_global: usize, lambda: f64, mut grad: Option<&mut SimilarityGrad>) -> Result<f64> {
    let m = s.uv.rows();
    if m < 2 {
        return Err(Error::InvalidIndexSet(format!("VRNS needs at least 2 instances, got {m}")));
    }
    if n_global < 2 {
        return Err(Error::InvalidParameter { name: "loss.n_global", reason: format!("VRNS needs n >= 2, got {n_global}") });
    }
    let target = 1.0 / (n_global as f64 - 1.0);
    let scale = 1.0 / (m * (m - 1)) as f64;
    let mut total = 0.0;
    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            let r = s.uv.get(i, j) + target;
            total += scale * r * r;
            if let Some(g) = grad.as_deref_mut() {
                g.add(Block::Uv, i, j, lambda * scale * 2.0 * r);
            }
        }
    }
    Ok(total)
}

fn require_form(spec: &LossSpec, form: LossForm) -> Result<()> {
    if spec.family.form() != form {
        let expected = match form {
            LossForm::InfoSym => "InfoNCE-shaped",
            LossForm::IndAdd => "independently additive",
        };
        return Err(Error::WrongForm { family: spec.family.name(), expected });
    }
    Ok(())
}

fn block_sims(e: &EmbeddingSet, idx: &[usize]) -> Result<Sims> {
    Ok(Sims::of(&e.subset(idx)?))
}

/// Symmetric InfoNCE-shaped loss on the instances `idx`.
pub fn eval_info_sym(spec: &LossSpec, e: &EmbeddingSet, idx: &[usize]) -> Result<f64> {
    require_form(spec, LossForm::InfoSym)?;
    info_sym(spec, &block_sims(e, idx)?, None)
}

/// Independently additive loss on the instances `idx`.
pub fn eval_ind_add(spec: &LossSpec, e: &EmbeddingSet, idx: &[usize]) -> Result<f64> {
    require_form(spec, LossForm::IndAdd)?;
    Ok(ind_add(spec, &block_sims(e, idx)?, None))
}

/// Mean squared deviation of the batch's cross-view negative similarities from `-1/(n_global - 1)`.
pub fn eval_vrns(e: &EmbeddingSet, idx: &[usize], n_global: usize) -> Result<f64> {
    vrns(&block_sims(e, idx)?, n_global, 1.0, None)
}

fn family_and_vrns(spec: &LossSpec, s: &Sims, mut grad: Option<&mut SimilarityGrad>) -> Result<f64> {
    let base = match spec.family.form() {
        LossForm::InfoSym => info_sym(spec, s, grad.as_deref_mut())?,
        LossForm::IndAdd => ind_add(spec, s, grad.as_deref_mut()),
    };
    if spec.vrns_lambda > 0.0 {
        Ok(base + spec.vrns_lambda * vrns(s, spec.n_global, spec.vrns_lambda, grad)?)
    } else {
        Ok(base)
    }
}

/// Family loss plus `lambda * VRNS` on the instances `idx`.
pub fn total_loss(spec: &LossSpec, e: &EmbeddingSet, idx: &[usize]) -> Result<f64> {
    family_and_vrns(spec, &block_sims(e, idx)?, None)
}

/// Derivatives of [`total_loss`] with respect to the similarity blocks of `idx`.
pub fn similarity_gradient(spec: &LossSpec, e: &EmbeddingSet, idx: &[usize]) -> Result<SimilarityGrad> {
    let s = block_sims(e, idx)?;
    let mut g = SimilarityGrad::zeros(idx.len());
    family_and_vrns(spec, &s, Some(&mut g))?;
    Ok(g)
}

/// Value and ambient gradient of [`total_loss`]; gradient rows follow `idx`.
pub fn loss_and_grad(spec: &LossSpec, e: &EmbeddingSet, idx: &[usize]) -> Result<(f64, GradPair)> {
    let block = e.subset(idx)?;
    let s = Sims::of(&block);
    let mut g = SimilarityGrad::zeros(idx.len());
    let value = family_and_vrns(spec, &s, Some(&mut g))?;
    Ok((value, g.to_vectors(&block)))
}

/// Ambient gradient of [`total_loss`]; rows follow `idx`.
pub fn grad(spec: &LossSpec, e: &EmbeddingSet, idx: &[usize]) -> Result<GradPair> {
    loss_and_grad(spec, e, idx).map(|(_, g)| g)
}

/// Derivative of the InfoNCE loss on the first `m` pairs with respect to the
/// negative similarity `u_i . v_j` (zero-based indices):
/// `1/(m t) * (softmax_j(u_i . v_. / t) + softmax_i(u_. . v_j / t))`.
///
/// The loss here carries `1/m` on each direction, so this is twice the
/// derivative of the symmetric (halved) form.
pub fn infonce_neg_pair_grad(e: &EmbeddingSet, i: usize, j: usize, t: f64, m: usize) -> Result<f64> {
    let n = e.n();
    if m > n {
        return Err(Error::IndexOutOfRange { index: m, n });
    }
    if i >= m || j >= m {
        return Err(Error::IndexOutOfRange { index: i.max(j), n: m });
    }
    if i == j {
        return Err(Error::InvalidIndexSet(format!("negative pair needs i != j, got ({i}, {j})")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter { name: "t", reason: format!("must be positive, got {t}") });
    }
    let (u, v) = (e.u(), e.v());
    let target = math::dot(u.row(i), v.row(j)) / t;
    let row: Vec<f64> = (0..m).map(|k| math::dot(u.row(i), v.row(k)) / t).collect();
    let col: Vec<f64> = (0..m).map(|k| math::dot(u.row(k), v.row(j)) / t).collect();
    let softmax_at = |xs: &[f64]| {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        math::exp(target - max) / xs.iter().map(|x| math::exp(x - max)).sum::<f64>()
    };
    Ok((softmax_at(&row) + softmax_at(&col)) / (m as f64 * t))
}
