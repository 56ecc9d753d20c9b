//! GCCA, corrCA and their stimulus-informed variants.
//!
//! Every estimator builds a symmetric pencil `(A, B)` from a
//! [`CorrelationSet`], keeps the generalized eigenvectors of the `Q`
//! smallest eigenvalues and rescales them so that the shared subspace has
//! orthonormal columns on the training data.

use faer::{Mat, MatRef};
use thiserror::Error;

use crate::datamodel::{CorrelationSet, LagMatrix};
use crate::linalg::{sym_gevd_smallest, symmetrize, LinalgError, SymPencil};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("stimulus-informed estimator needs stimulus correlations")]
    MissingStimulus,
    #[error("{name} must be finite and non-negative, got {value}")]
    InvalidHyper { name: &'static str, value: f64 },
    #[error("Q = {q} exceeds the pencil dimension {dim}")]
    TooManyComponents { q: usize, dim: usize },
    #[error("Q must be at least 1")]
    ZeroComponents,
    #[error("GCCA needs at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("component {0} spans no shared signal and cannot be scaled")]
    DegenerateComponent(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Gcca,
    CorrCa,
    SiGcca,
    SiCorrCa,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gcca, Method::CorrCa, Method::SiGcca, Method::SiCorrCa];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gcca => "gcca",
            Method::CorrCa => "corrca",
            Method::SiGcca => "sigcca",
            Method::SiCorrCa => "sicorrca",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn uses_stimulus(self) -> bool {
        matches!(self, Method::SiGcca | Method::SiCorrCa)
    }

    pub fn shares_decoder(self) -> bool {
        matches!(self, Method::CorrCa | Method::SiCorrCa)
    }

    /// Dimension of the pencil this method solves.
    pub fn pencil_dim(self, n_subjects: usize, block_dim: usize, stim_dim: usize) -> usize {
        match self {
            Method::Gcca => n_subjects * block_dim,
            Method::CorrCa => block_dim,
            Method::SiGcca => n_subjects * block_dim + stim_dim,
            Method::SiCorrCa => block_dim + stim_dim,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Regularization weight `mu`, stimulus weight `gamma` and component count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub mu: f64,
    pub gamma: f64,
    pub q: usize,
}

impl Hyper {
    pub fn new(mu: f64, gamma: f64, q: usize) -> Self {
        Self { mu, gamma, q }
    }

    fn validate(&self) -> Result<(), EstimatorError> {
        for (name, value) in [("mu", self.mu), ("gamma", self.gamma)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(EstimatorError::InvalidHyper { name, value });
            }
        }
        if self.q == 0 {
            return Err(EstimatorError::ZeroComponents);
        }
        Ok(())
    }
}

/// A fitted group model.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    pub method: Method,
    /// One `M x Q` decoder per subject; identical copies for corrCA variants.
    pub decoders: Vec<Mat<f64>>,
    /// `P x Q` stimulus encoder, stimulus-informed methods only.
    pub encoder: Option<Mat<f64>>,
    /// The `Q` smallest generalized eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub hyper: Hyper,
    /// Diagonal loading the eigensolver had to add, zero when none.
    pub jitter: f64,
}

impl GroupModel {
    pub fn n_subjects(&self) -> usize {
        self.decoders.len()
    }

    pub fn q(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn block_dim(&self) -> usize {
        self.decoders.first().map(|w| w.nrows()).unwrap_or(0)
    }

    pub fn stim_dim(&self) -> usize {
        self.encoder.as_ref().map(|v| v.nrows()).unwrap_or(0)
    }

    /// Generalized eigenvectors stacked in pencil order: all decoders (one
    /// copy for corrCA variants) followed by the encoder for SI methods.
    fn stacked(&self) -> Mat<f64> {
        let blocks: Vec<MatRef<'_, f64>> = self.pencil_blocks();
        vstack(&blocks)
    }

    fn pencil_blocks(&self) -> Vec<MatRef<'_, f64>> {
        let mut blocks: Vec<MatRef<'_, f64>> = if self.method.shares_decoder() {
            vec![self.decoders[0].as_ref()]
        } else {
            self.decoders.iter().map(|w| w.as_ref()).collect()
        };
        if self.method.uses_stimulus() && self.hyper.gamma > 0.0 {
            if let Some(v) = &self.encoder {
                blocks.push(v.as_ref());
            }
        }
        blocks
    }
}

/// Projected test signals.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSignals {
    /// `Z_k = X_k W_k`, `T x Q` each.
    pub per_subject: Vec<Mat<f64>>,
    /// Entrywise mean of `per_subject`.
    pub shared_average: Mat<f64>,
}

fn vstack(blocks: &[MatRef<'_, f64>]) -> Mat<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::<f64>::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        out.as_mut().submatrix_mut(offset, 0, b.nrows(), cols).copy_from(*b);
        offset += b.nrows();
    }
    out
}

fn add_identity(m: &mut Mat<f64>, mu: f64) {
    if mu != 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += mu;
        }
    }
}

fn block_sums(corr: &CorrelationSet) -> (Mat<f64>, Mat<f64>) {
    let m = corr.block_dim();
    let k = corr.n_subjects();
    let mut diag = Mat::<f64>::zeros(m, m);
    let mut full = Mat::<f64>::zeros(m, m);
    for a in 0..k {
        diag += &corr.r_blockdiag[a];
        for b in 0..k {
            full += corr.r_kl(a, b);
        }
    }
    symmetrize(&mut diag);
    symmetrize(&mut full);
    (diag, full)
}

fn stimulus_blocks(corr: &CorrelationSet) -> Result<&crate::datamodel::StimulusBlocks, EstimatorError> {
    corr.stimulus.as_ref().ok_or(EstimatorError::MissingStimulus)
}

/// `(R_D + mu I, R_xx)`.
pub fn gcca_pencil(corr: &CorrelationSet, mu: f64) -> Result<SymPencil, EstimatorError> {
    let (m, k) = (corr.block_dim(), corr.n_subjects());
    let mut a = Mat::<f64>::zeros(k * m, k * m);
    for (i, r) in corr.r_blockdiag.iter().enumerate() {
        a.as_mut().submatrix_mut(i * m, i * m, m, m).copy_from(r);
    }
    add_identity(&mut a, mu);
    Ok(SymPencil::new(a, corr.r_full.clone())?)
}

/// `(sum_k R_kk + mu I, sum_k sum_l R_kl)`, of dimension `M`.
pub fn corrca_pencil(corr: &CorrelationSet, mu: f64) -> Result<SymPencil, EstimatorError> {
    let (mut a, b) = block_sums(corr);
    add_identity(&mut a, mu);
    Ok(SymPencil::new(a, b)?)
}

/// `(Blkdiag(R_11, ..., R_KK, gamma R_yy) + mu I, P R P)` with the
/// stimulus border scaled by `gamma` and the corner by `gamma^2`.
pub fn sigcca_pencil(corr: &CorrelationSet, mu: f64, gamma: f64) -> Result<SymPencil, EstimatorError> {
    let s = stimulus_blocks(corr)?;
    let (m, k, p) = (corr.block_dim(), corr.n_subjects(), corr.stim_dim());
    let n = k * m + p;
    let mut a = Mat::<f64>::zeros(n, n);
    let mut b = Mat::<f64>::zeros(n, n);
    for (i, r) in corr.r_blockdiag.iter().enumerate() {
        a.as_mut().submatrix_mut(i * m, i * m, m, m).copy_from(r);
    }
    a.as_mut()
        .submatrix_mut(k * m, k * m, p, p)
        .copy_from(gamma * &s.r_yy);
    add_identity(&mut a, mu);
    b.as_mut().submatrix_mut(0, 0, k * m, k * m).copy_from(&corr.r_full);
    for (i, r_ky) in s.r_ky.iter().enumerate() {
        let border = gamma * r_ky;
        b.as_mut().submatrix_mut(i * m, k * m, m, p).copy_from(&border);
        b.as_mut()
            .submatrix_mut(k * m, i * m, p, m)
            .copy_from(border.transpose());
    }
    b.as_mut()
        .submatrix_mut(k * m, k * m, p, p)
        .copy_from((gamma * gamma) * &s.r_yy);
    Ok(SymPencil::new(a, b)?)
}

/// The `(M + P)`-dimensional pencil of SI-corrCA.
pub fn sicorrca_pencil(corr: &CorrelationSet, mu: f64, gamma: f64) -> Result<SymPencil, EstimatorError> {
    let s = stimulus_blocks(corr)?;
    let (m, p) = (corr.block_dim(), corr.stim_dim());
    let (diag, full) = block_sums(corr);
    let mut r_xy = Mat::<f64>::zeros(m, p);
    for r_ky in &s.r_ky {
        r_xy += r_ky;
    }
    let n = m + p;
    let mut a = Mat::<f64>::zeros(n, n);
    let mut b = Mat::<f64>::zeros(n, n);
    a.as_mut().submatrix_mut(0, 0, m, m).copy_from(&diag);
    a.as_mut().submatrix_mut(m, m, p, p).copy_from(gamma * &s.r_yy);
    add_identity(&mut a, mu);
    b.as_mut().submatrix_mut(0, 0, m, m).copy_from(&full);
    let border = gamma * &r_xy;
    b.as_mut().submatrix_mut(0, m, m, p).copy_from(&border);
    b.as_mut().submatrix_mut(m, 0, p, m).copy_from(border.transpose());
    b.as_mut()
        .submatrix_mut(m, m, p, p)
        .copy_from((gamma * gamma) * &s.r_yy);
    Ok(SymPencil::new(a, b)?)
}

/// The right-hand matrix of the pencil a model was fitted with.
fn right_matrix(method: Method, corr: &CorrelationSet, gamma: f64) -> Result<Mat<f64>, EstimatorError> {
    Ok(match method {
        Method::Gcca => corr.r_full.clone(),
        Method::CorrCa => block_sums(corr).1,
        Method::SiGcca if gamma == 0.0 => corr.r_full.clone(),
        Method::SiCorrCa if gamma == 0.0 => block_sums(corr).1,
        Method::SiGcca => sigcca_pencil(corr, 0.0, gamma)?.b().to_owned(),
        Method::SiCorrCa => sicorrca_pencil(corr, 0.0, gamma)?.b().to_owned(),
    })
}

fn check_q(q: usize, dim: usize) -> Result<(), EstimatorError> {
    if q > dim {
        return Err(EstimatorError::TooManyComponents { q, dim });
    }
    Ok(())
}

fn solve(
    method: Method,
    pencil: &SymPencil,
    corr: &CorrelationSet,
    hyper: Hyper,
) -> Result<GroupModel, EstimatorError> {
    check_q(hyper.q, pencil.dim())?;
    let gevd = sym_gevd_smallest(pencil, hyper.q)?;
    let (m, k, p) = (corr.block_dim(), corr.n_subjects(), corr.stim_dim());
    let vecs = gevd.eigenvectors.as_ref();
    let q = hyper.q;
    let (decoders, encoder_offset) = if method.shares_decoder() {
        let w = vecs.subrows(0, m).to_owned();
        (vec![w; k], m)
    } else {
        (
            (0..k).map(|i| vecs.subrows(i * m, m).to_owned()).collect(),
            k * m,
        )
    };
    let encoder = if method.uses_stimulus() {
        Some(if hyper.gamma > 0.0 {
            vecs.subrows(encoder_offset, p).to_owned()
        } else {
            Mat::zeros(p, q)
        })
    } else {
        None
    };
    let model = GroupModel {
        method,
        decoders,
        encoder,
        eigenvalues: gevd.eigenvalues,
        hyper,
        jitter: gevd.jitter,
    };
    scale_model(model, corr)
}

/// MAXVAR-GCCA with diagonal loading `mu`.
pub fn gcca_fit(corr: &CorrelationSet, mu: f64, q: usize) -> Result<GroupModel, EstimatorError> {
    let hyper = Hyper::new(mu, 0.0, q);
    hyper.validate()?;
    if corr.n_subjects() < 2 {
        return Err(EstimatorError::TooFewSubjects(corr.n_subjects()));
    }
    check_q(q, corr.n_subjects() * corr.block_dim())?;
    let pencil = gcca_pencil(corr, mu)?;
    solve(Method::Gcca, &pencil, corr, hyper)
}

/// MAXVAR-corrCA: one decoder shared by all subjects.
pub fn corrca_fit(corr: &CorrelationSet, mu: f64, q: usize) -> Result<GroupModel, EstimatorError> {
    let hyper = Hyper::new(mu, 0.0, q);
    hyper.validate()?;
    check_q(q, corr.block_dim())?;
    let pencil = corrca_pencil(corr, mu)?;
    solve(Method::CorrCa, &pencil, corr, hyper)
}

/// Stimulus-informed GCCA. `gamma = 0` reduces to [`gcca_fit`] with a zero
/// encoder.
pub fn sigcca_fit(
    corr: &CorrelationSet,
    mu: f64,
    gamma: f64,
    q: usize,
) -> Result<GroupModel, EstimatorError> {
    let hyper = Hyper::new(mu, gamma, q);
    hyper.validate()?;
    let p = stimulus_blocks(corr)?.r_yy.nrows();
    if gamma == 0.0 {
        let base = gcca_fit(corr, mu, q)?;
        return Ok(GroupModel {
            method: Method::SiGcca,
            encoder: Some(Mat::zeros(p, q)),
            hyper,
            ..base
        });
    }
    if corr.n_subjects() < 2 {
        return Err(EstimatorError::TooFewSubjects(corr.n_subjects()));
    }
    check_q(q, corr.n_subjects() * corr.block_dim() + p)?;
    let pencil = sigcca_pencil(corr, mu, gamma)?;
    solve(Method::SiGcca, &pencil, corr, hyper)
}

/// Stimulus-informed corrCA. `gamma = 0` reduces to [`corrca_fit`].
pub fn sicorrca_fit(
    corr: &CorrelationSet,
    mu: f64,
    gamma: f64,
    q: usize,
) -> Result<GroupModel, EstimatorError> {
    let hyper = Hyper::new(mu, gamma, q);
    hyper.validate()?;
    let p = stimulus_blocks(corr)?.r_yy.nrows();
    if gamma == 0.0 {
        let base = corrca_fit(corr, mu, q)?;
        return Ok(GroupModel {
            method: Method::SiCorrCa,
            encoder: Some(Mat::zeros(p, q)),
            hyper,
            ..base
        });
    }
    check_q(q, corr.block_dim() + p)?;
    let pencil = sicorrca_pencil(corr, mu, gamma)?;
    solve(Method::SiCorrCa, &pencil, corr, hyper)
}

/// Fits any method. `hyper.gamma` is ignored by the stimulus-unaware ones.
pub fn fit(method: Method, corr: &CorrelationSet, hyper: Hyper) -> Result<GroupModel, EstimatorError> {
    match method {
        Method::Gcca => gcca_fit(corr, hyper.mu, hyper.q),
        Method::CorrCa => corrca_fit(corr, hyper.mu, hyper.q),
        Method::SiGcca => sigcca_fit(corr, hyper.mu, hyper.gamma, hyper.q),
        Method::SiCorrCa => sicorrca_fit(corr, hyper.mu, hyper.gamma, hyper.q),
    }
}

/// First-component fits of one method over many `(mu, gamma)` points.
///
/// The left matrix of every pencil is block diagonal: one block per subject
/// (or a single pooled block for corrCA variants) plus the stimulus block.
/// Each block is diagonalized once, `R_b = U_b D_b U_b'`. Loading by `mu`
/// only shifts `D_b`, and `gamma` scales the stimulus rows of the right
/// matrix, so the whitened problem at any grid point is a diagonal rescaling
/// of the fixed matrix `G = U' B(1) U`. Only its leading eigenpair is
/// computed.
pub struct LeadingSolver<'a> {
    method: Method,
    corr: &'a CorrelationSet,
    /// `(offset, U_b, D_b)` per block, in pencil order.
    blocks: Vec<(usize, Mat<f64>, Vec<f64>)>,
    /// Index of the stimulus block, if any.
    stim_block: Option<usize>,
    g: Mat<f64>,
}

impl<'a> LeadingSolver<'a> {
    pub fn new(method: Method, corr: &'a CorrelationSet) -> Result<Self, EstimatorError> {
        let (m, k) = (corr.block_dim(), corr.n_subjects());
        if !method.shares_decoder() && k < 2 {
            return Err(EstimatorError::TooFewSubjects(k));
        }
        let pencil = match method {
            Method::Gcca => gcca_pencil(corr, 0.0)?,
            Method::CorrCa => corrca_pencil(corr, 0.0)?,
            Method::SiGcca => sigcca_pencil(corr, 0.0, 1.0)?,
            Method::SiCorrCa => sicorrca_pencil(corr, 0.0, 1.0)?,
        };
        let mut sizes = if method.shares_decoder() { vec![m] } else { vec![m; k] };
        let stim_block = if method.uses_stimulus() {
            sizes.push(corr.stim_dim());
            Some(sizes.len() - 1)
        } else {
            None
        };
        let (a, b) = (pencil.a(), pencil.b());
        let mut blocks = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &size in &sizes {
            let evd = a
                .submatrix(offset, offset, size, size)
                .self_adjoint_eigen(faer::Side::Lower)
                .map_err(|_| LinalgError::NoConvergence)?;
            let d = (0..size).map(|i| evd.S().column_vector()[i]).collect();
            blocks.push((offset, evd.U().to_owned(), d));
            offset += size;
        }
        let mut g = Mat::<f64>::zeros(offset, offset);
        for (oi, ui, _) in &blocks {
            for (oj, uj, _) in &blocks {
                let bij = b.submatrix(*oi, *oj, ui.nrows(), uj.nrows());
                let gij = ui.transpose() * bij * uj;
                g.as_mut().submatrix_mut(*oi, *oj, ui.nrows(), uj.nrows()).copy_from(&gij);
            }
        }
        symmetrize(&mut g);
        Ok(Self {
            method,
            corr,
            blocks,
            stim_block,
            g,
        })
    }

    /// The first component at `(mu, gamma)`, scaled like [`fit`] scales it.
    /// Falls back to [`fit`] when a loaded block is numerically singular.
    pub fn fit(&self, mu: f64, gamma: f64) -> Result<GroupModel, EstimatorError> {
        let hyper = Hyper::new(mu, gamma, 1);
        hyper.validate()?;
        let n = self.g.nrows();
        // loaded block eigenvalues and the right-matrix row scaling
        let mut loaded = vec![0.0; n];
        let mut row_scale = vec![0.0; n];
        let mut active = Vec::with_capacity(n);
        for (bi, (offset, _, d)) in self.blocks.iter().enumerate() {
            let is_stim = Some(bi) == self.stim_block;
            if is_stim && gamma == 0.0 {
                continue;
            }
            let (weight, scale) = if is_stim { (gamma, gamma) } else { (1.0, 1.0) };
            for (i, di) in d.iter().enumerate() {
                loaded[offset + i] = weight * di + mu;
                row_scale[offset + i] = scale;
                active.push(offset + i);
            }
        }
        let top = active.iter().map(|&i| loaded[i]).fold(0.0, f64::max);
        if !(top > 0.0 && top.is_finite()) || active.iter().any(|&i| !(loaded[i] > 1e-10 * top)) {
            return fit(self.method, self.corr, hyper);
        }
        let c: Vec<f64> = active.iter().map(|&i| row_scale[i] / loaded[i].sqrt()).collect();
        let whitened = Mat::from_fn(active.len(), active.len(), |i, j| {
            c[i] * self.g[(active[i], active[j])] * c[j]
        });
        let (theta, u) = crate::linalg::sym_leading_eigenpair(whitened.as_ref())?;
        if !(theta > 0.0) {
            return fit(self.method, self.corr, hyper);
        }
        // w' B w = u' C u = theta, so unit-norm S needs a factor sqrt(theta)
        let unit = theta.sqrt();
        let mut rotated = vec![0.0; n];
        for (i, &idx) in active.iter().enumerate() {
            rotated[idx] = unit * u[(i, 0)] / loaded[idx].sqrt();
        }
        let mut w = Mat::<f64>::zeros(n, 1);
        for (offset, ub, _) in &self.blocks {
            let size = ub.nrows();
            let part = ub * MatRef::from_column_major_slice(&rotated[*offset..offset + size], size, 1);
            w.as_mut().submatrix_mut(*offset, 0, size, 1).copy_from(&part);
        }
        crate::linalg::canonicalize_signs(&mut w);

        let (m, k, p) = (self.corr.block_dim(), self.corr.n_subjects(), self.corr.stim_dim());
        let decoders = if self.method.shares_decoder() {
            vec![w.as_ref().subrows(0, m).to_owned(); k]
        } else {
            (0..k).map(|i| w.as_ref().subrows(i * m, m).to_owned()).collect()
        };
        let encoder = self.stim_block.map(|bi| {
            if gamma > 0.0 {
                w.as_ref().subrows(self.blocks[bi].0, p).to_owned()
            } else {
                Mat::zeros(p, 1)
            }
        });
        Ok(GroupModel {
            method: self.method,
            decoders,
            encoder,
            eigenvalues: vec![1.0 / theta],
            hyper,
            jitter: 0.0,
        })
    }
}

/// Rescales every component so that the training shared subspace
/// `S = (sum_k X_k W_k + gamma Y V) Sigma` has unit-norm columns.
///
/// The norm comes from the correlation matrices:
/// `||s_q||^2 = sigma_q^2 w_q' B w_q` with `B` the right-hand pencil matrix.
pub fn scale_model(mut model: GroupModel, corr: &CorrelationSet) -> Result<GroupModel, EstimatorError> {
    let q = model.q();
    let b = right_matrix(model.method, corr, model.hyper.gamma)?;
    let w = model.stacked();
    if w.nrows() != b.nrows() || w.ncols() != q {
        return Err(EstimatorError::ShapeMismatch(format!(
            "model stacks to {}x{}, pencil has dimension {}",
            w.nrows(),
            w.ncols(),
            b.nrows()
        )));
    }
    let bw = &b * &w;
    let mut factors = Vec::with_capacity(q);
    for j in 0..q {
        let quad: f64 = (0..w.nrows()).map(|i| w[(i, j)] * bw[(i, j)]).sum();
        let norm = model.eigenvalues[j].abs() * quad.max(0.0).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(EstimatorError::DegenerateComponent(j));
        }
        factors.push(1.0 / norm);
    }
    let rescale = |m: &mut Mat<f64>| {
        for (j, f) in factors.iter().enumerate() {
            for i in 0..m.nrows() {
                m[(i, j)] *= f;
            }
        }
    };
    for d in &mut model.decoders {
        rescale(d);
    }
    if let Some(v) = &mut model.encoder {
        rescale(v);
    }
    Ok(model)
}

/// `Z_k = X_k W_k` and their average. The stimulus plays no role at test
/// time.
pub fn project(model: &GroupModel, lagged: &[LagMatrix]) -> Result<ProjectedSignals, EstimatorError> {
    let views: Vec<MatRef<'_, f64>> = lagged.iter().map(|x| x.data()).collect();
    project_views(model, &views)
}

pub(crate) fn project_views(
    model: &GroupModel,
    views: &[MatRef<'_, f64>],
) -> Result<ProjectedSignals, EstimatorError> {
    if views.len() != model.n_subjects() {
        return Err(EstimatorError::ShapeMismatch(format!(
            "{} views for a {}-subject model",
            views.len(),
            model.n_subjects()
        )));
    }
    let t = views.first().map(|x| x.nrows()).unwrap_or(0);
    let mut per_subject = Vec::with_capacity(views.len());
    for (k, (x, w)) in views.iter().zip(&model.decoders).enumerate() {
        if x.ncols() != w.nrows() || x.nrows() != t {
            return Err(EstimatorError::ShapeMismatch(format!(
                "subject {k}: data is {}x{}, decoder is {}x{}",
                x.nrows(),
                x.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        per_subject.push(*x * w);
    }
    let mut shared_average = Mat::<f64>::zeros(t, model.q());
    for z in &per_subject {
        shared_average += z;
    }
    let inv = 1.0 / per_subject.len() as f64;
    shared_average = inv * &shared_average;
    Ok(ProjectedSignals {
        per_subject,
        shared_average,
    })
}

/// The training shared subspace `S = (sum_k X_k W_k + gamma Y V) Sigma`
/// reconstructed from raw data.
pub fn shared_subspace(
    model: &GroupModel,
    lagged: &[LagMatrix],
    stimulus: Option<&LagMatrix>,
) -> Result<Mat<f64>, EstimatorError> {
    let proj = project(model, lagged)?;
    let k = proj.per_subject.len() as f64;
    let mut s = k * &proj.shared_average;
    if let (Some(v), Some(y)) = (&model.encoder, stimulus) {
        if model.hyper.gamma > 0.0 {
            if y.ncols() != v.nrows() {
                return Err(EstimatorError::ShapeMismatch("stimulus width".into()));
            }
            s += model.hyper.gamma * (y.data() * v);
        }
    }
    for j in 0..s.ncols() {
        let sigma = model.eigenvalues[j];
        for i in 0..s.nrows() {
            s[(i, j)] *= sigma;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{compute_correlations, LagSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
        Mat::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn views(mats: Vec<Mat<f64>>) -> Vec<LagMatrix> {
        let spec = LagSpec::new(0, 0).unwrap();
        mats.into_iter()
            .map(|m| {
                let c = m.ncols();
                LagMatrix::from_parts(m, spec, c).unwrap()
            })
            .collect()
    }

    fn random_problem(seed: u64, k: usize, m: usize, p: usize, t: usize) -> (Vec<LagMatrix>, LagMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared = randn(&mut rng, t, 2);
        let xs = (0..k)
            .map(|_| {
                let mix = randn(&mut rng, 2, m);
                &shared * &mix + randn(&mut rng, t, m)
            })
            .collect();
        let y = &shared * randn(&mut rng, 2, p) + 0.5 * randn(&mut rng, t, p);
        let mut v = views(xs);
        let y = views(vec![y]).pop().unwrap();
        v.shrink_to_fit();
        (v, y)
    }

    fn sts(s: &Mat<f64>) -> Mat<f64> {
        s.transpose() * s
    }

    #[test]
    fn identical_subjects_give_one_over_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, 200, 4);
        let xs = views(vec![x.clone(), x.clone(), x]);
        let corr = compute_correlations(&xs, None).unwrap();
        let g = gcca_fit(&corr, 0.0, 1).unwrap();
        assert!((g.eigenvalues[0] - 1.0 / 3.0).abs() < 1e-9);
        let c = corrca_fit(&corr, 0.0, 4).unwrap();
        for l in &c.eigenvalues {
            assert!((l - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn corrca_single_subject_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = views(vec![randn(&mut rng, 50, 3)]);
        let corr = compute_correlations(&xs, None).unwrap();
        let c = corrca_fit(&corr, 0.0, 3).unwrap();
        for l in &c.eigenvalues {
            assert!((l - 1.0).abs() < 1e-10);
        }
        assert_eq!(corrca_pencil(&corr, 0.0).unwrap().dim(), 3);
    }

    #[test]
    fn pencil_dimensions() {
        let (xs, y) = random_problem(3, 4, 5, 3, 100);
        let corr = compute_correlations(&xs, Some(&y)).unwrap();
        assert_eq!(gcca_pencil(&corr, 0.1).unwrap().dim(), 20);
        assert_eq!(corrca_pencil(&corr, 0.1).unwrap().dim(), 5);
        assert_eq!(sigcca_pencil(&corr, 0.1, 2.0).unwrap().dim(), 23);
        assert_eq!(sicorrca_pencil(&corr, 0.1, 2.0).unwrap().dim(), 8);
        let a = sigcca_pencil(&corr, 0.1, 2.0).unwrap();
        assert_eq!(a.a().to_owned(), a.a().transpose().to_owned());
    }

    #[test]
    fn shared_subspace_is_orthonormal_for_every_method() {
        let (xs, y) = random_problem(4, 3, 4, 3, 300);
        let corr = compute_correlations(&xs, Some(&y)).unwrap();
        for method in Method::ALL {
            let model = fit(method, &corr, Hyper::new(0.5, 3.0, 3)).unwrap();
            let s = shared_subspace(&model, &xs, Some(&y)).unwrap();
            let g = sts(&s);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g[(i, j)] - want).abs() < 1e-8, "{method} {i} {j} {}", g[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn leading_solver_matches_the_full_fit() {
        let (xs, y) = random_problem(9, 4, 5, 3, 400);
        let corr = compute_correlations(&xs, Some(&y)).unwrap();
        for method in Method::ALL {
            let solver = LeadingSolver::new(method, &corr).unwrap();
            for (mu, gamma) in [(0.0, 0.0), (0.0, 1.0), (0.3, 0.01), (5.0, 1e4)] {
                let fast = solver.fit(mu, gamma).unwrap();
                let full = fit(method, &corr, Hyper::new(mu, gamma, 2)).unwrap();
                let rel = (fast.eigenvalues[0] - full.eigenvalues[0]).abs() / full.eigenvalues[0];
                assert!(rel < 1e-10, "{method} mu={mu} gamma={gamma}: {rel:e}");
                let a = fast.stacked();
                let b = full.stacked();
                for i in 0..a.nrows() {
                    let d = (a[(i, 0)] - b[(i, 0)]).abs();
                    assert!(d < 1e-7 * b[(i, 0)].abs().max(1.0), "{method} row {i}: {d:e}");
                }
                assert_eq!(fast.encoder.is_some(), full.encoder.is_some());
            }
        }
    }

    #[test]
    fn gamma_zero_dispatches() {
        let (xs, y) = random_problem(5, 3, 4, 2, 150);
        let corr = compute_correlations(&xs, Some(&y)).unwrap();
        let g = gcca_fit(&corr, 0.1, 2).unwrap();
        let s = sigcca_fit(&corr, 0.1, 0.0, 2).unwrap();
        assert_eq!(g.decoders, s.decoders);
        assert_eq!(g.eigenvalues, s.eigenvalues);
        assert_eq!(s.encoder.unwrap(), Mat::<f64>::zeros(2, 2));
        let c = corrca_fit(&corr, 0.1, 2).unwrap();
        let sc = sicorrca_fit(&corr, 0.1, 0.0, 2).unwrap();
        assert_eq!(c.decoders, sc.decoders);
    }

    #[test]
    fn scaling_ignores_input_magnitude() {
        let (xs, y) = random_problem(6, 3, 4, 2, 150);
        let corr = compute_correlations(&xs, Some(&y)).unwrap();
        let model = sigcca_fit(&corr, 0.2, 5.0, 3).unwrap();
        let mut inflated = model.clone();
        for (j, f) in [3.0, 0.01, 170.0].into_iter().enumerate() {
            for d in &mut inflated.decoders {
                for i in 0..d.nrows() {
                    d[(i, j)] *= f;
                }
            }
            let v = inflated.encoder.as_mut().unwrap();
            for i in 0..v.nrows() {
                v[(i, j)] *= f;
            }
        }
        let rescaled = scale_model(inflated, &corr).unwrap();
        for (a, b) in rescaled.decoders.iter().zip(&model.decoders) {
            for j in 0..3 {
                for i in 0..a.nrows() {
                    assert!((a[(i, j)] - b[(i, j)]).abs() <= 1e-12 * b[(i, j)].abs().max(1e-3));
                }
            }
        }
    }

    #[test]
    fn projection_identity_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = randn(&mut rng, 10, 3);
        let model = GroupModel {
            method: Method::Gcca,
            decoders: vec![Mat::identity(3, 3), Mat::identity(3, 3)],
            encoder: None,
            eigenvalues: vec![0.5; 3],
            hyper: Hyper::new(0.0, 0.0, 3),
            jitter: 0.0,
        };
        let p = project(&model, &views(vec![x.clone(), x.clone()])).unwrap();
        assert_eq!(p.per_subject[0], x);
        assert_eq!(p.shared_average, x);

        let ws = vec![randn(&mut rng, 3, 2), randn(&mut rng, 3, 2), randn(&mut rng, 3, 2)];
        let xs = vec![randn(&mut rng, 10, 3), randn(&mut rng, 10, 3), randn(&mut rng, 10, 3)];
        let model = GroupModel {
            decoders: ws.clone(),
            eigenvalues: vec![0.5; 2],
            hyper: Hyper::new(0.0, 0.0, 2),
            ..model
        };
        let p = project(&model, &views(xs.clone())).unwrap();
        for t in 0..10 {
            for q in 0..2 {
                let naive: f64 = (0..3)
                    .map(|k| (0..3).map(|c| xs[k][(t, c)] * ws[k][(c, q)]).sum::<f64>())
                    .sum::<f64>()
                    / 3.0;
                assert!((p.shared_average[(t, q)] - naive).abs() < 1e-12);
            }
        }
        assert!(project(&model, &views(xs[..2].to_vec())).is_err());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let (xs, y) = random_problem(8, 2, 3, 2, 60);
        let corr = compute_correlations(&xs, Some(&y)).unwrap();
        assert!(matches!(
            sigcca_fit(&corr, 0.0, -1.0, 1),
            Err(EstimatorError::InvalidHyper { name: "gamma", .. })
        ));
        assert!(matches!(
            gcca_fit(&corr, 0.0, 7),
            Err(EstimatorError::TooManyComponents { q: 7, dim: 6 })
        ));
        let no_stim = compute_correlations(&xs, None).unwrap();
        assert_eq!(sigcca_fit(&no_stim, 0.0, 1.0, 1).unwrap_err(), EstimatorError::MissingStimulus);
    }
}
