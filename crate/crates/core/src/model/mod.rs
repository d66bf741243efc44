//! Statistical models: the height toy model and the three negative-binomial
//! defect models.
//!
//! * `Toy`: `h ~ Normal(μ, σ)`, `μ ~ Normal(170, 50)`, `σ ~ HalfCauchy(0, 1)`.
//! * `M1`: `log λ = α + α_language`.
//! * `M2`: `log λ = α + β·x + α_language`.
//! * `M3`: `log λ = α + β·x + α_language + β_language·x + α_project`, where
//!   `(α_language, β_language)` is multivariate normal with covariance
//!   `D ℒ ℒᵀ D`, `D = diag(σ_α, σ_β)`.
//!
//! All group effects are non-centered: the sampler sees standard-normal
//! draws that are scaled (and, for M3, correlated) into natural space.
//! Positive scalars are log-transformed; the correlation factor uses the
//! transform in [`corr`].
//!
//! Unconstrained layout, in order:
//!
//! | variant | coordinates |
//! |---|---|
//! | Toy | `μ`, `ln σ` (omitted when σ is fixed) |
//! | M1 | `α`, `z_language[L]`, `ln σ_α`, `ln φ` |
//! | M2 | `α`, `β[4]`, `z_language[L]`, `ln σ_α`, `ln φ` |
//! | M3 | `α`, `β[4]`, `z_language[L×5]`, `z_project[P]`, `ln σ_α`, `ln σ_β[4]`, `ln σ_γ`, `corr[10]`, `ln φ` |

pub mod corr;
pub mod nb;

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Normal, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{PreparedRow, N_PREDICTORS};
use crate::error::{Error, Result};

pub use nb::{nb_logpmf, sample_nb};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// Size of the M3 language-level effect vector: intercept plus one slope
/// per predictor.
pub const LANGUAGE_EFFECTS: usize = 1 + N_PREDICTORS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Toy,
    M1,
    M2,
    M3,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Toy => "toy",
            Variant::M1 => "m1",
            Variant::M2 => "m2",
            Variant::M3 => "m3",
        }
    }

    pub fn has_slopes(self) -> bool {
        matches!(self, Variant::M2 | Variant::M3)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toy" => Ok(Variant::Toy),
            "m1" => Ok(Variant::M1),
            "m2" => Ok(Variant::M2),
            "m3" => Ok(Variant::M3),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Toy => "Toy",
            Variant::M1 => "M1",
            Variant::M2 => "M2",
            Variant::M3 => "M3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    fn log_density(&self, x: f64) -> (f64, f64) {
        let z = (x - self.mean) / self.sd;
        (-0.5 * z * z - self.sd.ln() - LN_SQRT_2PI, -z / self.sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullPrior {
    pub shape: f64,
    pub scale: f64,
}

impl WeibullPrior {
    /// Density of `σ = exp(s)` including the log-Jacobian `s`; returns the
    /// value and its derivative in `s`.
    fn log_density_log_scale(&self, s: f64) -> (f64, f64) {
        let k = self.shape;
        let t = k * (s - self.scale.ln());
        let pow = t.exp();
        (k.ln() - self.scale.ln() + t - pow, k - k * pow)
    }

    pub fn density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let k = self.shape;
        let r = x / self.scale;
        k / self.scale * r.powf(k - 1.0) * (-r.powf(k)).exp()
    }

    pub fn sd(&self) -> f64 {
        let g1 = ln_gamma(1.0 + 1.0 / self.shape).exp();
        let g2 = ln_gamma(1.0 + 2.0 / self.shape).exp();
        self.scale * (g2 - g1 * g1).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    fn log_density_log_scale(&self, s: f64) -> (f64, f64) {
        let a = self.shape;
        let b = self.rate;
        let x = s.exp();
        (a * b.ln() - ln_gamma(a) + a * s - b * x, a - b * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfCauchyPrior {
    pub location: f64,
    pub scale: f64,
}

impl HalfCauchyPrior {
    fn log_density_log_scale(&self, s: f64) -> (f64, f64) {
        let x = s.exp();
        let r = (x - self.location) / self.scale;
        let value =
            std::f64::consts::LN_2 - std::f64::consts::PI.ln() - self.scale.ln() - (r * r).ln_1p()
                + s;
        let grad = 1.0 - 2.0 * r * x / (self.scale * (1.0 + r * r));
        (value, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub intercept: NormalPrior,
    pub slope: NormalPrior,
    pub group_sd: WeibullPrior,
    pub dispersion: GammaPrior,
    pub correlation_eta: f64,
    pub toy_mu: NormalPrior,
    pub toy_sigma: HalfCauchyPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            intercept: NormalPrior { mean: 0.0, sd: 5.0 },
            slope: NormalPrior { mean: 0.0, sd: 0.5 },
            group_sd: WeibullPrior {
                shape: 2.0,
                scale: 1.0,
            },
            dispersion: GammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            correlation_eta: 2.0,
            toy_mu: NormalPrior {
                mean: 170.0,
                sd: 50.0,
            },
            toy_sigma: HalfCauchyPrior {
                location: 0.0,
                scale: 1.0,
            },
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.intercept.sd,
            self.slope.sd,
            self.group_sd.shape,
            self.group_sd.scale,
            self.dispersion.shape,
            self.dispersion.rate,
            self.toy_mu.sd,
            self.toy_sigma.scale,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("prior scales and shapes must be positive"));
        }
        if !(self.correlation_eta >= 1.0) {
            return Err(Error::invalid("LKJ η must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub n_languages: usize,
    pub n_projects: usize,
    pub priors: PriorConfig,
    /// Toy only: hold σ at this value instead of estimating it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy_fixed_sigma: Option<f64>,
}

impl ModelSpec {
    pub fn new(variant: Variant, n_languages: usize, n_projects: usize) -> Self {
        ModelSpec {
            variant,
            n_languages,
            n_projects,
            priors: PriorConfig::default(),
            toy_fixed_sigma: None,
        }
    }

    pub fn toy() -> Self {
        Self::new(Variant::Toy, 0, 0)
    }

    pub fn toy_with_fixed_sigma(sigma: f64) -> Self {
        ModelSpec {
            toy_fixed_sigma: Some(sigma),
            ..Self::toy()
        }
    }

    /// Spec matching the group structure of `dataset`.
    pub fn for_dataset(variant: Variant, dataset: &crate::data::Dataset) -> Self {
        Self::new(variant, dataset.n_languages(), dataset.n_projects())
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        match self.variant {
            Variant::Toy => {
                if let Some(s) = self.toy_fixed_sigma {
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(Error::invalid("fixed σ must be positive"));
                    }
                }
            }
            Variant::M1 | Variant::M2 => {
                if self.n_languages == 0 {
                    return Err(Error::invalid("model needs at least one language"));
                }
            }
            Variant::M3 => {
                if self.n_languages == 0 || self.n_projects == 0 {
                    return Err(Error::invalid("M3 needs at least one language and project"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        Layout::new(self).dim
    }

    /// Human-readable label of each unconstrained coordinate.
    pub fn coordinate_names(&self) -> Vec<String> {
        let lay = Layout::new(self);
        let mut names = vec![String::new(); lay.dim];
        match self.variant {
            Variant::Toy => {
                names[0] = "mu".into();
                if lay.dim > 1 {
                    names[1] = "log_sigma".into();
                }
                return names;
            }
            _ => {}
        }
        names[lay.alpha] = "alpha".into();
        if let Some(b) = lay.beta {
            for k in 0..N_PREDICTORS {
                names[b + k] = format!("beta[{k}]");
            }
        }
        for l in 0..self.n_languages {
            for c in 0..lay.lang_width {
                names[lay.z_lang + l * lay.lang_width + c] = if lay.lang_width == 1 {
                    format!("z_language[{l}]")
                } else {
                    format!("z_language[{l},{c}]")
                };
            }
        }
        if let Some(p) = lay.z_proj {
            for j in 0..self.n_projects {
                names[p + j] = format!("z_project[{j}]");
            }
        }
        names[lay.log_sd] = "log_sigma_alpha".into();
        if lay.lang_width > 1 {
            for k in 0..N_PREDICTORS {
                names[lay.log_sd + 1 + k] = format!("log_sigma_beta[{k}]");
            }
        }
        if let Some(g) = lay.log_sigma_gamma {
            names[g] = "log_sigma_gamma".into();
        }
        if let Some(c) = lay.corr {
            for j in 0..corr::n_free(LANGUAGE_EFFECTS) {
                names[c + j] = format!("corr_free[{j}]");
            }
        }
        names[lay.log_phi] = "log_phi".into();
        names
    }

    /// Selectors (see [`Params::get`]) of every natural-space scalar except
    /// the correlation factor.
    pub fn parameter_names(&self) -> Vec<String> {
        if self.variant == Variant::Toy {
            let mut v = vec!["mu".to_string()];
            if self.toy_fixed_sigma.is_none() {
                v.push("sigma".into());
            }
            return v;
        }
        let mut v = vec!["alpha".to_string()];
        if self.variant.has_slopes() {
            v.extend((0..N_PREDICTORS).map(|k| format!("beta[{k}]")));
        }
        v.extend((0..self.n_languages).map(|l| format!("alpha_language[{l}]")));
        if self.variant == Variant::M3 {
            for l in 0..self.n_languages {
                v.extend((0..N_PREDICTORS).map(|k| format!("beta_language[{l},{k}]")));
            }
            v.extend((0..self.n_projects).map(|p| format!("alpha_project[{p}]")));
        }
        v.push("sigma_alpha".into());
        if self.variant == Variant::M3 {
            v.extend((0..N_PREDICTORS).map(|k| format!("sigma_beta[{k}]")));
            v.push("sigma_gamma".into());
        }
        v.push("phi".into());
        v
    }
}

/// Offsets of each parameter block in the unconstrained vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub alpha: usize,
    pub beta: Option<usize>,
    pub z_lang: usize,
    pub lang_width: usize,
    pub z_proj: Option<usize>,
    /// `ln σ_α` followed, for M3, by `ln σ_β[4]`.
    pub log_sd: usize,
    pub log_sigma_gamma: Option<usize>,
    pub corr: Option<usize>,
    pub log_phi: usize,
    pub dim: usize,
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Self {
        let l = spec.n_languages;
        match spec.variant {
            Variant::Toy => {
                let dim = if spec.toy_fixed_sigma.is_some() { 1 } else { 2 };
                Layout {
                    alpha: 0,
                    beta: None,
                    z_lang: 0,
                    lang_width: 0,
                    z_proj: None,
                    log_sd: 1,
                    log_sigma_gamma: None,
                    corr: None,
                    log_phi: 1,
                    dim,
                }
            }
            Variant::M1 => Layout {
                alpha: 0,
                beta: None,
                z_lang: 1,
                lang_width: 1,
                z_proj: None,
                log_sd: 1 + l,
                log_sigma_gamma: None,
                corr: None,
                log_phi: 2 + l,
                dim: 3 + l,
            },
            Variant::M2 => Layout {
                alpha: 0,
                beta: Some(1),
                z_lang: 5,
                lang_width: 1,
                z_proj: None,
                log_sd: 5 + l,
                log_sigma_gamma: None,
                corr: None,
                log_phi: 6 + l,
                dim: 7 + l,
            },
            Variant::M3 => {
                let p = spec.n_projects;
                let z_lang = 5;
                let z_proj = z_lang + LANGUAGE_EFFECTS * l;
                let log_sd = z_proj + p;
                let log_sigma_gamma = log_sd + LANGUAGE_EFFECTS;
                let corr = log_sigma_gamma + 1;
                let log_phi = corr + corr::n_free(LANGUAGE_EFFECTS);
                Layout {
                    alpha: 0,
                    beta: Some(1),
                    z_lang,
                    lang_width: LANGUAGE_EFFECTS,
                    z_proj: Some(z_proj),
                    log_sd,
                    log_sigma_gamma: Some(log_sigma_gamma),
                    corr: Some(corr),
                    log_phi,
                    dim: log_phi + 1,
                }
            }
        }
    }
}

/// Natural-space parameter values. Blocks that a variant does not use are
/// left empty (vectors) or at neutral values (scalars).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub alpha: f64,
    pub beta: [f64; N_PREDICTORS],
    pub alpha_language: Vec<f64>,
    pub beta_language: Vec<[f64; N_PREDICTORS]>,
    pub alpha_project: Vec<f64>,
    pub sigma_alpha: f64,
    pub sigma_beta: [f64; N_PREDICTORS],
    pub sigma_gamma: f64,
    /// Row-major lower-triangular Cholesky factor of the 5×5 language-effect
    /// correlation matrix (M3); empty otherwise.
    pub corr_chol: Vec<f64>,
    pub phi: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Params {
    fn empty() -> Self {
        Params {
            alpha: 0.0,
            beta: [0.0; N_PREDICTORS],
            alpha_language: Vec::new(),
            beta_language: Vec::new(),
            alpha_project: Vec::new(),
            sigma_alpha: 1.0,
            sigma_beta: [1.0; N_PREDICTORS],
            sigma_gamma: 1.0,
            corr_chol: Vec::new(),
            phi: 1.0,
            mu: 0.0,
            sigma: 1.0,
        }
    }

    /// Language-effect covariance `D ℒ ℒᵀ D` (row-major 5×5), M3 only.
    pub fn language_covariance(&self) -> Option<Vec<f64>> {
        if self.corr_chol.len() != LANGUAGE_EFFECTS * LANGUAGE_EFFECTS {
            return None;
        }
        let n = LANGUAGE_EFFECTS;
        let mut d = [0.0; LANGUAGE_EFFECTS];
        d[0] = self.sigma_alpha;
        d[1..].copy_from_slice(&self.sigma_beta);
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n)
                    .map(|k| self.corr_chol[i * n + k] * self.corr_chol[j * n + k])
                    .sum();
                s[i * n + j] = d[i] * d[j] * dot;
            }
        }
        Some(s)
    }

    /// Named scalar lookup used by interval summaries, e.g. `alpha`,
    /// `beta[1]`, `alpha_language[3]`, `beta_language[3,1]`, `sigma_gamma`.
    pub fn get(&self, selector: &str) -> Option<f64> {
        let (name, idx) = match selector.find('[') {
            Some(open) => {
                let inner = selector[open + 1..].strip_suffix(']')?;
                let idx: Vec<usize> = inner
                    .split(',')
                    .map(|s| s.trim().parse().ok())
                    .collect::<Option<_>>()?;
                (&selector[..open], idx)
            }
            None => (selector, Vec::new()),
        };
        match (name, idx.as_slice()) {
            ("alpha", []) => Some(self.alpha),
            ("beta", [k]) => self.beta.get(*k).copied(),
            ("alpha_language", [l]) => self.alpha_language.get(*l).copied(),
            ("beta_language", [l, k]) => self.beta_language.get(*l)?.get(*k).copied(),
            ("alpha_project", [p]) => self.alpha_project.get(*p).copied(),
            ("sigma_alpha", []) => Some(self.sigma_alpha),
            ("sigma_beta", [k]) => self.sigma_beta.get(*k).copied(),
            ("sigma_gamma", []) => Some(self.sigma_gamma),
            ("phi", []) => Some(self.phi),
            ("mu", []) => Some(self.mu),
            ("sigma", []) => Some(self.sigma),
            _ => None,
        }
    }
}

/// Observed outcomes paired with their design.
#[derive(Debug, Clone, Copy)]
pub enum Observations<'a> {
    Counts(&'a [PreparedRow]),
    Heights(&'a [f64]),
}

impl<'a> Observations<'a> {
    pub fn len(&self) -> usize {
        match self {
            Observations::Counts(r) => r.len(),
            Observations::Heights(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outcomes(&self) -> Vec<f64> {
        match self {
            Observations::Counts(r) => r.iter().map(|r| r.bugs as f64).collect(),
            Observations::Heights(h) => h.to_vec(),
        }
    }
}

impl<'a> From<&'a crate::data::Dataset> for Observations<'a> {
    fn from(ds: &'a crate::data::Dataset) -> Self {
        Observations::Counts(&ds.rows)
    }
}

/// Owned counterpart of [`Observations`], used for simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ObservedData {
    Counts(Vec<PreparedRow>),
    Heights(Vec<f64>),
}

impl ObservedData {
    pub fn view(&self) -> Observations<'_> {
        match self {
            ObservedData::Counts(r) => Observations::Counts(r),
            ObservedData::Heights(h) => Observations::Heights(h),
        }
    }

    /// Same design with the outcomes replaced by `y`.
    pub fn with_outcomes(design: Observations<'_>, y: &[f64]) -> Self {
        match design {
            Observations::Counts(rows) => ObservedData::Counts(
                rows.iter()
                    .zip(y)
                    .map(|(r, &v)| PreparedRow {
                        bugs: v.max(0.0).min(u64::MAX as f64) as u64,
                        ..*r
                    })
                    .collect(),
            ),
            Observations::Heights(_) => ObservedData::Heights(y.to_vec()),
        }
    }
}

fn check_len(spec: &ModelSpec, u: &[f64]) -> Result<()> {
    let dim = spec.dim();
    if u.len() != dim {
        return Err(Error::ModelMismatch(format!(
            "unconstrained vector has length {}, model {} expects {dim}",
            u.len(),
            spec.variant
        )));
    }
    Ok(())
}

fn check_observations(spec: &ModelSpec, obs: Observations<'_>) -> Result<()> {
    match (spec.variant, obs) {
        (Variant::Toy, Observations::Heights(_)) => Ok(()),
        (Variant::Toy, _) => Err(Error::ModelMismatch("toy model expects heights".into())),
        (_, Observations::Heights(_)) => Err(Error::ModelMismatch(
            "count models expect count observations".into(),
        )),
        (_, Observations::Counts(rows)) => check_rows(spec, rows),
    }
}

fn check_rows(spec: &ModelSpec, rows: &[PreparedRow]) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.language_index >= spec.n_languages {
            return Err(Error::ModelMismatch(format!(
                "row {i}: language index {} out of range",
                r.language_index
            )));
        }
        if spec.variant == Variant::M3 && r.project_index >= spec.n_projects {
            return Err(Error::ModelMismatch(format!(
                "row {i}: project index {} out of range",
                r.project_index
            )));
        }
    }
    Ok(())
}

pub fn constrain(spec: &ModelSpec, u: &[f64]) -> Result<Params> {
    check_len(spec, u)?;
    Ok(constrain_unchecked(spec, u))
}

pub(crate) fn constrain_unchecked(spec: &ModelSpec, u: &[f64]) -> Params {
    let lay = Layout::new(spec);
    let mut p = Params::empty();
    if spec.variant == Variant::Toy {
        p.mu = u[0];
        p.sigma = spec.toy_fixed_sigma.unwrap_or_else(|| u[1].exp());
        return p;
    }
    p.alpha = u[lay.alpha];
    if let Some(b) = lay.beta {
        p.beta.copy_from_slice(&u[b..b + N_PREDICTORS]);
    }
    p.sigma_alpha = u[lay.log_sd].exp();
    p.phi = u[lay.log_phi].exp();
    let nl = spec.n_languages;
    match spec.variant {
        Variant::M1 | Variant::M2 => {
            p.alpha_language = (0..nl).map(|l| p.sigma_alpha * u[lay.z_lang + l]).collect();
        }
        Variant::M3 => {
            for k in 0..N_PREDICTORS {
                p.sigma_beta[k] = u[lay.log_sd + 1 + k].exp();
            }
            let c = lay.corr.expect("M3 layout");
            let chol = corr::constrain(
                &u[c..c + corr::n_free(LANGUAGE_EFFECTS)],
                LANGUAGE_EFFECTS,
                spec.priors.correlation_eta,
            );
            let d = sd_vector(&p);
            for l in 0..nl {
                let z = &u[lay.z_lang + l * LANGUAGE_EFFECTS..][..LANGUAGE_EFFECTS];
                let e = language_effect(&chol.l, &d, z);
                p.alpha_language.push(e[0]);
                let mut b = [0.0; N_PREDICTORS];
                b.copy_from_slice(&e[1..]);
                p.beta_language.push(b);
            }
            let g = lay.log_sigma_gamma.expect("M3 layout");
            p.sigma_gamma = u[g].exp();
            let zp = lay.z_proj.expect("M3 layout");
            p.alpha_project = (0..spec.n_projects)
                .map(|j| p.sigma_gamma * u[zp + j])
                .collect();
            p.corr_chol = chol.l;
        }
        Variant::Toy => unreachable!(),
    }
    p
}

fn sd_vector(p: &Params) -> [f64; LANGUAGE_EFFECTS] {
    let mut d = [0.0; LANGUAGE_EFFECTS];
    d[0] = p.sigma_alpha;
    d[1..].copy_from_slice(&p.sigma_beta);
    d
}

/// `D (L z)` for one language.
#[inline]
fn language_effect(l: &[f64], d: &[f64; LANGUAGE_EFFECTS], z: &[f64]) -> [f64; LANGUAGE_EFFECTS] {
    let mut e = [0.0; LANGUAGE_EFFECTS];
    for i in 0..LANGUAGE_EFFECTS {
        let mut acc = 0.0;
        for k in 0..=i {
            acc += l[i * LANGUAGE_EFFECTS + k] * z[k];
        }
        e[i] = d[i] * acc;
    }
    e
}

/// Inverse of [`constrain`] for valid parameters.
pub fn unconstrain(spec: &ModelSpec, p: &Params) -> Result<Vec<f64>> {
    spec.validate()?;
    let lay = Layout::new(spec);
    let mut u = vec![0.0; lay.dim];
    if spec.variant == Variant::Toy {
        u[0] = p.mu;
        if spec.toy_fixed_sigma.is_none() {
            u[1] = positive_log(p.sigma, "sigma")?;
        }
        return Ok(u);
    }
    let nl = spec.n_languages;
    if p.alpha_language.len() != nl {
        return Err(Error::ModelMismatch("alpha_language length".into()));
    }
    u[lay.alpha] = p.alpha;
    if let Some(b) = lay.beta {
        u[b..b + N_PREDICTORS].copy_from_slice(&p.beta);
    }
    u[lay.log_sd] = positive_log(p.sigma_alpha, "sigma_alpha")?;
    u[lay.log_phi] = positive_log(p.phi, "phi")?;
    match spec.variant {
        Variant::M1 | Variant::M2 => {
            for l in 0..nl {
                u[lay.z_lang + l] = p.alpha_language[l] / p.sigma_alpha;
            }
        }
        Variant::M3 => {
            if p.beta_language.len() != nl || p.alpha_project.len() != spec.n_projects {
                return Err(Error::ModelMismatch("M3 group effect lengths".into()));
            }
            if p.corr_chol.len() != LANGUAGE_EFFECTS * LANGUAGE_EFFECTS {
                return Err(Error::ModelMismatch("corr_chol must be 5×5".into()));
            }
            for k in 0..N_PREDICTORS {
                u[lay.log_sd + 1 + k] = positive_log(p.sigma_beta[k], "sigma_beta")?;
            }
            let d = sd_vector(p);
            for l in 0..nl {
                // Forward substitution of L w = e / d.
                let mut e = [0.0; LANGUAGE_EFFECTS];
                e[0] = p.alpha_language[l];
                e[1..].copy_from_slice(&p.beta_language[l]);
                let mut z = [0.0; LANGUAGE_EFFECTS];
                for i in 0..LANGUAGE_EFFECTS {
                    let mut acc = e[i] / d[i];
                    for k in 0..i {
                        acc -= p.corr_chol[i * LANGUAGE_EFFECTS + k] * z[k];
                    }
                    z[i] = acc / p.corr_chol[i * LANGUAGE_EFFECTS + i];
                }
                u[lay.z_lang + l * LANGUAGE_EFFECTS..][..LANGUAGE_EFFECTS].copy_from_slice(&z);
            }
            let g = lay.log_sigma_gamma.expect("M3 layout");
            u[g] = positive_log(p.sigma_gamma, "sigma_gamma")?;
            let zp = lay.z_proj.expect("M3 layout");
            for j in 0..spec.n_projects {
                u[zp + j] = p.alpha_project[j] / p.sigma_gamma;
            }
            let c = lay.corr.expect("M3 layout");
            let y = corr::unconstrain(&p.corr_chol, LANGUAGE_EFFECTS);
            u[c..c + y.len()].copy_from_slice(&y);
        }
        Variant::Toy => unreachable!(),
    }
    Ok(u)
}

fn positive_log(v: f64, name: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// `log λ` for one design row.
pub fn linear_predictor(spec: &ModelSpec, p: &Params, row: &PreparedRow) -> Result<f64> {
    check_rows(spec, std::slice::from_ref(row))?;
    if spec.variant == Variant::Toy {
        return Err(Error::ModelMismatch(
            "toy model has no linear predictor".into(),
        ));
    }
    Ok(linear_predictor_unchecked(spec.variant, p, row))
}

#[inline]
pub(crate) fn linear_predictor_unchecked(variant: Variant, p: &Params, row: &PreparedRow) -> f64 {
    let l = row.language_index;
    let mut eta = p.alpha + p.alpha_language[l];
    if variant.has_slopes() {
        for k in 0..N_PREDICTORS {
            eta += p.beta[k] * row.x[k];
        }
    }
    if variant == Variant::M3 {
        for k in 0..N_PREDICTORS {
            eta += p.beta_language[l][k] * row.x[k];
        }
        eta += p.alpha_project[row.project_index];
    }
    eta
}

pub fn log_likelihood_pointwise(
    spec: &ModelSpec,
    p: &Params,
    obs: Observations<'_>,
) -> Result<Vec<f64>> {
    check_observations(spec, obs)?;
    let mut out = vec![0.0; obs.len()];
    log_likelihood_pointwise_into(spec, p, obs, &mut out);
    Ok(out)
}

pub(crate) fn log_likelihood_pointwise_into(
    spec: &ModelSpec,
    p: &Params,
    obs: Observations<'_>,
    out: &mut [f64],
) {
    match obs {
        Observations::Heights(h) => {
            let prior = NormalPrior {
                mean: p.mu,
                sd: p.sigma,
            };
            for (o, &v) in out.iter_mut().zip(h) {
                *o = prior.log_density(v).0;
            }
        }
        Observations::Counts(rows) => {
            for (o, r) in out.iter_mut().zip(rows) {
                let eta = linear_predictor_unchecked(spec.variant, p, r);
                *o = nb::nb_logpmf_log_mean(r.bugs as f64, eta, p.phi);
            }
        }
    }
}

/// Log prior density (with transform Jacobians) at `u`.
pub fn log_prior(spec: &ModelSpec, u: &[f64]) -> Result<f64> {
    check_len(spec, u)?;
    let mut grad = vec![0.0; u.len()];
    Ok(prior_with_grad(spec, &Layout::new(spec), u, &mut grad))
}

/// Adds the prior's gradient into `grad` and returns its value.
fn prior_with_grad(spec: &ModelSpec, lay: &Layout, u: &[f64], grad: &mut [f64]) -> f64 {
    let pr = &spec.priors;
    let mut lp = 0.0;
    if spec.variant == Variant::Toy {
        let (v, g) = pr.toy_mu.log_density(u[0]);
        lp += v;
        grad[0] += g;
        if spec.toy_fixed_sigma.is_none() {
            let (v, g) = pr.toy_sigma.log_density_log_scale(u[1]);
            lp += v;
            grad[1] += g;
        }
        return lp;
    }
    let (v, g) = pr.intercept.log_density(u[lay.alpha]);
    lp += v;
    grad[lay.alpha] += g;
    if let Some(b) = lay.beta {
        for k in 0..N_PREDICTORS {
            let (v, g) = pr.slope.log_density(u[b + k]);
            lp += v;
            grad[b + k] += g;
        }
    }
    let n_z = spec.n_languages * lay.lang_width;
    for j in lay.z_lang..lay.z_lang + n_z {
        lp += -0.5 * u[j] * u[j] - LN_SQRT_2PI;
        grad[j] -= u[j];
    }
    if let Some(zp) = lay.z_proj {
        for j in zp..zp + spec.n_projects {
            lp += -0.5 * u[j] * u[j] - LN_SQRT_2PI;
            grad[j] -= u[j];
        }
    }
    let mut sd_slots: Vec<usize> = (lay.log_sd..lay.log_sd + lay.lang_width.max(1)).collect();
    if let Some(g) = lay.log_sigma_gamma {
        sd_slots.push(g);
    }
    for j in sd_slots {
        let (v, g) = pr.group_sd.log_density_log_scale(u[j]);
        lp += v;
        grad[j] += g;
    }
    let (v, g) = pr.dispersion.log_density_log_scale(u[lay.log_phi]);
    lp += v;
    grad[lay.log_phi] += g;
    if let Some(c) = lay.corr {
        let n = corr::n_free(LANGUAGE_EFFECTS);
        let chol = corr::constrain(&u[c..c + n], LANGUAGE_EFFECTS, pr.correlation_eta);
        lp += chol.log_density;
        let zero = [0.0; LANGUAGE_EFFECTS * LANGUAGE_EFFECTS];
        let dy = corr::backprop(&chol, &zero, pr.correlation_eta, true);
        for (j, d) in dy.into_iter().enumerate() {
            grad[c + j] += d;
        }
    }
    lp
}

/// Log posterior (up to the evidence) at `u` and its exact gradient.
pub fn log_posterior_and_grad(
    spec: &ModelSpec,
    u: &[f64],
    obs: Observations<'_>,
) -> Result<(f64, Vec<f64>)> {
    check_len(spec, u)?;
    check_observations(spec, obs)?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite unconstrained coordinate"));
    }
    let mut grad = vec![0.0; u.len()];
    let lp = log_posterior_grad_into(spec, u, obs, &mut grad);
    Ok((lp, grad))
}

/// Unchecked evaluator used by the sampler; `grad` is overwritten.
pub(crate) fn log_posterior_grad_into(
    spec: &ModelSpec,
    u: &[f64],
    obs: Observations<'_>,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let lay = Layout::new(spec);
    let mut lp = prior_with_grad(spec, &lay, u, grad);
    match obs {
        Observations::Heights(h) => lp += toy_likelihood(spec, u, h, grad),
        Observations::Counts(rows) => lp += count_likelihood(spec, &lay, u, rows, grad),
    }
    lp
}

fn toy_likelihood(spec: &ModelSpec, u: &[f64], h: &[f64], grad: &mut [f64]) -> f64 {
    let mu = u[0];
    let (sigma, fixed) = match spec.toy_fixed_sigma {
        Some(s) => (s, true),
        None => (u[1].exp(), false),
    };
    let mut ll = 0.0;
    let mut d_mu = 0.0;
    let mut d_log_sigma = 0.0;
    for &v in h {
        let z = (v - mu) / sigma;
        ll += -0.5 * z * z - sigma.ln() - LN_SQRT_2PI;
        d_mu += z / sigma;
        d_log_sigma += z * z - 1.0;
    }
    grad[0] += d_mu;
    if !fixed {
        grad[1] += d_log_sigma;
    }
    ll
}

fn count_likelihood(
    spec: &ModelSpec,
    lay: &Layout,
    u: &[f64],
    rows: &[PreparedRow],
    grad: &mut [f64],
) -> f64 {
    let variant = spec.variant;
    let nl = spec.n_languages;
    let width = lay.lang_width;
    let alpha = u[lay.alpha];
    let mut beta = [0.0; N_PREDICTORS];
    if let Some(b) = lay.beta {
        beta.copy_from_slice(&u[b..b + N_PREDICTORS]);
    }
    let phi = u[lay.log_phi].exp();

    let mut d = [0.0; LANGUAGE_EFFECTS];
    for (c, dc) in d.iter_mut().enumerate().take(width) {
        *dc = u[lay.log_sd + c].exp();
    }
    let chol = lay.corr.map(|c| {
        corr::constrain(
            &u[c..c + corr::n_free(LANGUAGE_EFFECTS)],
            LANGUAGE_EFFECTS,
            spec.priors.correlation_eta,
        )
    });

    // Natural-space language effects, `width` per language.
    let mut effects = vec![0.0; nl * width];
    for l in 0..nl {
        let z = &u[lay.z_lang + l * width..][..width];
        match &chol {
            Some(ch) => {
                effects[l * width..][..width].copy_from_slice(&language_effect(&ch.l, &d, z))
            }
            None => effects[l] = d[0] * z[0],
        }
    }
    let (sigma_gamma, z_proj) = match (lay.log_sigma_gamma, lay.z_proj) {
        (Some(g), Some(zp)) => (u[g].exp(), &u[zp..zp + spec.n_projects]),
        _ => (0.0, &u[0..0]),
    };

    let mut ll = 0.0;
    let mut d_alpha = 0.0;
    let mut d_beta = [0.0; N_PREDICTORS];
    let mut d_effects = vec![0.0; nl * width];
    let mut d_proj = vec![0.0; z_proj.len()];
    let mut d_phi = 0.0;
    for r in rows {
        let l = r.language_index;
        let e = &effects[l * width..][..width];
        let mut eta = alpha + e[0];
        if variant.has_slopes() {
            for k in 0..N_PREDICTORS {
                eta += beta[k] * r.x[k];
            }
        }
        if variant == Variant::M3 {
            for k in 0..N_PREDICTORS {
                eta += e[1 + k] * r.x[k];
            }
            eta += sigma_gamma * z_proj[r.project_index];
        }
        let (v, g_eta, g_phi) = nb::nb_logpmf_with_grad(r.bugs as f64, eta, phi);
        ll += v;
        d_phi += g_phi;
        d_alpha += g_eta;
        if variant.has_slopes() {
            for k in 0..N_PREDICTORS {
                d_beta[k] += g_eta * r.x[k];
            }
        }
        let de = &mut d_effects[l * width..][..width];
        de[0] += g_eta;
        if variant == Variant::M3 {
            for k in 0..N_PREDICTORS {
                de[1 + k] += g_eta * r.x[k];
            }
            d_proj[r.project_index] += g_eta;
        }
    }

    grad[lay.alpha] += d_alpha;
    if let Some(b) = lay.beta {
        for k in 0..N_PREDICTORS {
            grad[b + k] += d_beta[k];
        }
    }
    grad[lay.log_phi] += d_phi * phi;

    match &chol {
        None => {
            let mut d_log_sd = 0.0;
            for l in 0..nl {
                let z = u[lay.z_lang + l];
                grad[lay.z_lang + l] += d_effects[l] * d[0];
                d_log_sd += d_effects[l] * d[0] * z;
            }
            grad[lay.log_sd] += d_log_sd;
        }
        Some(ch) => {
            let n = LANGUAGE_EFFECTS;
            let mut d_log_sd = [0.0; LANGUAGE_EFFECTS];
            let mut d_l = vec![0.0; n * n];
            for l in 0..nl {
                let z = &u[lay.z_lang + l * n..][..n];
                let de = &d_effects[l * n..][..n];
                // Gradient with respect to w = L z, where e = D w.
                let mut h = [0.0; LANGUAGE_EFFECTS];
                for i in 0..n {
                    h[i] = de[i] * d[i];
                    let w_i = effects[l * n + i] / d[i];
                    d_log_sd[i] += h[i] * w_i;
                }
                for k in 0..n {
                    let mut acc = 0.0;
                    for i in k..n {
                        acc += ch.l[i * n + k] * h[i];
                        d_l[i * n + k] += h[i] * z[k];
                    }
                    grad[lay.z_lang + l * n + k] += acc;
                }
            }
            for i in 0..n {
                grad[lay.log_sd + i] += d_log_sd[i];
            }
            // Jacobian and LKJ terms were added with the prior.
            let c = lay.corr.expect("M3 layout");
            let dy = corr::backprop(ch, &d_l, spec.priors.correlation_eta, false);
            for (j, v) in dy.into_iter().enumerate() {
                grad[c + j] += v;
            }
        }
    }
    if let Some(g) = lay.log_sigma_gamma {
        let zp = lay.z_proj.expect("M3 layout");
        let mut d_log_sg = 0.0;
        for j in 0..spec.n_projects {
            grad[zp + j] += d_proj[j] * sigma_gamma;
            d_log_sg += d_proj[j] * sigma_gamma * z_proj[j];
        }
        grad[g] += d_log_sg;
    }
    ll
}

/// One independent draw from every prior.
pub fn sample_prior<R: Rng + ?Sized>(rng: &mut R, spec: &ModelSpec) -> Params {
    let pr = &spec.priors;
    let mut p = Params::empty();
    let normal = |rng: &mut R, prior: &NormalPrior| -> f64 {
        Normal::new(prior.mean, prior.sd)
            .expect("valid normal")
            .sample(rng)
    };
    if spec.variant == Variant::Toy {
        p.mu = normal(rng, &pr.toy_mu);
        p.sigma = match spec.toy_fixed_sigma {
            Some(s) => s,
            None => {
                let c =
                    Cauchy::new(pr.toy_sigma.location, pr.toy_sigma.scale).expect("valid cauchy");
                let mut s: f64 = c.sample(rng);
                s = (s - pr.toy_sigma.location).abs() + pr.toy_sigma.location;
                s.max(f64::MIN_POSITIVE)
            }
        };
        return p;
    }
    let weibull = Weibull::new(pr.group_sd.scale, pr.group_sd.shape).expect("valid weibull");
    let group_sd = |rng: &mut R| -> f64 { weibull.sample(rng).max(f64::MIN_POSITIVE) };

    p.alpha = normal(rng, &pr.intercept);
    if spec.variant.has_slopes() {
        for k in 0..N_PREDICTORS {
            p.beta[k] = normal(rng, &pr.slope);
        }
    }
    p.sigma_alpha = group_sd(rng);
    match spec.variant {
        Variant::M1 | Variant::M2 => {
            p.alpha_language = (0..spec.n_languages)
                .map(|_| p.sigma_alpha * rng.sample::<f64, _>(StandardNormal))
                .collect();
        }
        Variant::M3 => {
            for k in 0..N_PREDICTORS {
                p.sigma_beta[k] = group_sd(rng);
            }
            p.sigma_gamma = group_sd(rng);
            p.corr_chol = corr::sample_lkj(rng, LANGUAGE_EFFECTS, pr.correlation_eta);
            let d = sd_vector(&p);
            for _ in 0..spec.n_languages {
                let z: Vec<f64> = (0..LANGUAGE_EFFECTS)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let e = language_effect(&p.corr_chol, &d, &z);
                p.alpha_language.push(e[0]);
                let mut b = [0.0; N_PREDICTORS];
                b.copy_from_slice(&e[1..]);
                p.beta_language.push(b);
            }
            p.alpha_project = (0..spec.n_projects)
                .map(|_| p.sigma_gamma * rng.sample::<f64, _>(StandardNormal))
                .collect();
        }
        Variant::Toy => unreachable!(),
    }
    let log_phi = nb::sample_log_gamma(rng, pr.dispersion.shape) - pr.dispersion.rate.ln();
    p.phi = log_phi.exp().max(f64::MIN_POSITIVE);
    p
}

/// One outcome per design row: NB counts for count models, normal heights
/// for the toy model.
pub fn simulate_outcomes<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &ModelSpec,
    p: &Params,
    design: Observations<'_>,
) -> Result<Vec<f64>> {
    match (spec.variant, design) {
        (Variant::Toy, Observations::Heights(h)) => {
            let n = Normal::new(p.mu, p.sigma).map_err(|e| Error::invalid(e.to_string()))?;
            Ok((0..h.len()).map(|_| n.sample(rng)).collect())
        }
        (_, Observations::Counts(rows)) if spec.variant != Variant::Toy => {
            check_rows(spec, rows)?;
            Ok(rows
                .iter()
                .map(|r| {
                    let eta = linear_predictor_unchecked(spec.variant, p, r);
                    nb::sample_nb(rng, eta, p.phi)
                })
                .collect())
        }
        _ => Err(Error::ModelMismatch(
            "design does not match model variant".into(),
        )),
    }
}
