//! Subject trajectories `μ_i(t)` under the four representations, their second
//! derivatives, and the curvature-based variability functionals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::FpcaFit;
use crate::splinecore::{gram_between, CurvatureTable, KnotConfig, OrthoBasis, PiecewiseLinearCurvature, SplineFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WivKind {
    /// `|μ″(t)|`
    Current,
    /// `sqrt(∫₀ᵗ μ″²)`
    Cumulative,
    /// `sqrt(∫_{max(0,t−w)}^t μ″²)`
    Windowed,
}

/// Which variability functional enters the hazard. Integration always starts
/// at time zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WivSpec {
    pub kind: WivKind,
    pub window: f64,
}

pub const DEFAULT_WINDOW: f64 = 1.0;

impl WivSpec {
    pub fn current() -> Self {
        Self { kind: WivKind::Current, window: DEFAULT_WINDOW }
    }

    pub fn cumulative() -> Self {
        Self { kind: WivKind::Cumulative, window: DEFAULT_WINDOW }
    }

    pub fn windowed(window: f64) -> Result<Self> {
        if !(window > 0.0 && window.is_finite()) {
            return Err(Error::argument(format!("window must be positive, got {window}")));
        }
        Ok(Self { kind: WivKind::Windowed, window })
    }

    /// Lower integration limit at time `t` (zero for `Current`).
    pub fn lower(&self, t: f64) -> f64 {
        match self.kind {
            WivKind::Windowed => (t - self.window).max(0.0),
            _ => 0.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            WivKind::Current => "current",
            WivKind::Cumulative => "cumulative",
            WivKind::Windowed => "windowed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Rspline,
    Pspline,
    Fpca,
    Smre,
}

impl Representation {
    pub fn label(&self) -> &'static str {
        match self {
            Representation::Rspline => "rspline",
            Representation::Pspline => "pspline",
            Representation::Fpca => "fpca",
            Representation::Smre => "smre",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    /// `μ_i = Σ (β_k + b_ik) B_k`
    RSpline { basis: SplineFamily },
    /// `μ_i = Σ β_m B_m + b_i0 + b_i1 t + Σ ζ_ik B̃_k`
    PSpline { mean: SplineFamily, ortho: SplineFamily },
    /// `μ_i = Σ β_m B_m + Σ ζ_il ψ_l`
    Fpca { mean: SplineFamily, eigen: SplineFamily, eigenvalues: Vec<f64> },
    /// `μ_i = β₀ + b_i0 + (β₁ + b_i1) t + b_i2 Σ β_m B_m`, with `B_1, B_2`
    /// excluded so that `μ` has no value or slope at the origin
    Smre { mean: SplineFamily },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryModel {
    pub variant: Variant,
}

impl TrajectoryModel {
    pub fn rspline(cfg: KnotConfig) -> Self {
        Self { variant: Variant::RSpline { basis: SplineFamily::identity(cfg) } }
    }

    pub fn pspline(mean_cfg: KnotConfig, ortho: &OrthoBasis) -> Self {
        Self { variant: Variant::PSpline { mean: SplineFamily::identity(mean_cfg), ortho: ortho.family.clone() } }
    }

    pub fn fpca(fit: &FpcaFit) -> Self {
        Self {
            variant: Variant::Fpca {
                mean: SplineFamily::identity(fit.mean.cfg.clone()),
                eigen: fit.eigen_family.clone(),
                eigenvalues: fit.eigen.eigenvalues.clone(),
            },
        }
    }

    /// SMRE with `μ(0) = μ′(0) = 0`: for a clamped cubic basis this fixes the
    /// first two coefficients at zero, so `μ` uses the remaining functions.
    pub fn smre(mean_cfg: KnotConfig) -> Result<Self> {
        let n = mean_cfg.n_basis();
        if n < 4 {
            return Err(Error::argument("SMRE needs at least 4 basis functions"));
        }
        // dropping the first two clamped columns pins μ and μ′ at the lower boundary
        if mean_cfg.lo != 0.0 || mean_cfg.extended {
            return Err(Error::argument("SMRE basis must be clamped at the time origin"));
        }
        let coef = SplineFamily::identity(mean_cfg.clone()).coef.columns(2, n - 2).into_owned();
        Ok(Self { variant: Variant::Smre { mean: SplineFamily::new(mean_cfg, coef)? } })
    }

    pub fn representation(&self) -> Representation {
        match self.variant {
            Variant::RSpline { .. } => Representation::Rspline,
            Variant::PSpline { .. } => Representation::Pspline,
            Variant::Fpca { .. } => Representation::Fpca,
            Variant::Smre { .. } => Representation::Smre,
        }
    }

    /// Length of the population coefficient block.
    pub fn pop_dim(&self) -> usize {
        match &self.variant {
            Variant::RSpline { basis } => basis.n_funcs(),
            Variant::PSpline { mean, .. } | Variant::Fpca { mean, .. } => mean.n_funcs(),
            Variant::Smre { mean } => 2 + mean.n_funcs(),
        }
    }

    /// Length of each subject's coefficient block.
    pub fn subj_dim(&self) -> usize {
        match &self.variant {
            Variant::RSpline { basis } => basis.n_funcs(),
            Variant::PSpline { ortho, .. } => 2 + ortho.n_funcs(),
            Variant::Fpca { eigen, .. } => eigen.n_funcs(),
            Variant::Smre { .. } => 3,
        }
    }

    pub fn pop_names(&self) -> Vec<String> {
        match &self.variant {
            Variant::Smre { mean } => {
                let mut v = vec!["beta0".to_string(), "beta1".into()];
                v.extend((1..=mean.n_funcs()).map(|k| format!("mu_coef[{k}]")));
                v
            }
            _ => (1..=self.pop_dim()).map(|k| format!("beta[{k}]")).collect(),
        }
    }

    pub fn subj_names(&self) -> Vec<String> {
        match &self.variant {
            Variant::RSpline { basis } => (1..=basis.n_funcs()).map(|k| format!("b{k}")).collect(),
            Variant::PSpline { ortho, .. } => {
                let mut v = vec!["b0".to_string(), "b1".into()];
                v.extend((1..=ortho.n_funcs()).map(|k| format!("zeta{k}")));
                v
            }
            Variant::Fpca { eigen, .. } => (1..=eigen.n_funcs()).map(|k| format!("zeta{k}")).collect(),
            Variant::Smre { .. } => vec!["b0".into(), "b1".into(), "b2".into()],
        }
    }

    fn check(&self, pop: &[f64], subj: &[f64]) -> Result<()> {
        if pop.len() != self.pop_dim() || subj.len() != self.subj_dim() {
            return Err(Error::argument(format!(
                "coefficient layout ({}, {}) does not match model ({}, {})",
                pop.len(),
                subj.len(),
                self.pop_dim(),
                self.subj_dim()
            )));
        }
        Ok(())
    }

    /// Families whose second derivatives make up `μ_i″`, in the order used by
    /// [`Self::curvature_coeffs`].
    pub fn curvature_families(&self) -> Vec<&SplineFamily> {
        match &self.variant {
            Variant::RSpline { basis } => vec![basis],
            Variant::PSpline { mean, ortho } => vec![mean, ortho],
            Variant::Fpca { mean, eigen, .. } => vec![mean, eigen],
            Variant::Smre { mean } => vec![mean],
        }
    }

    /// Coefficients `c` with `μ_i″(t) = Σ_j c_j f_j″(t)` over the curvature families.
    pub fn curvature_coeffs(&self, pop: &[f64], subj: &[f64]) -> Result<Vec<f64>> {
        self.check(pop, subj)?;
        Ok(match &self.variant {
            Variant::RSpline { .. } => pop.iter().zip(subj).map(|(b, u)| b + u).collect(),
            Variant::PSpline { .. } => pop.iter().chain(&subj[2..]).copied().collect(),
            Variant::Fpca { .. } => pop.iter().chain(subj).copied().collect(),
            Variant::Smre { .. } => pop[2..].iter().map(|b| subj[2] * b).collect(),
        })
    }

    fn dot_family(f: &SplineFamily, coef: &[f64], t: f64, deriv: usize) -> Result<f64> {
        Ok(f.eval(t, deriv)?.iter().zip(coef).map(|(v, c)| v * c).sum())
    }

    pub fn eval_mu(&self, pop: &[f64], subj: &[f64], t: f64) -> Result<f64> {
        self.check(pop, subj)?;
        match &self.variant {
            Variant::RSpline { basis } => {
                let c: Vec<f64> = pop.iter().zip(subj).map(|(b, u)| b + u).collect();
                Self::dot_family(basis, &c, t, 0)
            }
            Variant::PSpline { mean, ortho } => Ok(Self::dot_family(mean, pop, t, 0)?
                + subj[0]
                + subj[1] * t
                + Self::dot_family(ortho, &subj[2..], t, 0)?),
            Variant::Fpca { mean, eigen, .. } => {
                Ok(Self::dot_family(mean, pop, t, 0)? + Self::dot_family(eigen, subj, t, 0)?)
            }
            Variant::Smre { mean } => Ok(pop[0]
                + subj[0]
                + (pop[1] + subj[1]) * t
                + subj[2] * Self::dot_family(mean, &pop[2..], t, 0)?),
        }
    }

    pub fn eval_mu_dd(&self, pop: &[f64], subj: &[f64], t: f64) -> Result<f64> {
        let c = self.curvature_coeffs(pop, subj)?;
        let mut off = 0;
        let mut s = 0.0;
        for f in self.curvature_families() {
            s += Self::dot_family(f, &c[off..off + f.n_funcs()], t, 2)?;
            off += f.n_funcs();
        }
        Ok(s)
    }

    /// Block Gram `∫ₛᵗ f_j″ f_k″` over all curvature families.
    pub fn curvature_gram(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        let fams: Vec<CurvatureTable> = self.curvature_families().into_iter().map(|f| f.clone().into()).collect();
        let n: usize = fams.iter().map(|f| f.n_funcs()).sum();
        let mut g = DMatrix::zeros(n, n);
        let mut r0 = 0;
        for a in &fams {
            let mut c0 = 0;
            for b in &fams {
                let block = gram_between(a, b, s, t)?;
                g.view_mut((r0, c0), (a.n_funcs(), b.n_funcs())).copy_from(&block);
                c0 += b.n_funcs();
            }
            r0 += a.n_funcs();
        }
        Ok(g)
    }

    /// Exact piecewise-linear tabulation of all curvature functions on `[0, t_max]`.
    pub fn piecewise_curvature(&self, t_max: f64) -> Result<PiecewiseLinearCurvature> {
        PiecewiseLinearCurvature::new(&self.curvature_families(), t_max)
    }

    pub fn eval_wiv(&self, pop: &[f64], subj: &[f64], spec: &WivSpec, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("variability functional needs t ≥ 0, got {t}")));
        }
        match spec.kind {
            WivKind::Current => Ok(self.eval_mu_dd(pop, subj, t)?.abs()),
            WivKind::Cumulative | WivKind::Windowed => {
                let c = DVector::from_vec(self.curvature_coeffs(pop, subj)?);
                let g = self.curvature_gram(spec.lower(t), t)?;
                Ok(c.dot(&(&g * &c)).max(0.0).sqrt())
            }
        }
    }
}

/// One row of an exported fitted trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub mu: f64,
    pub mu_dd: f64,
    pub wiv: f64,
}

pub fn trace_trajectory(
    model: &TrajectoryModel,
    pop: &[f64],
    subj: &[f64],
    spec: &WivSpec,
    grid: &[f64],
) -> Result<Vec<TrajectoryPoint>> {
    grid.iter()
        .map(|&t| {
            Ok(TrajectoryPoint {
                t,
                mu: model.eval_mu(pop, subj, t)?,
                mu_dd: model.eval_mu_dd(pop, subj, t)?,
                wiv: model.eval_wiv(pop, subj, spec, t)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splinecore::build_ortho_basis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const T_MAX: f64 = 10.0;

    fn cfg(n: usize) -> KnotConfig {
        let (lo, hi) = KnotConfig::padded_range(0.0, T_MAX);
        KnotConfig::uniform_cubic(n, lo, hi).unwrap()
    }

    fn smre_cfg() -> KnotConfig {
        KnotConfig::uniform_cubic(13, 0.0, KnotConfig::padded_range(0.0, T_MAX).1).unwrap()
    }

    fn pspline() -> TrajectoryModel {
        let ortho = build_ortho_basis(&cfg(40), 401, 0.999).unwrap();
        TrajectoryModel::pspline(cfg(13), &ortho)
    }

    /// An FPCA-like model whose "eigenfunctions" are arbitrary smooth splines.
    fn fpca_like() -> TrajectoryModel {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = cfg(13);
        let coef = DMatrix::from_fn(13, 3, |_, _| rng.random_range(-1.0..1.0));
        TrajectoryModel {
            variant: Variant::Fpca {
                mean: SplineFamily::identity(c.clone()),
                eigen: SplineFamily::new(c, coef).unwrap(),
                eigenvalues: vec![3.0, 2.0, 1.0],
            },
        }
    }

    fn models() -> Vec<TrajectoryModel> {
        vec![TrajectoryModel::rspline(cfg(7)), pspline(), fpca_like(), TrajectoryModel::smre(smre_cfg()).unwrap()]
    }

    fn draw(m: &TrajectoryModel, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let pop = (0..m.pop_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let subj = (0..m.subj_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        (pop, subj)
    }

    fn riemann(m: &TrajectoryModel, pop: &[f64], subj: &[f64], a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| m.eval_mu_dd(pop, subj, a + (k as f64 + 0.5) * h).unwrap().powi(2) * h)
            .sum()
    }

    #[test]
    fn layouts_match_representation() {
        let m = models();
        assert_eq!((m[0].pop_dim(), m[0].subj_dim()), (7, 7));
        let k = m[1].subj_dim() - 2;
        assert!((8..=12).contains(&k));
        assert_eq!(m[1].pop_dim(), 13);
        assert_eq!(m[2].subj_dim(), 3);
        assert_eq!((m[3].pop_dim(), m[3].subj_dim()), (13, 3));
        for model in &m {
            assert_eq!(model.pop_names().len(), model.pop_dim());
            assert_eq!(model.subj_names().len(), model.subj_dim());
            assert!(matches!(model.eval_mu(&[1.0], &[], 1.0), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn zero_subject_coefficients_give_population_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in models().iter().take(3) {
            let (pop, _) = draw(m, &mut rng);
            let zero = vec![0.0; m.subj_dim()];
            let fam = &m.curvature_families()[0];
            for t in [0.0, 2.5, 7.1, 10.0] {
                let direct: f64 = fam.eval(t, 0).unwrap().iter().zip(&pop).map(|(a, b)| a * b).sum();
                assert!((m.eval_mu(&pop, &zero, t).unwrap() - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smre_unit_multiplier() {
        let m = TrajectoryModel::smre(smre_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (pop, _) = draw(&m, &mut rng);
        let Variant::Smre { mean: basis } = &m.variant else { unreachable!() };
        let v0 = m.eval_mu(&pop, &[0.0, 0.0, 1.0], 0.0).unwrap();
        assert!((v0 - pop[0]).abs() < 1e-12, "no nonlinear contribution at the origin");
        for t in [0.3, 4.0, 9.9] {
            let mu: f64 = basis.eval(t, 0).unwrap().iter().zip(&pop[2..]).map(|(a, b)| a * b).sum();
            let v = m.eval_mu(&pop, &[0.0, 0.0, 1.0], t).unwrap();
            assert!((v - (pop[0] + pop[1] * t + mu)).abs() < 1e-12);
            let d1 = m.eval_mu_dd(&pop, &[0.3, -0.2, 1.0], t).unwrap();
            let d3 = m.eval_mu_dd(&pop, &[0.3, -0.2, 3.0], t).unwrap();
            assert!((d3 - 3.0 * d1).abs() < 1e-12 * d1.abs().max(1.0));
        }
    }

    #[test]
    fn pspline_matches_direct_expansion() {
        let m = pspline();
        let Variant::PSpline { mean, ortho } = &m.variant else { unreachable!() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (pop, subj) = draw(&m, &mut rng);
            let t = rng.random_range(0.0..T_MAX);
            let bm = mean.cfg.eval_basis(t, 0).unwrap();
            let braw = ortho.cfg.eval_basis(t, 0).unwrap();
            let mut expect = subj[0] + subj[1] * t;
            expect += bm.iter().zip(&pop).map(|(a, b)| a * b).sum::<f64>();
            for (k, z) in subj[2..].iter().enumerate() {
                let f: f64 = (0..braw.len()).map(|r| braw[r] * ortho.coef[(r, k)]).sum();
                expect += z * f;
            }
            let got = m.eval_mu(&pop, &subj, t).unwrap();
            assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{got} vs {expect}");
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in models() {
            for _ in 0..10 {
                let (pop, subj) = draw(&m, &mut rng);
                let t = rng.random_range(0.5..9.5);
                let h = 1e-4;
                let f = |x: f64| m.eval_mu(&pop, &subj, x).unwrap();
                let fd = (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h);
                let dd = m.eval_mu_dd(&pop, &subj, t).unwrap();
                let scale = f(t).abs().max(1.0);
                assert!((fd - dd).abs() <= 1e-4 * dd.abs().max(scale), "{fd} vs {dd}");
            }
        }
    }

    #[test]
    fn linear_only_coefficients_have_no_curvature() {
        let m = pspline();
        let mut subj = vec![0.0; m.subj_dim()];
        subj[0] = 2.0;
        subj[1] = -0.7;
        // population coefficients on the Greville abscissae reproduce a line
        let pop: Vec<f64> = cfg(13).greville().iter().map(|g| 1.0 + 0.5 * g).collect();
        for t in [0.0, 1.3, 5.0, 10.0] {
            assert!(m.eval_mu_dd(&pop, &subj, t).unwrap().abs() < 1e-10);
            for spec in [WivSpec::current(), WivSpec::cumulative()] {
                assert!(m.eval_wiv(&pop, &subj, &spec, t).unwrap() < 1e-6);
            }
        }
    }

    #[test]
    fn cumulative_matches_riemann_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in [pspline(), fpca_like()] {
            for _ in 0..25 {
                let (pop, subj) = draw(&m, &mut rng);
                let t = rng.random_range(0.5..T_MAX);
                let w = m.eval_wiv(&pop, &subj, &WivSpec::cumulative(), t).unwrap();
                let r = riemann(&m, &pop, &subj, 0.0, t, 100_000).sqrt();
                assert!((w - r).abs() <= 1e-6 * r, "{w} vs {r}");
            }
        }
    }

    #[test]
    fn smre_cumulative_factorizes() {
        let m = TrajectoryModel::smre(smre_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (pop, mut subj) = draw(&m, &mut rng);
        subj[2] = -1.7;
        let beta = DVector::from_column_slice(&pop[2..]);
        let t = 6.3;
        let g = m.curvature_gram(0.0, t).unwrap();
        let expect = 1.7 * beta.dot(&(&g * &beta)).sqrt();
        let got = m.eval_wiv(&pop, &subj, &WivSpec::cumulative(), t).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn wiv_functionals_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let win = WivSpec::windowed(1.0).unwrap();
        for m in models() {
            let (pop, subj) = draw(&m, &mut rng);
            assert_eq!(m.eval_wiv(&pop, &subj, &WivSpec::cumulative(), 0.0).unwrap(), 0.0);
            let mut prev = 0.0;
            for k in 1..=40 {
                let t = k as f64 * 0.25;
                let cum = m.eval_wiv(&pop, &subj, &WivSpec::cumulative(), t).unwrap();
                assert!(cum >= prev - 1e-12);
                prev = cum;
                if t <= 1.0 {
                    assert_eq!(m.eval_wiv(&pop, &subj, &win, t).unwrap(), cum);
                }
                let w = m.eval_wiv(&pop, &subj, &win, t).unwrap();
                let r = riemann(&m, &pop, &subj, (t - 1.0).max(0.0), t, 20_000).sqrt();
                assert!((w - r).abs() <= 1e-6 * r.max(1e-8));
            }
            // d/dt cumulative² = μ″(t)²
            for t in [1.1, 3.7, 8.2] {
                let h = 1e-4;
                let c2 = |x: f64| m.eval_wiv(&pop, &subj, &WivSpec::cumulative(), x).unwrap().powi(2);
                let fd = (c2(t + h) - c2(t - h)) / (2.0 * h);
                let dd2 = m.eval_mu_dd(&pop, &subj, t).unwrap().powi(2);
                assert!((fd - dd2).abs() <= 1e-3 * dd2.max(1e-6), "{fd} vs {dd2}");
            }
            assert!(matches!(m.eval_wiv(&pop, &subj, &WivSpec::current(), -0.1), Err(Error::Domain(_))));
        }
        assert!(WivSpec::windowed(0.0).is_err());
    }

    #[test]
    fn zero_curvature_coefficients_give_zero_current_wiv() {
        let m = pspline();
        let pop = vec![0.0; m.pop_dim()];
        let mut subj = vec![0.0; m.subj_dim()];
        subj[0] = 5.0;
        subj[1] = 1.0;
        for t in [0.0, 3.3, 9.0] {
            assert_eq!(m.eval_wiv(&pop, &subj, &WivSpec::current(), t).unwrap(), 0.0);
        }
    }
}
