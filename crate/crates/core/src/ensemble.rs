//! Monte Carlo ensembles of the deterministic map and the statistics used to
//! compare them with the diffusion approximations.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaged::{OdeSolution, ZeroSet};
use crate::error::{Error, Result};
use crate::numerics::{ks_statistic, normal_cdf, wrap_half};
use crate::rng::{derive_seed, stream};
use crate::stochastic::{em_paths, GaussianSpec, SdeSpec};
use crate::systems::{reduce, FastSlowSystem, LiftedState, PhasePoint, MAX_TRAJECTORY_LEN};
use crate::transfer::{build_ulam, srb_density, FieldInterp, SlowFields, SRB_MAX_ITER, SRB_TOL};

/// Samples of the (lifted) slow variable, or of its rescaled deviation, at
/// one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSamples {
    pub values: Vec<f64>,
    pub t: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl EnsembleSamples {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (self.values.len() as f64 - 1.0)
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.len() as f64).sqrt()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "t", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            wr.serialize((i, self.t, v))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Largest slope of the initial curve, in units of `eps`.
pub const CURVE_SLOPE_C1: f64 = 1.0;
/// Largest log-derivative of the initial density.
pub const DENSITY_C2: f64 = 10.0;
/// Cap on `n_samples * steps` for one ensemble run.
pub const MAX_ENSEMBLE_WORK: u64 = 50_000_000_000;

/// Random initial data on a short near-horizontal curve
/// `theta = G(x) = theta0 + slope (x - x_lo)`, `x in [x_lo, x_lo + length]`,
/// with density proportional to `exp(tilt (x - x_lo))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialEnsemble {
    pub theta0: f64,
    pub epsilon: f64,
    pub x_lo: f64,
    pub length: f64,
    pub slope: f64,
    pub tilt: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl InitialEnsemble {
    /// Flat curve over `[0, 1/2]` with a unit tilt.
    pub fn new(theta0: f64, epsilon: f64, n_samples: usize, seed: u64) -> Result<Self> {
        let e = Self {
            theta0,
            epsilon,
            x_lo: 0.0,
            length: 0.5,
            slope: 0.0,
            tilt: 1.0,
            n_samples,
            seed,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn with_curve(mut self, x_lo: f64, length: f64, slope: f64) -> Result<Self> {
        self.x_lo = x_lo;
        self.length = length;
        self.slope = slope;
        self.validate()?;
        Ok(self)
    }

    pub fn with_tilt(mut self, tilt: f64) -> Result<Self> {
        self.tilt = tilt;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length <= 1.0) {
            return Err(Error::OutOfRange {
                what: "initial curve length must lie in (0, 1]",
                value: self.length,
            });
        }
        if self.slope.abs() > CURVE_SLOPE_C1 * self.epsilon {
            return Err(Error::OutOfRange {
                what: "initial curve slope exceeds c1 * eps",
                value: self.slope,
            });
        }
        if !(self.tilt.abs() <= DENSITY_C2) {
            return Err(Error::OutOfRange {
                what: "density log-derivative exceeds c2",
                value: self.tilt,
            });
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("ensemble needs at least one sample".into()));
        }
        Ok(())
    }

    /// Inverse CDF of the tilted density on the curve.
    pub fn x_of_u(&self, u: f64) -> f64 {
        let k = self.tilt * self.length;
        let frac = if k.abs() < 1e-12 {
            u
        } else {
            (u * k.exp_m1()).ln_1p() / k
        };
        self.x_lo + self.length * frac
    }

    pub fn density(&self, x: f64) -> f64 {
        let k = self.tilt * self.length;
        let norm = if k.abs() < 1e-12 { self.length } else { self.length * k.exp_m1() / k };
        (self.tilt * (x - self.x_lo)).exp() / norm
    }

    pub fn curve(&self, x: f64) -> f64 {
        self.theta0 + self.slope * (x - self.x_lo)
    }
}

fn steps_for(t: f64, eps: f64) -> usize {
    if eps == 0.0 {
        0
    } else {
        (t / eps + 1e-9).floor() as usize
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("times must be non-negative and sorted".into()));
    }
    Ok(())
}

fn check_work(n: usize, steps: usize) -> Result<()> {
    if steps > MAX_TRAJECTORY_LEN {
        return Err(Error::ResourceLimit {
            requested: steps,
            max: MAX_TRAJECTORY_LEN,
        });
    }
    let work = n as u64 * steps as u64;
    if work > MAX_ENSEMBLE_WORK {
        return Err(Error::ResourceLimit {
            requested: work as usize,
            max: MAX_ENSEMBLE_WORK as usize,
        });
    }
    Ok(())
}

/// Start of trajectory `i`: `x0` from the density, lifted `theta` on the curve.
fn initial_state(init: &InitialEnsemble, rng: &mut impl Rng) -> LiftedState {
    let x0 = init.x_of_u(rng.random::<f64>());
    LiftedState::new(x0, init.curve(x0))
}

/// Lifted `theta_eps(t)` of each trajectory after `floor(t / eps)` dithered
/// steps, for each requested time.
pub fn run_deterministic<S: FastSlowSystem + ?Sized>(
    sys: &S,
    init: &InitialEnsemble,
    times: &[f64],
) -> Result<Vec<EnsembleSamples>> {
    init.validate()?;
    check_times(times)?;
    let eps = sys.epsilon();
    let marks: Vec<usize> = times.iter().map(|t| steps_for(*t, eps)).collect();
    check_work(init.n_samples, *marks.last().unwrap())?;
    let paths: Vec<Vec<f64>> = (0..init.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(init.seed, i as u64);
            let mut st = initial_state(init, &mut rng);
            let mut out = Vec::with_capacity(marks.len());
            let mut done = 0;
            for m in &marks {
                while done < *m {
                    st.advance_dithered(sys, &mut rng);
                    done += 1;
                }
                out.push(st.lift);
            }
            out
        })
        .collect();
    Ok(times
        .iter()
        .enumerate()
        .map(|(j, t)| EnsembleSamples {
            values: paths.iter().map(|p| p[j]).collect(),
            t: *t,
            epsilon: eps,
            seed: init.seed,
        })
        .collect())
}

/// Phase points visited every `stride` steps after `burn_in` steps, up to
/// `n_records` per trajectory.
pub fn occupation_samples<S: FastSlowSystem + ?Sized>(
    sys: &S,
    init: &InitialEnsemble,
    burn_in: usize,
    stride: usize,
    n_records: usize,
) -> Result<Vec<PhasePoint>> {
    init.validate()?;
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    check_work(init.n_samples, burn_in + stride * n_records)?;
    let per: Vec<Vec<PhasePoint>> = (0..init.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(init.seed, i as u64);
            let mut st = initial_state(init, &mut rng);
            for _ in 0..burn_in {
                st.advance_dithered(sys, &mut rng);
            }
            let mut out = Vec::with_capacity(n_records);
            for _ in 0..n_records {
                for _ in 0..stride {
                    st.advance_dithered(sys, &mut rng);
                }
                out.push(st.point());
            }
            out
        })
        .collect();
    Ok(per.into_iter().flatten().collect())
}

/// `(theta_eps(t) - theta_bar(t)) / sqrt(eps)` in lifted coordinates.
pub fn deviation_samples(samples: &EnsembleSamples, sol: &OdeSolution, interp: &FieldInterp) -> EnsembleSamples {
    let bar = sol.at(interp, samples.t);
    let scale = if samples.epsilon > 0.0 { samples.epsilon.sqrt() } else { 1.0 };
    EnsembleSamples {
        values: samples.values.iter().map(|v| (v - bar) / scale).collect(),
        ..samples.clone()
    }
}

/// Largest rescaled deviation `max_s |theta_eps(s) - theta_bar(s)| / sqrt(eps)`
/// over `n_check` equispaced checkpoints in `(0, t]`.
pub fn sup_deviations<S: FastSlowSystem + ?Sized>(
    sys: &S,
    init: &InitialEnsemble,
    sol: &OdeSolution,
    interp: &FieldInterp,
    t: f64,
    n_check: usize,
) -> Result<EnsembleSamples> {
    init.validate()?;
    let eps = sys.epsilon();
    if !(eps > 0.0) || n_check == 0 {
        return Err(Error::InvalidParameter("sup deviations need eps > 0 and checkpoints".into()));
    }
    let total = steps_for(t, eps);
    check_work(init.n_samples, total)?;
    let checks: Vec<(usize, f64)> = (1..=n_check)
        .map(|k| {
            let s = (total * k) / n_check;
            (s, sol.at(interp, s as f64 * eps))
        })
        .collect();
    let scale = eps.sqrt();
    let values = (0..init.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(init.seed, i as u64);
            let mut st = initial_state(init, &mut rng);
            let mut done = 0;
            let mut sup: f64 = 0.0;
            for (s, bar) in &checks {
                while done < *s {
                    st.advance_dithered(sys, &mut rng);
                    done += 1;
                }
                sup = sup.max((st.lift - bar).abs() / scale);
            }
            sup
        })
        .collect();
    Ok(EnsembleSamples {
        values,
        t,
        epsilon: eps,
        seed: init.seed,
    })
}

/// Normalised histogram on explicit edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Histogram {
    /// Values outside the edges are an error: every sample must be binned.
    pub fn new(values: &[f64], edges: &[f64]) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("histogram edges must increase".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty sample".into()));
        }
        let n_bins = edges.len() - 1;
        let (lo, hi) = (edges[0], edges[n_bins]);
        let mut counts = vec![0u64; n_bins];
        for v in values {
            if !(*v >= lo && *v <= hi) {
                return Err(Error::OutOfRange {
                    what: "sample outside histogram range",
                    value: *v,
                });
            }
            let k = edges.partition_point(|e| e <= v).saturating_sub(1).min(n_bins - 1);
            counts[k] += 1;
        }
        let n = values.len() as f64;
        Ok(Self {
            edges: edges.to_vec(),
            masses: counts.iter().map(|c| *c as f64 / n).collect(),
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["lo", "hi", "mass"])?;
        for (k, m) in self.masses.iter().enumerate() {
            wr.serialize((self.edges[k], self.edges[k + 1], m))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Equal-width edges of width `width` covering every value of both samples.
pub fn common_edges(a: &[f64], b: &[f64], width: f64) -> Result<Vec<f64>> {
    if !(width > 0.0) {
        return Err(Error::InvalidParameter(format!("bin width {width} must be positive")));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite and non-empty".into()));
    }
    let start = (lo / width).floor() * width;
    let n = (((hi - start) / width).floor() as usize + 1).max(1);
    Ok((0..=n).map(|k| start + k as f64 * width).collect())
}

/// Half the L1 distance between two histograms on identical edges.
pub fn tv_distance(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.edges != b.edges {
        return Err(Error::EdgeMismatch);
    }
    Ok(0.5 * a.masses.iter().zip(&b.masses).map(|(p, q)| (p - q).abs()).sum::<f64>())
}

/// Expected TV between two independent samples of size `n` from the same
/// law with bin masses `p`: `sum_b sqrt(p_b / (pi n))`.
pub fn tv_noise_floor(masses: &[f64], n: usize) -> f64 {
    masses
        .iter()
        .map(|p| (p * (1.0 - p) / (std::f64::consts::PI * n as f64)).sqrt())
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRung {
    pub epsilon: f64,
    pub tv: f64,
    pub bin_width: f64,
    pub n_bins: usize,
    pub noise_floor: f64,
    pub undersampled: bool,
    pub det_mean: f64,
    pub sde_mean: f64,
    pub det_var: f64,
    pub sde_var: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub t: f64,
    pub theta0: f64,
    pub n: usize,
    pub rungs: Vec<CompareRung>,
    pub strictly_decreasing: bool,
    /// Largest ratio `tv[k+1] / tv[k]`.
    pub max_ratio: f64,
}

/// Options of the deterministic-vs-diffusion comparison.
#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub n: usize,
    pub seed: u64,
    /// SDE step as a fraction of `eps`.
    pub sde_step_fraction: f64,
    /// Bin width as a multiple of `sqrt(eps)`.
    pub bin_scale: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            n: 100_000,
            seed: 0,
            sde_step_fraction: 0.1,
            bin_scale: 0.125,
        }
    }
}

/// TV between the binned laws of `theta_eps(t)` and the diffusion `Theta(t)`
/// across an eps-ladder. Both sides start from `theta0`; the deterministic
/// side uses a flat standard-pair ensemble.
pub fn compare_det_vs_sde<S: FastSlowSystem>(
    sys: &S,
    fields: &SlowFields,
    theta0: f64,
    t: f64,
    epsilons: &[f64],
    opts: &CompareOptions,
) -> Result<CompareReport> {
    if epsilons.is_empty() {
        return Err(Error::InvalidParameter("empty eps-ladder".into()));
    }
    let mut rungs = Vec::with_capacity(epsilons.len());
    for (k, eps) in epsilons.iter().enumerate() {
        let s = sys.with_epsilon(*eps);
        let init = InitialEnsemble::new(theta0, *eps, opts.n, derive_seed(opts.seed, 2 * k as u64))?;
        let det = run_deterministic(&s, &init, &[t])?.pop().unwrap();
        let spec = SdeSpec::new(fields, *eps, derive_seed(opts.seed, 2 * k as u64 + 1))?
            .with_step(opts.sde_step_fraction * eps)?;
        let sde = em_paths(&spec, theta0, t, opts.n)?;
        let width = opts.bin_scale * eps.sqrt();
        let edges = common_edges(&det.values, &sde.values, width)?;
        let (hd, hs) = (Histogram::new(&det.values, &edges)?, Histogram::new(&sde.values, &edges)?);
        let tv = tv_distance(&hd, &hs)?;
        let pooled: Vec<f64> = hd.masses.iter().zip(&hs.masses).map(|(a, b)| 0.5 * (a + b)).collect();
        let noise_floor = tv_noise_floor(&pooled, opts.n);
        let undersampled = noise_floor > 0.5 * tv;
        if undersampled {
            log::warn!("eps = {eps}: TV {tv:.4} is within a factor 2 of the sampling floor {noise_floor:.4}");
        }
        rungs.push(CompareRung {
            epsilon: *eps,
            tv,
            bin_width: width,
            n_bins: edges.len() - 1,
            noise_floor,
            undersampled,
            det_mean: det.mean(),
            sde_mean: sde.mean(),
            det_var: det.variance(),
            sde_var: sde.variance(),
        });
    }
    let strictly_decreasing = rungs.windows(2).all(|w| w[1].tv < w[0].tv);
    let max_ratio = rungs
        .windows(2)
        .map(|w| w[1].tv / w[0].tv)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CompareReport {
        t,
        theta0,
        n: opts.n,
        rungs,
        strictly_decreasing,
        max_ratio,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentFit {
    pub mean: f64,
    pub var: f64,
    pub count: usize,
    pub weight: f64,
    /// KS distance of the basin's samples (centred at the sink) to the
    /// prescribed Gaussian; absent for an empty basin.
    pub ks: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetastableFit {
    pub components: Vec<ComponentFit>,
    pub unassigned: usize,
}

impl MetastableFit {
    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }
}

/// Assign samples to sink basins and compare each basin with its Gaussian.
/// `mixture` must list the sinks in the order of `zeros.stable()`.
pub fn fit_metastable(samples: &EnsembleSamples, zeros: &ZeroSet, mixture: &[GaussianSpec]) -> Result<MetastableFit> {
    let sinks: Vec<usize> = zeros
        .zeros
        .iter()
        .enumerate()
        .filter(|(_, z)| z.kind == crate::averaged::ZeroKind::Stable)
        .map(|(i, _)| i)
        .collect();
    if sinks.is_empty() {
        return Err(Error::NoStableZero);
    }
    if sinks.len() != mixture.len() {
        return Err(Error::InvalidParameter(format!(
            "{} mixture components for {} sinks",
            mixture.len(),
            sinks.len()
        )));
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); sinks.len()];
    let mut unassigned = 0;
    for v in &samples.values {
        match zeros.basin_of(*v).and_then(|z| sinks.iter().position(|s| *s == z)) {
            Some(j) => groups[j].push(wrap_half(v - mixture[j].mean)),
            None => unassigned += 1,
        }
    }
    let n = samples.len() as f64;
    let components = groups
        .iter()
        .zip(mixture)
        .map(|(g, c)| {
            if g.is_empty() {
                log::warn!("basin of the sink at {} is empty", c.mean);
            }
            let sd = c.var.sqrt();
            ComponentFit {
                mean: c.mean,
                var: c.var,
                count: g.len(),
                weight: g.len() as f64 / n,
                ks: (!g.is_empty()).then(|| ks_statistic(g, |x| normal_cdf(x / sd))),
            }
        })
        .collect();
    Ok(MetastableFit { components, unassigned })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Rotation,
    Sink,
}

#[derive(Debug, Clone, Serialize)]
pub struct SrbStructureReport {
    pub regime: Regime,
    pub n_samples: usize,
    pub n_x: usize,
    pub n_theta: usize,
    /// TV between the 2-D histogram and the predicted product density.
    pub tv: f64,
    /// TV of the theta-marginal alone.
    pub tv_theta: f64,
    pub noise_floor: f64,
}

/// Compare the empirical joint law of `points` with `h(x, theta) / omega_bar`
/// (rotation) or `h(x, theta)` times the Gaussian mixture (sinks) on an
/// `n_x x n_theta` grid. `weights` default to equal sink weights.
#[allow(clippy::too_many_arguments)]
pub fn srb_structure_check<S: FastSlowSystem + ?Sized>(
    sys: &S,
    fields: &SlowFields,
    zeros: &ZeroSet,
    points: &[PhasePoint],
    n_x: usize,
    n_theta: usize,
    expected: Option<Regime>,
    weights: Option<&[f64]>,
) -> Result<SrbStructureReport> {
    if points.is_empty() || n_x == 0 || n_theta == 0 {
        return Err(Error::InvalidParameter("structure check needs samples and a grid".into()));
    }
    let regime = if zeros.is_rotation() { Regime::Rotation } else { Regime::Sink };
    if let Some(e) = expected {
        if e != regime {
            return Err(Error::InvalidParameter(format!("expected {e:?} regime, fields give {regime:?}")));
        }
    }
    let interp = fields.interp();
    let eps = sys.epsilon();
    // theta-marginal mass per slab
    let slab = |j: usize| (j as f64 / n_theta as f64, (j + 1) as f64 / n_theta as f64);
    let theta_mass: Vec<f64> = match regime {
        Regime::Rotation => {
            let sub = 64;
            let raw: Vec<f64> = (0..n_theta)
                .map(|j| {
                    let (a, b) = slab(j);
                    (0..sub)
                        .map(|k| 1.0 / interp.drift(a + (k as f64 + 0.5) * (b - a) / sub as f64))
                        .sum::<f64>()
                        / sub as f64
                })
                .collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|r| r / z).collect()
        }
        Regime::Sink => {
            let mixture = crate::stochastic::metastable_mixture(zeros, fields, eps)?;
            let equal = vec![1.0 / mixture.len() as f64; mixture.len()];
            let w = weights.unwrap_or(&equal);
            if w.len() != mixture.len() {
                return Err(Error::InvalidParameter("one weight per sink required".into()));
            }
            (0..n_theta)
                .map(|j| {
                    let (a, b) = slab(j);
                    mixture
                        .iter()
                        .zip(w)
                        .map(|(c, wt)| {
                            let sd = c.var.sqrt();
                            // wrapped Gaussian mass of the slab
                            (-3..=3)
                                .map(|k| {
                                    let shift = k as f64;
                                    normal_cdf((b + shift - c.mean) / sd) - normal_cdf((a + shift - c.mean) / sd)
                                })
                                .sum::<f64>()
                                * wt
                        })
                        .sum()
                })
                .collect()
        }
    };
    // x-conditional from the SRB density at slab centres with non-negligible mass
    let predicted: Vec<f64> = (0..n_theta)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            if theta_mass[j] < 1e-14 {
                return Ok(vec![0.0; n_x]);
            }
            let (a, b) = slab(j);
            let rho = srb_density(&build_ulam(sys, 0.5 * (a + b), 64 * n_x)?, SRB_TOL, SRB_MAX_ITER)?;
            let m = rho.masses();
            Ok((0..n_x).map(|i| theta_mass[j] * m[i * 64..(i + 1) * 64].iter().sum::<f64>()).collect())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut counts = vec![0.0; n_x * n_theta];
    for p in points {
        let i = ((reduce(p.x) * n_x as f64) as usize).min(n_x - 1);
        let j = ((reduce(p.theta) * n_theta as f64) as usize).min(n_theta - 1);
        counts[j * n_x + i] += 1.0;
    }
    let n = points.len() as f64;
    let emp: Vec<f64> = counts.iter().map(|c| c / n).collect();
    let tv = 0.5 * emp.iter().zip(&predicted).map(|(e, p)| (e - p).abs()).sum::<f64>();
    let tv_theta = 0.5
        * (0..n_theta)
            .map(|j| (emp[j * n_x..(j + 1) * n_x].iter().sum::<f64>() - theta_mass[j]).abs())
            .sum::<f64>();
    Ok(SrbStructureReport {
        regime,
        n_samples: points.len(),
        n_x,
        n_theta,
        tv,
        tv_theta,
        noise_floor: tv_noise_floor(&predicted, points.len()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExceedanceTable {
    pub thresholds: Vec<f64>,
    pub probability: Vec<f64>,
    /// Smallest non-zero probability resolvable with this sample size.
    pub resolution: f64,
}

/// Empirical `P(|value| >= R)` for each threshold `R`.
pub fn exceedance_stats(samples: &EnsembleSamples, thresholds: &[f64]) -> ExceedanceTable {
    let mut abs: Vec<f64> = samples.values.iter().map(|v| v.abs()).collect();
    abs.sort_by(|a, b| a.total_cmp(b));
    let n = abs.len() as f64;
    let probability = thresholds
        .iter()
        .map(|r| (abs.len() - abs.partition_point(|v| v < r)) as f64 / n)
        .collect();
    ExceedanceTable {
        thresholds: thresholds.to_vec(),
        probability,
        resolution: 1.0 / n,
    }
}

impl ExceedanceTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["R", "probability"])?;
        for (r, p) in self.thresholds.iter().zip(&self.probability) {
            wr.serialize((r, p))?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_matches_density() {
        let e = InitialEnsemble::new(0.1, 1e-3, 10, 0).unwrap().with_tilt(3.0).unwrap();
        // CDF at the midpoint against direct quadrature
        let mid = e.x_lo + 0.5 * e.length;
        let n = 10_000;
        let q: f64 = (0..n)
            .map(|k| e.density(e.x_lo + (k as f64 + 0.5) / n as f64 * 0.5 * e.length))
            .sum::<f64>()
            * 0.5
            * e.length
            / n as f64;
        let u = q;
        assert!((e.x_of_u(u) - mid).abs() < 1e-6);
        assert_eq!(e.x_of_u(0.0), e.x_lo);
        assert!((e.x_of_u(1.0) - (e.x_lo + e.length)).abs() < 1e-12);
    }

    #[test]
    fn initial_constraints() {
        assert!(InitialEnsemble::new(0.1, 1e-3, 10, 0).unwrap().with_curve(0.0, 0.5, 2e-3).is_err());
        assert!(InitialEnsemble::new(0.1, 1e-3, 10, 0).unwrap().with_curve(0.0, 0.5, 1e-3).is_ok());
        assert!(InitialEnsemble::new(0.1, 1e-3, 10, 0).unwrap().with_tilt(11.0).is_err());
        assert!(InitialEnsemble::new(0.1, 1e-3, 0, 0).is_err());
    }

    #[test]
    fn histogram_basics() {
        let h = Histogram::new(&[0.1, 0.2, 0.7, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(h.masses, vec![0.5, 0.5]);
        assert!(Histogram::new(&[1.5], &[0.0, 1.0]).is_err());
        let other = Histogram::new(&[0.1], &[0.0, 0.4, 1.0]).unwrap();
        assert!(matches!(tv_distance(&h, &other), Err(Error::EdgeMismatch)));
        let a = Histogram::new(&[0.1, 0.2], &[0.0, 0.5, 1.0]).unwrap();
        let b = Histogram::new(&[0.6, 0.9], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn exceedance_is_monotone() {
        let s = EnsembleSamples {
            values: vec![-3.0, -1.0, 0.5, 2.0],
            t: 1.0,
            epsilon: 1e-3,
            seed: 0,
        };
        let e = exceedance_stats(&s, &[0.0, 1.0, 2.5, 4.0]);
        assert_eq!(e.probability, vec![1.0, 0.75, 0.25, 0.0]);
    }
}
