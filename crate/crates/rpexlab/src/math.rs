//! Pure numerical kernels shared by every other module.
//!
//! Everything here is deterministic and side-effect-free: losses with
//! hand-derived gradients, candidate-selection weights for composite
//! policies, inverse-probability weighting, and sample statistics. All
//! functions are safe to call concurrently.

use thiserror::Error;

/// Densities entering inverse-probability weights are floored at this value
/// before division so the clip bounds dominate near-zero densities.
pub const DENSITY_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum MathError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("empty input")]
    EmptyInput,
    #[error("mismatched input lengths")]
    LengthMismatch,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("undefined statistic: zero sample standard deviation")]
    DegenerateStatistic,
    #[error("probability vector is not on the simplex")]
    OffSimplex,
    #[error("action probability must be strictly positive")]
    NonPositiveDensity,
}

pub type Result<T> = std::result::Result<T, MathError>;

/// Expectile level for the asymmetric squared loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectileConfig {
    pub tau: f64,
}

impl ExpectileConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(MathError::InvalidConfig("expectile tau must lie in (0,1)"));
        }
        Ok(Self { tau })
    }
}

/// Transition point of the piecewise quadratic/absolute loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberConfig {
    pub delta: f64,
}

impl HuberConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(MathError::InvalidConfig("huber delta must be positive"));
        }
        Ok(Self { delta })
    }
}

/// Clip bounds for inverse-probability weights. The asymmetric default
/// (|min| >> |max|) keeps the weight primarily a penalty on low-quality
/// actions while capping positive outliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds {
    pub min_w: f64,
    pub max_w: f64,
}

impl ClipBounds {
    pub fn new(min_w: f64, max_w: f64) -> Result<Self> {
        if !(min_w < 0.0 && max_w > 0.0) {
            return Err(MathError::InvalidConfig("clip bounds must satisfy min < 0 < max"));
        }
        Ok(Self { min_w, max_w })
    }
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self { min_w: -10_000.0, max_w: 100.0 }
    }
}

/// Parameters of the composite-policy selection rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    /// Softmax temperature over candidate Q-values (the table default is an
    /// inverse temperature of 3, i.e. temperature 1/3).
    pub temperature: f64,
    /// Coefficient on the clipped inverse-probability weight; zero recovers
    /// the plain softmax selection rule.
    pub ipw_coeff: f64,
    pub clip: ClipBounds,
    /// Smallest admissible unnormalized weight; negative weights produced by
    /// the additive IPW term are repaired by flooring at this value.
    pub weight_floor: f64,
}

impl SelectionConfig {
    pub fn new(temperature: f64, ipw_coeff: f64, clip: ClipBounds, weight_floor: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(MathError::InvalidConfig("selection temperature must be positive"));
        }
        if !(ipw_coeff >= 0.0 && ipw_coeff.is_finite()) {
            return Err(MathError::InvalidConfig("ipw coefficient must be nonnegative"));
        }
        if !(weight_floor > 0.0) {
            return Err(MathError::InvalidConfig("weight floor must be positive"));
        }
        Ok(Self { temperature, ipw_coeff, clip, weight_floor })
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0 / 3.0,
            ipw_coeff: 0.1,
            clip: ClipBounds::default(),
            weight_floor: 1e-12,
        }
    }
}

/// Per-candidate unnormalized weights and the normalized selection
/// probabilities derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionWeights {
    pub unnormalized: Vec<f64>,
    pub probs: Vec<f64>,
}

impl SelectionWeights {
    /// Index of the largest probability; ties break toward the later index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p >= self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Policy-extraction mode and its weighting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionMode {
    /// Exponentiated-advantage weighted regression.
    Awr,
    /// Gaussian-kernel advantage weighting aligning the policy with the
    /// value function's implicit policy.
    Align,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionConfig {
    pub mode: ExtractionMode,
    /// Inverse temperature on the advantage inside the exponential weight.
    pub awr_inv_temp: f64,
    /// Kernel sharpness of the alignment weight.
    pub align_eta: f64,
    /// Upper clip on the exponential weight; corrupted rewards make the raw
    /// exponential unbounded.
    pub awr_weight_cap: f64,
}

impl ExtractionConfig {
    pub fn new(mode: ExtractionMode, awr_inv_temp: f64, align_eta: f64, awr_weight_cap: f64) -> Result<Self> {
        if !(awr_inv_temp > 0.0) {
            return Err(MathError::InvalidConfig("awr inverse temperature must be positive"));
        }
        if !(align_eta > 0.0) {
            return Err(MathError::InvalidConfig("alignment eta must be positive"));
        }
        if !(awr_weight_cap > 0.0) {
            return Err(MathError::InvalidConfig("awr weight cap must be positive"));
        }
        Ok(Self { mode, awr_inv_temp, align_eta, awr_weight_cap })
    }
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { mode: ExtractionMode::Awr, awr_inv_temp: 3.0, align_eta: 3.0, awr_weight_cap: 100.0 }
    }
}

/// Per-dimension state mean and standard deviation used to normalize
/// observations. Degenerate dimensions have their std floored to one so the
/// transform stays invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Identity transform for a given dimensionality.
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(self.std.iter()))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(self.std.iter()))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

/// Asymmetric squared loss `|tau - 1(u<0)| * u^2` and its derivative.
pub fn expectile_loss(u: f64, cfg: &ExpectileConfig) -> (f64, f64) {
    let weight = if u < 0.0 { 1.0 - cfg.tau } else { cfg.tau };
    (weight * u * u, 2.0 * weight * u)
}

/// Piecewise quadratic/absolute loss and its derivative: `x^2/(2 delta)`
/// inside the knee, `|x| - delta/2` outside.
pub fn huber_loss(x: f64, cfg: &HuberConfig) -> (f64, f64) {
    let d = cfg.delta;
    if x.abs() <= d {
        (x * x / (2.0 * d), x / d)
    } else {
        (x.abs() - d / 2.0, x.signum())
    }
}

/// Fourth standardized sample moment minus 3, using population moments.
///
/// Positive values indicate heavier-than-Gaussian tails. Requires at least
/// four samples and a strictly positive sample standard deviation.
pub fn excess_kurtosis(samples: &[f64]) -> Result<f64> {
    if samples.len() < 4 {
        return Err(MathError::InsufficientSamples { needed: 4, got: samples.len() });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(MathError::NonFinite("kurtosis sample"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return Err(MathError::DegenerateStatistic);
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(MathError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(MathError::InvalidConfig("quantile level must lie in [0,1]"));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(MathError::NonFinite("quantile input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[sorted.len() - 1])
    }
}

/// Exponentiated-advantage extraction weight, capped from above.
pub fn awr_weight(adv: f64, cfg: &ExtractionConfig) -> f64 {
    debug_assert_eq!(cfg.mode, ExtractionMode::Awr);
    saturating_exp(cfg.awr_inv_temp * adv).min(cfg.awr_weight_cap)
}

/// Gaussian-kernel extraction weight in (0, 1], even in the advantage.
pub fn align_weight(adv: f64, cfg: &ExtractionConfig) -> f64 {
    debug_assert_eq!(cfg.mode, ExtractionMode::Align);
    (-cfg.align_eta * adv * adv).exp()
}

/// Softmax over candidate Q-values at the configured temperature, computed
/// with max subtraction. The stored unnormalized weights are the shifted
/// exponentials (proportional to the true ones).
pub fn pex_probs(q_values: &[f64], cfg: &SelectionConfig) -> Result<SelectionWeights> {
    if q_values.is_empty() {
        return Err(MathError::EmptyInput);
    }
    if q_values.iter().any(|q| !q.is_finite()) {
        return Err(MathError::NonFinite("selection q-value"));
    }
    let max_q = q_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnormalized: Vec<f64> = q_values.iter().map(|q| ((q - max_q) / cfg.temperature).exp()).collect();
    let sum: f64 = unnormalized.iter().sum();
    let probs = unnormalized.iter().map(|w| w / sum).collect();
    Ok(SelectionWeights { unnormalized, probs })
}

/// Clipped inverse-probability weight `clip(adv / p, min, max)`.
pub fn ipw_weight(adv: f64, action_prob: f64, clip: &ClipBounds) -> Result<f64> {
    if !(action_prob > 0.0) {
        return Err(MathError::NonPositiveDensity);
    }
    if !adv.is_finite() || !action_prob.is_finite() {
        return Err(MathError::NonFinite("ipw input"));
    }
    Ok((adv / action_prob).clamp(clip.min_w, clip.max_w))
}

/// Selection probabilities of the IPW-augmented rule: each candidate weight
/// is `exp(q/alpha) + kappa * ipw`, floored at the configured minimum and
/// normalized.
///
/// The additive term breaks softmax shift invariance, so the exponential is
/// computed unshifted and saturated at the largest finite value instead of
/// max-subtracted; normalization rescales by the largest weight to stay
/// finite. If every weight hits the floor the rule falls back to the plain
/// softmax selection.
pub fn rpex_probs(
    q_values: &[f64],
    advs: &[f64],
    action_probs: &[f64],
    cfg: &SelectionConfig,
) -> Result<SelectionWeights> {
    if q_values.is_empty() {
        return Err(MathError::EmptyInput);
    }
    if q_values.len() != advs.len() || q_values.len() != action_probs.len() {
        return Err(MathError::LengthMismatch);
    }
    if q_values.iter().chain(advs).chain(action_probs).any(|x| !x.is_finite()) {
        return Err(MathError::NonFinite("selection input"));
    }
    if action_probs.iter().any(|p| *p <= 0.0) {
        return Err(MathError::NonPositiveDensity);
    }
    // With a zero coefficient the rule reduces to the plain softmax exactly;
    // taking that path keeps the equivalence unaffected by the weight floor.
    if cfg.ipw_coeff == 0.0 {
        return pex_probs(q_values, cfg);
    }
    let k = q_values.len();
    let mut unnormalized = Vec::with_capacity(k);
    let mut floored = 0usize;
    for i in 0..k {
        let expo = saturating_exp(q_values[i] / cfg.temperature);
        let density = action_probs[i].max(DENSITY_FLOOR);
        let ipw = ipw_weight(advs[i], density, &cfg.clip)?;
        let mut w = expo + cfg.ipw_coeff * ipw;
        if w.is_infinite() {
            w = f64::MAX;
        }
        if w < cfg.weight_floor {
            w = cfg.weight_floor;
            floored += 1;
        }
        unnormalized.push(w);
    }
    if floored == k {
        return pex_probs(q_values, cfg);
    }
    let probs = normalize_by_max(&unnormalized);
    Ok(SelectionWeights { unnormalized, probs })
}

/// The selection objective whose stationary point the exponential-sum rule
/// attains: expected candidate value plus entropy at temperature `alpha`,
/// plus the inverse-probability regularizer scaled by `kappa1`. The
/// convention `0 * log 0 = 0` applies.
pub fn rpex_objective(
    p_dist: &[f64],
    q_values: &[f64],
    advs: &[f64],
    action_probs: &[f64],
    alpha: f64,
    kappa1: f64,
) -> Result<f64> {
    let k = p_dist.len();
    if k == 0 {
        return Err(MathError::EmptyInput);
    }
    if q_values.len() != k || advs.len() != k || action_probs.len() != k {
        return Err(MathError::LengthMismatch);
    }
    if !(alpha > 0.0) {
        return Err(MathError::InvalidConfig("objective temperature must be positive"));
    }
    if p_dist.iter().chain(q_values).chain(advs).chain(action_probs).any(|x| !x.is_finite()) {
        return Err(MathError::NonFinite("objective input"));
    }
    if action_probs.iter().any(|p| *p <= 0.0) {
        return Err(MathError::NonPositiveDensity);
    }
    let sum: f64 = p_dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || p_dist.iter().any(|p| *p < -1e-9) {
        return Err(MathError::OffSimplex);
    }
    let mut total = 0.0;
    for i in 0..k {
        let p = p_dist[i].max(0.0);
        if p > 0.0 {
            total += p * (q_values[i] - alpha * p.ln());
            total += kappa1 * (advs[i] / action_probs[i]) * p;
        }
    }
    Ok(total)
}

/// Exact maximizer of [`rpex_objective`]: a softmax over the logits
/// `q/alpha + (kappa1/alpha) * adv / p`. This is the stationary point of the
/// objective, distinct from the additive production rule in [`rpex_probs`].
pub fn softmax_of_sum_probs(
    q_values: &[f64],
    advs: &[f64],
    action_probs: &[f64],
    alpha: f64,
    kappa1: f64,
) -> Result<SelectionWeights> {
    let k = q_values.len();
    if k == 0 {
        return Err(MathError::EmptyInput);
    }
    if advs.len() != k || action_probs.len() != k {
        return Err(MathError::LengthMismatch);
    }
    if !(alpha > 0.0) {
        return Err(MathError::InvalidConfig("softmax temperature must be positive"));
    }
    if q_values.iter().chain(advs).chain(action_probs).any(|x| !x.is_finite()) {
        return Err(MathError::NonFinite("softmax input"));
    }
    if action_probs.iter().any(|p| *p <= 0.0) {
        return Err(MathError::NonPositiveDensity);
    }
    let logits: Vec<f64> = (0..k)
        .map(|i| q_values[i] / alpha + (kappa1 / alpha) * advs[i] / action_probs[i])
        .collect();
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(MathError::NonFinite("softmax logit"));
    }
    let max_l = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnormalized: Vec<f64> = logits.iter().map(|l| (l - max_l).exp()).collect();
    let sum: f64 = unnormalized.iter().sum();
    let probs = unnormalized.iter().map(|w| w / sum).collect();
    Ok(SelectionWeights { unnormalized, probs })
}

/// Joint mean/std over states and next states (population variance over the
/// 2N vectors); stds below 1e-8 are floored to one.
pub fn compute_norm_stats(states: &[Vec<f64>], next_states: &[Vec<f64>]) -> Result<NormalizationStats> {
    if states.is_empty() || states.len() != next_states.len() {
        return Err(if states.is_empty() { MathError::EmptyInput } else { MathError::LengthMismatch });
    }
    let dim = states[0].len();
    if states.iter().chain(next_states).any(|v| v.len() != dim) {
        return Err(MathError::LengthMismatch);
    }
    let count = (2 * states.len()) as f64;
    let mut mean = vec![0.0; dim];
    for v in states.iter().chain(next_states) {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    let mut var = vec![0.0; dim];
    for v in states.iter().chain(next_states) {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            let d = x - m;
            *s += d * d;
        }
    }
    let std = var
        .iter()
        .map(|s| {
            let sd = (s / count).sqrt();
            if sd < 1e-8 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormalizationStats { mean, std })
}

fn saturating_exp(x: f64) -> f64 {
    let e = x.exp();
    if e.is_infinite() {
        f64::MAX
    } else {
        e
    }
}

/// Normalize strictly positive weights by first rescaling with the largest
/// entry, so sums never overflow even with saturated components.
fn normalize_by_max(weights: &[f64]) -> Vec<f64> {
    let w_max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = weights.iter().map(|w| w / w_max).collect();
    let sum: f64 = scaled.iter().sum();
    scaled.iter().map(|w| w / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn assert_valid_weights(w: &SelectionWeights) {
        assert_eq!(w.unnormalized.len(), w.probs.len());
        assert!(w.probs.iter().all(|p| *p >= 0.0));
        assert_close(w.probs.iter().sum::<f64>(), 1.0, 1e-12);
    }

    #[test]
    fn expectile_known_values() {
        let tau7 = ExpectileConfig::new(0.7).unwrap();
        assert_close(expectile_loss(2.0, &tau7).0, 2.8, 1e-12);
        assert_close(expectile_loss(-2.0, &tau7).0, 1.2, 1e-12);
        let tau5 = ExpectileConfig::new(0.5).unwrap();
        assert_close(expectile_loss(3.0, &tau5).0, 4.5, 1e-12);
        assert_eq!(expectile_loss(0.0, &tau7).0, 0.0);
    }

    #[test]
    fn expectile_rejects_bad_tau() {
        assert!(ExpectileConfig::new(0.0).is_err());
        assert!(ExpectileConfig::new(1.0).is_err());
        assert!(ExpectileConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn huber_known_values() {
        let cfg = HuberConfig::new(1.0).unwrap();
        assert_close(huber_loss(0.5, &cfg).0, 0.125, 1e-12);
        assert_close(huber_loss(2.0, &cfg).0, 1.5, 1e-12);
        // Continuity at the knee from either branch.
        for delta in [0.3, 1.0, 5.0] {
            let cfg = HuberConfig::new(delta).unwrap();
            let inside = delta * delta / (2.0 * delta);
            let outside = delta - delta / 2.0;
            assert_close(inside, outside, 1e-12);
            assert_close(huber_loss(delta, &cfg).0, delta / 2.0, 1e-12);
        }
    }

    #[test]
    fn huber_gradient_bounded_by_one() {
        let cfg = HuberConfig::new(0.7).unwrap();
        for i in -100..=100 {
            let x = i as f64 * 0.1;
            assert!(huber_loss(x, &cfg).1.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn kurtosis_known_values() {
        let alternating: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        assert_close(excess_kurtosis(&alternating).unwrap(), -2.0, 1e-12);
        assert_eq!(excess_kurtosis(&[3.0; 10]), Err(MathError::DegenerateStatistic));
        assert_eq!(
            excess_kurtosis(&[1.0, 2.0, 3.0]),
            Err(MathError::InsufficientSamples { needed: 4, got: 3 })
        );
    }

    #[test]
    fn kurtosis_of_standard_normal_draws() {
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let normal = rand_distr::StandardNormal;
        let samples: Vec<f64> = (0..1_000_000).map(|_| normal.sample(&mut rng)).collect();
        let k = excess_kurtosis(&samples).unwrap();
        assert!(k.abs() < 0.05, "excess kurtosis {k}");
    }

    #[test]
    fn quantile_known_values() {
        assert_close(quantile(&[1.0, 2.0, 3.0, 4.0], 0.0).unwrap(), 1.0, 0.0);
        assert_close(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.5, 1e-12);
        assert_close(quantile(&[5.0], 0.3).unwrap(), 5.0, 0.0);
        assert_eq!(quantile(&[], 0.5), Err(MathError::EmptyInput));
    }

    #[test]
    fn awr_weight_known_values() {
        let cfg = ExtractionConfig::default();
        assert_close(awr_weight(0.0, &cfg), 1.0, 0.0);
        assert_close(awr_weight(1.0, &cfg), 3.0f64.exp(), 1e-9);
        // exp(6) ~ 403 exceeds the cap.
        assert_close(awr_weight(2.0, &cfg), 100.0, 0.0);
    }

    #[test]
    fn align_weight_known_values() {
        let cfg = ExtractionConfig {
            mode: ExtractionMode::Align,
            ..ExtractionConfig::default()
        };
        assert_close(align_weight(0.0, &cfg), 1.0, 0.0);
        assert_close(align_weight(1.0, &cfg), (-3.0f64).exp(), 1e-12);
        assert_close(align_weight(-1.0, &cfg), (-3.0f64).exp(), 1e-12);
    }

    #[test]
    fn pex_known_values() {
        let cfg = SelectionConfig { temperature: 1.0, ..SelectionConfig::default() };
        let w = pex_probs(&[0.0, 0.0], &cfg).unwrap();
        assert_valid_weights(&w);
        assert_close(w.probs[0], 0.5, 1e-15);

        let w = pex_probs(&[1.0, 0.0], &cfg).unwrap();
        assert_close(w.probs[0], 0.73106, 1e-5);
        assert_close(w.probs[1], 0.26894, 1e-5);

        let shifted = pex_probs(&[11.0, 10.0], &cfg).unwrap();
        assert_close(shifted.probs[0], w.probs[0], 1e-12);
        assert!(pex_probs(&[f64::NAN, 0.0], &cfg).is_err());
    }

    #[test]
    fn ipw_weight_known_values() {
        let clip = ClipBounds::default();
        assert_close(ipw_weight(0.0, 0.5, &clip).unwrap(), 0.0, 0.0);
        // Raw -12500 clips to the lower bound.
        assert_close(ipw_weight(-5.0, 0.0004, &clip).unwrap(), -10_000.0, 0.0);
        // Raw 200 clips to the upper bound.
        assert_close(ipw_weight(2.0, 0.01, &clip).unwrap(), 100.0, 0.0);
        assert_eq!(ipw_weight(1.0, 0.0, &clip), Err(MathError::NonPositiveDensity));
    }

    #[test]
    fn rpex_known_values() {
        let cfg = SelectionConfig { temperature: 1.0, ipw_coeff: 0.1, ..SelectionConfig::default() };
        let w = rpex_probs(&[1.0, 0.0], &[0.5, -0.5], &[0.5, 0.5], &cfg).unwrap();
        assert_valid_weights(&w);
        assert_close(w.unnormalized[0], 1.0f64.exp() + 0.1, 1e-9);
        assert_close(w.unnormalized[1], 0.9, 1e-12);
        assert_close(w.probs[0], 0.75795, 1e-5);
        assert_close(w.probs[1], 0.24205, 1e-5);
    }

    #[test]
    fn rpex_all_floored_falls_back_to_pex() {
        let cfg = SelectionConfig { temperature: 1.0, ipw_coeff: 1.0, ..SelectionConfig::default() };
        // Both raw weights are 1 - 10000 < floor.
        let w = rpex_probs(&[0.0, 0.0], &[-10.0, -10.0], &[1e-6, 1e-6], &cfg).unwrap();
        assert_valid_weights(&w);
        assert_close(w.probs[0], 0.5, 1e-15);
        assert_close(w.probs[1], 0.5, 1e-15);
    }

    #[test]
    fn rpex_partial_floor_keeps_distribution() {
        let cfg = SelectionConfig { temperature: 1.0, ipw_coeff: 1.0, ..SelectionConfig::default() };
        let w = rpex_probs(&[0.0, 0.0], &[-10.0, 0.5], &[1e-6, 0.5], &cfg).unwrap();
        assert_valid_weights(&w);
        assert_close(w.unnormalized[0], cfg.weight_floor, 0.0);
        assert!(w.probs[1] > 0.999);
    }

    #[test]
    fn rpex_handles_saturated_exponentials() {
        let cfg = SelectionConfig { temperature: 1.0, ipw_coeff: 0.1, ..SelectionConfig::default() };
        let w = rpex_probs(&[800.0, 0.0], &[0.0, 0.0], &[0.5, 0.5], &cfg).unwrap();
        assert_valid_weights(&w);
        assert!(w.probs[0] > 1.0 - 1e-12);
    }

    #[test]
    fn objective_known_values() {
        // Pure-entropy case.
        let v = rpex_objective(&[0.5, 0.5], &[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 0.7, 0.3).unwrap();
        assert_close(v, 0.7 * 2.0f64.ln(), 1e-12);
        // Degenerate distribution, zero entropy.
        let v = rpex_objective(&[1.0, 0.0], &[2.5, -4.0], &[0.0, 0.0], &[1.0, 1.0], 0.7, 0.3).unwrap();
        assert_close(v, 2.5, 1e-12);
        assert_eq!(
            rpex_objective(&[0.7, 0.7], &[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 1.0, 0.0),
            Err(MathError::OffSimplex)
        );
    }

    #[test]
    fn softmax_of_sum_known_values() {
        let w = softmax_of_sum_probs(&[0.0, 0.0], &[1.0, -1.0], &[1.0, 1.0], 1.0, 1.0).unwrap();
        assert_valid_weights(&w);
        assert_close(w.probs[0], 0.88080, 1e-5);
        assert_close(w.probs[1], 0.11920, 1e-5);
    }

    #[test]
    fn softmax_of_sum_with_zero_kappa_equals_pex() {
        let cfg = SelectionConfig { temperature: 0.7, ..SelectionConfig::default() };
        let q = [0.3, -1.2, 2.0];
        let a = softmax_of_sum_probs(&q, &[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3], 0.7, 0.0).unwrap();
        let b = pex_probs(&q, &cfg).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert_close(*x, *y, 1e-14);
        }
    }

    #[test]
    fn softmax_of_sum_is_objective_stationary_point() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k = rng.gen_range(2..=4);
            let q: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let advs: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let probs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.3..1.0)).collect();
            let alpha = rng.gen_range(0.8..2.0);
            let kappa1 = rng.gen_range(0.0..0.3);
            let p_star = softmax_of_sum_probs(&q, &advs, &probs, alpha, kappa1).unwrap();

            // Central differences along simplex tangent directions e_i - e_{i+1}.
            let h = 1e-6;
            for i in 0..k - 1 {
                let mut plus = p_star.probs.clone();
                let mut minus = p_star.probs.clone();
                plus[i] += h;
                plus[i + 1] -= h;
                minus[i] -= h;
                minus[i + 1] += h;
                let f_plus = rpex_objective(&plus, &q, &advs, &probs, alpha, kappa1).unwrap();
                let f_minus = rpex_objective(&minus, &q, &advs, &probs, alpha, kappa1).unwrap();
                let directional = (f_plus - f_minus) / (2.0 * h);
                assert!(directional.abs() < 1e-8, "tangent derivative {directional}");
            }
        }
    }

    #[test]
    fn norm_stats_known_values() {
        let states = vec![vec![0.0], vec![2.0]];
        let next = vec![vec![0.0], vec![2.0]];
        let stats = compute_norm_stats(&states, &next).unwrap();
        assert_close(stats.mean[0], 1.0, 0.0);
        assert_close(stats.std[0], 1.0, 0.0);
        assert_close(stats.normalize(&[0.0])[0], -1.0, 0.0);
        assert_close(stats.normalize(&[2.0])[0], 1.0, 0.0);

        let flat = vec![vec![3.0, 5.0]; 4];
        let stats = compute_norm_stats(&flat, &flat).unwrap();
        assert_close(stats.std[0], 1.0, 0.0);
        assert_close(stats.normalize(&[3.0, 5.0])[1], 0.0, 0.0);
        assert!(compute_norm_stats(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn expectile_nonnegative_and_fd(u in -1000.0f64..1000.0, tau in 0.01f64..0.99) {
            let cfg = ExpectileConfig::new(tau).unwrap();
            let (loss, grad) = expectile_loss(u, &cfg);
            prop_assert!(loss >= 0.0);
            prop_assert_eq!(loss == 0.0, u == 0.0);
            if u.abs() >= 1e-3 {
                let h = 1e-6 * u.abs().max(1.0);
                let fd = (expectile_loss(u + h, &cfg).0 - expectile_loss(u - h, &cfg).0) / (2.0 * h);
                // The kink at zero is excluded by the step size choice.
                if (u - h) * (u + h) > 0.0 {
                    prop_assert!((grad - fd).abs() <= 1e-5 * grad.abs().max(1e-12));
                }
            }
        }

        #[test]
        fn huber_fd_away_from_knee(x in -100.0f64..100.0, delta in 0.1f64..10.0) {
            let cfg = HuberConfig::new(delta).unwrap();
            let h = 1e-6 * x.abs().max(1.0);
            // Stay clear of the knee and the origin where the branches switch.
            prop_assume!((x.abs() - delta).abs() > 10.0 * h && x.abs() > 10.0 * h);
            let (_, grad) = huber_loss(x, &cfg);
            let fd = (huber_loss(x + h, &cfg).0 - huber_loss(x - h, &cfg).0) / (2.0 * h);
            prop_assert!((grad - fd).abs() <= 1e-5 * grad.abs().max(1e-9));
        }

        #[test]
        fn pex_shift_invariance(
            q in proptest::collection::vec(-50.0f64..50.0, 1..6),
            shift in -100.0f64..100.0,
            temp in 0.1f64..5.0,
        ) {
            let cfg = SelectionConfig { temperature: temp, ..SelectionConfig::default() };
            let base = pex_probs(&q, &cfg).unwrap();
            let shifted_q: Vec<f64> = q.iter().map(|x| x + shift).collect();
            let shifted = pex_probs(&shifted_q, &cfg).unwrap();
            for (a, b) in base.probs.iter().zip(&shifted.probs) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn rpex_zero_kappa_matches_pex(
            q in proptest::collection::vec(-30.0f64..30.0, 1..6),
            temp in 0.2f64..3.0,
        ) {
            let cfg = SelectionConfig { temperature: temp, ipw_coeff: 0.0, ..SelectionConfig::default() };
            let advs = vec![0.7; q.len()];
            let probs = vec![0.2; q.len()];
            let a = rpex_probs(&q, &advs, &probs, &cfg).unwrap();
            let b = pex_probs(&q, &cfg).unwrap();
            for (x, y) in a.probs.iter().zip(&b.probs) {
                prop_assert!((x - y).abs() <= 1e-14);
            }
        }

        #[test]
        fn rpex_always_a_distribution(
            q in proptest::collection::vec(-500.0f64..500.0, 1..6),
            seed in 0u64..1000,
            temp in 0.1f64..5.0,
            kappa in 0.0f64..5.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let advs: Vec<f64> = q.iter().map(|_| rng.gen_range(-100.0..100.0)).collect();
            let probs: Vec<f64> = q.iter().map(|_| rng.gen_range(1e-12..2.0)).collect();
            let cfg = SelectionConfig { temperature: temp, ipw_coeff: kappa, ..SelectionConfig::default() };
            let w = rpex_probs(&q, &advs, &probs, &cfg).unwrap();
            prop_assert!(w.probs.iter().all(|p| *p >= 0.0 && p.is_finite()));
            prop_assert!((w.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn rpex_penalization_monotone(
            q0 in -2.0f64..2.0,
            q1 in -2.0f64..2.0,
            adv in -5.0f64..-0.01,
            p in 1e-6f64..1.0,
            shrink in 0.05f64..0.95,
            kappa in 0.0f64..2.0,
        ) {
            let cfg = SelectionConfig { temperature: 1.0, ipw_coeff: kappa, ..SelectionConfig::default() };
            let before = rpex_probs(&[q0, q1], &[adv, 0.5], &[p, 0.5], &cfg).unwrap();
            let after = rpex_probs(&[q0, q1], &[adv, 0.5], &[p * shrink, 0.5], &cfg).unwrap();
            prop_assert!(after.probs[0] <= before.probs[0] + 1e-12);
        }

        #[test]
        fn kurtosis_affine_invariance(
            base in proptest::collection::vec(-10.0f64..10.0, 8..64),
            a in 0.5f64..3.0,
            b in -5.0f64..5.0,
            negate in proptest::bool::ANY,
        ) {
            let scale = if negate { -a } else { a };
            prop_assume!(excess_kurtosis(&base).is_ok());
            let transformed: Vec<f64> = base.iter().map(|x| scale * x + b).collect();
            let k0 = excess_kurtosis(&base).unwrap();
            let k1 = excess_kurtosis(&transformed).unwrap();
            prop_assert!((k0 - k1).abs() <= 1e-9);
        }

        #[test]
        fn quantile_monotone_and_bracketed(
            values in proptest::collection::vec(-100.0f64..100.0, 1..32),
            q1 in 0.0f64..1.0,
            q2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let v_lo = quantile(&values, lo).unwrap();
            let v_hi = quantile(&values, hi).unwrap();
            prop_assert!(v_lo <= v_hi + 1e-12);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v_lo >= min - 1e-12 && v_hi <= max + 1e-12);
        }

        #[test]
        fn norm_stats_round_trip(
            states in proptest::collection::vec(
                proptest::collection::vec(-50.0f64..50.0, 3), 1..20),
        ) {
            let stats = compute_norm_stats(&states, &states).unwrap();
            for s in &states {
                let back = stats.denormalize(&stats.normalize(s));
                for (x, y) in s.iter().zip(&back) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
