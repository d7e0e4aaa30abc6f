//! Offline analysis of metric curves: saturation steps, sharp accuracy
//! surges, rank extrema and the resulting training regime.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values recorded at strictly increasing training steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    steps: Vec<u64>,
    values: Vec<f64>,
}

impl Series {
    pub fn new(steps: Vec<u64>, values: Vec<f64>) -> Result<Series> {
        if steps.len() != values.len() {
            return Err(Error::Length {
                expected: steps.len(),
                found: values.len(),
            });
        }
        if let Some(w) = steps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Argument(format!(
                "steps must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("series contains a non-finite value".into()));
        }
        Ok(Series { steps, values })
    }

    pub fn from_fn(steps: &[u64], f: impl Fn(u64) -> f64) -> Result<Series> {
        Series::new(steps.to_vec(), steps.iter().map(|&s| f(s)).collect())
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<(u64, f64)> {
        Some((*self.steps.last()?, *self.values.last()?))
    }

    /// Every `k`-th point, starting with the first.
    pub fn subsample(&self, k: usize) -> Series {
        let k = k.max(1);
        Series {
            steps: self.steps.iter().step_by(k).copied().collect(),
            values: self.values.iter().step_by(k).copied().collect(),
        }
    }

    /// Centered moving average over `window` points, shrinking at the ends.
    pub fn smoothed(&self, window: usize) -> Series {
        let n = self.len();
        let w = window.max(1);
        let before = (w - 1) / 2;
        let after = w - 1 - before;
        let values = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(before);
                let hi = (i + after).min(n - 1);
                self.values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        Series {
            steps: self.steps.clone(),
            values,
        }
    }
}

/// Values may dip this far below the level after saturating.
pub const SATURATION_SLACK: f64 = 0.02;

/// First step whose value reaches `level` and never again falls more than
/// [`SATURATION_SLACK`] below it.
pub fn detect_saturation(s: &Series, level: f64) -> Result<Option<u64>> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Argument(format!(
            "level must lie in (0, 1], got {level}"
        )));
    }
    if s.is_empty() {
        return Err(Error::Argument("empty series".into()));
    }
    // suffix_min[i] = min over values[i..]
    let mut suffix_min = s.values.clone();
    for i in (0..suffix_min.len().saturating_sub(1)).rev() {
        suffix_min[i] = suffix_min[i].min(suffix_min[i + 1]);
    }
    let n = s.len();
    Ok((0..n)
        .find(|&i| {
            s.values[i] >= level && (i + 1 == n || suffix_min[i + 1] >= level - SATURATION_SLACK)
        })
        .map(|i| s.steps[i]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surge {
    pub start_step: u64,
    pub end_step: u64,
    /// Rise of the smoothed curve across the interval.
    pub acc_gain: f64,
}

pub const DEFAULT_SMOOTH_WINDOW: usize = 5;
pub const DEFAULT_MIN_GAIN: f64 = 0.1;
/// Marked runs closer than this on the log₁₀(step) axis count as adjacent.
pub const MERGE_GAP_DECADES: f64 = 0.2;

/// Linear-interpolated quantile of an unsorted sample.
fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Periods of unusually steep improvement on a log-step axis.
///
/// The curve is smoothed, slopes are taken per decade of steps, and
/// intervals at or above the 75th percentile of the positive slopes are
/// marked. Runs of marked intervals less than [`MERGE_GAP_DECADES`] apart
/// are joined, and each joined run is a surge when the smoothed curve rises
/// by at least `min_gain` across it.
pub fn detect_surges(s: &Series, smooth_window: usize, min_gain: f64) -> Result<Vec<Surge>> {
    if smooth_window == 0 {
        return Err(Error::Argument("smooth_window must be at least 1".into()));
    }
    if !(min_gain > 0.0 && min_gain <= 1.0) {
        return Err(Error::Argument(format!(
            "min_gain must lie in (0, 1], got {min_gain}"
        )));
    }
    if s.len() < smooth_window {
        return Err(Error::Argument(format!(
            "series of {} points is shorter than the smoothing window {smooth_window}",
            s.len()
        )));
    }
    if s.steps.first() == Some(&0) {
        return Err(Error::Argument(
            "surge detection needs steps ≥ 1 (log axis)".into(),
        ));
    }
    let sm = s.smoothed(smooth_window);
    let y = sm.values();
    let x: Vec<f64> = sm.steps().iter().map(|&t| (t as f64).log10()).collect();
    let slopes: Vec<f64> = (0..y.len().saturating_sub(1))
        .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
        .collect();
    let positive: Vec<f64> = slopes.iter().copied().filter(|&d| d > 0.0).collect();
    if positive.is_empty() {
        return Ok(Vec::new());
    }
    let cut = quantile(&positive, 0.75);
    let marked: Vec<bool> = slopes.iter().map(|&d| d > 0.0 && d >= cut).collect();

    // Runs of marked intervals as (first point, last point).
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < marked.len() {
        if !marked[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < marked.len() && marked[i] {
            i += 1;
        }
        match runs.last_mut() {
            // a short dip in slope does not split a rise
            Some(prev) if x[start] - x[prev.1] < MERGE_GAP_DECADES => prev.1 = i,
            _ => runs.push((start, i)),
        }
    }
    let surges = runs
        .into_iter()
        .filter(|&(a, b)| y[b] - y[a] >= min_gain)
        .map(|(a, b)| Surge {
            start_step: sm.steps[a],
            end_step: sm.steps[b],
            acc_gain: y[b] - y[a],
        })
        .collect();
    Ok(surges)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    Minimum,
    Maximum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub step: u64,
    pub value: f64,
    pub kind: ExtremumKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    Descent,
    Ascent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankDynamics {
    /// Alternating minima and maxima of the smoothed curve, endpoints
    /// included once the curve has moved.
    pub extrema: Vec<Extremum>,
    /// A descent, then an ascent, then another descent.
    pub double_descent: bool,
}

impl RankDynamics {
    pub fn legs(&self) -> Vec<Leg> {
        self.extrema
            .windows(2)
            .map(|w| match w[0].kind {
                ExtremumKind::Maximum => Leg::Descent,
                ExtremumKind::Minimum => Leg::Ascent,
            })
            .collect()
    }

    pub fn descents(&self) -> usize {
        self.legs().iter().filter(|&&l| l == Leg::Descent).count()
    }
}

/// Moves smaller than this fraction of the curve's range are ignored.
pub const MIN_PROMINENCE: f64 = 0.05;
pub const MIN_RANK_POINTS: usize = 5;

/// Zigzag extrema of a smoothed rank curve.
pub fn detect_rank_double_descent(rank: &Series) -> Result<RankDynamics> {
    if rank.len() < MIN_RANK_POINTS {
        return Err(Error::Argument(format!(
            "need at least {MIN_RANK_POINTS} points, got {}",
            rank.len()
        )));
    }
    let sm = rank.smoothed(DEFAULT_SMOOTH_WINDOW);
    let y = sm.values();
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let p = MIN_PROMINENCE * (hi - lo);
    let mut extrema = Vec::new();
    if hi - lo > 0.0 {
        let at = |i: usize, kind| Extremum {
            step: sm.steps[i],
            value: y[i],
            kind,
        };
        let (mut lo_i, mut hi_i) = (0, 0);
        let mut trend: Option<Leg> = None;
        let mut cand = 0;
        for i in 1..y.len() {
            match trend {
                None => {
                    if y[i] < y[lo_i] {
                        lo_i = i;
                    }
                    if y[i] > y[hi_i] {
                        hi_i = i;
                    }
                    if y[i] - y[lo_i] >= p && lo_i < i {
                        extrema.push(at(lo_i, ExtremumKind::Minimum));
                        trend = Some(Leg::Ascent);
                        cand = i;
                    } else if y[hi_i] - y[i] >= p && hi_i < i {
                        extrema.push(at(hi_i, ExtremumKind::Maximum));
                        trend = Some(Leg::Descent);
                        cand = i;
                    }
                }
                Some(Leg::Ascent) => {
                    if y[i] > y[cand] {
                        cand = i;
                    } else if y[cand] - y[i] >= p {
                        extrema.push(at(cand, ExtremumKind::Maximum));
                        trend = Some(Leg::Descent);
                        cand = i;
                    }
                }
                Some(Leg::Descent) => {
                    if y[i] < y[cand] {
                        cand = i;
                    } else if y[i] - y[cand] >= p {
                        extrema.push(at(cand, ExtremumKind::Minimum));
                        trend = Some(Leg::Ascent);
                        cand = i;
                    }
                }
            }
        }
        match trend {
            Some(Leg::Ascent) => extrema.push(at(cand, ExtremumKind::Maximum)),
            Some(Leg::Descent) => extrema.push(at(cand, ExtremumKind::Minimum)),
            None => {}
        }
    }
    let mut dynamics = RankDynamics {
        extrema,
        double_descent: false,
    };
    dynamics.double_descent = dynamics
        .legs()
        .windows(3)
        .any(|w| w == [Leg::Descent, Leg::Ascent, Leg::Descent]);
    Ok(dynamics)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FailsToGeneralize,
    Generalizes,
    Grokking,
    MultiStage,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::FailsToGeneralize => "fails_to_generalize",
            Regime::Generalizes => "generalizes",
            Regime::Grokking => "grokking",
            Regime::MultiStage => "multi_stage",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholds for [`classify_run`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    pub a_train: f64,
    pub a_test: f64,
    pub grok_ratio: f64,
    pub smooth_window: usize,
    pub min_gain: f64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams {
            a_train: 0.99,
            a_test: 0.9,
            grok_ratio: 3.0,
            smooth_window: DEFAULT_SMOOTH_WINDOW,
            min_gain: DEFAULT_MIN_GAIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub t_train_sat: Option<u64>,
    pub t_test_sat: Option<u64>,
    pub grok_gap_ratio: Option<f64>,
    /// Surges of the test-accuracy curve.
    pub surges: Vec<Surge>,
    /// Extrema of the deepest rank curve passed in.
    pub rank_extrema: Vec<Extremum>,
    /// Indices into `ranks` whose curves show a double descent.
    pub double_descent_layers: Vec<usize>,
    pub final_test_acc: f64,
    pub regime: Regime,
    pub params: ClassifyParams,
}

/// Labels a run from its accuracy curves. Precedence: fails to generalize,
/// then multi-stage, then grokking, then generalizes.
pub fn classify_run(
    train: &Series,
    test: &Series,
    ranks: &[Series],
    params: &ClassifyParams,
) -> Result<PhaseReport> {
    if train.steps() != test.steps() {
        return Err(Error::Argument(
            "train and test curves use different steps".into(),
        ));
    }
    if ranks.iter().any(|r| r.steps() != test.steps()) {
        return Err(Error::Argument("rank curves use different steps".into()));
    }
    let t_train_sat = detect_saturation(train, params.a_train)?;
    let t_test_sat = detect_saturation(test, params.a_test)?;
    let grok_gap_ratio = match (t_train_sat, t_test_sat) {
        (Some(a), Some(b)) if a > 0 => Some(b as f64 / a as f64),
        _ => None,
    };
    let surges = detect_surges(test, params.smooth_window, params.min_gain)?;
    let dynamics = ranks
        .iter()
        .map(detect_rank_double_descent)
        .collect::<Result<Vec<_>>>()?;
    let final_test_acc = test.last().map_or(0.0, |(_, v)| v);

    let regime = if t_test_sat.is_none() && final_test_acc < params.a_test {
        Regime::FailsToGeneralize
    } else if surges.len() >= 2 {
        Regime::MultiStage
    } else if grok_gap_ratio.is_some_and(|r| r >= params.grok_ratio) {
        Regime::Grokking
    } else {
        Regime::Generalizes
    };
    Ok(PhaseReport {
        t_train_sat,
        t_test_sat,
        grok_gap_ratio,
        surges,
        rank_extrema: dynamics
            .last()
            .map(|d| d.extrema.clone())
            .unwrap_or_default(),
        double_descent_layers: dynamics
            .iter()
            .enumerate()
            .filter(|(_, d)| d.double_descent)
            .map(|(i, _)| i)
            .collect(),
        final_test_acc,
        regime,
        params: *params,
    })
}

/// Synthetic curves on a 30-per-decade grid up to 10⁵ steps, shaped like
/// the four regimes. Used by tests and examples.
pub mod fixtures {
    use super::Series;
    use crate::runner::eval_schedule;

    pub fn grid() -> Vec<u64> {
        eval_schedule(100_000, 30)
    }

    /// Logistic step in log₁₀(step) from `from` to `to`, centred at `center`.
    pub fn sigmoid(step: u64, from: f64, to: f64, center: f64, width: f64) -> f64 {
        let z = ((step as f64).log10() - center) / width;
        from + (to - from) / (1.0 + (-z).exp())
    }

    fn curve(f: impl Fn(u64) -> f64) -> Series {
        Series::from_fn(&grid(), f).expect("grid is increasing")
    }

    /// Train curve reaching 0.99 at step 10³.
    fn train() -> Series {
        // 0.1 + 0.9·σ(z) = 0.99 at z = ln(0.89/0.01)
        curve(|s| sigmoid(s, 0.1, 1.0, 3.0 - 0.1 * 89f64.ln(), 0.1))
    }

    /// Test curve from 0.1 to 0.97 reaching 0.9 at step 10^`log_step`.
    fn test(log_step: f64) -> Series {
        // 0.1 + 0.87·σ(z) = 0.9 at z = ln(0.8/0.07)
        curve(move |s| sigmoid(s, 0.1, 0.97, log_step - 0.1 * (0.8f64 / 0.07).ln(), 0.1))
    }

    /// (train, test): train saturates at 10³, test at 10⁴·⁵.
    pub fn grokking() -> (Series, Series) {
        (train(), test(4.5))
    }

    /// Test saturates 1.2 times later than train.
    pub fn generalizes() -> (Series, Series) {
        (train(), test(3.0 + 1.2f64.log10()))
    }

    /// Test accuracy stalls near 0.25.
    pub fn fails() -> (Series, Series) {
        (train(), curve(|s| sigmoid(s, 0.1, 0.25, 3.0, 0.2)))
    }

    /// Test plateaus at 0.1, then 0.55, then 0.95.
    pub fn two_stage() -> (Series, Series) {
        (
            train(),
            curve(|s| sigmoid(s, 0.0, 0.45, 3.0, 0.08) + sigmoid(s, 0.1, 0.5, 4.2, 0.08)),
        )
    }

    /// Falls 400 → 200, climbs to 320, falls to 150.
    pub fn rank_v_then_fall() -> Series {
        curve(|s| {
            sigmoid(s, 400.0, 200.0, 1.5, 0.1)
                + sigmoid(s, 0.0, 120.0, 2.7, 0.1)
                + sigmoid(s, 0.0, -170.0, 3.9, 0.1)
        })
    }
}
