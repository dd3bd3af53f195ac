//! Continuous-time Markov chain for the regime process.
//!
//! Two simulators are provided. [`simulate_chain_prm`] drives the chain with a
//! planar Poisson random measure and the displacement function `h` over the
//! interval partition of the rates; [`simulate_chain_clock`] is the usual
//! holding-time construction and serves as an independent check on the first.
//!
//! States are 0-based internally (`0..m`).

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Generator `Γ = (γ_ij)` of a finite-state chain.
///
/// Off-diagonal rates are nonnegative and each diagonal entry is stored as
/// minus the sum of the other entries of its row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorMatrix {
    rates: Vec<Vec<f64>>,
}

impl GeneratorMatrix {
    /// Builds a generator from a full square matrix.
    ///
    /// The supplied diagonal must agree with `-Σ_{j≠i} γ_ij` to `1e-9`
    /// relative; it is then replaced by the recomputed value.
    pub fn new(rates: Vec<Vec<f64>>) -> Result<Self> {
        let m = rates.len();
        if m == 0 {
            return Err(Error::config("generator", "at least one regime is required"));
        }
        let mut out = rates;
        for (i, row) in out.iter_mut().enumerate() {
            if row.len() != m {
                return Err(Error::config(
                    format!("generator[{i}]"),
                    format!("row has {} entries, expected {m}", row.len()),
                ));
            }
            let mut off = 0.0;
            for (j, &g) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                if !g.is_finite() || g < 0.0 {
                    return Err(Error::config(
                        format!("generator[{i}][{j}]"),
                        format!("off-diagonal rate must be finite and nonnegative, got {g}"),
                    ));
                }
                off += g;
            }
            let given = row[i];
            if !given.is_finite() || (given + off).abs() > 1e-9 * off.max(1.0) {
                return Err(Error::config(
                    format!("generator[{i}][{i}]"),
                    format!("diagonal must equal minus the row's off-diagonal sum ({}), got {given}", -off),
                ));
            }
            row[i] = -off;
        }
        Ok(Self { rates: out })
    }

    /// Builds a generator from off-diagonal rates only; diagonal entries of
    /// the input are ignored.
    pub fn from_off_diagonal(rates: Vec<Vec<f64>>) -> Result<Self> {
        let mut rates = rates;
        for (i, row) in rates.iter_mut().enumerate() {
            if i < row.len() {
                row[i] = 0.0;
                let off: f64 = row.iter().sum();
                row[i] = -off;
            }
        }
        Self::new(rates)
    }

    pub fn two_state(g12: f64, g21: f64) -> Result<Self> {
        Self::from_off_diagonal(vec![vec![0.0, g12], vec![g21, 0.0]])
    }

    pub fn single() -> Self {
        Self { rates: vec![vec![0.0]] }
    }

    pub fn states(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i][j]
    }

    /// Total exit rate `-γ_ii`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.rates[i][i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rates
    }
}

/// One half-open interval `Δ_ij = [left, left + length)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub source: usize,
    pub target: usize,
    pub left: f64,
    pub right: f64,
    /// Exactly `γ_ij`; `right - left` may differ from it by rounding.
    pub length: f64,
}

impl Interval {
    pub fn contains(&self, y: f64) -> bool {
        self.left <= y && y < self.right
    }
}

/// Consecutive intervals ordered by source, then target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalPartition {
    pub intervals: Vec<Interval>,
    pub total_length: f64,
    states: usize,
    /// `row_start[i]..row_start[i + 1]` indexes the intervals of source `i`.
    row_start: Vec<usize>,
}

pub fn build_partition(g: &GeneratorMatrix) -> IntervalPartition {
    let m = g.states();
    let mut intervals = Vec::with_capacity(m * m.saturating_sub(1));
    let mut row_start = Vec::with_capacity(m + 1);
    let mut cursor = 0.0;
    for i in 0..m {
        row_start.push(intervals.len());
        for j in (0..m).filter(|&j| j != i) {
            let length = g.rate(i, j);
            let right = cursor + length;
            intervals.push(Interval { source: i, target: j, left: cursor, right, length });
            cursor = right;
        }
    }
    row_start.push(intervals.len());
    let total_length = (0..m).map(|i| g.exit_rate(i)).sum();
    IntervalPartition { intervals, total_length, states: m, row_start }
}

impl IntervalPartition {
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn source_intervals(&self, i: usize) -> &[Interval] {
        &self.intervals[self.row_start[i]..self.row_start[i + 1]]
    }

    /// Right end of the last interval, the extent the Poisson measure must cover.
    pub fn extent(&self) -> f64 {
        self.intervals.last().map_or(0.0, |iv| iv.right)
    }
}

/// Displacement `h(i, y)`: `j - i` when `y ∈ Δ_ij`, otherwise 0.
pub fn h_jump(p: &IntervalPartition, i: usize, y: f64) -> i64 {
    if i >= p.states {
        return 0;
    }
    let row = p.source_intervals(i);
    let idx = row.partition_point(|iv| iv.right <= y);
    match row.get(idx) {
        Some(iv) if iv.contains(y) => iv.target as i64 - i as i64,
        _ => 0,
    }
}

/// Piecewise-constant right-continuous regime trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainPath {
    pub initial: usize,
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl ChainPath {
    pub fn constant(initial: usize, horizon: f64) -> Self {
        Self { initial, jump_times: Vec::new(), states: Vec::new(), horizon }
    }

    /// Regime at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            self.initial
        } else {
            self.states[k - 1]
        }
    }

    /// Indices of the switches with time in `[t0, t1)`.
    pub fn switches_in(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        let a = self.jump_times.partition_point(|&s| s < t0);
        let b = self.jump_times.partition_point(|&s| s < t1);
        a..b
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    fn push(&mut self, t: f64, state: usize) {
        // equal times can only arise from rounding; they collapse into one switch
        if let Some(&last_t) = self.jump_times.last() {
            if last_t == t {
                self.jump_times.pop();
                self.states.pop();
                let before = self.states.last().copied().unwrap_or(self.initial);
                if before != state {
                    self.jump_times.push(t);
                    self.states.push(state);
                }
                return;
            }
        }
        self.jump_times.push(t);
        self.states.push(state);
    }
}

fn check_args(g: &GeneratorMatrix, r0: usize, horizon: f64) -> Result<()> {
    if r0 >= g.states() {
        return Err(Error::config("initial_regime", format!("{r0} outside 0..{}", g.states())));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::config("horizon", format!("must be positive, got {horizon}")));
    }
    Ok(())
}

/// Simulates the chain from the Poisson-random-measure representation.
///
/// A unit-rate measure on `(0, T] × [0, extent)` is sampled, its points are
/// sorted by time and `h` is applied to each in turn.
pub fn simulate_chain_prm(g: &GeneratorMatrix, r0: usize, horizon: f64, seed: u64) -> Result<ChainPath> {
    let mut rng = stream_rng(seed, Stream::Chain);
    simulate_chain_prm_with(g, r0, horizon, &mut rng)
}

pub fn simulate_chain_prm_with<R: Rng + ?Sized>(
    g: &GeneratorMatrix,
    r0: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<ChainPath> {
    check_args(g, r0, horizon)?;
    let partition = build_partition(g);
    let extent = partition.extent();
    let mut path = ChainPath::constant(r0, horizon);
    let mean = horizon * extent;
    if mean <= 0.0 {
        return Ok(path);
    }
    let count = Poisson::new(mean)
        .map_err(|e| Error::config("generator", format!("poisson intensity {mean}: {e}")))?
        .sample(rng) as usize;
    let mut points: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let t = horizon * (1.0 - rng.random::<f64>());
            let y = extent * rng.random::<f64>();
            (t, y)
        })
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut state = r0;
    for (t, y) in points {
        let d = h_jump(&partition, state, y);
        if d != 0 {
            state = (state as i64 + d) as usize;
            path.push(t, state);
        }
    }
    Ok(path)
}

/// Holding-time simulation: exponential sojourns with rate `-γ_ii`, targets
/// chosen with probability `γ_ij / (-γ_ii)`. Absorbing states stay forever.
pub fn simulate_chain_clock(g: &GeneratorMatrix, r0: usize, horizon: f64, seed: u64) -> Result<ChainPath> {
    let mut rng = stream_rng(seed, Stream::Chain);
    simulate_chain_clock_with(g, r0, horizon, &mut rng)
}

pub fn simulate_chain_clock_with<R: Rng + ?Sized>(
    g: &GeneratorMatrix,
    r0: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<ChainPath> {
    check_args(g, r0, horizon)?;
    let mut path = ChainPath::constant(r0, horizon);
    let mut state = r0;
    let mut t = 0.0;
    loop {
        let rate = g.exit_rate(state);
        if rate <= 0.0 {
            break;
        }
        let hold: f64 = Exp::new(rate)
            .map_err(|e| Error::config("generator", e.to_string()))?
            .sample(rng);
        t += hold;
        if t > horizon {
            break;
        }
        let mut pick = rng.random::<f64>() * rate;
        let mut next = state;
        for j in (0..g.states()).filter(|&j| j != state) {
            let gij = g.rate(state, j);
            if gij <= 0.0 {
                continue;
            }
            next = j;
            if pick < gij {
                break;
            }
            pick -= gij;
        }
        state = next;
        path.push(t, state);
    }
    Ok(path)
}

/// Occupation fractions and empirical transition rates of a path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationStats {
    pub time_in_state: Vec<f64>,
    pub fractions: Vec<f64>,
    pub transition_counts: Vec<Vec<u64>>,
    /// `None` when the path spent no time in the source state.
    pub rates: Vec<Vec<Option<f64>>>,
}

pub fn occupation_stats(path: &ChainPath, states: usize) -> Result<OccupationStats> {
    if !(path.horizon > 0.0) {
        return Err(Error::config("path", "empty path (zero horizon)"));
    }
    let mut time = vec![0.0; states];
    let mut counts = vec![vec![0u64; states]; states];
    let mut state = path.initial;
    let mut t = 0.0;
    for (&s, &next) in path.jump_times.iter().zip(&path.states) {
        if state >= states || next >= states {
            return Err(Error::config("path", format!("state outside 0..{states}")));
        }
        time[state] += s - t;
        counts[state][next] += 1;
        state = next;
        t = s;
    }
    if state >= states {
        return Err(Error::config("path", format!("state outside 0..{states}")));
    }
    time[state] += path.horizon - t;
    let total: f64 = time.iter().sum();
    let fractions = time.iter().map(|x| x / total).collect();
    let rates = (0..states)
        .map(|i| {
            (0..states)
                .map(|j| {
                    if i == j || time[i] <= 0.0 {
                        None
                    } else {
                        Some(counts[i][j] as f64 / time[i])
                    }
                })
                .collect()
        })
        .collect();
    Ok(OccupationStats { time_in_state: time, fractions, transition_counts: counts, rates })
}

/// Batch-means estimate of the occupation fraction of `state` and its standard error.
pub fn occupation_batch_means(path: &ChainPath, state: usize, batches: usize) -> crate::stats::MeanEstimate {
    let width = path.horizon / batches as f64;
    let mut occ = vec![0.0; batches];
    let mut add = |a: f64, b: f64| {
        // spread [a, b) over the batches it intersects
        let mut lo = a;
        while lo < b {
            let k = ((lo / width) as usize).min(batches - 1);
            let end = ((k + 1) as f64 * width).min(b);
            occ[k] += end - lo;
            if end <= lo {
                break;
            }
            lo = end;
        }
    };
    let mut cur = path.initial;
    let mut t = 0.0;
    for (&s, &next) in path.jump_times.iter().zip(&path.states) {
        if cur == state {
            add(t, s);
        }
        cur = next;
        t = s;
    }
    if cur == state {
        add(t, path.horizon);
    }
    let fractions: Vec<f64> = occ.iter().map(|x| x / width).collect();
    crate::stats::mean_stderr(&fractions)
}
