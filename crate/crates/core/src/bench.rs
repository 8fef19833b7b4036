//! Latency and bandwidth measurement of one-sided operations, comparing the
//! full runtime path (pointer dereference, unit translation, handle wrap)
//! against the raw transport underneath it on the same message sizes.
//!
//! Three metrics:
//! - `dtct`: completion time per operation, either a blocking transfer or a
//!   non-blocking one waited inside the timed region.
//! - `dtit`: initiation time; only the non-blocking issue call is timed,
//!   in batches of 32 issues per sample; the handles drain after each batch.
//! - `bw`: per-operation completion time of a window of overlapping
//!   non-blocking transfers; bandwidth is `bytes / mean`.
//!
//! The per-size difference between the two layers feeds a constant-overhead
//! model: the fitted constant is the mean of the differences, and the fit is
//! flagged "consistent with zero" when it is within two pooled standard
//! errors. Timing goes through an injectable clock so statistics are exactly
//! reproducible in tests.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::runtime::{launch, RuntimeConfig, UnitContext};
use crate::team::TeamId;
use crate::transport::Transport;
use crate::UnitId;

/// Issues per timed batch for initiation-time samples.
const DTIT_BATCH: u32 = 32;
/// Cap on in-flight bytes per overlap window.
const WINDOW_BYTES_CAP: u64 = 64 << 20;

pub trait Clock {
    fn now_ns(&mut self) -> u64;
}

/// Wall clock backed by a monotonic high-resolution timer.
pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn new() -> MonotonicClock {
        MonotonicClock(Instant::now())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&mut self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

/// Scripted clock: returns the given instants in order.
pub struct FakeClock {
    times: VecDeque<u64>,
}

impl FakeClock {
    pub fn from_times(times: impl IntoIterator<Item = u64>) -> FakeClock {
        FakeClock {
            times: times.into_iter().collect(),
        }
    }
}

impl Clock for FakeClock {
    fn now_ns(&mut self) -> u64 {
        self.times.pop_front().expect("fake clock ran out of times")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Runtime,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOp {
    Put,
    Get,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Blocking,
    NonBlocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Dtct,
    Dtit,
    Bw,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Runtime => "runtime",
            Layer::Raw => "raw",
        }
    }
}

impl BenchOp {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchOp::Put => "put",
            BenchOp::Get => "get",
        }
    }
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Blocking => "blocking",
            BenchMode::NonBlocking => "nonblocking",
        }
    }
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Dtct => "dtct",
            Metric::Dtit => "dtit",
            Metric::Bw => "bw",
        }
    }
}

fn parse_enum<T: Copy>(s: &str, table: &[(&str, T)], what: &str) -> Result<T> {
    table
        .iter()
        .find(|(name, _)| *name == s)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown {what} `{s}`")))
}

impl std::str::FromStr for Layer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_enum(
            s,
            &[("runtime", Layer::Runtime), ("raw", Layer::Raw)],
            "layer",
        )
    }
}

impl std::str::FromStr for BenchOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_enum(s, &[("put", BenchOp::Put), ("get", BenchOp::Get)], "op")
    }
}

impl std::str::FromStr for BenchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_enum(
            s,
            &[
                ("blocking", BenchMode::Blocking),
                ("nonblocking", BenchMode::NonBlocking),
            ],
            "mode",
        )
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_enum(
            s,
            &[
                ("dtct", Metric::Dtct),
                ("dtit", Metric::Dtit),
                ("bw", Metric::Bw),
            ],
            "metric",
        )
    }
}

/// What to measure: one op/mode/metric over a power-of-two size sweep
/// between two units.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub op: BenchOp,
    pub mode: BenchMode,
    pub metric: Metric,
    pub min_size: u64,
    pub max_size: u64,
    pub reps: u32,
    pub warmup: u32,
    pub window: u32,
    /// (origin, target) absolute unit ids; every other unit idles at the
    /// closing barrier.
    pub pair: (u32, u32),
}

impl BenchSpec {
    pub fn new(op: BenchOp, mode: BenchMode, metric: Metric) -> BenchSpec {
        BenchSpec {
            op,
            mode,
            metric,
            min_size: 1,
            max_size: 1 << 21,
            reps: 30,
            warmup: 5,
            window: 64,
            pair: (0, 1),
        }
    }

    /// Ascending powers of two from `min_size` while they fit in `max_size`.
    pub fn sizes(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut m = self.min_size;
        while m <= self.max_size {
            out.push(m);
            if m > u64::MAX / 2 {
                break;
            }
            m *= 2;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_size == 0 || self.min_size > self.max_size {
            return Err(Error::InvalidConfig(format!(
                "size range [{}, {}] is empty or starts at zero",
                self.min_size, self.max_size
            )));
        }
        if self.reps < 30 {
            return Err(Error::InvalidConfig(
                "at least 30 repetitions are required for stderr estimation".into(),
            ));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        if self.pair.0 == self.pair.1 {
            return Err(Error::InvalidConfig(
                "origin and target must be distinct units".into(),
            ));
        }
        if self.metric == Metric::Dtit && self.mode == BenchMode::Blocking {
            return Err(Error::InvalidConfig(
                "initiation time is defined for non-blocking operations only".into(),
            ));
        }
        Ok(())
    }
}

/// One (layer, size) data point.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub layer: Layer,
    pub op: BenchOp,
    pub mode: BenchMode,
    pub metric: Metric,
    pub msg_bytes: u64,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub samples: u32,
}

/// Relative standard deviation above which a data point is flagged noisy.
pub const NOISE_THRESHOLD: f64 = 0.10;

impl Measurement {
    /// Bytes per second implied by the mean per-op time.
    pub fn bandwidth_bytes_per_sec(&self) -> f64 {
        if self.mean_ns == 0.0 {
            f64::INFINITY
        } else {
            self.msg_bytes as f64 / (self.mean_ns * 1e-9)
        }
    }

    pub fn relative_std(&self) -> f64 {
        if self.mean_ns == 0.0 {
            0.0
        } else {
            self.std_ns / self.mean_ns
        }
    }

    /// True when the relative standard deviation exceeds [`NOISE_THRESHOLD`].
    pub fn is_noisy(&self) -> bool {
        self.relative_std() > NOISE_THRESHOLD
    }
}

/// Constant-overhead model fit of runtime-layer minus raw-layer times.
#[derive(Debug, Clone)]
pub struct OverheadFit {
    /// The fitted constant: mean of the per-size differences, in ns.
    pub constant_ns: f64,
    /// Sample standard deviation of the per-size differences.
    pub residual_spread_ns: f64,
    /// Standard error of the constant, pooled from both layers' spreads.
    pub pooled_stderr_ns: f64,
    /// (message size, runtime mean - raw mean) per size.
    pub per_size_overhead: Vec<(u64, f64)>,
    /// |constant| < 2 * pooled stderr.
    pub consistent_with_zero: bool,
    /// Sizes where either layer exceeded the 10% relative-std noise flag.
    pub noisy_sizes: Vec<u64>,
}

impl fmt::Display for OverheadFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "constant-overhead model: runtime(m) - raw(m) = c")?;
        writeln!(f, "  c            = {:.3} ns", self.constant_ns)?;
        writeln!(f, "  residual sd  = {:.3} ns", self.residual_spread_ns)?;
        writeln!(f, "  stderr(c)    = {:.3} ns", self.pooled_stderr_ns)?;
        writeln!(
            f,
            "  verdict      = {}",
            if self.consistent_with_zero {
                "consistent with zero (|c| < 2*stderr)"
            } else {
                "statistically significant (|c| >= 2*stderr)"
            }
        )?;
        writeln!(f, "  per-size overhead (bytes, ns; ! = noisy point):")?;
        for (m, d) in &self.per_size_overhead {
            let mark = if self.noisy_sizes.contains(m) {
                " !"
            } else {
                ""
            };
            writeln!(f, "    {m:>8} {d:>12.3}{mark}")?;
        }
        Ok(())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Times `reps` single calls of `f` after `warmup` untimed ones.
pub fn sample_per_iteration(
    clock: &mut dyn Clock,
    warmup: u32,
    reps: u32,
    mut f: impl FnMut() -> Result<()>,
) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(reps as usize);
    for _ in 0..reps {
        let t0 = clock.now_ns();
        f()?;
        let t1 = clock.now_ns();
        samples.push((t1 - t0) as f64);
    }
    Ok(samples)
}

/// Times `reps` batches of `batch` calls of `issue`, dividing each interval
/// by the batch size; `drain` runs between samples, outside the timed
/// region. `state` threads the in-flight handles through both closures.
pub fn sample_batched<S>(
    clock: &mut dyn Clock,
    warmup: u32,
    reps: u32,
    batch: u32,
    state: &mut S,
    mut issue: impl FnMut(&mut S) -> Result<()>,
    mut drain: impl FnMut(&mut S) -> Result<()>,
) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        issue(state)?;
    }
    drain(state)?;
    let mut samples = Vec::with_capacity(reps as usize);
    for _ in 0..reps {
        let t0 = clock.now_ns();
        for _ in 0..batch {
            issue(state)?;
        }
        let t1 = clock.now_ns();
        drain(state)?;
        samples.push((t1 - t0) as f64 / batch as f64);
    }
    Ok(samples)
}

fn stats_to_measurement(spec: &BenchSpec, layer: Layer, m: u64, samples: &[f64]) -> Measurement {
    Measurement {
        layer,
        op: spec.op,
        mode: spec.mode,
        metric: spec.metric,
        msg_bytes: m,
        mean_ns: mean(samples),
        std_ns: sample_std(samples),
        samples: samples.len() as u32,
    }
}

struct BenchSite {
    origin: UnitId,
    target_rank: u32,
    region: crate::transport::RegionId,
    disp: u64,
    dest: crate::gptr::GlobalPtr,
}

fn common_checks(ctx: &UnitContext, spec: &BenchSpec) -> Result<()> {
    spec.validate()?;
    let n = ctx.num_units();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "latency measurement needs at least 2 units".into(),
        ));
    }
    if spec.pair.0 >= n || spec.pair.1 >= n {
        return Err(Error::InvalidConfig(format!(
            "pair ({}, {}) outside the {n} launched units",
            spec.pair.0, spec.pair.1
        )));
    }
    Ok(())
}

fn one_completed_op(
    ctx: &UnitContext,
    tr: &Transport,
    site: &BenchSite,
    layer: Layer,
    spec: &BenchSpec,
    src: &[u8],
    scratch: &mut [u8],
) -> Result<()> {
    match (layer, spec.op) {
        (Layer::Runtime, BenchOp::Put) => match spec.mode {
            BenchMode::Blocking => ctx.put_blocking(site.dest, src),
            BenchMode::NonBlocking => {
                let h = ctx.put(site.dest, src)?;
                ctx.wait(h)
            }
        },
        (Layer::Runtime, BenchOp::Get) => match spec.mode {
            BenchMode::Blocking => ctx.get_blocking(scratch, site.dest),
            BenchMode::NonBlocking => {
                let h = ctx.get(scratch, site.dest)?;
                ctx.wait(h)
            }
        },
        (Layer::Raw, BenchOp::Put) => {
            let r = tr.put_nb(site.origin, site.region, site.target_rank, site.disp, src)?;
            tr.request_wait(site.origin, r)?;
            Ok(())
        }
        (Layer::Raw, BenchOp::Get) => {
            let r = tr.get_nb(
                site.origin,
                site.region,
                site.target_rank,
                site.disp,
                scratch.len(),
            )?;
            tr.request_wait(site.origin, r)?;
            Ok(())
        }
    }
}

/// Completion time per operation across the size sweep, both layers.
/// Only the origin unit returns data; every unit must call (the setup and
/// teardown are collective).
pub fn measure_dtct(
    ctx: &mut UnitContext,
    spec: &BenchSpec,
    clock: &mut dyn Clock,
) -> Result<Vec<Measurement>> {
    if spec.metric != Metric::Dtct {
        return Err(Error::InvalidConfig("spec metric is not dtct".into()));
    }
    measure_completion(ctx, spec, clock, 1)
}

/// Per-op completion time of overlapping windows, both layers.
pub fn measure_bandwidth(
    ctx: &mut UnitContext,
    spec: &BenchSpec,
    clock: &mut dyn Clock,
) -> Result<Vec<Measurement>> {
    if spec.metric != Metric::Bw {
        return Err(Error::InvalidConfig("spec metric is not bw".into()));
    }
    let window = match spec.mode {
        BenchMode::Blocking => 1,
        BenchMode::NonBlocking => spec.window,
    };
    measure_completion(ctx, spec, clock, window)
}

fn measure_completion(
    ctx: &mut UnitContext,
    spec: &BenchSpec,
    clock: &mut dyn Clock,
    window: u32,
) -> Result<Vec<Measurement>> {
    common_checks(ctx, spec)?;
    let max = *spec.sizes().last().unwrap();
    let base = ctx.team_memalloc_aligned(TeamId::ALL, max)?;
    let me = ctx.my_id();
    let mut out = Vec::new();

    if me.0 == spec.pair.0 {
        let dest = base.with_unit(UnitId(spec.pair.1));
        let d = ctx.dereference(dest, None)?;
        let site = BenchSite {
            origin: me,
            target_rank: d.target_rank,
            region: d.region,
            disp: d.disp,
            dest,
        };
        let tr = ctx.transport();
        let src: Vec<u8> = (0..max).map(|i| (i % 251) as u8).collect();

        // Paired measurement: each repetition times one runtime-layer op
        // and one raw-layer op under the same machine conditions, so drift
        // (frequency steps, cache state) cancels out of the per-size
        // difference instead of landing on whichever layer ran later.
        let mut runtime_rows = Vec::new();
        let mut raw_rows = Vec::new();
        for &m in &spec.sizes() {
            let w = effective_window(window, m);
            let mut scratch = vec![0u8; m as usize * w as usize];
            let (rt_samples, raw_samples) = if w == 1 {
                let mut rt = Vec::with_capacity(spec.reps as usize);
                let mut raw = Vec::with_capacity(spec.reps as usize);
                for rep in 0..spec.warmup + spec.reps {
                    let timed = rep >= spec.warmup;
                    for layer in [Layer::Runtime, Layer::Raw] {
                        let t0 = clock.now_ns();
                        one_completed_op(
                            ctx,
                            &tr,
                            &site,
                            layer,
                            spec,
                            &src[..m as usize],
                            &mut scratch,
                        )?;
                        let t1 = clock.now_ns();
                        if timed {
                            match layer {
                                Layer::Runtime => rt.push((t1 - t0) as f64),
                                Layer::Raw => raw.push((t1 - t0) as f64),
                            }
                        }
                    }
                }
                (rt, raw)
            } else {
                let rt = sample_window(
                    ctx,
                    &tr,
                    &site,
                    Layer::Runtime,
                    spec,
                    clock,
                    m,
                    w,
                    &src,
                    &mut scratch,
                )?;
                let raw = sample_window(
                    ctx,
                    &tr,
                    &site,
                    Layer::Raw,
                    spec,
                    clock,
                    m,
                    w,
                    &src,
                    &mut scratch,
                )?;
                (rt, raw)
            };
            runtime_rows.push(stats_to_measurement(spec, Layer::Runtime, m, &rt_samples));
            raw_rows.push(stats_to_measurement(spec, Layer::Raw, m, &raw_samples));
        }
        out.append(&mut runtime_rows);
        out.append(&mut raw_rows);
    }
    ctx.barrier(TeamId::ALL)?;
    ctx.team_memfree(TeamId::ALL, base)?;
    Ok(out)
}

fn effective_window(window: u32, m: u64) -> u32 {
    if window <= 1 {
        return 1;
    }
    let cap = (WINDOW_BYTES_CAP / m.max(1)).max(1);
    window.min(cap as u32)
}

#[allow(clippy::too_many_arguments)]
fn sample_window(
    ctx: &UnitContext,
    tr: &Transport,
    site: &BenchSite,
    layer: Layer,
    spec: &BenchSpec,
    clock: &mut dyn Clock,
    m: u64,
    window: u32,
    src: &[u8],
    scratch: &mut [u8],
) -> Result<Vec<f64>> {
    let m = m as usize;
    let mut samples = Vec::with_capacity(spec.reps as usize);
    for rep in 0..spec.warmup + spec.reps {
        let timed = rep >= spec.warmup;
        let t0 = if timed { clock.now_ns() } else { 0 };
        match (layer, spec.op) {
            (Layer::Runtime, BenchOp::Put) => {
                let mut handles = Vec::with_capacity(window as usize);
                for _ in 0..window {
                    handles.push(ctx.put(site.dest, &src[..m])?);
                }
                ctx.waitall(handles)?;
            }
            (Layer::Runtime, BenchOp::Get) => {
                let mut handles = Vec::with_capacity(window as usize);
                for chunk in scratch.chunks_mut(m).take(window as usize) {
                    handles.push(ctx.get(chunk, site.dest)?);
                }
                ctx.waitall(handles)?;
            }
            (Layer::Raw, BenchOp::Put) => {
                let mut reqs = Vec::with_capacity(window as usize);
                for _ in 0..window {
                    reqs.push(tr.put_nb(
                        site.origin,
                        site.region,
                        site.target_rank,
                        site.disp,
                        &src[..m],
                    )?);
                }
                for r in reqs {
                    tr.request_wait(site.origin, r)?;
                }
            }
            (Layer::Raw, BenchOp::Get) => {
                let mut reqs = Vec::with_capacity(window as usize);
                for _ in 0..window {
                    reqs.push(tr.get_nb(
                        site.origin,
                        site.region,
                        site.target_rank,
                        site.disp,
                        m,
                    )?);
                }
                for r in reqs {
                    tr.request_wait(site.origin, r)?;
                }
            }
        }
        if timed {
            let t1 = clock.now_ns();
            samples.push((t1 - t0) as f64 / window as f64);
        }
    }
    Ok(samples)
}

/// Initiation time: only the non-blocking issue is inside the timed region;
/// each batch drains afterwards and the drain is checked to complete.
pub fn measure_dtit(
    ctx: &mut UnitContext,
    spec: &BenchSpec,
    clock: &mut dyn Clock,
) -> Result<Vec<Measurement>> {
    if spec.metric != Metric::Dtit {
        return Err(Error::InvalidConfig("spec metric is not dtit".into()));
    }
    common_checks(ctx, spec)?;
    let max = *spec.sizes().last().unwrap();
    let base = ctx.team_memalloc_aligned(TeamId::ALL, max)?;
    let me = ctx.my_id();
    let mut out = Vec::new();

    if me.0 == spec.pair.0 {
        let dest = base.with_unit(UnitId(spec.pair.1));
        let d = ctx.dereference(dest, None)?;
        let tr = ctx.transport();
        let src: Vec<u8> = (0..max).map(|i| (i % 251) as u8).collect();

        let mut runtime_rows = Vec::new();
        let mut raw_rows = Vec::new();
        for &m in &spec.sizes() {
            for layer in [Layer::Runtime, Layer::Raw] {
                let batch = effective_window(DTIT_BATCH, m);
                let m = m as usize;
                let samples = match layer {
                    Layer::Runtime => match spec.op {
                        BenchOp::Put => {
                            let mut handles = Vec::new();
                            sample_batched(
                                clock,
                                spec.warmup,
                                spec.reps,
                                batch,
                                &mut handles,
                                |hs| {
                                    hs.push(ctx.put(dest, &src[..m])?);
                                    Ok(())
                                },
                                |hs| ctx.waitall(std::mem::take(hs)),
                            )?
                        }
                        BenchOp::Get => {
                            // Each batch re-splits the sink buffer into
                            // disjoint chunks; draining releases the borrows
                            // before the next batch.
                            let mut scratch = vec![0u8; m.max(1) * batch as usize];
                            let mut samples = Vec::with_capacity(spec.reps as usize);
                            for rep in 0..spec.warmup + spec.reps {
                                let timed = rep >= spec.warmup;
                                let chunks = scratch.chunks_mut(m.max(1)).take(batch as usize);
                                let t0 = if timed { clock.now_ns() } else { 0 };
                                let mut handles = Vec::with_capacity(batch as usize);
                                for chunk in chunks {
                                    handles.push(ctx.get(&mut chunk[..m], dest)?);
                                }
                                let t1 = if timed { clock.now_ns() } else { 0 };
                                ctx.waitall(handles)?;
                                if timed {
                                    samples.push((t1 - t0) as f64 / batch as f64);
                                }
                            }
                            samples
                        }
                    },
                    Layer::Raw => {
                        let mut reqs = Vec::new();
                        sample_batched(
                            clock,
                            spec.warmup,
                            spec.reps,
                            batch,
                            &mut reqs,
                            |rs| {
                                let r = match spec.op {
                                    BenchOp::Put => {
                                        tr.put_nb(me, d.region, d.target_rank, d.disp, &src[..m])?
                                    }
                                    BenchOp::Get => {
                                        tr.get_nb(me, d.region, d.target_rank, d.disp, m)?
                                    }
                                };
                                rs.push(r);
                                Ok(())
                            },
                            |rs| {
                                for r in std::mem::take(rs) {
                                    tr.request_wait(me, r)?;
                                }
                                Ok(())
                            },
                        )?
                    }
                };
                let row = stats_to_measurement(spec, layer, m as u64, &samples);
                match layer {
                    Layer::Runtime => runtime_rows.push(row),
                    Layer::Raw => raw_rows.push(row),
                }
            }
        }
        out.append(&mut runtime_rows);
        out.append(&mut raw_rows);
    }
    ctx.barrier(TeamId::ALL)?;
    ctx.team_memfree(TeamId::ALL, base)?;
    Ok(out)
}

/// Fits the constant-overhead model to matching runtime/raw series.
pub fn fit_overhead(runtime: &[Measurement], raw: &[Measurement]) -> Result<OverheadFit> {
    if runtime.len() != raw.len() || runtime.is_empty() {
        return Err(Error::invalid_arg(format!(
            "size grids differ: {} runtime vs {} raw points",
            runtime.len(),
            raw.len()
        )));
    }
    let mut per_size = Vec::with_capacity(runtime.len());
    let mut noisy_sizes = Vec::new();
    let mut se2_sum = 0.0;
    for (rt, rw) in runtime.iter().zip(raw) {
        if rt.msg_bytes != rw.msg_bytes
            || rt.op != rw.op
            || rt.mode != rw.mode
            || rt.metric != rw.metric
        {
            return Err(Error::invalid_arg(format!(
                "grid mismatch at {} vs {} bytes",
                rt.msg_bytes, rw.msg_bytes
            )));
        }
        per_size.push((rt.msg_bytes, rt.mean_ns - rw.mean_ns));
        if rt.is_noisy() || rw.is_noisy() {
            noisy_sizes.push(rt.msg_bytes);
        }
        let se2 = rt.std_ns * rt.std_ns / rt.samples.max(1) as f64
            + rw.std_ns * rw.std_ns / rw.samples.max(1) as f64;
        se2_sum += se2;
    }
    let diffs: Vec<f64> = per_size.iter().map(|(_, d)| *d).collect();
    let constant_ns = mean(&diffs);
    let residual_spread_ns = sample_std(&diffs);
    let pooled_stderr_ns = se2_sum.sqrt() / per_size.len() as f64;
    Ok(OverheadFit {
        constant_ns,
        residual_spread_ns,
        pooled_stderr_ns,
        consistent_with_zero: constant_ns.abs() < 2.0 * pooled_stderr_ns,
        per_size_overhead: per_size,
        noisy_sizes,
    })
}

pub const CSV_HEADER: &str = "layer,op,mode,metric,msg_bytes,mean_ns,std_ns,samples";

fn csv_row(m: &Measurement) -> String {
    format!(
        "{},{},{},{},{},{:.3},{:.3},{}",
        m.layer.as_str(),
        m.op.as_str(),
        m.mode.as_str(),
        m.metric.as_str(),
        m.msg_bytes,
        m.mean_ns,
        m.std_ns,
        m.samples
    )
}

/// Writes the measurement series as CSV (schema: [`CSV_HEADER`]) and, when a
/// fit is given, a plain-text summary next to it with extension `fit.txt`.
/// The output is deterministic: the same data always produces identical
/// bytes.
pub fn emit_report(series: &[Measurement], fit: Option<&OverheadFit>, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(series.len() * 64 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for m in series {
        out.push_str(&csv_row(m));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    if let Some(fit) = fit {
        let fit_path = path.with_extension("fit.txt");
        std::fs::write(fit_path, fit.to_string())?;
    }
    Ok(())
}

/// Parses a CSV written by [`emit_report`].
pub fn load_report(path: &Path) -> Result<Vec<Measurement>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::invalid_arg(format!(
                "bad CSV header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::invalid_arg(format!(
                "row {}: want 8 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::invalid_arg(format!("row {}: bad float `{s}`", i + 2)))
        };
        out.push(Measurement {
            layer: fields[0].parse()?,
            op: fields[1].parse()?,
            mode: fields[2].parse()?,
            metric: fields[3].parse()?,
            msg_bytes: fields[4]
                .parse()
                .map_err(|_| Error::invalid_arg(format!("row {}: bad size", i + 2)))?,
            mean_ns: parse_f(fields[5])?,
            std_ns: parse_f(fields[6])?,
            samples: fields[7]
                .parse()
                .map_err(|_| Error::invalid_arg(format!("row {}: bad sample count", i + 2)))?,
        });
    }
    Ok(out)
}

/// A full run: both layers' series plus the overhead fit.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub series: Vec<Measurement>,
    pub fit: OverheadFit,
}

/// Launches `config.unit_count` units, runs the measurement described by
/// `spec` between `spec.pair`, and fits the overhead model.
pub fn run_bench(config: &RuntimeConfig, spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    if config.unit_count < 2 {
        return Err(Error::InvalidConfig(
            "benchmarks need at least 2 units".into(),
        ));
    }
    let slot: Mutex<Option<Vec<Measurement>>> = Mutex::new(None);
    launch(config.clone(), |ctx| {
        ctx.init()?;
        let mut clock = MonotonicClock::new();
        let series = match spec.metric {
            Metric::Dtct => measure_dtct(ctx, spec, &mut clock)?,
            Metric::Dtit => measure_dtit(ctx, spec, &mut clock)?,
            Metric::Bw => measure_bandwidth(ctx, spec, &mut clock)?,
        };
        if ctx.my_id().0 == spec.pair.0 {
            *slot.lock().unwrap() = Some(series);
        }
        ctx.finalize()?;
        Ok(0)
    })?;
    let series = slot
        .into_inner()
        .unwrap()
        .ok_or_else(|| Error::InvalidState("origin produced no series".into()))?;
    let (rt, raw): (Vec<Measurement>, Vec<Measurement>) = series
        .iter()
        .cloned()
        .partition(|m| m.layer == Layer::Runtime);
    let fit = fit_overhead(&rt, &raw)?;
    Ok(BenchReport { series, fit })
}
