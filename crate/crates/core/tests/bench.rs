//! Measurement harness: clock injection, statistics, the constant-overhead
//! fit, CSV round-trips, and small real runs.

use pgas_core::bench::{
    emit_report, fit_overhead, load_report, measure_dtct, measure_dtit, run_bench, sample_batched,
    sample_per_iteration, BenchMode, BenchOp, BenchReport, BenchSpec, FakeClock, Layer,
    Measurement, Metric, MonotonicClock, CSV_HEADER,
};
use pgas_core::{launch, Error, RuntimeConfig};

fn spec(op: BenchOp, mode: BenchMode, metric: Metric) -> BenchSpec {
    let mut s = BenchSpec::new(op, mode, metric);
    s.min_size = 1;
    s.max_size = 1024;
    s.reps = 30;
    s.warmup = 2;
    s
}

fn small_config(n: u32) -> RuntimeConfig {
    RuntimeConfig::new(n)
        .with_local_pool(1 << 20)
        .with_team_pool(8 << 20)
}

fn synthetic(layer: Layer, sizes: &[u64], mean: f64, std: f64) -> Vec<Measurement> {
    sizes
        .iter()
        .map(|&m| Measurement {
            layer,
            op: BenchOp::Put,
            mode: BenchMode::Blocking,
            metric: Metric::Dtct,
            msg_bytes: m,
            mean_ns: mean,
            std_ns: std,
            samples: 30,
        })
        .collect()
}

#[test]
fn spec_sizes_are_ascending_powers_of_two() {
    let s = BenchSpec::new(BenchOp::Put, BenchMode::Blocking, Metric::Dtct);
    let sizes = s.sizes();
    assert_eq!(sizes.first(), Some(&1));
    assert_eq!(sizes.last(), Some(&(1 << 21)));
    assert_eq!(sizes.len(), 22);
    assert!(sizes.windows(2).all(|w| w[1] == w[0] * 2));
}

#[test]
fn spec_validation_rules() {
    let mut s = BenchSpec::new(BenchOp::Put, BenchMode::Blocking, Metric::Dtct);
    s.reps = 10;
    assert!(matches!(s.validate(), Err(Error::InvalidConfig(_))));
    let mut s = BenchSpec::new(BenchOp::Put, BenchMode::Blocking, Metric::Dtit);
    s.reps = 30;
    assert!(
        matches!(s.validate(), Err(Error::InvalidConfig(_))),
        "initiation time has no blocking variant"
    );
    let mut s = BenchSpec::new(BenchOp::Get, BenchMode::NonBlocking, Metric::Bw);
    s.pair = (1, 1);
    assert!(matches!(s.validate(), Err(Error::InvalidConfig(_))));
}

#[test]
fn fake_clock_constant_series_gives_exact_mean_and_zero_std() {
    // Each iteration reads t0 then t1 = t0 + 250: every sample is 250 ns.
    let times = (0..30).flat_map(|k| [k * 1000, k * 1000 + 250]);
    let mut clock = FakeClock::from_times(times);
    let samples = sample_per_iteration(&mut clock, 0, 30, || Ok(())).unwrap();
    assert_eq!(samples.len(), 30);
    assert!(samples.iter().all(|&s| s == 250.0));
    assert_eq!(pgas_core::bench::mean(&samples), 250.0);
    assert_eq!(pgas_core::bench::sample_std(&samples), 0.0);
}

#[test]
fn fake_clock_batched_samples_divide_exactly() {
    // Three batches of 4 issues taking 400, 800, 1200 ns: per-op 100/200/300.
    let mut clock = FakeClock::from_times([0, 400, 10_000, 10_800, 20_000, 21_200]);
    let mut issued = 0u32;
    let samples = sample_batched(
        &mut clock,
        0,
        3,
        4,
        &mut issued,
        |n| {
            *n += 1;
            Ok(())
        },
        |_| Ok(()),
    )
    .unwrap();
    assert_eq!(samples, vec![100.0, 200.0, 300.0]);
    assert_eq!(issued, 12);
}

#[test]
fn fit_recovers_synthetic_constants_exactly() {
    let sizes: Vec<u64> = (0..8).map(|i| 1u64 << i).collect();
    for c in [10.0f64, 100.0, 1000.0] {
        let raw = synthetic(Layer::Raw, &sizes, 500.0, 0.0);
        let mut rt = synthetic(Layer::Runtime, &sizes, 500.0, 0.0);
        for m in rt.iter_mut() {
            m.mean_ns += c;
        }
        let fit = fit_overhead(&rt, &raw).unwrap();
        assert_eq!(fit.constant_ns, c, "exact recovery of {c} ns");
        assert_eq!(fit.residual_spread_ns, 0.0, "zero residual");
        assert!(
            !fit.consistent_with_zero,
            "a noiseless offset is significant"
        );
        // Refitting on (raw, raw + c) is self-consistent for any c.
        let diffs_mean =
            fit.per_size_overhead.iter().map(|(_, d)| d).sum::<f64>() / sizes.len() as f64;
        assert_eq!(fit.constant_ns, diffs_mean);
    }
}

#[test]
fn fit_flags_noise_consistent_with_zero() {
    let sizes: Vec<u64> = (0..6).map(|i| 1u64 << i).collect();
    let raw = synthetic(Layer::Raw, &sizes, 500.0, 50.0);
    let mut rt = synthetic(Layer::Runtime, &sizes, 500.0, 50.0);
    // A tiny offset far below the pooled stderr.
    for m in rt.iter_mut() {
        m.mean_ns += 0.5;
    }
    let fit = fit_overhead(&rt, &raw).unwrap();
    assert!(fit.consistent_with_zero);
}

#[test]
fn noisy_points_are_flagged_at_ten_percent_relative_std() {
    let sizes: Vec<u64> = vec![1, 2, 4];
    let raw = synthetic(Layer::Raw, &sizes, 1000.0, 0.0);
    let mut rt = synthetic(Layer::Runtime, &sizes, 1000.0, 0.0);
    rt[1].std_ns = 150.0; // 15% of the mean
    assert!(rt[1].is_noisy());
    assert!(!rt[0].is_noisy());
    let fit = fit_overhead(&rt, &raw).unwrap();
    assert_eq!(fit.noisy_sizes, vec![2]);
    assert!(fit.to_string().contains('!'), "summary marks noisy points");
}

#[test]
fn fit_rejects_mismatched_grids() {
    let a = synthetic(Layer::Runtime, &[1, 2, 4], 1.0, 0.0);
    let b = synthetic(Layer::Raw, &[1, 2], 1.0, 0.0);
    assert!(matches!(
        fit_overhead(&a, &b),
        Err(Error::InvalidArgument(_))
    ));
    let c = synthetic(Layer::Raw, &[1, 2, 8], 1.0, 0.0);
    assert!(matches!(
        fit_overhead(&a, &c),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn csv_emission_is_deterministic_and_loads_back_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    let sizes: Vec<u64> = vec![1, 2, 4, 8];
    let mut series = synthetic(Layer::Runtime, &sizes, 123.456789, 7.0891);
    series.extend(synthetic(Layer::Raw, &sizes, 98.7654, 3.21));
    let (rt, raw): (Vec<_>, Vec<_>) = series
        .iter()
        .cloned()
        .partition(|m| m.layer == Layer::Runtime);
    let fit = fit_overhead(&rt, &raw).unwrap();

    emit_report(&series, Some(&fit), &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let header = String::from_utf8(first.clone()).unwrap();
    assert!(header.starts_with(CSV_HEADER));
    assert_eq!(
        header.lines().count(),
        1 + sizes.len() * 2,
        "rows = sizes x layers"
    );

    // Reload, re-emit: byte identical.
    let loaded = load_report(&path).unwrap();
    assert_eq!(loaded.len(), series.len());
    let path2 = dir.path().join("report2.csv");
    emit_report(&loaded, None, &path2).unwrap();
    assert_eq!(std::fs::read(&path2).unwrap(), first);

    // The fit summary landed next to the CSV.
    let fit_text = std::fs::read_to_string(dir.path().join("report.fit.txt")).unwrap();
    assert!(fit_text.contains("constant-overhead model"));
}

#[test]
fn emit_to_an_unwritable_path_is_an_io_error() {
    let series = synthetic(Layer::Raw, &[1, 2], 5.0, 0.0);
    let path = std::path::Path::new("/nonexistent-dir/report.csv");
    assert!(matches!(
        emit_report(&series, None, path),
        Err(Error::Io(_))
    ));
}

#[test]
fn csv_loader_rejects_bad_headers_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let bad_header = dir.path().join("bad1.csv");
    std::fs::write(&bad_header, "nope\n").unwrap();
    assert!(matches!(
        load_report(&bad_header),
        Err(Error::InvalidArgument(_))
    ));
    let bad_row = dir.path().join("bad2.csv");
    std::fs::write(
        &bad_row,
        format!("{CSV_HEADER}\nruntime,put,blocking,dtct,1\n"),
    )
    .unwrap();
    assert!(matches!(
        load_report(&bad_row),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn dtct_needs_two_units_and_dtit_rejects_blocking() {
    launch(small_config(1), |ctx| {
        ctx.init()?;
        let mut clock = MonotonicClock::new();
        let s = spec(BenchOp::Put, BenchMode::Blocking, Metric::Dtct);
        assert!(matches!(
            measure_dtct(ctx, &s, &mut clock),
            Err(Error::InvalidConfig(_))
        ));
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();

    launch(small_config(2), |ctx| {
        ctx.init()?;
        let mut clock = MonotonicClock::new();
        let mut s = spec(BenchOp::Put, BenchMode::Blocking, Metric::Dtit);
        s.mode = BenchMode::Blocking;
        assert!(matches!(
            measure_dtit(ctx, &s, &mut clock),
            Err(Error::InvalidConfig(_))
        ));
        // Everyone must reach finalize together; the error path above is
        // local (validation precedes any collective call).
        ctx.finalize()?;
        Ok(0)
    })
    .unwrap();
}

fn assert_series_shape(report: &BenchReport, sizes: usize) {
    assert_eq!(report.series.len(), sizes * 2, "both layers covered");
    let (rt, raw): (Vec<_>, Vec<_>) = report
        .series
        .iter()
        .partition(|m| m.layer == Layer::Runtime);
    assert_eq!(rt.len(), raw.len());
    // Report self-consistency: the fitted constant is exactly the mean of
    // the reported per-size differences.
    let diffs: Vec<f64> = report
        .fit
        .per_size_overhead
        .iter()
        .map(|(_, d)| *d)
        .collect();
    let expect = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert_eq!(report.fit.constant_ns, expect);
}

#[test]
fn real_dtct_run_produces_a_consistent_report() {
    let s = spec(BenchOp::Put, BenchMode::Blocking, Metric::Dtct);
    let report = run_bench(&small_config(2), &s).unwrap();
    assert_series_shape(&report, s.sizes().len());
    // Paired sanity: per size, runtime time must not beat raw by more than
    // twice the pooled stderr (the runtime does strictly more work).
    for ((m, diff), (rt, raw)) in report.fit.per_size_overhead.iter().zip(
        report
            .series
            .iter()
            .filter(|x| x.layer == Layer::Runtime)
            .zip(report.series.iter().filter(|x| x.layer == Layer::Raw)),
    ) {
        let stderr = (rt.std_ns * rt.std_ns / rt.samples as f64
            + raw.std_ns * raw.std_ns / raw.samples as f64)
            .sqrt();
        assert!(
            *diff >= -2.0 * stderr - 1e-9,
            "size {m}: runtime {diff} ns faster than raw beyond noise ({stderr})"
        );
    }
}

#[test]
fn real_dtit_run_is_size_insensitive_at_small_sizes() {
    let mut s = spec(BenchOp::Put, BenchMode::NonBlocking, Metric::Dtit);
    s.reps = 50;
    let report = run_bench(&small_config(2), &s).unwrap();
    assert_series_shape(&report, s.sizes().len());
    let rt: Vec<_> = report
        .series
        .iter()
        .filter(|m| m.layer == Layer::Runtime)
        .collect();
    let at = |bytes: u64| rt.iter().find(|m| m.msg_bytes == bytes).unwrap().mean_ns;
    let ratio = at(1) / at(1024);
    assert!(
        ratio < 8.0,
        "initiating 1 B should not cost far more than 1 KiB (ratio {ratio})"
    );
}

#[test]
fn real_bandwidth_run_covers_both_layers_and_derives_bandwidth() {
    let mut s = spec(BenchOp::Get, BenchMode::NonBlocking, Metric::Bw);
    s.window = 16;
    let report = run_bench(&small_config(2), &s).unwrap();
    assert_series_shape(&report, s.sizes().len());
    for m in &report.series {
        assert!(m.bandwidth_bytes_per_sec() > 0.0);
        assert!(m.std_ns >= 0.0);
    }
}

#[test]
fn blocking_bandwidth_equals_dtct_by_construction() {
    // With window 1 and blocking mode the bw sample loop is the dtct loop;
    // bandwidth is bytes/mean by definition of the derived quantity.
    let m = Measurement {
        layer: Layer::Runtime,
        op: BenchOp::Put,
        mode: BenchMode::Blocking,
        metric: Metric::Bw,
        msg_bytes: 4096,
        mean_ns: 2048.0,
        std_ns: 0.0,
        samples: 30,
    };
    assert_eq!(m.bandwidth_bytes_per_sec(), 4096.0 / (2048.0 * 1e-9));
}

#[test]
fn reversed_pairs_measure_from_the_named_origin() {
    let mut s = spec(BenchOp::Put, BenchMode::Blocking, Metric::Dtct);
    s.max_size = 64;
    s.pair = (1, 0);
    let report = run_bench(&small_config(3), &s).unwrap();
    assert_series_shape(&report, s.sizes().len());
}

#[test]
fn run_bench_rejects_single_unit_configs() {
    let s = spec(BenchOp::Put, BenchMode::Blocking, Metric::Dtct);
    assert!(matches!(
        run_bench(&small_config(1), &s),
        Err(Error::InvalidConfig(_))
    ));
}
