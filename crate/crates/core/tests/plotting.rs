use sgdnoise::data::{sample_chi_dataset, ChiDistribution, Dataset};
use sgdnoise::mlp::{train_network, MlpParams};
use sgdnoise::perceptron::train_state;
use sgdnoise::plot::{
    emit_loglog_svg, render_boundary_2d, trace_boundary, BoundaryModel, BoundaryOptions, LinearModel, PlotSpec,
};
use sgdnoise::sweep::{run_sweep, ModelKind, SweepGrid, SweepSpec};
use sgdnoise::train::TrainConfig;
use sgdnoise::Error;

/// Angle between the traced boundary and the true boundary `x₁ = 0`.
fn traced_tilt(model: &dyn BoundaryModel, ds: &Dataset) -> f64 {
    let trace = trace_boundary(model, ds, &BoundaryOptions { resolution: 120, arrows: 0 }).unwrap();
    let pts: Vec<[f64; 2]> = trace.segments.iter().flat_map(|(a, b)| [*a, *b]).collect();
    let mut best = (0.0, [0.0, 1.0]);
    for a in &pts {
        for b in &pts {
            let d = [b[0] - a[0], b[1] - a[1]];
            let n = d[0] * d[0] + d[1] * d[1];
            if n > best.0 {
                best = (n, d);
            }
        }
    }
    (best.1[0] / best.1[1]).abs().atan()
}

fn mean_tilt(chi: f64, p: usize, alpha: f64, t: f64) -> f64 {
    let n = 6;
    (0..n)
        .map(|s| {
            let ds = sample_chi_dataset(&ChiDistribution::new(chi, 2).unwrap(), p, 100 + s).unwrap();
            let cfg = TrainConfig::from_temperature(alpha, t, 2, s).unwrap();
            let (state, rec) = train_state(&ds, None, &cfg).unwrap();
            assert!(!rec.diverged);
            traced_tilt(&LinearModel(state.w), &ds)
        })
        .sum::<f64>()
        / n as f64
}

fn plane_dataset() -> Dataset {
    sample_chi_dataset(&ChiDistribution::new(1.0, 2).unwrap(), 60, 8).unwrap()
}

#[test]
fn axis_aligned_weights_trace_the_vertical_axis() {
    let ds = plane_dataset();
    let trace = trace_boundary(&LinearModel(vec![1.0, 0.0]), &ds, &BoundaryOptions::default()).unwrap();
    assert!(!trace.segments.is_empty());
    let cell = (trace.extent.1 - trace.extent.0) / 100.0;
    for (a, b) in &trace.segments {
        assert!(a[0].abs() < cell && b[0].abs() < cell);
    }
}

#[test]
fn every_segment_separates_signs() {
    let ds = plane_dataset();
    let model = LinearModel(vec![0.8, -0.6]);
    let trace = trace_boundary(&model, &ds, &BoundaryOptions::default()).unwrap();
    let cell = (trace.extent.1 - trace.extent.0) / 100.0;
    for (a, b) in &trace.segments {
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let g = model.input_gradient(&mid);
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        let off = |s: f64| model.output(&[mid[0] + s * cell * g[0] / gn, mid[1] + s * cell * g[1] / gn]);
        assert!(off(1.0) > 0.0 && off(-1.0) < 0.0);
    }
}

#[test]
fn higher_temperature_tilts_the_boundary() {
    let (cold, hot) = (mean_tilt(1.0, 64, 1.0, 1e-3), mean_tilt(1.0, 64, 1.0, 0.3));
    assert!(hot > cold, "tilt {cold} at low T, {hot} at high T");
}

#[test]
fn more_data_straightens_the_boundary() {
    let (few, many) = (mean_tilt(1.0, 32, 32768.0, 0.1), mean_tilt(1.0, 1024, 32768.0, 0.1));
    assert!(many < few, "tilt {few} at small P, {many} at large P");
}

#[test]
fn boundary_svg_is_written_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ds = plane_dataset();
    let cfg = TrainConfig::from_temperature(1.0, 0.01, 4, 1).unwrap();
    let (net, _) = train_network(&ds, None, &cfg, &MlpParams { depth: 2, width: 16 }).unwrap();
    let opts = BoundaryOptions { resolution: 40, arrows: 5 };
    let path = dir.path().join("b.svg");
    let trace = render_boundary_2d(&net, &ds, &opts, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, trace.svg);
    assert_eq!(text, trace_boundary(&net, &ds, &opts).unwrap().svg);
    assert!(text.contains(r#"class="true-boundary""#));
    assert_eq!(text.matches(r#"class="point""#).count(), ds.len());
    assert!(text.matches(r#"class="gradient""#).count() >= 1);
}

#[test]
fn boundary_needs_two_dimensions() {
    let ds = sample_chi_dataset(&ChiDistribution::new(1.0, 3).unwrap(), 10, 1).unwrap();
    let err = trace_boundary(&LinearModel(vec![1.0, 0.0, 0.0]), &ds, &BoundaryOptions::default()).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
}

#[test]
fn loglog_plot_writes_svg_and_csv() {
    let spec = SweepSpec {
        model_kind: ModelKind::Perceptron,
        grid: SweepGrid {
            alpha: vec![32768.0],
            temperature: vec![0.01, 0.1],
            eta: vec![],
            batch_size: vec![2],
            p: vec![64, 256],
            chi: vec![1.5],
            d: vec![16],
        },
        replicas: 2,
        base_seed: 1,
        max_steps: 10_000_000,
        divergence_norm: 1e8,
        test_size: 0,
        mlp: None,
    };
    let records = run_sweep(&spec, 1).unwrap().records;
    let dir = tempfile::tempdir().unwrap();
    let mut ps = PlotSpec::new("temperature", "w1_final", "P", dir.path().join("w1.svg"));
    ps.y_rescale_exponent = -0.4;
    let out = emit_loglog_svg(&records, &ps).unwrap();
    assert_eq!((out.series, out.points), (2, 8));
    let csv = std::fs::read_to_string(&out.csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("P,temperature,w1_final,x_plot,y_plot"));
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((v[4] - v[2] * v[0].powf(-0.4)).abs() < 1e-9 * v[4]);
    }
    let first = std::fs::read(&out.svg_path).unwrap();
    emit_loglog_svg(&records, &ps).unwrap();
    assert_eq!(std::fs::read(&out.svg_path).unwrap(), first);
}
