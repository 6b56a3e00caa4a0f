use sgdnoise::data::{sample_chi_dataset, ChiDistribution};
use sgdnoise::mlp::{
    boundary_point, centered_predictor, cross_entropy_network, find_tmax_with, input_gradient_alignment, train_network,
    EarlyStopConfig, MlpParams, TMAX_REL_WIDTH,
};
use sgdnoise::train::{LossKind, TrainConfig};
use sgdnoise::Error;

fn small() -> MlpParams {
    MlpParams { depth: 2, width: 32 }
}

#[test]
fn hinge_training_ends_with_every_margin_met() {
    let ds = sample_chi_dataset(&ChiDistribution::new(1.5, 8).unwrap(), 128, 1).unwrap();
    for alpha in [1.0 / 64.0, 1.0, 32768.0] {
        let cfg = TrainConfig::from_temperature(alpha, 1e-3, 8, 2).unwrap().with_max_steps(2_000_000);
        let (net, rec) = train_network(&ds, None, &cfg, &small()).unwrap();
        assert!(!rec.diverged, "alpha {alpha}");
        for (x, y) in ds.iter() {
            assert!(y * centered_predictor(&net, x).unwrap() >= 1.0 / alpha);
        }
        assert_eq!(rec.regime_alpha.as_deref(), Some(if alpha >= 1.0 { "lazy" } else { "feature" }));
        assert_eq!(rec.loss_kind, Some(LossKind::Hinge));
        assert!((rec.t_star - rec.steps as f64 * cfg.eta).abs() <= 1e-9 * rec.t_star);
    }
}

#[test]
fn lazy_weight_change_is_roughly_linear_in_temperature() {
    let ds = sample_chi_dataset(&ChiDistribution::new(1.5, 16).unwrap(), 256, 3).unwrap();
    let dw = |t: f64| {
        let cfg = TrainConfig::from_temperature(32768.0, t, 16, 4).unwrap();
        train_network(&ds, None, &cfg, &MlpParams::default()).unwrap().1.delta_w
    };
    let ratio = dw(1e-2) / dw(1e-3);
    assert!(ratio > 5.0 && ratio < 20.0, "{ratio}");
}

#[test]
fn trained_network_gradient_points_along_the_true_normal() {
    let ds = sample_chi_dataset(&ChiDistribution::new(1.5, 8).unwrap(), 256, 5).unwrap();
    let cfg = TrainConfig::from_temperature(1.0, 1e-3, 8, 6).unwrap();
    let (net, _) = train_network(&ds, None, &cfg, &small()).unwrap();
    let side = |x1: f64| -> Vec<f64> { (0..8).map(|i| if i == 0 { x1 } else { 0.3 * (i as f64 - 4.0) }).collect() };
    let x_star = boundary_point(&net, &side(2.0), &side(-2.0), 1e-10).unwrap();
    assert!(centered_predictor(&net, &x_star).unwrap().abs() < 1e-6);
    let (par, perp) = input_gradient_alignment(&net, &x_star, ds.true_normal()).unwrap();
    assert!(par > 0.0 && par > perp, "{par} vs {perp}");
}

#[test]
fn cross_entropy_reports_its_best_checkpoint() {
    let ds = sample_chi_dataset(&ChiDistribution::new(1.5, 8).unwrap(), 200, 7).unwrap();
    let test = sample_chi_dataset(&ChiDistribution::new(1.5, 8).unwrap(), 500, 8).unwrap();
    let cfg = TrainConfig::from_temperature(1.0, 1e-3, 8, 9).unwrap().with_max_steps(500_000);
    let es = EarlyStopConfig { checkpoint_every: 20, patience: 4, validation_fraction: 0.2 };
    let (net, rec) = cross_entropy_network(&ds, Some(&test), &cfg, &small(), &es).unwrap();
    assert_eq!(rec.p, 160);
    assert_eq!(rec.loss_kind, Some(LossKind::Xent));
    assert_eq!(rec.t_star, net.t);
    assert_eq!(rec.steps % 20, 0);
    assert_eq!(rec.test_error, Some(net.error_rate(&test).unwrap()));
    assert!(rec.failure.is_none());
}

#[test]
fn cross_entropy_out_of_steps_is_flagged() {
    let ds = sample_chi_dataset(&ChiDistribution::new(0.0, 8).unwrap(), 100, 1).unwrap();
    let cfg = TrainConfig::from_temperature(1.0, 1e-4, 8, 1).unwrap().with_max_steps(10);
    let es = EarlyStopConfig { checkpoint_every: 5, patience: 100, validation_fraction: 0.2 };
    let (_, rec) = cross_entropy_network(&ds, None, &cfg, &small(), &es).unwrap();
    assert!(rec.failure.is_some());
}

#[test]
fn tmax_search_brackets_a_known_threshold() {
    let grid: Vec<f64> = (0..9).map(|i| 1e-4 * 10f64.powi(i / 2) * if i % 2 == 1 { 3.0 } else { 1.0 }).collect();
    for threshold in [2e-4, 0.0123, 0.37] {
        let res = find_tmax_with(&grid, |t| Ok(t <= threshold)).unwrap();
        assert!(res.t_max <= threshold && threshold < res.t_fail);
        assert!(res.t_fail / res.t_max < TMAX_REL_WIDTH);
        assert!(res.evaluations.iter().all(|&(t, ok)| ok == (t <= threshold)));
    }
}

#[test]
fn tmax_search_needs_a_crossing_inside_the_grid() {
    let grid = [1e-3, 1e-2, 1e-1];
    assert!(matches!(find_tmax_with(&grid, |_| Ok(true)), Err(Error::GridExhausted(_))));
    assert!(matches!(find_tmax_with(&grid, |_| Ok(false)), Err(Error::GridExhausted(_))));
    assert!(matches!(find_tmax_with(&[1e-3], |_| Ok(true)), Err(Error::InvalidParameter(_))));
}
