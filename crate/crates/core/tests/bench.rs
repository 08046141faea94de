use warpcell_core::bench::{
    box_at, eval_set, evaluate, evaluate_heatmaps, heatmap_peak, heatmap_target, train, CellKind,
    TrainConfig,
};
use warpcell_core::{ParamSet, Tensor};

fn small_config(kind: CellKind, iterations: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        kind,
        iterations,
        batch_size: 2,
        ..Default::default()
    };
    cfg.synth.height = 20;
    cfg.synth.width = 20;
    cfg.synth.length = 6;
    cfg.synth.box_size = 6.0;
    cfg.synth.distractors = 1;
    cfg.synth.speed = (1.0, 1.5);
    cfg.synth.occlusion = None;
    cfg
}

#[test]
fn zero_iterations_returns_initialization() {
    let cfg = small_config(CellKind::WarpLstm, 0);
    let out = train(&cfg, &mut |_, _| {}).unwrap();
    assert!(out.losses.is_empty());
    assert_eq!(out.model, cfg.init_model().unwrap());
}

#[test]
fn training_is_deterministic() {
    for kind in CellKind::ALL {
        let cfg = small_config(kind, 3);
        let a = train(&cfg, &mut |_, _| {}).unwrap();
        let b = train(&cfg, &mut |_, _| {}).unwrap();
        assert_eq!(a.losses, b.losses, "{}", kind.name());
        assert_eq!(a.model, b.model);
        let seqs = eval_set(&cfg, 2).unwrap();
        assert_eq!(
            evaluate(&a.model, &seqs, 6.0).unwrap(),
            evaluate(&b.model, &seqs, 6.0).unwrap()
        );
    }
}

#[test]
fn parameters_move_and_stay_finite() {
    let cfg = small_config(CellKind::WarpLstm, 2);
    let out = train(&cfg, &mut |_, _| {}).unwrap();
    assert!(out.model.all_finite());
    assert_ne!(out.model, cfg.init_model().unwrap());
}

#[test]
fn loss_decreases_on_default_config() {
    let cfg = TrainConfig {
        iterations: 200,
        ..Default::default()
    };
    let mut curve = Vec::new();
    let out = train(&cfg, &mut |_, l| curve.push(l)).unwrap();
    assert_eq!(curve, out.losses);
    assert!(
        out.losses[199] < out.losses[0],
        "{} -> {}",
        out.losses[0],
        out.losses[199]
    );
}

#[test]
fn oracle_heatmaps_score_perfectly() {
    let cfg = TrainConfig::default();
    let mut seqs = eval_set(&cfg, 4).unwrap();
    let (h, w) = (cfg.synth.height, cfg.synth.width);
    let mut maps = Vec::new();
    for s in &mut seqs {
        // Integer centres, so the peak pixel is the centre itself.
        for (c, b) in s.centers.iter_mut().zip(s.boxes.iter_mut()) {
            *c = (c.0.round(), c.1.round());
            *b = box_at(*c, cfg.synth.box_size, h, w);
        }
        maps.push(
            s.centers
                .iter()
                .map(|&c| heatmap_target(h, w, c, 2.0))
                .collect::<Vec<_>>(),
        );
    }
    let rep = evaluate_heatmaps(&maps, &seqs, cfg.synth.box_size).unwrap();
    assert_eq!(rep.overall.mean_center_error_px, 0.0);
    assert_eq!(rep.overall.mean_iou, 1.0);
    assert_eq!(rep.overall.map50, 1.0);
    assert_eq!(rep.occlusion.unwrap().mean_iou, 1.0);
}

#[test]
fn flat_heatmaps_pick_the_origin() {
    let cfg = TrainConfig::default();
    let seqs = eval_set(&cfg, 3).unwrap();
    let zero = Tensor::zeros(&[cfg.synth.height, cfg.synth.width, 1]);
    assert_eq!(heatmap_peak(&zero).unwrap(), ((0, 0), 0.0));
    let maps: Vec<Vec<Tensor>> = seqs
        .iter()
        .map(|s| vec![zero.clone(); s.frames.len()])
        .collect();
    let a = evaluate_heatmaps(&maps, &seqs, cfg.synth.box_size).unwrap();
    let b = evaluate_heatmaps(&maps, &seqs, cfg.synth.box_size).unwrap();
    assert_eq!(a, b);
    let want: f64 = seqs
        .iter()
        .flat_map(|s| s.centers.iter().map(|c| c.0.hypot(c.1)))
        .sum::<f64>()
        / a.overall.frames as f64;
    assert!((a.overall.mean_center_error_px - want).abs() <= 1e-12);
}
