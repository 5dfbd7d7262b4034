//! Generated trial → CSV → fit, compared with fitting in memory.

use csmart::gee::{fit, FitConfig};
use csmart::inference::{effect_contrasts, report};
use csmart::sandwich::{sandwich, Preset};
use csmart::simgen::{generate_trial, ClusterSizes, GenerativeSpec, ResponseModel};
use csmart::trial_data::{load_csv, validate_design, write_csv};

#[test]
fn csv_round_trip_preserves_the_fit() {
    let spec = GenerativeSpec {
        n: 60,
        cluster_sizes: ClusterSizes::Range([2, 5]),
        beta_true: [30.0, 1.0, 0.75, 0.5],
        eta_true: vec![2.0, -1.0],
        sd_y: 7.0,
        icc: 0.1,
        response_rate: [0.5, 0.5],
        response_effect: [0.0, 0.0],
        response_model: ResponseModel::Constant,
        seed: 9,
    };
    let ds = generate_trial(&spec, 0).unwrap();
    assert!(validate_design(&ds).passed());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trial.csv");
    write_csv(&ds, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back, ds);

    let a = fit(&ds, &FitConfig::default()).unwrap();
    let b = fit(&back, &FitConfig::default()).unwrap();
    assert_eq!(a.model.theta(), b.model.theta());

    let contrasts = effect_contrasts(&a.config.design, a.model.p);
    let mut estimates = None;
    for preset in Preset::ALL {
        let s = sandwich(&a, preset.config()).unwrap();
        let r = report(&a, &s, &contrasts, preset.config(), 0.95).unwrap();
        assert_eq!(r.rows.len(), 6 + 6);
        let est: Vec<f64> = r.rows.iter().map(|row| row.estimate).collect();
        assert_eq!(*estimates.get_or_insert(est.clone()), est);
    }
}
