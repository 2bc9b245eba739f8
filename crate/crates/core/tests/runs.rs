use blackstock_core::compare::{compare_runs, Metric};
use blackstock_core::config::{ModelName, SimulationConfig};
use blackstock_core::diagnostics::relative_l2_error;
use blackstock_core::experiment::run_config;
use blackstock_core::presets::{channel, expand, run_preset, PresetId, Scale};

fn small(kind: ModelName, amplitude: f64) -> SimulationConfig {
    let mut c = channel("small", kind, 2, 201, 100, 2.5e-5);
    c.initial.psi1.amplitude = Some(amplitude);
    c.output.sample_points = 201;
    c.output.snapshots = vec![2.5e-5];
    c
}

#[test]
fn thread_count_does_not_change_results() {
    let a = run_preset(PresetId::Fig7NeumannBaSweep, Scale::Desk, None, Some(1)).unwrap();
    let b = run_preset(PresetId::Fig7NeumannBaSweep, Scale::Desk, None, Some(3)).unwrap();
    assert_eq!(a.runs.len(), 3);
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        assert_eq!(ra.name, rb.name);
        assert_eq!(ra.iterations, rb.iterations);
        assert_eq!(ra.final_snapshot().unwrap().values, rb.final_snapshot().unwrap().values);
    }
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn weak_amplitude_models_agree_with_linear() {
    let linear = run_config(&small(ModelName::Linear, 1e2), None).unwrap();
    let reference = linear.final_snapshot().unwrap();
    for kind in [ModelName::Blackstock, ModelName::Kuznetsov, ModelName::Westervelt] {
        let s = run_config(&small(kind, 1e2), None).unwrap();
        let rel = relative_l2_error(s.final_snapshot().unwrap(), reference).unwrap();
        assert!(rel < 1e-3, "{kind:?}: {rel}");
    }
}

#[test]
fn nonlinearity_steepens_the_pulse() {
    let linear = run_config(&small(ModelName::Linear, 3e5), None).unwrap();
    let nonlinear = run_config(&small(ModelName::Blackstock, 3e5), None).unwrap();
    let rel = relative_l2_error(nonlinear.final_snapshot().unwrap(), linear.final_snapshot().unwrap()).unwrap();
    assert!(rel > 0.05, "{rel}");
    assert!(nonlinear.mean_iterations() > linear.mean_iterations());
}

#[test]
fn refinement_comparison_through_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    let coarse = small(ModelName::Blackstock, 3e5);
    let mut fine = coarse.clone();
    fine.mesh.dofs = vec![401];
    fine.output.sample_points = 401;
    run_config(&coarse, Some(&dir.path().join("coarse"))).unwrap();
    run_config(&fine, Some(&dir.path().join("fine"))).unwrap();
    assert!(compare_runs(&dir.path().join("coarse"), &dir.path().join("fine"), Metric::MaxAbs, false).is_err());
    let r = compare_runs(&dir.path().join("coarse"), &dir.path().join("fine"), Metric::MaxAbs, true).unwrap();
    assert_eq!(r.rows.len(), 1);
    // peak pressure is about 130 MPa; refinement moves it by a small fraction
    assert!(r.max_error() > 0.0 && r.max_error() < 10.0, "{}", r.max_error());
}

#[test]
fn every_preset_round_trips_through_toml() {
    for id in PresetId::ALL {
        for scale in [Scale::Desk, Scale::Full] {
            for cfg in expand(id, scale) {
                let text = cfg.to_toml();
                let back = SimulationConfig::from_toml(&text).unwrap_or_else(|e| panic!("{id} {}: {e}", cfg.name));
                assert_eq!(back, cfg);
            }
        }
    }
}
