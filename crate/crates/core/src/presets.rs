//! Catalog of the channel and HIFU experiments and their post-processing.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::config::{
    GeometryName, InitialField, InitialSection, LineSection, MeshSection, ModelName, ModelSection, OutputSection,
    SchemeName, SideSection, SimulationConfig, SourceName, TimeSection,
};
use crate::diagnostics::{
    default_decay_window, fit_decay_rate, max_slope, peak, profile_error, relative_l2_error, write_error_csv,
};
use crate::experiment::{io_err, run_config, RunError, RunSummary};
use crate::models::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PresetId {
    Fig1Channel,
    Fig2OrderComparison,
    Fig3DampingSweep,
    Fig4AmplitudeSweep,
    Fig5EnergyDecay,
    Fig6ModelComparison,
    Fig7NeumannBaSweep,
    Fig8Hifu2d,
}

impl PresetId {
    pub const ALL: [PresetId; 8] = [
        PresetId::Fig1Channel,
        PresetId::Fig2OrderComparison,
        PresetId::Fig3DampingSweep,
        PresetId::Fig4AmplitudeSweep,
        PresetId::Fig5EnergyDecay,
        PresetId::Fig6ModelComparison,
        PresetId::Fig7NeumannBaSweep,
        PresetId::Fig8Hifu2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PresetId::Fig1Channel => "fig1_channel",
            PresetId::Fig2OrderComparison => "fig2_order_comparison",
            PresetId::Fig3DampingSweep => "fig3_damping_sweep",
            PresetId::Fig4AmplitudeSweep => "fig4_amplitude_sweep",
            PresetId::Fig5EnergyDecay => "fig5_energy_decay",
            PresetId::Fig6ModelComparison => "fig6_model_comparison",
            PresetId::Fig7NeumannBaSweep => "fig7_neumann_BA_sweep",
            PresetId::Fig8Hifu2d => "fig8_hifu_2d",
        }
    }
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PresetId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PresetId::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = PresetId::ALL.iter().map(|p| p.name()).collect();
                format!("unknown preset '{s}', expected one of {}", names.join(", "))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Full,
    /// Halved resolution in 1D; 72 x 114 functions and 400 steps for the HIFU run.
    Desk,
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            _ => Err(format!("unknown scale '{s}', expected full or desk")),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Full => "full",
            Scale::Desk => "desk",
        })
    }
}

/// Channel length (m).
pub const CHANNEL_LENGTH: f64 = 0.4;
/// Gaussian amplitude of the initial velocity potential rate (m^2/s^2).
pub const AMPLITUDE: f64 = 3e5;
pub const MU: f64 = 0.2;
/// Width of the initial Gaussian; this value reproduces the reference profile.
pub const SIGMA2: f64 = 1e-4;

fn reduce_dofs(dofs: usize, scale: Scale) -> usize {
    match scale {
        Scale::Full => dofs,
        Scale::Desk => (dofs - 1) / 2 + 1,
    }
}

fn reduce_steps(steps: usize, scale: Scale) -> usize {
    match scale {
        Scale::Full => steps,
        Scale::Desk => steps.div_ceil(2),
    }
}

/// Dirichlet channel with the Gaussian initial rate.
pub fn channel(name: &str, kind: ModelName, degree: usize, dofs: usize, steps: usize, t_end: f64) -> SimulationConfig {
    let water = ModelParams::water();
    SimulationConfig {
        name: name.to_string(),
        model: ModelSection {
            kind,
            c: water.c,
            b: water.b,
            ba: water.ba,
            rho: water.rho,
            alpha: None,
            beta: None,
            f: None,
        },
        mesh: MeshSection {
            geometry: GeometryName::Interval,
            degree,
            dofs: vec![dofs],
            continuity: None,
            length: Some(CHANNEL_LENGTH),
            width: None,
            height: None,
            center: None,
            radius: None,
            quadrature: None,
        },
        time: TimeSection {
            t_end,
            steps,
            scheme: SchemeName::Paper,
            rho_inf: None,
            beta: None,
            gamma: None,
            alpha_m: None,
            alpha_f: None,
            tol: 1e-8,
            max_iters: 100,
        },
        initial: InitialSection {
            psi0: InitialField::default(),
            psi1: InitialField::gaussian(AMPLITUDE, vec![MU], SIGMA2),
        },
        boundary: crate::config::BoundarySection {
            left: Some(SideSection::dirichlet()),
            right: Some(SideSection::dirichlet()),
            bottom: None,
            top: None,
        },
        output: OutputSection::default(),
    }
}

fn quarters(t_end: f64) -> Vec<f64> {
    (1..=4).map(|i| t_end * i as f64 / 4.0).collect()
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    s.replace('.', "p")
}

/// Configurations of a preset, in a fixed order.
pub fn expand(id: PresetId, scale: Scale) -> Vec<SimulationConfig> {
    let d = |n| reduce_dofs(n, scale);
    let s = |n| reduce_steps(n, scale);
    match id {
        PresetId::Fig1Channel => {
            let mut c = channel("blackstock_cubic", ModelName::Blackstock, 3, d(801), s(800), 1e-4);
            c.output.snapshots = quarters(1e-4);
            vec![c]
        }
        PresetId::Fig2OrderComparison => [("cubic_reference", 3, 801), ("quadratic", 2, 501), ("linear", 1, 501)]
            .into_iter()
            .map(|(name, p, n)| {
                let mut c = channel(name, ModelName::Blackstock, p, d(n), s(800), 1e-4);
                // the comparison grid of the reference error data
                c.output.sample_points = 501;
                c
            })
            .collect(),
        PresetId::Fig3DampingSweep => [0.0, 0.1, 1.0, 10.0, 100.0]
            .into_iter()
            .map(|b| {
                let mut c = channel(&format!("b_{}", fmt_num(b)), ModelName::Blackstock, 2, d(801), s(6400), 8e-4);
                c.model.b = b;
                c.output.sample_points = 1601;
                c
            })
            .collect(),
        PresetId::Fig4AmplitudeSweep => [1.5e4, 5e4, 8e4, 1.5e5]
            .into_iter()
            .flat_map(|a| {
                [ModelName::Blackstock, ModelName::Linear].into_iter().map(move |kind| {
                    let tag = if kind == ModelName::Linear { "linear" } else { "blackstock" };
                    let mut c = channel(&format!("{tag}_A_{}", fmt_num(a)), kind, 2, d(801), s(7200), 9e-4);
                    c.initial.psi1.amplitude = Some(a);
                    c.output.sample_points = 801;
                    c
                })
            })
            .collect(),
        PresetId::Fig5EnergyDecay => [0.0, 10.0, 100.0]
            .into_iter()
            .map(|b| {
                let mut c = channel(&format!("b_{}", fmt_num(b)), ModelName::Blackstock, 2, d(801), s(800), 1e-4);
                c.model.b = b;
                c.output.energy = true;
                c
            })
            .collect(),
        PresetId::Fig6ModelComparison => [ModelName::Blackstock, ModelName::Kuznetsov, ModelName::Westervelt]
            .into_iter()
            .map(|kind| {
                let name = format!("{kind:?}").to_lowercase();
                let mut c = channel(&name, kind, 3, d(801), s(400), 5e-5);
                // the first Westervelt steps contract slowly at this amplitude
                c.time.max_iters = 1000;
                c.output.sample_points = 801;
                c
            })
            .collect(),
        PresetId::Fig7NeumannBaSweep => [0.0, 3.0, 7.0]
            .into_iter()
            .map(|ba| {
                let mut c = channel(&format!("BA_{}", fmt_num(ba)), ModelName::Blackstock, 2, d(451), s(1000), 1.2e-4);
                c.model.ba = ba;
                c.initial = InitialSection::default();
                c.boundary.left = Some(SideSection::neumann(SourceName::Modulated, 20.0 * std::f64::consts::PI, 7e4));
                c.boundary.right = None;
                c.output.sample_points = 801;
                c.output.snapshots = quarters(1.2e-4);
                c
            })
            .collect(),
        PresetId::Fig8Hifu2d => {
            let (dofs, steps) = match scale {
                Scale::Full => ([282, 452], 1500),
                Scale::Desk => ([72, 114], 400),
            };
            let t_end = 1e-4;
            let mut c = channel("hifu", ModelName::Blackstock, 2, 0, steps, t_end);
            c.mesh = MeshSection {
                geometry: GeometryName::Hifu,
                degree: 2,
                dofs: dofs.to_vec(),
                continuity: None,
                length: None,
                width: Some(0.08),
                height: Some(0.12),
                center: Some([0.04, 0.03]),
                radius: Some(0.05),
                quadrature: None,
            };
            c.initial = InitialSection::default();
            c.boundary.left = None;
            c.boundary.right = None;
            c.boundary.bottom = Some(SideSection::neumann(SourceName::Modulated, 20.0, 1e5));
            let apex = [0.04, 0.03 - 0.05];
            c.output = OutputSection {
                sample_grid: [41, 61],
                snapshots: quarters(t_end),
                peak_from: Some(0.75 * t_end),
                probes: vec![apex, [0.04, 0.03]],
                line: Some(LineSection {
                    from: apex,
                    to: [0.04, 0.12],
                    points: 141,
                }),
                ..OutputSection::default()
            };
            vec![c]
        }
    }
}

#[derive(Clone, Debug)]
pub struct PresetReport {
    pub id: PresetId,
    pub scale: Scale,
    pub runs: Vec<RunSummary>,
    /// Named scalar results, also written to `summary.txt`.
    pub metrics: Vec<(String, f64)>,
    pub wall_time: Duration,
}

impl PresetReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn run(&self, name: &str) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.name == name)
    }
}

/// Runs every member of a preset, on `threads` workers when given, and
/// writes outputs below `out`.
pub fn run_preset(id: PresetId, scale: Scale, out: Option<&Path>, threads: Option<usize>) -> Result<PresetReport, RunError> {
    let start = Instant::now();
    let configs = expand(id, scale);
    let go = || -> Vec<Result<RunSummary, RunError>> {
        configs
            .par_iter()
            .with_max_len(1)
            .map(|c| run_config(c, out.map(|o| o.join(&c.name)).as_deref()))
            .collect()
    };
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(go))
            .unwrap_or_else(|_| go()),
        None => go(),
    };
    let mut runs = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(s) => runs.push(s),
            Err(RunError::Diverged { name, step, source, partial }) => {
                runs.push((*partial).clone());
                failure.get_or_insert(RunError::Diverged { name, step, source, partial });
            }
            Err(e) => return Err(e),
        }
    }
    let metrics = if failure.is_none() { postprocess(id, &runs, out)? } else { Vec::new() };
    let report = PresetReport {
        id,
        scale,
        runs,
        metrics,
        wall_time: start.elapsed(),
    };
    if let Some(dir) = out {
        write_preset_manifest(dir, &report, failure.as_ref())?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

fn write_preset_manifest(dir: &Path, r: &PresetReport, failure: Option<&RunError>) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut m = String::new();
    m.push_str(&format!("preset = \"{}\"\n", r.id));
    m.push_str(&format!("scale = \"{}\"\n", r.scale));
    m.push_str(&format!("code_version = \"{}\"\n", env!("CARGO_PKG_VERSION")));
    m.push_str(&format!("wall_time_s = {:.3}\n", r.wall_time.as_secs_f64()));
    match failure {
        None => m.push_str("status = \"ok\"\n"),
        Some(e) => m.push_str(&format!("status = \"failed: {}\"\n", e.to_string().replace('"', "'"))),
    }
    for run in &r.runs {
        m.push_str(&format!("run.{}.status = \"{}\"\n", run.name, run.status));
        m.push_str(&format!("run.{}.mean_iterations = {:.4}\n", run.name, run.mean_iterations()));
        m.push_str(&format!("run.{}.wall_time_s = {:.3}\n", run.name, run.wall_time.as_secs_f64()));
    }
    let p = dir.join("manifest.txt");
    fs::write(&p, m).map_err(io_err(&p))?;
    let mut s = String::new();
    for (k, v) in &r.metrics {
        s.push_str(&format!("{k} = {v:.9e}\n"));
    }
    let p = dir.join("summary.txt");
    fs::write(&p, s).map_err(io_err(&p))?;
    Ok(())
}

fn final_profile(run: &RunSummary) -> Result<&crate::diagnostics::FieldSample, RunError> {
    run.final_snapshot().ok_or_else(|| {
        RunError::Diagnostics(crate::diagnostics::DiagnosticsError::TooFewSamples(0))
    })
}

fn postprocess(id: PresetId, runs: &[RunSummary], out: Option<&Path>) -> Result<Vec<(String, f64)>, RunError> {
    let mut m: Vec<(String, f64)> = Vec::new();
    for r in runs {
        m.push((format!("{}.mean_iterations", r.name), r.mean_iterations()));
        if let Some(snap) = r.final_snapshot() {
            let (v, at) = peak(snap);
            m.push((format!("{}.peak_MPa", r.name), v.abs() * 1e-6));
            m.push((format!("{}.peak_x", r.name), at[0]));
        }
    }
    match id {
        PresetId::Fig6ModelComparison | PresetId::Fig7NeumannBaSweep => {}
        PresetId::Fig1Channel => {
            // the channel is mirror symmetric; report the left-going pulse
            let snap = final_profile(&runs[0])?;
            let half = CHANNEL_LENGTH / 2.0;
            let (v, x) = snap
                .points
                .iter()
                .zip(&snap.values)
                .filter(|(p, _)| p[0] <= half)
                .fold((0.0f64, 0.0), |(m, x), (p, v)| if v.abs() > m { (v.abs(), p[0]) } else { (m, x) });
            m.push(("left_pulse.peak_MPa".into(), v * 1e-6));
            m.push(("left_pulse.peak_x".into(), x));
        }
        PresetId::Fig2OrderComparison => {
            let reference = final_profile(&runs[0])?;
            for r in &runs[1..] {
                let snap = final_profile(r)?;
                let (max, l2) = profile_error(snap, reference)?;
                m.push((format!("{}.max_error_MPa", r.name), max * 1e-6));
                m.push((format!("{}.l2_error_MPa", r.name), l2 * 1e-6));
                if let Some(dir) = out {
                    let p = dir.join(format!("error_{}.csv", r.name));
                    fs::create_dir_all(dir).map_err(io_err(dir))?;
                    let f = fs::File::create(&p).map_err(io_err(&p))?;
                    write_error_csv(std::io::BufWriter::new(f), snap, reference).map_err(io_err(&p))?;
                }
            }
        }
        PresetId::Fig3DampingSweep => {
            for r in runs {
                m.push((format!("{}.max_slope_MPa_per_m", r.name), max_slope(final_profile(r)?) * 1e-6));
            }
        }
        PresetId::Fig4AmplitudeSweep => {
            for pair in runs.chunks(2) {
                let rel = relative_l2_error(final_profile(&pair[0])?, final_profile(&pair[1])?)?;
                m.push((format!("{}.relative_l2_vs_linear", pair[0].name), rel));
            }
        }
        PresetId::Fig5EnergyDecay => {
            for r in runs {
                if let Some(tr) = &r.energy {
                    let from = tr.values.len() / 20;
                    m.push((format!("{}.energy_monotone", r.name), tr.is_non_increasing_from(from, 0.0) as u8 as f64));
                    if let Ok((w, r2)) = fit_decay_rate(tr, default_decay_window(tr)) {
                        m.push((format!("{}.decay_rate", r.name), w));
                        m.push((format!("{}.decay_r2", r.name), r2));
                    }
                }
            }
        }
        PresetId::Fig8Hifu2d => {
            let r = &runs[0];
            let center = r.config.hifu_geometry().center;
            if let Some(pk) = &r.peak {
                let dist = ((pk.at[0] - center[0]).powi(2) + (pk.at[1] - center[1]).powi(2)).sqrt();
                let from = r.config.output.peak_from.unwrap_or(0.0);
                let apex = r.probes.max_abs_from(0, from);
                m.push(("focus.peak_MPa".into(), pk.value * 1e-6));
                m.push(("focus.peak_x".into(), pk.at[0]));
                m.push(("focus.peak_y".into(), pk.at[1]));
                m.push(("focus.peak_t".into(), pk.t));
                m.push(("focus.distance_to_center".into(), dist));
                m.push(("focus.source_apex_MPa".into(), apex * 1e-6));
                m.push(("focus.gain".into(), if apex > 0.0 { pk.value / apex } else { f64::INFINITY }));
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for id in PresetId::ALL {
            assert_eq!(id.name().parse::<PresetId>().unwrap(), id);
        }
        assert!("fig9".parse::<PresetId>().is_err());
        assert_eq!("desk".parse::<Scale>().unwrap(), Scale::Desk);
    }

    #[test]
    fn expansions_validate() {
        for id in PresetId::ALL {
            for scale in [Scale::Full, Scale::Desk] {
                let cfgs = expand(id, scale);
                assert!(!cfgs.is_empty());
                for c in &cfgs {
                    c.validate().unwrap_or_else(|e| panic!("{id} {scale}: {e}"));
                    let again = SimulationConfig::from_toml(&c.to_toml()).unwrap();
                    assert_eq!(&again, c);
                }
                assert_eq!(cfgs, expand(id, scale));
            }
        }
    }

    #[test]
    fn sweep_members() {
        let bs: Vec<f64> = expand(PresetId::Fig3DampingSweep, Scale::Full).iter().map(|c| c.model.b).collect();
        assert_eq!(bs, vec![0.0, 0.1, 1.0, 10.0, 100.0]);
        let f1 = &expand(PresetId::Fig1Channel, Scale::Full)[0];
        assert_eq!((f1.mesh.dofs[0], f1.time.steps), (801, 800));
        let d1 = &expand(PresetId::Fig1Channel, Scale::Desk)[0];
        assert_eq!((d1.mesh.dofs[0], d1.time.steps), (401, 400));
        let f8 = &expand(PresetId::Fig8Hifu2d, Scale::Desk)[0];
        assert_eq!((f8.mesh.dofs.clone(), f8.time.steps), (vec![72, 114], 400));
        let f7 = &expand(PresetId::Fig7NeumannBaSweep, Scale::Full);
        assert_eq!(f7.iter().map(|c| c.model.ba).collect::<Vec<_>>(), vec![0.0, 3.0, 7.0]);
        assert_eq!((f7[0].mesh.dofs[0], f7[0].time.steps), (451, 1000));
    }

    #[test]
    fn desk_fig1_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = expand(PresetId::Fig1Channel, Scale::Desk).remove(0);
        cfg.time.steps = 4;
        cfg.time.t_end = 5e-7;
        cfg.output.snapshots.clear();
        let s = run_config(&cfg, Some(&dir.path().join(&cfg.name))).unwrap();
        assert_eq!(s.steps_done, 4);
        assert!(dir.path().join("blackstock_cubic/manifest.txt").exists());
    }
}
