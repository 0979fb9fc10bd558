use crate::config::{RunConfig, Stage};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use wavemod::bloch::{kernel, stability_report, RouteValues, StabilityOptions};
use wavemod::checks::{criterion_10, criterion_11, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9, probe_semigroup, Check, Criterion, MainRun, Prepared};
use wavemod::experiment::{build_initial_data, Domain, Trajectory, WaveData};
use wavemod::wavetrain::{continue_family, ContinuationOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub passed: bool,
    pub error: Option<String>,
    pub criteria: Vec<Criterion>,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
    prep: Option<Prepared>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:.17e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn route_check(c: &mut Criterion, name: &str, r: &RouteValues, cfg: &RunConfig) {
    let tiny = r.route_a.abs().max(r.route_b.abs()) < cfg.tolerances.zero;
    let mut k = Check::below(format!("{name} route discrepancy"), r.discrepancy, cfg.tolerances.route);
    if tiny {
        k.passed = true;
        k.target = format!("both routes below {:e}", cfg.tolerances.zero);
    }
    c.checks.push(k);
}

impl Pipeline {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        Self { cfg, out, prep: None }
    }

    fn prepared(&mut self) -> Result<&Prepared> {
        if self.prep.is_none() {
            self.prep = Some(self.cfg.system.prepare()?);
        }
        Ok(self.prep.as_ref().unwrap())
    }

    fn is_gl(&self) -> bool {
        self.cfg.system.preset == "real-ginzburg-landau"
    }

    fn label(&self) -> String {
        self.cfg.system.preset.clone()
    }

    /// Runs `stages` in dependency order and returns whether every check passed.
    pub fn run(&mut self, stages: &[Stage]) -> Result<bool> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        write_json(&self.out.join("config.json"), &self.cfg)?;
        let mut order = stages.to_vec();
        order.sort();
        order.dedup();
        let mut ok = true;
        for stage in order {
            let summary = match self.stage(stage) {
                Ok(criteria) => StageSummary { stage: stage.name().into(), passed: criteria.iter().all(|c| c.passed()), error: None, criteria },
                Err(e) => StageSummary { stage: stage.name().into(), passed: false, error: Some(format!("{e:#}")), criteria: vec![] },
            };
            println!("{:<16} {}", summary.stage, if summary.passed { "pass" } else { "FAIL" });
            if let Some(e) = &summary.error {
                println!("    error: {e}");
            }
            for c in &summary.criteria {
                print!("{c}");
            }
            if stage != Stage::Report {
                write_json(&self.out.join(format!("summary-{}.json", stage.name())), &summary)?;
            }
            ok &= summary.passed;
        }
        Ok(ok)
    }

    fn stage(&mut self, stage: Stage) -> Result<Vec<Criterion>> {
        match stage {
            Stage::Wavetrain => self.wavetrain(),
            Stage::Spectrum => self.spectrum(),
            Stage::Coeffs => self.coeffs(),
            Stage::SemigroupBench => self.semigroup_bench(),
            Stage::PhaseBench => self.phase_bench(),
            Stage::Simulate => self.simulate(),
            Stage::Compare => self.compare(),
            Stage::Report => self.report(),
        }
    }

    fn wavetrain(&mut self) -> Result<Vec<Criterion>> {
        let spec = &self.cfg.system;
        let tol = self.cfg.tolerances.clone();
        let sys = spec.system()?;
        let wave = spec.wave(&sys)?;
        wave.write_csv(&self.out.join("profile.csv"))?;
        write_json(&self.out.join("profile.json"), &wave.sidecar())?;
        let fam = continue_family(&sys, &wave, 0.1 * spec.k0, 4, &ContinuationOptions::default())?;
        write_rows(
            &self.out.join("family.csv"),
            &["k", "omega", "residual"],
            fam.samples.iter().map(|s| vec![s.k, s.omega, s.residual]),
        )?;
        let mut c = Criterion::new(1, "wave-train correctness");
        c.checks.push(Check::below("Newton residual", wave.residual, tol.residual));
        c.checks.push(Check::flag("continuation grid complete", fam.failure.is_none()));
        c.checks.push(Check::below("max residual on continuation grid", fam.samples.iter().map(|s| s.residual).fold(0.0, f64::max), tol.residual));
        if self.is_gl() {
            let amp = (1.0 - (2.0 * PI * wave.k).powi(2)).sqrt();
            let n = wave.n_grid;
            let dev = (0..n).map(|i| ((wave.phi[i].powi(2) + wave.phi[n + i].powi(2)).sqrt() - amp).abs()).fold(0.0, f64::max);
            c.checks.push(Check::below("amplitude vs sqrt(1-(2 pi k)^2)", dev, tol.kernel));
            c.checks.push(Check::below("max |omega| on continuation grid", fam.omega_of_k.iter().map(|o| o.abs()).fold(0.0, f64::max), tol.omega));
        }
        Ok(vec![c])
    }

    fn spectrum(&mut self) -> Result<Vec<Criterion>> {
        let s = self.cfg.spectrum.clone();
        let tol = self.cfg.tolerances.kernel;
        let spec = &self.cfg.system;
        let sys = spec.system()?;
        let wave = spec.wave(&sys)?;
        let opts = StabilityOptions { xi_count: s.xi_count, zero_radius: s.zero_radius, slack: s.slack, simplicity_floor: s.simplicity_floor };
        let rep = stability_report(&sys, &wave, &opts)?;
        let kn = kernel(&sys, &wave)?;
        write_json(&self.out.join("stability_report.json"), &rep)?;
        write_rows(&self.out.join("envelope.csv"), &["xi", "max_re_sigma"], rep.envelope.iter().map(|&(x, r)| vec![x, r]))?;
        let mut c = Criterion::new(2, "spectral certification");
        c.checks.push(Check::below("|lambda_c(0)|", kn.lambda0.norm(), tol));
        c.checks.push(Check::below("Phi_0 alignment with phi_0'", kn.alignment, tol));
        c.checks.push(Check::flag(format!("D1-D3 certified at k = {}", wave.k), rep.certified()));
        Ok(vec![c])
    }

    fn coeffs(&mut self) -> Result<Vec<Criterion>> {
        let gl = self.is_gl();
        let cfg = self.cfg.clone();
        let out = self.out.clone();
        let prep = self.prepared()?;
        let k = &prep.analysis.coefficients;
        let table = serde_json::json!({
            "k0": k.k0,
            "omega0": k.omega0,
            "omega1": k.omega1,
            "omega2": k.omega2,
            "a": k.a,
            "d": k.d,
            "nu": k.nu,
            "d_inner_only": k.d_inner_only,
            "a_stencil": k.a_stencil,
        });
        write_json(&out.join("coefficients.json"), &table)?;
        let mut c = Criterion::new(3, "coefficient cross-validation");
        route_check(&mut c, "a", &k.a, &cfg);
        route_check(&mut c, "d", &k.d, &cfg);
        route_check(&mut c, "nu", &k.nu, &cfg);
        if gl {
            c.checks.push(Check::below("|a|", k.a.route_a.abs().max(k.a.route_b.abs()), cfg.tolerances.zero));
            c.checks.push(Check::below("|nu|", k.nu.route_a.abs().max(k.nu.route_b.abs()), cfg.tolerances.zero));
            c.checks.push(Check::flag("d > 0", k.d.route_a > 0.0 && k.d.route_b > 0.0));
        }
        Ok(vec![c])
    }

    fn semigroup_bench(&mut self) -> Result<Vec<Criterion>> {
        let s = self.cfg.semigroup.clone();
        let seed = self.cfg.seed;
        let prep = self.prepared()?;
        let sg = probe_semigroup(prep, s.periods)?;
        Ok(vec![criterion_4(), criterion_5(&sg, seed, s.random_count, s.window), criterion_6(prep, &sg)])
    }

    fn phase_bench(&mut self) -> Result<Vec<Criterion>> {
        let prep = self.prepared()?;
        Ok(vec![criterion_7(prep), criterion_11(prep)])
    }

    fn run_spec(&self, scale: f64) -> wavemod::checks::RunSpec {
        let mut spec = self.cfg.run.clone();
        spec.perturbation.seed = self.cfg.seed;
        if let Some(a) = spec.perturbation.amplitude.as_mut() {
            *a *= scale;
        }
        spec
    }

    fn simulate(&mut self) -> Result<Vec<Criterion>> {
        let label = self.label();
        let halving = self.cfg.halving;
        let full = self.run_spec(1.0);
        let half = self.run_spec(0.5);
        let out = self.out.clone();
        let prep = self.prepared()?;
        let run = MainRun::run(&label, prep, &full)?;
        run.trajectory.write(&out.join("trajectory"))?;
        run.diagnostics.write_csv(&out.join("norms.csv"))?;
        write_json(&out.join("fits.json"), &run.decay)?;
        if halving {
            let h = MainRun::run(&label, prep, &half)?;
            h.trajectory.write(&out.join("trajectory-half"))?;
        }
        Ok(vec![criterion_8(&[&run])])
    }

    fn rebuild(&mut self, dir: &Path, spec: &wavemod::checks::RunSpec) -> Result<MainRun> {
        let label = self.label();
        let prep = self.prepared()?;
        let traj = Trajectory::read(dir)?;
        let domain = Domain::new(spec.periods, spec.per_period)?;
        if traj.domain != domain {
            bail!("trajectory in {} was recorded on a different domain", dir.display());
        }
        let data = WaveData::new(&prep.sys, &prep.analysis, domain)?;
        let initial = build_initial_data(&data, &spec.perturbation, spec.gate)?;
        Ok(MainRun::from_trajectory(&label, &data, initial, traj, spec)?)
    }

    fn compare(&mut self) -> Result<Vec<Criterion>> {
        let dir = self.out.join("trajectory");
        if !dir.join("manifest.json").exists() {
            bail!("no simulation manifest in {}; run the simulate stage first", dir.display());
        }
        let full = self.run_spec(1.0);
        let run = self.rebuild(&dir, &full)?;
        let half_dir = self.out.join("trajectory-half");
        let half = if half_dir.join("manifest.json").exists() { Some(self.rebuild(&half_dir, &self.run_spec(0.5))?) } else { None };
        write_rows(
            &self.out.join("hj_comparison.csv"),
            &["t", "err", "err_z", "ratio"],
            (0..run.hj.times.len()).map(|i| vec![run.hj.times[i], run.hj.err0[i], run.hj.err1[i], run.hj.ratio[i]]),
        )?;
        write_rows(
            &self.out.join("corollary.csv"),
            &["t", "residual", "defect1", "bound1", "defect2", "bound2", "plain", "corrected"],
            run.corollary.iter().map(|r| vec![r.t, r.residual, r.defect1, r.bound1, r.defect2, r.bound2, r.plain, r.corrected]),
        )?;
        Ok(vec![criterion_9(&[&run], half.as_ref().map(|h| (&run, h))), criterion_10(&[&run])])
    }

    fn report(&mut self) -> Result<Vec<Criterion>> {
        let mut summaries = vec![];
        for stage in Stage::ALL.iter().filter(|s| **s != Stage::Report) {
            let p = self.out.join(format!("summary-{}.json", stage.name()));
            if p.exists() {
                let text = std::fs::read_to_string(&p)?;
                let s: StageSummary = serde_json::from_str(&text).with_context(|| format!("reading {}", p.display()))?;
                summaries.push(s);
            }
        }
        if summaries.is_empty() {
            return Err(anyhow!("no stage summaries in {}", self.out.display()));
        }
        let mut md = String::from("# wavemod report\n\n");
        writeln!(md, "preset `{}`, k0 = {}, seed {}\n", self.cfg.system.preset, self.cfg.system.k0, self.cfg.seed)?;
        md.push_str("| stage | criterion | result |\n|---|---|---|\n");
        for s in &summaries {
            if let Some(e) = &s.error {
                writeln!(md, "| {} | - | ERROR: {} |", s.stage, e.replace('|', "/"))?;
            }
            for c in &s.criteria {
                writeln!(md, "| {} | {} {} | {} |", s.stage, c.id, c.title, if c.passed() { "PASS" } else { "FAIL" })?;
            }
        }
        md.push_str("\n## Checks\n\n");
        for s in &summaries {
            for c in &s.criteria {
                writeln!(md, "### {} {}\n", c.id, c.title)?;
                for k in &c.checks {
                    writeln!(md, "- [{}] {}: {:.6e} ({})", if k.passed { "x" } else { " " }, k.name, k.value, k.target)?;
                }
                if let Some(e) = &c.error {
                    writeln!(md, "- error: {e}")?;
                }
                md.push('\n');
            }
        }
        std::fs::write(self.out.join("report.md"), &md)?;
        let mut c = Criterion::new(0, "all stage summaries pass");
        for s in &summaries {
            c.checks.push(Check::flag(s.stage.clone(), s.passed));
        }
        Ok(vec![c])
    }
}
