//! End-to-end checks of the study runners and the binary: deterministic
//! output files, corrector cache reuse, and the documented export formats.

use std::fs;
use std::path::Path;
use std::process::Command;

use tslod::config::ExperimentConfig;
use tslod::studies;

/// A configuration small enough for every runner to finish in seconds.
fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.params.k = 2.0;
    cfg.params.quad_splits = 2;
    cfg.mesh.macro_n = 4;
    cfg.mesh.macro_refine = 1;
    cfg.mesh.cell_n = 4;
    cfg.mesh.cell_refine = 1;
    cfg.study.m = "1".to_string();
    cfg.study.seed = 3;
    cfg.study.out = out.display().to_string();
    cfg
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

/// Non-comment data rows of a plot or export file, split into columns.
fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

#[test]
fn reruns_write_bit_identical_output() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir_a, dir_b) = (tmp.path().join("a"), tmp.path().join("b"));
    studies::run_single(&small_config(&dir_a)).unwrap();
    studies::run_single(&small_config(&dir_b)).unwrap();
    for name in ["single.csv", "single_fits.csv", "solution.txt", "field.dat", "provenance.txt"] {
        assert_eq!(read(&dir_a, name), read(&dir_b, name), "{name} differs between reruns");
    }
}

#[test]
fn the_corrector_cache_is_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (_, first) = studies::run_single(&cfg).unwrap();
    let cold = first.diagnostics.unwrap();
    assert!(cold.correctors_solved > 0, "the first run must solve corrector systems");
    let first_solution = read(tmp.path(), "solution.txt");

    let (_, second) = studies::run_single(&cfg).unwrap();
    let warm = second.diagnostics.unwrap();
    assert_eq!(warm.correctors_solved, 0, "the second run must reuse the cache");
    assert_eq!(read(tmp.path(), "solution.txt"), first_solution);

    // a changed order invalidates the tag and forces a rebuild
    let mut changed = cfg.clone();
    changed.study.m = "2".to_string();
    let (_, rebuilt) = studies::run_single(&changed).unwrap();
    assert!(rebuilt.diagnostics.unwrap().correctors_solved > 0);
}

#[test]
fn a_zero_boundary_datum_dumps_a_zero_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.params.boundary = "constant".to_string();
    cfg.params.boundary_re = 0.0;
    cfg.params.boundary_im = 0.0;
    studies::run_single(&cfg).unwrap();
    let field = read(tmp.path(), "field.dat");
    let rows = data_rows(&field);
    assert!(!rows.is_empty());
    for row in &rows {
        assert_eq!(row.len(), 4);
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
    }
    for row in data_rows(&read(tmp.path(), "solution.txt")) {
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn the_solution_export_covers_every_component() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (_, report) = studies::run_single(&cfg).unwrap();
    let rows = data_rows(&read(tmp.path(), "solution.txt"));
    assert_eq!(rows.len(), report.solution.dim());
    for row in &rows {
        assert!(matches!(row[0].as_str(), "macro" | "cell1" | "cell2"));
        row[1].parse::<usize>().unwrap();
        row[2].parse::<f64>().unwrap();
        row[3].parse::<f64>().unwrap();
    }
}

#[test]
fn the_decay_study_fits_contracting_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.study.kind = "decay".to_string();
    cfg.study.m_max = 2;
    cfg.study.seeds_per_kind = 1;
    let result = studies::run_decay_study(&cfg).unwrap();
    assert_eq!(result.rows.len(), 3 * (cfg.study.m_max + 1));
    let betas: Vec<&(String, f64)> =
        result.fits.iter().filter(|(name, _)| name.starts_with("beta_")).collect();
    assert!(!betas.is_empty(), "at least one kind must yield a fitted rate");
    for (name, rate) in &betas {
        assert!(*rate > 0.0 && *rate < 1.0, "{name} = {rate} is not a contraction");
    }
    for name in ["decay.csv", "decay_fits.csv", "decay_macro.dat", "provenance.txt"] {
        assert!(tmp.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn quasiopt_rows_cover_the_resolution_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.study.kind = "quasiopt".to_string();
    cfg.mesh.macro_sweep = vec![4, 8];
    let result = studies::run_quasiopt_study(&cfg).unwrap();
    assert_eq!(result.rows.len(), 2);
    assert_eq!(result.header[0], "macro_n");
    for row in &result.rows {
        let ratio: f64 = row[6].parse().unwrap();
        assert!(ratio.is_finite() && ratio >= 0.99, "quasi-optimality ratio {ratio}");
    }
    assert!(result.fits.iter().any(|(name, _)| name == "h_rate"));
    assert!(tmp.path().join("quasiopt.dat").exists());
}

#[test]
fn pollution_rows_pair_wavenumbers_with_meshes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.study.kind = "sweep".to_string();
    cfg.params.k_sweep = vec![2.0, 4.0];
    cfg.mesh.macro_sweep = vec![4, 8];
    let result = studies::run_pollution_sweep(&cfg).unwrap();
    assert_eq!(result.rows.len(), 2);
    for row in &result.rows {
        let reference: f64 = row[2].parse().unwrap();
        let lod: f64 = row[3].parse().unwrap();
        let ratio: f64 = row[4].parse().unwrap();
        assert!(reference > 0.0);
        assert!(lod > 0.0);
        assert!(ratio.is_finite());
    }
    assert!(tmp.path().join("sweep.csv").exists());
    assert!(tmp.path().join("sweep.dat").exists());
}

#[test]
fn the_auto_order_is_calibrated_and_at_least_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.params.k = 6.0;
    cfg.study.m = "auto".to_string();
    let (result, _) = studies::run_single(&cfg).unwrap();
    let m = result.fits.iter().find(|(name, _)| name == "m").unwrap().1;
    assert!(m >= 2.0, "auto order {m} below the floor");
    assert!(result.fits.iter().any(|(name, _)| name == "beta"));
}

#[test]
fn the_binary_runs_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let config_path = tmp.path().join("experiment.toml");
    fs::write(
        &config_path,
        "[params]\nk = 2.0\nquad_splits = 2\n\n\
         [mesh]\nmacro_n = 4\nmacro_refine = 1\ncell_n = 4\ncell_refine = 1\n\n\
         [study]\nm = \"1\"\nseed = 3\n",
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_tslod"))
        .args(["--config"])
        .arg(&config_path)
        .args(["--study", "single", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("single.csv").exists());
    assert!(read(&out, "provenance.txt").contains("study single"));

    let help = Command::new(env!("CARGO_BIN_EXE_tslod")).arg("--help").output().unwrap();
    assert!(help.status.success());
}
