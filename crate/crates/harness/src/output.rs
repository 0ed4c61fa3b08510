//! Result files. Every file is written to a temporary sibling and renamed
//! into place, so readers never observe a half-written table.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;
use softfb::inference::write_candidates_csv;

use crate::config::{ExperimentConfig, Regime};
use crate::experiment::{ExperimentOutput, ResultRow};
use crate::stats::{aggregate, Scored, SummaryRow};
use crate::Result;

/// Bumped whenever a CSV column is added, removed or reordered.
pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_HEADER: [&str; 11] = [
    "env",
    "algorithm",
    "objective",
    "measure_kind",
    "seed",
    "offline_best",
    "ground_truth_of_best",
    "normalized_score",
    "spearman_rho",
    "spearman_degenerate",
    "error",
];

pub const SUMMARY_HEADER: [&str; 8] = [
    "env",
    "algorithm",
    "objective",
    "measure_kind",
    "n",
    "mean",
    "ci_half_width",
    "bold",
];

/// Writes `bytes` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialises a header and string rows.
pub fn csv_bytes(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| crate::HarnessError::runtime(e.error()))
}

pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &RESULTS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.env.clone(),
                r.algorithm.clone(),
                r.objective.clone(),
                r.measure_kind.clone(),
                r.seed.to_string(),
                r.offline_best.to_string(),
                r.ground_truth_of_best.to_string(),
                r.normalized_score.to_string(),
                r.spearman_rho.to_string(),
                r.spearman_degenerate.to_string(),
                r.error.clone(),
            ]
        }),
    )
}

/// Wall-clock seconds per row; not reproducible, so kept apart.
pub fn timings_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &["env", "algorithm", "objective", "seed", "wall_time"],
        rows.iter().map(|r| {
            vec![
                r.env.clone(),
                r.algorithm.clone(),
                r.objective.clone(),
                r.seed.to_string(),
                format!("{:.6}", r.wall_time),
            ]
        }),
    )
}

/// Aggregates normalized scores of the successful rows.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    aggregate(rows.iter().filter(|r| r.error.is_empty()).map(|r| Scored {
        env: &r.env,
        algorithm: &r.algorithm,
        objective: &r.objective,
        measure_kind: &r.measure_kind,
        score: r.normalized_score,
    }))
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            vec![
                r.env.clone(),
                r.algorithm.clone(),
                r.objective.clone(),
                r.measure_kind.clone(),
                r.n.to_string(),
                r.mean.to_string(),
                r.ci_half_width.map(|h| h.to_string()).unwrap_or_default(),
                r.bold.to_string(),
            ]
        }),
    )
}

/// File-name-safe form of an objective name.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Conventions fixed by the implementation, echoed for audits.
pub fn choice_log(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Vec<String> {
    let mut log = vec![
        "goal indicator: Euclidean norm of the offset below the radius (not squared distance)".into(),
        "hard-mode policies: greedy action with ties broken towards the lowest action index".into(),
        "argmax over candidates: ties broken towards the lowest candidate index".into(),
        "soft mode: temperature 1 - |z| clamped at 1e-6; below it the hard policy is used".into(),
        "KL targets: expert distribution mixed with 1e-9 uniform mass before use".into(),
        "constrained objectives: penalty scalarization v - lambda * max(0, v - threshold) unless strict".into(),
        format!(
            "candidate sampler {:?} follows algorithm {}",
            cfg.algorithm.sampler(),
            cfg.algorithm.as_str()
        ),
    ];
    if cfg.measure_kind == softfb::measures::MeasureKind::Implicit {
        log.push(format!(
            "implicit measure: negative importance weights clamped to zero ({} clamped in total)",
            out.clamped_weights
        ));
    }
    if cfg.regime == Regime::Learned {
        log.push(
            "learned measures count visits from t+1; converted with (1 - gamma) mu0 + gamma w".into(),
        );
    }
    log
}

pub fn manifest(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<Vec<u8>> {
    let errors: Vec<_> = out
        .rows
        .iter()
        .filter(|r| !r.error.is_empty())
        .map(|r| json!({"objective": r.objective, "seed": r.seed, "error": r.error}))
        .collect();
    let m = json!({
        "schema_version": SCHEMA_VERSION,
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "choices": choice_log(cfg, out),
        "errors": errors,
        "files": ["results.csv", "summary.csv", "timings.csv", "candidates/"],
    });
    let mut bytes = serde_json::to_vec_pretty(&m)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes every table of one experiment under `dir`.
pub fn write_experiment(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("results.csv"), &results_csv(&out.rows)?)?;
    write_atomic(&dir.join("timings.csv"), &timings_csv(&out.rows)?)?;
    write_atomic(&dir.join("summary.csv"), &summary_csv(&summarize(&out.rows))?)?;
    for t in &out.tables {
        let mut buf = Vec::new();
        write_candidates_csv(&mut buf, &t.candidates).map_err(crate::HarnessError::runtime)?;
        let name = format!("{}_seed{}.csv", slug(&t.objective), t.seed);
        write_atomic(&dir.join("candidates").join(name), &buf)?;
    }
    write_atomic(&dir.join("manifest.json"), &manifest(cfg, out)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, score: f64, error: &str) -> ResultRow {
        ResultRow {
            env: "e".into(),
            algorithm: "sfb_soft".into(),
            objective: "goal".into(),
            measure_kind: "exact".into(),
            seed,
            offline_best: 0.1,
            ground_truth_of_best: 0.1,
            normalized_score: score,
            spearman_rho: 1.0,
            spearman_degenerate: false,
            wall_time: 0.25,
            error: error.into(),
        }
    }

    #[test]
    fn results_csv_has_fixed_header_and_no_timing() {
        let text = String::from_utf8(results_csv(&[row(3, 0.5, "")]).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), RESULTS_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "e,sfb_soft,goal,exact,3,0.1,0.1,0.5,1,false,");
        assert!(!text.contains("0.25"));
    }

    #[test]
    fn error_rows_stay_out_of_the_summary() {
        let s = summarize(&[row(0, 0.2, ""), row(1, f64::NAN, "boom")]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].n, 1);
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.csv");
        write_atomic(&p, b"a\n").unwrap();
        write_atomic(&p, b"b\n").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"b\n");
        let names: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("kl:expert/1"), "kl_expert_1");
    }
}
