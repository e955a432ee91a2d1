//! Command-line front end and HTTP annotation service for `activelab`.

pub mod service;

use activelab::driver::RunReport;

/// One CSV row per iteration: loop bookkeeping, then accuracy, sensitivity,
/// specificity and AUC for every label. Undefined values are left empty.
pub fn series_to_csv(report: &RunReport) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let labels: Vec<String> = report
        .iterations
        .first()
        .map(|it| it.evaluation.per_label.iter().map(|l| l.label.clone()).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = [
        "iteration",
        "labeled_count",
        "labeled_fraction",
        "pool_remaining",
        "corrected",
        "corrected_fraction",
        "reviewed_fraction",
        "refined_changed",
        "table_size",
        "macro_accuracy",
        "exact_match",
    ]
    .map(String::from)
    .to_vec();
    for label in &labels {
        for metric in ["accuracy", "sensitivity", "specificity", "auc"] {
            header.push(format!("{label}:{metric}"));
        }
    }
    w.write_record(&header)?;
    for it in &report.iterations {
        let mut row = vec![
            it.iteration.to_string(),
            it.labeled_count.to_string(),
            it.labeled_fraction.to_string(),
            it.pool_remaining.to_string(),
            it.corrected.to_string(),
            it.corrected_fraction.to_string(),
            it.reviewed_fraction.to_string(),
            it.refined_changed.to_string(),
            it.table_size.to_string(),
            it.macro_accuracy.to_string(),
            it.evaluation.exact_match.to_string(),
        ];
        for l in &it.evaluation.per_label {
            let defined = |ok: bool, v: f64| if ok { v.to_string() } else { String::new() };
            row.push(l.accuracy.to_string());
            row.push(defined(l.sensitivity_defined, l.sensitivity));
            row.push(defined(l.specificity_defined, l.specificity));
            row.push(l.auc.map(|a| a.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
