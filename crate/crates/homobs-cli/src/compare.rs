//! Parsing and cross-checking of the metrics summaries written by the
//! simulate and sweep commands. Comparison refuses to mix experiments,
//! merges the per-variant records, reports settling and tail orderings,
//! and evaluates the ordering expectation embedded in the files.

use std::collections::BTreeMap;

/// Summary values for one variant record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    /// Time after which the error norm stayed under the settling
    /// threshold; `None` when the run never settled.
    pub settling: Option<f64>,
    pub tail: f64,
    pub final_error: f64,
}

/// One parsed metrics file.
#[derive(Clone, Debug)]
pub struct Metrics {
    pub experiment: String,
    pub perturbed: bool,
    pub expectation: Option<String>,
    pub entries: BTreeMap<String, Entry>,
}

#[derive(Clone, Copy, Debug, Default)]
struct RawEntry {
    settling: Option<Option<f64>>,
    tail: Option<f64>,
    final_error: Option<f64>,
}

fn parse_float(lineno: usize, value: &str) -> Result<f64, String> {
    value
        .parse::<f64>()
        .map_err(|_| format!("line {lineno}: expected a number, got {value:?}"))
}

pub fn parse_metrics(text: &str) -> Result<Metrics, String> {
    let mut experiment = None;
    let mut perturbed = None;
    let mut expectation = None;
    let mut raw: BTreeMap<String, RawEntry> = BTreeMap::new();

    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {lineno}: expected key=value, got {line:?}"))?;
        match key {
            "experiment" => experiment = Some(value.to_string()),
            "perturbed" => {
                perturbed = Some(value.parse::<bool>().map_err(|_| {
                    format!("line {lineno}: perturbed must be true or false, got {value:?}")
                })?);
            }
            "expectation" => expectation = Some(value.to_string()),
            _ => {
                if let Some(label) = key.strip_suffix("_settling_time") {
                    let v = if value == "none" {
                        None
                    } else {
                        Some(parse_float(lineno, value)?)
                    };
                    raw.entry(label.to_string()).or_default().settling = Some(v);
                } else if let Some(label) = key.strip_suffix("_tail_sup") {
                    raw.entry(label.to_string()).or_default().tail =
                        Some(parse_float(lineno, value)?);
                } else if let Some(label) = key.strip_suffix("_final_error") {
                    raw.entry(label.to_string()).or_default().final_error =
                        Some(parse_float(lineno, value)?);
                } else {
                    return Err(format!("line {lineno}: unknown key {key:?}"));
                }
            }
        }
    }

    let experiment = experiment.ok_or("missing experiment line")?;
    let perturbed = perturbed.ok_or("missing perturbed line")?;
    if raw.is_empty() {
        return Err("no variant records".to_string());
    }
    let mut entries = BTreeMap::new();
    for (label, r) in raw {
        let entry = Entry {
            settling: r
                .settling
                .ok_or_else(|| format!("{label}: missing settling_time"))?,
            tail: r.tail.ok_or_else(|| format!("{label}: missing tail_sup"))?,
            final_error: r
                .final_error
                .ok_or_else(|| format!("{label}: missing final_error"))?,
        };
        entries.insert(label, entry);
    }
    Ok(Metrics {
        experiment,
        perturbed,
        expectation,
        entries,
    })
}

/// Comparison outcome: report lines for stdout plus whether a declared
/// expectation was violated.
#[derive(Debug)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub failed: bool,
}

fn settle_key(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::INFINITY)
}

fn fmt_time(v: Option<f64>) -> String {
    match v {
        Some(t) => format!("{t:.4}"),
        None => "never".to_string(),
    }
}

fn fmt_ratio(r: f64) -> String {
    if r.is_infinite() {
        "unbounded".to_string()
    } else {
        format!("{r:.2}")
    }
}

/// Settling-time spread over the scale records `{label}_m*`. A run that
/// never settles makes the spread unbounded; no matching records at all
/// make it undefined.
fn scale_ratio(entries: &BTreeMap<String, Entry>, label: &str) -> Option<f64> {
    let prefix = format!("{label}_m");
    let settlings: Vec<Option<f64>> = entries
        .iter()
        .filter(|(l, _)| l.starts_with(&prefix))
        .map(|(_, e)| e.settling)
        .collect();
    if settlings.is_empty() {
        return None;
    }
    if settlings.iter().any(|s| s.is_none()) {
        return Some(f64::INFINITY);
    }
    let times: Vec<f64> = settlings.into_iter().flatten().collect();
    let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        // Instant settling at some scale: the spread degenerates.
        return Some(if max <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    Some(max / min)
}

fn eval_ratio_clause(
    clause: &str,
    entries: &BTreeMap<String, Entry>,
    lines: &mut Vec<String>,
) -> Result<bool, String> {
    // "<=" is checked first because every "<=" clause also contains "<".
    if let Some((label, bound)) = clause.split_once("<=") {
        let bound: f64 = bound
            .parse()
            .map_err(|_| format!("bad bound in expectation clause {clause:?}"))?;
        let Some(ratio) = scale_ratio(entries, label) else {
            lines.push(format!(
                "expectation scale_ratio {clause}: not evaluable (no {label}_m* records)"
            ));
            return Ok(false);
        };
        let verdict = if ratio <= bound { "PASS" } else { "FAIL" };
        lines.push(format!(
            "expectation scale_ratio {clause}: {verdict} (ratio {})",
            fmt_ratio(ratio)
        ));
        Ok(verdict == "FAIL")
    } else if let Some((x, y)) = clause.split_once('<') {
        let (Some(rx), Some(ry)) = (scale_ratio(entries, x), scale_ratio(entries, y)) else {
            lines.push(format!(
                "expectation scale_ratio {clause}: not evaluable (missing scale records)"
            ));
            return Ok(false);
        };
        let verdict = if rx < ry {
            "PASS"
        } else if rx == ry {
            "TIE"
        } else {
            "FAIL"
        };
        lines.push(format!(
            "expectation scale_ratio {clause}: {verdict} ({} vs {})",
            fmt_ratio(rx),
            fmt_ratio(ry)
        ));
        Ok(verdict == "FAIL")
    } else {
        Err(format!("malformed expectation clause {clause:?}"))
    }
}

fn eval_expectation(
    exp: &str,
    entries: &BTreeMap<String, Entry>,
    lines: &mut Vec<String>,
) -> Result<bool, String> {
    let (kind, rest) = exp
        .split_once(':')
        .ok_or_else(|| format!("malformed expectation {exp:?}"))?;
    match kind {
        "settling" | "tail" => {
            let (a, b) = rest
                .split_once('<')
                .ok_or_else(|| format!("malformed expectation {exp:?}"))?;
            let (Some(ea), Some(eb)) = (entries.get(a), entries.get(b)) else {
                let missing = if entries.contains_key(a) { b } else { a };
                lines.push(format!(
                    "expectation {exp}: not evaluable (no {missing} record)"
                ));
                return Ok(false);
            };
            let (va, vb, sa, sb) = if kind == "settling" {
                (
                    settle_key(ea.settling),
                    settle_key(eb.settling),
                    fmt_time(ea.settling),
                    fmt_time(eb.settling),
                )
            } else {
                (
                    ea.tail,
                    eb.tail,
                    format!("{:.3e}", ea.tail),
                    format!("{:.3e}", eb.tail),
                )
            };
            let verdict = if va < vb {
                "PASS"
            } else if va == vb {
                "TIE"
            } else {
                "FAIL"
            };
            lines.push(format!("expectation {exp}: {verdict} ({sa} vs {sb})"));
            Ok(verdict == "FAIL")
        }
        "scale_ratio" => {
            let mut failed = false;
            for clause in rest.split(',') {
                failed |= eval_ratio_clause(clause, entries, lines)?;
            }
            Ok(failed)
        }
        other => Err(format!("unknown expectation kind {other:?}")),
    }
}

/// Cross-checks parsed metrics files. `inputs` pairs a display name
/// (normally the file path) with its parsed contents.
pub fn evaluate(inputs: &[(String, Metrics)]) -> Result<Outcome, String> {
    let (first_name, first) = inputs.first().ok_or("no inputs")?;
    for (name, m) in &inputs[1..] {
        if m.experiment != first.experiment {
            return Err(format!(
                "{name} describes experiment {:?} but {first_name} describes {:?}; \
                 refusing to compare",
                m.experiment, first.experiment
            ));
        }
        if m.perturbed != first.perturbed {
            return Err(format!(
                "{name} and {first_name} mix perturbed and nominal runs of {:?}",
                first.experiment
            ));
        }
    }

    let mut lines = vec![
        format!("experiment: {}", first.experiment),
        format!("perturbed: {}", first.perturbed),
    ];

    // Merge records. Identical duplicates collapse to a reported tie;
    // conflicting duplicates make the comparison ambiguous.
    let mut merged: BTreeMap<String, Entry> = BTreeMap::new();
    let mut tied: Vec<String> = Vec::new();
    for (name, m) in inputs {
        for (label, entry) in &m.entries {
            match merged.get(label) {
                None => {
                    merged.insert(label.clone(), *entry);
                }
                Some(prev) if prev == entry => {
                    if !tied.contains(label) {
                        tied.push(label.clone());
                    }
                }
                Some(_) => {
                    return Err(format!(
                        "{name}: label {label} conflicts with an earlier input; \
                         rerun with distinct labels or experiment names"
                    ));
                }
            }
        }
    }
    for label in &tied {
        lines.push(format!("tie: {label} is identical across inputs"));
    }

    let mut by_settling: Vec<(&str, Option<f64>)> = merged
        .iter()
        .map(|(l, e)| (l.as_str(), e.settling))
        .collect();
    by_settling.sort_by(|a, b| {
        settle_key(a.1)
            .partial_cmp(&settle_key(b.1))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(b.0))
    });
    lines.push(format!(
        "settling ordering: {}",
        by_settling
            .iter()
            .map(|(l, s)| format!("{l} ({})", fmt_time(*s)))
            .collect::<Vec<_>>()
            .join(" <= ")
    ));

    let mut by_tail: Vec<(&str, f64)> = merged.iter().map(|(l, e)| (l.as_str(), e.tail)).collect();
    by_tail.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(b.0))
    });
    lines.push(format!(
        "tail ordering: {}",
        by_tail
            .iter()
            .map(|(l, t)| format!("{l} ({t:.3e})"))
            .collect::<Vec<_>>()
            .join(" <= ")
    ));

    let mut distinct: Vec<&str> = inputs
        .iter()
        .filter_map(|(_, m)| m.expectation.as_deref())
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() > 1 {
        return Err(format!(
            "inputs declare different expectations: {}",
            distinct.join(" vs ")
        ));
    }
    let mut failed = false;
    match distinct.first() {
        None => lines.push("expectation: none declared".to_string()),
        Some(exp) => failed = eval_expectation(exp, &merged, &mut lines)?,
    }
    Ok(Outcome { lines, failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(
        experiment: &str,
        expectation: Option<&str>,
        records: &[(&str, Option<f64>, f64)],
    ) -> String {
        let mut s = format!("experiment={experiment}\nperturbed=false\n");
        if let Some(e) = expectation {
            s.push_str(&format!("expectation={e}\n"));
        }
        for (label, settling, tail) in records {
            match settling {
                Some(t) => s.push_str(&format!("{label}_settling_time={t:e}\n")),
                None => s.push_str(&format!("{label}_settling_time=none\n")),
            }
            s.push_str(&format!("{label}_tail_sup={tail:e}\n"));
            s.push_str(&format!("{label}_final_error={tail:e}\n"));
        }
        s
    }

    fn parsed(text: &str) -> Metrics {
        parse_metrics(text).expect("sample parses")
    }

    #[test]
    fn parses_the_written_format() {
        let text = sample(
            "fig2",
            Some("settling:finite<linear"),
            &[("finite", Some(0.295), 3.1e-3), ("linear", None, 4.0e-2)],
        );
        let m = parsed(&text);
        assert_eq!(m.experiment, "fig2");
        assert!(!m.perturbed);
        assert_eq!(m.expectation.as_deref(), Some("settling:finite<linear"));
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries["finite"].settling, Some(0.295));
        assert_eq!(m.entries["linear"].settling, None);
        assert_eq!(m.entries["linear"].tail, 4.0e-2);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(parse_metrics("perturbed=false\nx_tail_sup=1.0\n")
            .unwrap_err()
            .contains("experiment"));
        let text = sample("a", None, &[("x", Some(1.0), 1.0)]) + "bogus_key=3\n";
        assert!(parse_metrics(&text).unwrap_err().contains("unknown key"));
        let text = "experiment=a\nperturbed=false\nx_settling_time=abc\n";
        assert!(parse_metrics(text).unwrap_err().contains("number"));
        // A label missing one of its three fields is incomplete.
        let text = "experiment=a\nperturbed=false\nx_settling_time=1.0\nx_tail_sup=1.0\n";
        assert!(parse_metrics(text).unwrap_err().contains("final_error"));
        assert!(parse_metrics("experiment=a\nperturbed=false\n")
            .unwrap_err()
            .contains("no variant records"));
    }

    #[test]
    fn identical_inputs_tie_and_still_evaluate() {
        let text = sample(
            "fig2",
            Some("settling:finite<linear"),
            &[("finite", Some(0.295), 3.1e-3), ("linear", None, 4.0e-2)],
        );
        let inputs = vec![
            ("a".to_string(), parsed(&text)),
            ("b".to_string(), parsed(&text)),
        ];
        let out = evaluate(&inputs).unwrap();
        assert!(!out.failed);
        let joined = out.lines.join("\n");
        assert!(joined.contains("tie: finite is identical across inputs"));
        assert!(joined.contains("tie: linear is identical across inputs"));
        assert!(joined.contains("PASS (0.2950 vs never)"));
    }

    #[test]
    fn violated_settling_expectation_fails() {
        let text = sample(
            "e",
            Some("settling:fast<slow"),
            &[("fast", Some(2.0), 1e-3), ("slow", Some(1.0), 1e-3)],
        );
        let inputs = vec![("a".to_string(), parsed(&text))];
        let out = evaluate(&inputs).unwrap();
        assert!(out.failed);
        assert!(out.lines.iter().any(|l| l.contains("FAIL")));
    }

    #[test]
    fn equal_values_report_tie_not_failure() {
        let text = sample(
            "e",
            Some("tail:a<b"),
            &[("a", Some(1.0), 5e-3), ("b", Some(1.0), 5e-3)],
        );
        let inputs = vec![("f".to_string(), parsed(&text))];
        let out = evaluate(&inputs).unwrap();
        assert!(!out.failed);
        assert!(out.lines.iter().any(|l| l.contains("TIE")));
    }

    #[test]
    fn mixed_experiments_are_rejected() {
        let a = sample("one", None, &[("x", Some(1.0), 1e-3)]);
        let b = sample("two", None, &[("x", Some(1.0), 1e-3)]);
        let inputs = vec![
            ("a".to_string(), parsed(&a)),
            ("b".to_string(), parsed(&b)),
        ];
        let err = evaluate(&inputs).unwrap_err();
        assert!(err.contains("refusing to compare"), "{err}");
    }

    #[test]
    fn conflicting_duplicate_labels_are_rejected() {
        let a = sample("e", None, &[("x", Some(1.0), 1e-3)]);
        let b = sample("e", None, &[("x", Some(2.0), 1e-3)]);
        let inputs = vec![
            ("a".to_string(), parsed(&a)),
            ("b".to_string(), parsed(&b)),
        ];
        let err = evaluate(&inputs).unwrap_err();
        assert!(err.contains("conflicts"), "{err}");
    }

    #[test]
    fn scale_ratio_clauses_split_pass_and_fail() {
        let text = sample(
            "sweep",
            Some("scale_ratio:fixed<=5,fixed<linear"),
            &[
                ("fixed_m-1", Some(0.1), 1e-3),
                ("fixed_m+0", Some(0.5), 1e-3),
                ("fixed_m+1", Some(0.9), 1e-3),
                ("linear_m-1", None, 1e-1),
                ("linear_m+0", None, 1e-1),
                ("linear_m+1", None, 1e-1),
            ],
        );
        let inputs = vec![("f".to_string(), parsed(&text))];
        let out = evaluate(&inputs).unwrap();
        // Spread is 9.0: above the bound of 5, below the unbounded linear
        // spread.
        assert!(out.failed);
        let joined = out.lines.join("\n");
        assert!(joined.contains("fixed<=5: FAIL (ratio 9.00)"), "{joined}");
        assert!(
            joined.contains("fixed<linear: PASS (9.00 vs unbounded)"),
            "{joined}"
        );
    }

    #[test]
    fn scale_ratio_within_bound_passes() {
        let text = sample(
            "sweep",
            Some("scale_ratio:fixed<=10"),
            &[
                ("fixed_m-1", Some(0.2), 1e-3),
                ("fixed_m+0", Some(0.8), 1e-3),
            ],
        );
        let inputs = vec![("f".to_string(), parsed(&text))];
        let out = evaluate(&inputs).unwrap();
        assert!(!out.failed);
        assert!(out.lines.iter().any(|l| l.contains("PASS (ratio 4.00)")));
    }

    #[test]
    fn ordering_puts_unsettled_runs_last() {
        let text = sample(
            "e",
            None,
            &[
                ("b", None, 2e-2),
                ("a", Some(0.5), 1e-3),
                ("c", Some(0.1), 5e-4),
            ],
        );
        let inputs = vec![("f".to_string(), parsed(&text))];
        let out = evaluate(&inputs).unwrap();
        let settling = out
            .lines
            .iter()
            .find(|l| l.starts_with("settling ordering:"))
            .unwrap();
        assert_eq!(
            settling,
            "settling ordering: c (0.1000) <= a (0.5000) <= b (never)"
        );
        let tail = out
            .lines
            .iter()
            .find(|l| l.starts_with("tail ordering:"))
            .unwrap();
        assert!(tail.starts_with("tail ordering: c "), "{tail}");
        assert!(out.lines.iter().any(|l| l == "expectation: none declared"));
    }
}
