//! Markdown grid of "mean (std)" cells, in percent.

use super::Report;

pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.2} ({:.2})", 100.0 * mean, 100.0 * std)
}

/// One row per method (first-seen order), an accuracy and an F1 column per
/// `(N, K)` setting (ascending). Missing combinations render as `–`.
pub fn render_table(reports: &[Report]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut settings: Vec<(usize, usize)> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method_id.as_str()) {
            methods.push(&r.method_id);
        }
        if !settings.contains(&(r.n_way, r.k_shot)) {
            settings.push((r.n_way, r.k_shot));
        }
    }
    settings.sort_unstable();

    let mut out = String::from("| Method |");
    for (n, k) in &settings {
        out.push_str(&format!(" {n}-way {k}-shot Acc | {n}-way {k}-shot F1 |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|---|".repeat(settings.len()));
    out.push('\n');
    for m in methods {
        out.push_str(&format!("| {m} |"));
        for &(n, k) in &settings {
            // The last report wins when a method/setting pair repeats.
            match reports.iter().rev().find(|r| r.method_id == m && (r.n_way, r.k_shot) == (n, k)) {
                Some(r) => out.push_str(&format!(
                    " {} | {} |",
                    format_cell(r.mean_acc, r.std_acc),
                    format_cell(r.mean_f1, r.std_f1)
                )),
                None => out.push_str(" – | – |"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::TaskResult;

    fn report(id: &str, k: usize, accs: &[f64]) -> Report {
        let tasks = accs
            .iter()
            .map(|&a| TaskResult {
                task_seed: 0,
                accuracy: a,
                f1: a / 2.0,
                per_class_f1: vec![],
                confusion: vec![],
            })
            .collect();
        Report::from_tasks(id, 3, k, tasks)
    }

    #[test]
    fn cells_and_layout() {
        assert_eq!(format_cell(0.6415, 0.027), "64.15 (2.70)");
        let t = render_table(&[report("a", 5, &[0.6, 0.8]), report("b", 1, &[0.5, 0.5])]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("| Method | 3-way 1-shot Acc"));
        assert_eq!(lines[2], "| a | – | – | 70.00 (10.00) | 35.00 (5.00) |");
        assert_eq!(lines[3], "| b | 50.00 (0.00) | 25.00 (0.00) | – | – |");
    }
}
